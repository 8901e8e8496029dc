"""Reverse-time samplers on CP^{d-1} and for the Euclidean VP baseline.

Sample ``i`` owns the stream ``RngStream(seed).derive(i)``: its prior draw comes
first, then one noise row per reverse step. Samples are processed in blocks of
64 and the network always sees full 64-row blocks, so an ensemble is
bit-identical for any ``count`` prefix and any number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diffusion as dif
from . import geometry as geo
from .rng import RngStream
from .score_model import ROW_CHUNK, ScoreNet, euclidean_score, score_forward


def _reverse_from_raw(net: ScoreNet, sched: dif.NoiseSchedule, psi: np.ndarray, t_k: float, dt: float,
                      raw: np.ndarray) -> np.ndarray:
    sigma = float(dif.sigma_at(sched, t_k))
    score = score_forward(net, psi, np.full(len(psi), t_k))
    # a positive dt here is a step backwards in time, so the forward drift flips sign
    v = (sigma**2 * score - dif.drift(sched, psi, t_k)) * dt
    v = v + sigma * np.sqrt(dt) * geo.horizontal_noise(psi, raw)
    return geo.exp_map(psi, v)


def reverse_step(net: ScoreNet, sched: dif.NoiseSchedule, psi: np.ndarray, t_k: float, dt: float,
                 rng: RngStream) -> np.ndarray:
    """One reverse Euler-Maruyama step from time ``t_k`` to ``t_k - dt``."""
    if not 0 < t_k <= sched.horizon * (1 + 1e-12):
        raise ValueError("need 0 < t_k <= T")
    psi = np.asarray(psi, dtype=complex)
    single = psi.ndim == 1
    batch = psi[None] if single else psi
    raw = rng.normal(batch.shape[:-1] + (2 * batch.shape[-1],))
    out = _reverse_from_raw(net, sched, batch, t_k, dt, raw)
    return out[0] if single else out


def _run_blocks(count: int, threads: int, work) -> None:
    blocks = [(lo, min(lo + ROW_CHUNK, count)) for lo in range(0, count, ROW_CHUNK)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: work(*b), blocks))
    else:
        for b in blocks:
            work(*b)


def sample_ensemble(net: ScoreNet, sched: dif.NoiseSchedule, count: int, seed: int,
                    threads: int = 1) -> np.ndarray:
    """Draw ``count`` states: Haar prior at ``T``, then reverse steps down to ``dt``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    d, n_steps, dt = net.d, sched.n_steps, sched.dt
    if sched.d != d:
        raise ValueError(f"schedule dimension {sched.d} does not match net.d={d}")
    root = RngStream(seed)
    out = np.empty((count, d), dtype=complex)

    def work(lo: int, hi: int) -> None:
        streams = [root.derive(i) for i in range(lo, hi)]
        psi = np.stack([geo.haar_state(d, s) for s in streams])
        noise = np.stack([s.normal((n_steps, 2 * d)) for s in streams], axis=1)
        for k in range(n_steps):
            psi = _reverse_from_raw(net, sched, psi, (n_steps - k) * dt, dt, noise[k])
        out[lo:hi] = geo.normalize(psi)

    _run_blocks(count, threads, work)
    return out


def vp_sample(net: ScoreNet, sched: dif.NoiseSchedule, count: int, seed: int, threads: int = 1) -> np.ndarray:
    """Reverse VP integration in ``R^{2d}`` from ``N(0, I)``, then map to unit states."""
    if count < 1:
        raise ValueError("count must be >= 1")
    d, n_steps, dt = net.d, sched.n_steps, sched.dt
    root = RngStream(seed)
    out = np.empty((count, d), dtype=complex)

    def work(lo: int, hi: int) -> None:
        streams = [root.derive(i) for i in range(lo, hi)]
        x = np.stack([s.normal(2 * d) for s in streams])
        noise = np.stack([s.normal((n_steps, 2 * d)) for s in streams], axis=1)
        for k in range(n_steps):
            t_k = (n_steps - k) * dt
            beta = float(sched.sigma(t_k)) ** 2
            score = euclidean_score(net, x, np.full(len(x), t_k))
            x = x + (0.5 * beta * x + beta * score) * dt + np.sqrt(beta * dt) * noise[k]
        z = x[:, :d] + 1j * x[:, d:]
        n = geo.norm(z)
        for j in np.flatnonzero(~(n > 0)):
            # zero vector has probability zero; fall back to a fresh isotropic draw
            z[j] = root.derive(lo + j, 1).complex_normal(d)
        out[lo:hi] = geo.normalize(z)

    _run_blocks(count, threads, work)
    return out
