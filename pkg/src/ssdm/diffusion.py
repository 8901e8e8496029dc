"""Forward noising processes on CP^{d-1} and the Euclidean VP baseline.

The intrinsic process is a Riemannian Ornstein-Uhlenbeck diffusion

    d psi = b(psi, t) dt + sigma(t) dW,    b(psi, t) = sign * lambda * Log_psi(anchor)

discretized by Euler-Maruyama steps in the horizontal tangent space followed by
the exact exponential map. ``sign = -1`` is the default.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import brentq

from . import geometry as geo
from .rng import RngStream

log = logging.getLogger(__name__)

CUT_MARGIN = 1e-6
MAX_PAIR_RETRIES = 16


def uniform_superposition(d: int) -> np.ndarray:
    return np.full(d, 1.0 / np.sqrt(d), dtype=complex)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Forward-process constants: sigma(t) = sigma_min * (sigma_max/sigma_min)**(t/T)."""

    anchor: np.ndarray
    sigma_min: float = 0.05
    sigma_max: float = 1.0
    horizon: float = 1.0
    n_steps: int = 500
    lambda_ou: float = 0.2
    drift_sign: int = -1

    def __post_init__(self):
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if self.n_steps < 1 or self.horizon <= 0:
            raise ValueError("need n_steps >= 1 and horizon > 0")
        if self.drift_sign not in (-1, 1):
            raise ValueError("drift_sign must be +1 or -1")
        anchor = geo.normalize(np.asarray(self.anchor, dtype=complex))
        anchor.flags.writeable = False
        object.__setattr__(self, "anchor", anchor)

    @classmethod
    def default(cls, d: int, **overrides) -> "NoiseSchedule":
        return cls(anchor=uniform_superposition(d), **overrides)

    @property
    def d(self) -> int:
        return self.anchor.shape[-1]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def sigma(self, t):
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** (np.asarray(t) / self.horizon)

    def integrated_variance(self, t):
        """Integral of sigma(s)**2 over [0, t]."""
        t = np.asarray(t, dtype=float)
        log_ratio = np.log(self.sigma_max / self.sigma_min)
        if log_ratio == 0.0:
            return self.sigma_min**2 * t
        growth = np.expm1(2.0 * log_ratio * t / self.horizon)
        return self.sigma_min**2 * self.horizon * growth / (2.0 * log_ratio)

    def with_(self, **changes) -> "NoiseSchedule":
        fields = dict(
            anchor=self.anchor, sigma_min=self.sigma_min, sigma_max=self.sigma_max,
            horizon=self.horizon, n_steps=self.n_steps, lambda_ou=self.lambda_ou,
            drift_sign=self.drift_sign,
        )
        fields.update(changes)
        return NoiseSchedule(**fields)


def sigma_at(sched: NoiseSchedule, t):
    t_arr = np.asarray(t, dtype=float)
    slack = 1e-12 * sched.horizon
    if np.any(t_arr < -slack) or np.any(t_arr > sched.horizon + slack):
        raise ValueError(f"t outside [0, {sched.horizon}]")
    return sched.sigma(np.clip(t_arr, 0.0, sched.horizon))


def drift(sched: NoiseSchedule, psi: np.ndarray, t=None) -> np.ndarray:
    """OU drift ``sign * lambda * Log_psi(anchor)``; zero at the anchor's cut locus."""
    psi = np.asarray(psi, dtype=complex)
    if sched.lambda_ou == 0.0:
        return np.zeros_like(psi)
    anchor = np.broadcast_to(sched.anchor, psi.shape)
    on_cut = np.abs(geo.inner(psi, anchor)) <= geo.CUT_LOCUS_TOL
    if np.any(on_cut):
        log.warning("drift: %d state(s) at the anchor cut locus, using zero drift", int(on_cut.sum()))
        anchor = np.where(on_cut[..., None], psi, anchor)
    return sched.drift_sign * sched.lambda_ou * geo.log_map(psi, anchor)


def forward_step_with_noise(sched: NoiseSchedule, psi, t, dt, raw) -> np.ndarray:
    """Forward step driven by a given real ``(..., 2d)`` standard-normal block.

    ``t`` and ``dt`` may be scalars or arrays matching the batch axes.
    """
    psi = np.asarray(psi, dtype=complex)
    sig = np.asarray(sched.sigma(t))
    dt = np.asarray(dt, dtype=float)
    if sig.ndim:
        sig = sig[..., None]
    if dt.ndim:
        dt = dt[..., None]
    v = drift(sched, psi, t) * dt + sig * np.sqrt(dt) * geo.horizontal_noise(psi, raw)
    return geo.exp_map(psi, v)


def forward_step(sched: NoiseSchedule, psi: np.ndarray, t: float, dt: float, rng: RngStream) -> np.ndarray:
    """One Euler-Maruyama step on the manifold: ``Exp_psi(b dt + sigma(t) sqrt(dt) xi)``."""
    psi = np.asarray(psi, dtype=complex)
    if dt < 0 or t < 0 or t + dt > sched.horizon * (1 + 1e-12):
        raise ValueError("need 0 <= t <= t + dt <= T")
    raw = rng.normal(psi.shape[:-1] + (2 * psi.shape[-1],))
    return forward_step_with_noise(sched, psi, t, dt, raw)


def simulate_forward(sched: NoiseSchedule, psi0: np.ndarray, n_steps: int, rng: RngStream,
                     dt: float | None = None, t0: float = 0.0) -> np.ndarray:
    """Run ``n_steps`` forward steps from ``psi0`` (batched over leading axes)."""
    dt = sched.dt if dt is None else dt
    psi = np.asarray(psi0, dtype=complex)
    for k in range(n_steps):
        raw = rng.normal(psi.shape[:-1] + (2 * psi.shape[-1],))
        psi = forward_step_with_noise(sched, psi, t0 + k * dt, dt, raw)
    return psi


# ---------------------------------------------------------------------------
# batched pair simulation (compiled)


@numba.njit(cache=True, nogil=True)
def _em_step_kernel(state, s, h, raw, smin, log_ratio, horizon, lam, sign, anchor):
    d = state.shape[0]
    sigma = smin * np.exp(log_ratio * s / horizon)
    v = np.zeros(d, dtype=np.complex128)
    if lam != 0.0:
        ov = 0j
        for i in range(d):
            ov += np.conj(state[i]) * anchor[i]
        mag = abs(ov)
        if mag > 1e-9:
            ph = np.conj(ov) / mag
            hn2 = 0.0
            for i in range(d):
                v[i] = anchor[i] * ph - mag * state[i]
                hn2 += v[i].real ** 2 + v[i].imag ** 2
            hn = np.sqrt(hn2)
            if hn > 0.0:
                scale = sign * lam * np.arctan2(hn, mag) / hn * h
                for i in range(d):
                    v[i] *= scale
            else:
                v[:] = 0.0
    xi = np.empty(d, dtype=np.complex128)
    for i in range(d):
        xi[i] = raw[i] + 1j * raw[d + i]
    proj = 0j
    for i in range(d):
        proj += np.conj(state[i]) * xi[i]
    noise_scale = sigma * np.sqrt(h)
    n2 = 0.0
    for i in range(d):
        v[i] += noise_scale * (xi[i] - proj * state[i])
        n2 += v[i].real ** 2 + v[i].imag ** 2
    n = np.sqrt(n2)
    c = np.cos(n)
    sn = np.sin(n) / n if n > 0.0 else 1.0
    out = np.empty(d, dtype=np.complex128)
    for i in range(d):
        out[i] = c * state[i] + sn * v[i]
    return out


@numba.njit(cache=True, nogil=True)
def _pair_kernel(psi0, n_full, rem, t_last, dt, noise, offsets, smin, log_ratio, horizon,
                 lam, sign, anchor, phi_out, psi_out):
    for b in range(psi0.shape[0]):
        state = psi0[b].copy()
        j = offsets[b]
        for k in range(n_full[b]):
            state = _em_step_kernel(state, k * dt, dt, noise[j], smin, log_ratio, horizon, lam, sign, anchor)
            j += 1
        if rem[b] > 0.0:
            state = _em_step_kernel(state, n_full[b] * dt, rem[b], noise[j], smin, log_ratio, horizon,
                                    lam, sign, anchor)
            j += 1
        phi_out[b] = state
        psi_out[b] = _em_step_kernel(state, t_last[b], dt, noise[j], smin, log_ratio, horizon,
                                     lam, sign, anchor)


@dataclass
class LocalPair:
    """Consecutive forward states ``(psi_{t-dt}, psi_t)``; arrays may be batched."""

    phi: np.ndarray
    psi: np.ndarray
    t: np.ndarray
    dt: float
    resamples: int = field(default=0)


def _pair_plan(sched: NoiseSchedule, t: np.ndarray):
    dt = sched.dt
    if np.any(t < dt * (1 - 1e-12)) or np.any(t > sched.horizon * (1 + 1e-12)):
        raise ValueError("need dt <= t <= T")
    before = np.maximum(t - dt, 0.0)
    n_full = np.floor(before / dt + 1e-9).astype(np.int64)
    rem = before - n_full * dt
    rem = np.where(rem > 1e-12 * dt, rem, 0.0)
    n_noise = n_full + (rem > 0) + 1
    offsets = np.concatenate([[0], np.cumsum(n_noise)[:-1]]).astype(np.int64)
    return n_full, rem, before, n_noise, offsets


def simulate_pairs_from_noise(sched: NoiseSchedule, psi0: np.ndarray, t: np.ndarray, noise: np.ndarray,
                              threads: int = 1, chunk: int = 16):
    """Deterministic pair simulation given a pre-drawn noise block.

    ``noise`` holds one ``2d`` standard-normal row per step, laid out example by
    example in the order returned by :func:`pair_noise_rows`.
    """
    psi0 = np.ascontiguousarray(psi0, dtype=np.complex128)
    t = np.asarray(t, dtype=float)
    n_full, rem, before, _, offsets = _pair_plan(sched, t)
    phi = np.empty_like(psi0)
    psi = np.empty_like(psi0)
    args = (sched.sigma_min, float(np.log(sched.sigma_max / sched.sigma_min)), sched.horizon,
            float(sched.lambda_ou), float(sched.drift_sign), np.ascontiguousarray(sched.anchor))

    def run(lo: int, hi: int) -> None:
        _pair_kernel(psi0[lo:hi], n_full[lo:hi], rem[lo:hi], before[lo:hi], sched.dt, noise,
                     offsets[lo:hi], *args, phi[lo:hi], psi[lo:hi])

    bounds = [(lo, min(lo + chunk, len(t))) for lo in range(0, len(t), chunk)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: run(*b), bounds))
    else:
        for b in bounds:
            run(*b)
    return phi, psi


def pair_noise_rows(sched: NoiseSchedule, t: np.ndarray) -> int:
    return int(np.sum(_pair_plan(sched, np.asarray(t, dtype=float))[3]))


def simulate_pair(sched: NoiseSchedule, psi0: np.ndarray, t, rng: RngStream, threads: int = 1) -> LocalPair:
    """Forward-simulate from ``psi0`` to obtain ``(psi_{t-dt}, psi_t)``.

    Steps of size ``dt`` run from 0 up to ``t - dt`` (with one shorter step when
    ``t`` is off the grid), ``phi`` is recorded, and one more ``dt`` step gives
    ``psi``. Pairs landing within ``1e-6`` of the cut locus get their last step
    redrawn.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    single = psi0.ndim == 1
    batch = psi0[None] if single else psi0
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), batch.shape[:1]).copy()
    d = batch.shape[-1]
    noise = rng.normal((pair_noise_rows(sched, t_arr), 2 * d))
    phi, psi = simulate_pairs_from_noise(sched, batch, t_arr, noise, threads=threads)
    resamples = 0
    bad = geo.fs_distance(phi, psi) >= np.pi / 2 - CUT_MARGIN
    for _ in range(MAX_PAIR_RETRIES):
        if not np.any(bad):
            break
        idx = np.flatnonzero(bad)
        resamples += idx.size
        raw = rng.normal((idx.size, 2 * d))
        psi[idx] = forward_step_with_noise(sched, phi[idx], t_arr[idx] - sched.dt, sched.dt, raw)
        bad = geo.fs_distance(phi, psi) >= np.pi / 2 - CUT_MARGIN
    else:
        if np.any(bad):
            raise RuntimeError(f"pair resampling failed after {MAX_PAIR_RETRIES} retries")
    if single:
        return LocalPair(phi[0], psi[0], t_arr[0], sched.dt, resamples)
    return LocalPair(phi, psi, t_arr, sched.dt, resamples)


# ---------------------------------------------------------------------------
# stochastic Schrodinger realization


def _stack(generators) -> np.ndarray:
    return np.asarray(generators, dtype=complex)


@numba.njit(cache=True, nogil=True)
def _heun_kernel(gens, sqrt_eta, psi, dw, out):
    n_gen, d = gens.shape[0], gens.shape[1]
    a = np.empty((d, d), dtype=np.complex128)
    m_psi = np.empty(d, dtype=np.complex128)
    pred = np.empty(d, dtype=np.complex128)
    for b in range(psi.shape[0]):
        a[:, :] = 0.0
        for k in range(n_gen):
            coef = -1j * sqrt_eta * dw[b, k]
            for i in range(d):
                for j in range(d):
                    a[i, j] += coef * gens[k, i, j]
        for i in range(d):
            acc = 0j
            for j in range(d):
                acc += a[i, j] * psi[b, j]
            m_psi[i] = acc
            pred[i] = psi[b, i] + acc
        for i in range(d):
            acc = 0j
            for j in range(d):
                acc += a[i, j] * pred[j]
            out[b, i] = psi[b, i] + 0.5 * (m_psi[i] + acc)


def _heun_unnormalized(gens: np.ndarray, eta: float, psi: np.ndarray, dw: np.ndarray) -> np.ndarray:
    # Stratonovich Heun for dpsi = -i sqrt(eta) sum_k G_k psi o dW_k; the radial
    # -eta/2 sum G_k^2 psi term is the Ito correction of this noise and is not
    # integrated separately (it only rescales the norm).
    flat_psi = np.ascontiguousarray(psi.reshape(-1, psi.shape[-1]), dtype=np.complex128)
    flat_dw = np.ascontiguousarray(dw.reshape(-1, dw.shape[-1]), dtype=float)
    out = np.empty_like(flat_psi)
    _heun_kernel(np.ascontiguousarray(gens, dtype=np.complex128), float(np.sqrt(eta)), flat_psi, flat_dw, out)
    return out.reshape(psi.shape)


def sse_step(generators, eta: float, psi: np.ndarray, dt: float, rng: RngStream,
             max_residue: float = 1e-6) -> np.ndarray:
    """One Euler-Heun step of the stochastic-unitary SSE, renormalized.

    Raises ``FloatingPointError`` if the pre-renormalization norm drifts from 1
    by more than ``max_residue`` on average over the batch; that signals
    ``eta * dt`` is too large. (Per trajectory the residue is
    ``|A^2 psi|^2 / 8`` with ``A`` the stochastic generator, so single extreme
    Wiener increments can exceed the bound even at small ``dt``.)
    """
    gens = _stack(generators)
    psi = np.asarray(psi, dtype=complex)
    if eta == 0.0 or dt == 0.0:
        return psi.copy()
    dw = rng.normal(psi.shape[:-1] + (gens.shape[0],)) * np.sqrt(dt)
    out = _heun_unnormalized(gens, eta, psi, dw)
    n = geo.norm(out)
    residue = float(np.mean(np.abs(n - 1.0)))
    if residue >= max_residue:
        raise FloatingPointError(f"SSE norm residue {residue:.2e} >= {max_residue:.0e}; reduce dt")
    return out / n[..., None]


def simulate_sse(generators, eta: float, psi0: np.ndarray, n_steps: int, dt: float, rng: RngStream,
                 max_residue: float = 1e-6) -> np.ndarray:
    psi = np.asarray(psi0, dtype=complex)
    for _ in range(n_steps):
        psi = sse_step(generators, eta, psi, dt, rng, max_residue=max_residue)
    return psi


def sse_displacement_ratio(gens, eta: float, sigma: float, dt: float, psi: np.ndarray, dw: np.ndarray) -> float:
    """Measured one-step ``E[d_FS^2]`` divided by the intrinsic ``sigma^2 (2d-2) dt``."""
    d = psi.shape[-1]
    if eta == 0.0:
        return 0.0
    out = _heun_unnormalized(np.asarray(gens), eta, psi, dw)
    out = out / geo.norm(out)[..., None]
    msd = float(np.mean(geo.fs_distance(psi, out) ** 2))
    return msd / (sigma**2 * (2 * d - 2) * dt)


def calibrate_sse_rate(d: int, sigma: float, dt: float, rng: RngStream, n_samples: int = 50_000,
                       generators=None) -> float:
    """Find the SSE rate ``eta`` matching the intrinsic short-time displacement.

    Uses common random numbers (one set of Haar start states and Wiener
    increments) so the measured ratio is a smooth function of ``eta``, then
    solves ``ratio(eta) = 1`` by Brent's method. Returns ``eta / sigma**2``.
    """
    gens = _stack(gell_mann(d) if generators is None else generators)
    psi = geo.haar_state(d, rng, n_samples)
    dw = rng.normal((n_samples, gens.shape[0])) * np.sqrt(dt)

    def excess(eta: float) -> float:
        return sse_displacement_ratio(gens, eta, sigma, dt, psi, dw) - 1.0

    lo, hi = sigma**2 / 4, sigma**2 * 4
    tried = {}
    for _ in range(6):
        tried[lo], tried[hi] = excess(lo) + 1, excess(hi) + 1
        if tried[lo] < 1.0 < tried[hi]:
            break
        lo, hi = lo / 4, hi * 4
    else:
        report = ", ".join(f"eta={k:.3g}: {v:.4f}" for k, v in sorted(tried.items()))
        raise RuntimeError(f"could not bracket the SSE rate; measured ratios {report}")
    eta = brentq(excess, lo, hi, xtol=1e-10 * sigma**2, rtol=1e-10)
    return eta / sigma**2


def gell_mann(d: int) -> np.ndarray:
    from .quantum_linear import gell_mann_basis

    return np.stack(gell_mann_basis(d))


# ---------------------------------------------------------------------------
# Euclidean VP baseline


def vp_forward_step(x: np.ndarray, t: float, dt: float, sched: NoiseSchedule, rng: RngStream) -> np.ndarray:
    """``x <- x - beta x dt / 2 + sqrt(beta dt) z`` with ``beta(t) = sigma(t)**2``."""
    x = np.asarray(x, dtype=float)
    beta = float(sched.sigma(t)) ** 2
    return x - 0.5 * beta * x * dt + np.sqrt(beta * dt) * rng.normal(x.shape)


def vp_marginal(sched: NoiseSchedule, t):
    """Mean coefficient and standard deviation of the VP perturbation kernel at ``t``."""
    big_b = sched.integrated_variance(t)
    return np.exp(-0.5 * big_b), np.sqrt(-np.expm1(-big_b))
