"""Local-time teacher scores and the training loops."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffusion as dif
from . import geometry as geo
from .rng import RngStream
from .score_model import AdamState, ScoreNet, adam_step, loss_and_grads

log = logging.getLogger(__name__)

_INIT_TAG = 0
_STEP_TAG = 1


@dataclass
class TrainConfig:
    schedule: dif.NoiseSchedule
    steps: int = 10_000
    batch: int = 64
    pool_size: int = 4096
    seed: int = 0
    log_every: int = 1
    lr: float = 2e-4
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    hidden: int = 512
    phase_augment: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.log_every < 1:
            raise ValueError("need steps >= 0, batch >= 1, log_every >= 1")
        if self.pool_size < self.batch:
            raise ValueError("pool_size must be >= batch")


@dataclass
class TrainLog:
    step: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    resample_count: list[int] = field(default_factory=list)

    HEADER = ("step", "loss", "wall_ms", "resample_count")

    def append(self, step: int, loss: float, wall_ms: float, resamples: int) -> None:
        self.step.append(step)
        self.loss.append(loss)
        self.wall_ms.append(wall_ms)
        self.resample_count.append(resamples)

    def rows(self):
        return zip(self.step, self.loss, self.wall_ms, self.resample_count)

    def to_csv(self, include_wall: bool = True) -> str:
        lines = [",".join(self.HEADER)]
        for step, loss, wall, res in self.rows():
            wall_s = f"{wall:.3f}" if include_wall else "0"
            lines.append(f"{step},{loss!r},{wall_s},{res}")
        return "\n".join(lines) + "\n"


def loss_weight(sched: dif.NoiseSchedule, t):
    """Variance weight ``sigma(t)^2 * dt`` of the local-time objective."""
    return dif.sigma_at(sched, t) ** 2 * sched.dt


def teacher_score(pair: dif.LocalPair, sched: dif.NoiseSchedule) -> np.ndarray:
    """Gaussian transition score at ``phi`` carried to ``psi`` along their geodesic.

    ``z = Log_phi(psi)`` and the score at ``phi`` is ``-z / (sigma(t)^2 dt)``;
    the result is horizontal at ``pair.psi`` with norm ``|z| / (sigma^2 dt)``.
    """
    z = geo.log_map(pair.phi, pair.psi)
    var = np.asarray(loss_weight(sched, pair.t))
    scaled = -z / (var[..., None] if var.ndim else var)
    return geo.parallel_transport(pair.phi, pair.psi, scaled)


def _init(config: TrainConfig, d: int, rng: RngStream, head: str):
    net = ScoreNet.create(d, rng.derive(_INIT_TAG), hidden=config.hidden, head=head,
                          horizon=config.schedule.horizon)
    opt = AdamState.for_net(net, lr=config.lr, weight_decay=config.weight_decay, clip_norm=config.clip_norm)
    return net, opt


def _check_loss(loss: float, step: int, t: np.ndarray, dist: np.ndarray | None) -> None:
    if np.isfinite(loss):
        return
    msg = f"non-finite loss at step {step}; t in [{t.min():.4f}, {t.max():.4f}]"
    if dist is not None:
        msg += f", pair distances in [{dist.min():.3e}, {dist.max():.3e}]"
    raise FloatingPointError(msg)


def _pool(data: np.ndarray, pool_size: int) -> np.ndarray:
    data = np.asarray(data, dtype=complex)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("training data must be a non-empty (count, d) array")
    return data[: min(pool_size, len(data))]


def train(config: TrainConfig, data: np.ndarray, rng: RngStream | None = None):
    """Fit the horizontal-head score net to local-time teacher scores.

    Each step uses its own derived stream: pool indices, per-example times
    ``t ~ U(dt, T)``, forward noise for the pair simulation and, when enabled,
    a random global phase applied to ``psi`` and its teacher.
    Returns ``(net, optimizer_state, log)``.
    """
    rng = RngStream(config.seed) if rng is None else rng
    sched = config.schedule
    pool = _pool(data, config.pool_size)
    net, opt = _init(config, pool.shape[1], rng, "horizontal")
    history = TrainLog()
    for step in range(config.steps):
        start = time.perf_counter()
        srng = rng.derive(_STEP_TAG, step)
        idx = srng.integers(0, len(pool), config.batch)
        t = srng.uniform(sched.dt, sched.horizon, config.batch)
        pair = dif.simulate_pair(sched, pool[idx], t, srng, threads=config.threads)
        target = teacher_score(pair, sched)
        psi = pair.psi
        if config.phase_augment:
            phase = np.exp(1j * srng.uniform(0.0, 2 * np.pi, config.batch))[:, None]
            psi, target = psi * phase, target * phase
        loss, grads = loss_and_grads(net, psi, target, t, loss_weight(sched, t))
        _check_loss(loss, step, t, geo.fs_distance(pair.phi, pair.psi))
        adam_step(net, opt, grads, step_index=step)
        if step % config.log_every == 0 or step == config.steps - 1:
            history.append(step, loss, 1e3 * (time.perf_counter() - start), pair.resamples)
    return net, opt, history


def _to_real(states: np.ndarray) -> np.ndarray:
    return np.concatenate([states.real, states.imag], axis=-1)


def train_vp(config: TrainConfig, data: np.ndarray, rng: RngStream | None = None):
    """Euclidean VP baseline: denoising score matching on ``[Re psi, Im psi]``.

    Uses the closed-form perturbation kernel with ``beta = sigma^2``: target
    ``-z / std`` with weight ``std^2``.
    """
    rng = RngStream(config.seed) if rng is None else rng
    sched = config.schedule
    pool = _to_real(_pool(data, config.pool_size))
    net, opt = _init(config, pool.shape[1] // 2, rng, "identity")
    history = TrainLog()
    for step in range(config.steps):
        start = time.perf_counter()
        srng = rng.derive(_STEP_TAG, step)
        idx = srng.integers(0, len(pool), config.batch)
        t = srng.uniform(sched.dt, sched.horizon, config.batch)
        mean, std = dif.vp_marginal(sched, t)
        z = srng.normal((config.batch, pool.shape[1]))
        x = mean[:, None] * pool[idx] + std[:, None] * z
        loss, grads = loss_and_grads(net, x, -z / std[:, None], t, std**2)
        _check_loss(loss, step, t, None)
        adam_step(net, opt, grads, step_index=step)
        if step % config.log_every == 0 or step == config.steps - 1:
            history.append(step, loss, 1e3 * (time.perf_counter() - start), 0)
    return net, opt, history


@dataclass
class ConsistencyReport:
    relative_error: float
    mean_norm: float
    mean_standard_error: float
    covariance: np.ndarray
    target_variance: float

    @property
    def covariance_ok(self) -> bool:
        return self.relative_error < 0.05

    @property
    def mean_ok(self) -> bool:
        return self.mean_norm <= 3.0 * self.mean_standard_error

    @property
    def passed(self) -> bool:
        return self.covariance_ok and self.mean_ok


def teacher_consistency_check(sched: dif.NoiseSchedule, phi: np.ndarray, t: float, n_samples: int,
                              rng: RngStream) -> ConsistencyReport:
    """Fit the one-step displacement covariance from ``phi`` against ``sigma(t)^2 dt I``.

    Drift is switched off. Transitions run from ``t - dt`` to ``t``, as in the
    training pairs; displacements ``z = Log_phi(psi)`` are read out in a fixed
    real orthonormal horizontal frame at ``phi``.
    """
    free = sched.with_(lambda_ou=0.0)
    phi = geo.normalize(np.asarray(phi, dtype=complex))
    start = np.broadcast_to(phi, (n_samples, phi.shape[-1]))
    psi = dif.forward_step(free, start, t - free.dt, free.dt, rng)
    z = geo.log_map(start, psi)
    coords = np.real(np.conj(geo.horizontal_frame(phi)) @ z.T).T
    cov = np.cov(coords, rowvar=False, bias=False)
    target = float(loss_weight(free, t))
    rel = float(np.linalg.norm(cov - target * np.eye(cov.shape[0])) / np.linalg.norm(target * np.eye(cov.shape[0])))
    mean = coords.mean(axis=0)
    se = float(np.sqrt(np.trace(cov) / n_samples))
    return ConsistencyReport(rel, float(np.linalg.norm(mean)), se, cov, target)
