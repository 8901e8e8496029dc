"""Gauge-invariant ensemble comparisons and kernel diagnostics.

Overlap-kernel statistics use the identity
``mean_{i,j} |<a_i, b_j>|^2 = Tr(rho_a rho_b)`` with ``rho`` the ensemble-mean
density matrix, which makes them linear in the ensemble sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from . import quantum_linear as ql

CSV_HEADER = ("f0", "mmd", "delta_obs", "ent_w1", "n_gen", "n_target", "seed")


def _ensemble(ens) -> np.ndarray:
    ens = np.asarray(ens, dtype=complex)
    if ens.ndim == 1:
        ens = ens[None]
    if ens.ndim != 2 or len(ens) == 0:
        raise ValueError("ensemble must be a non-empty (count, d) array")
    return ens


def _pair(gen, target):
    gen, target = _ensemble(gen), _ensemble(target)
    if gen.shape[1] != target.shape[1]:
        raise ValueError(f"dimension mismatch: {gen.shape[1]} vs {target.shape[1]}")
    return gen, target


def mean_density(ens) -> np.ndarray:
    ens = _ensemble(ens)
    return ens.T @ np.conj(ens) / len(ens)


def _hs(a: np.ndarray, b: np.ndarray) -> float:
    # Tr(a b) for Hermitian a, b
    return float(np.real(np.sum(a * b.T)))


def mean_fidelity(gen, target) -> float:
    """Average ``|<psi, phi>|^2`` over all generated/target pairs."""
    gen, target = _pair(gen, target)
    return min(max(_hs(mean_density(gen), mean_density(target)), 0.0), 1.0)


def mmd2_overlap(gen, target) -> float:
    """Biased (V-statistic) squared MMD under the overlap kernel."""
    gen, target = _pair(gen, target)
    diff = mean_density(gen) - mean_density(target)
    return max(float(np.sum(diff.real**2 + diff.imag**2)), 0.0)


def mmd_overlap(gen, target) -> float:
    return float(np.sqrt(mmd2_overlap(gen, target)))


def delta_obs(gen, target, n_qubits: int) -> float:
    """Mean absolute gap of single-qubit Pauli expectations."""
    gen, target = _pair(gen, target)
    if gen.shape[1] != 1 << n_qubits:
        raise ValueError(f"dimension {gen.shape[1]} is not 2**{n_qubits}")
    ops = ql.pauli_observables(n_qubits)
    gaps = [abs(ql.expectation(op, gen).mean() - ql.expectation(op, target).mean()) for op in ops]
    return float(np.mean(gaps))


def entanglement_profile(ens, n_qubits: int) -> np.ndarray:
    """Entropy (nats) of the first ``n // 2`` qubits for every state."""
    if n_qubits < 2:
        raise ValueError("entanglement needs at least 2 qubits")
    rho = ql.partial_trace_first(_ensemble(ens), n_qubits // 2, n_qubits)
    return ql.von_neumann_entropy(rho)


def wasserstein1(a, b) -> float:
    """Exact 1-D Wasserstein-1 distance between empirical samples."""
    a, b = np.asarray(a, dtype=float).ravel(), np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    return float(scipy.stats.wasserstein_distance(a, b))


def _check_kernel(k, y):
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if k.ndim != 2 or k.shape != (y.size, y.size):
        raise ValueError("kernel must be N x N with N labels")
    if np.max(np.abs(k - k.T), initial=0.0) > 1e-8:
        raise ValueError("kernel is not symmetric")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 / -1")
    return k, y


def kernel_alignment(k, y) -> float:
    """Frobenius cosine between ``K`` and ``y y^T``."""
    k, y = _check_kernel(k, y)
    nk = np.linalg.norm(k)
    if nk == 0:
        raise ValueError("kernel has zero norm")
    return float(y @ k @ y / (nk * (y @ y)))


def kernel_gap(k, y) -> float:
    """Mean same-class minus mean cross-class similarity, off-diagonal pairs only."""
    k, y = _check_kernel(k, y)
    for label in (-1.0, 1.0):
        if np.sum(y == label) < 2:
            raise ValueError(f"class {label:+.0f} has fewer than 2 members")
    same = np.equal.outer(y, y)
    off = ~np.eye(y.size, dtype=bool)
    return float(k[same & off].mean() - k[~same].mean())


def mean_margin(k, y, ridge: float = 1e-3) -> float:
    """Mean ``y_i f(x_i)`` of kernel ridge regression fitted on the same points."""
    k, y = _check_kernel(k, y)
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    try:
        alpha = scipy.linalg.solve(k + ridge * np.eye(y.size), y, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ValueError(f"singular ridge system: {exc}") from exc
    return float(np.mean(y * (k @ alpha)))


def overlap_kernel(ens) -> np.ndarray:
    ens = _ensemble(ens)
    return np.abs(np.conj(ens) @ ens.T) ** 2


@dataclass(frozen=True)
class EnsembleMetrics:
    f0: float
    mmd: float
    delta_obs: float
    ent_w1: float
    n_generated: int
    n_target: int
    seed: int | None = None

    @property
    def mmd2(self) -> float:
        return self.mmd**2

    def csv_row(self) -> str:
        seed = "" if self.seed is None else str(self.seed)
        vals = (repr(self.f0), repr(self.mmd), repr(self.delta_obs), repr(self.ent_w1),
                str(self.n_generated), str(self.n_target), seed)
        return ",".join(vals)

    def to_csv(self) -> str:
        return ",".join(CSV_HEADER) + "\n" + self.csv_row() + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "EnsembleMetrics":
        lines = text.strip().splitlines()
        if len(lines) != 2 or tuple(lines[0].split(",")) != CSV_HEADER:
            raise ValueError("metrics CSV must be the fixed header plus one row")
        f = lines[1].split(",")
        return cls(float(f[0]), float(f[1]), float(f[2]), float(f[3]), int(f[4]), int(f[5]),
                   int(f[6]) if f[6] else None)


def evaluate(gen, target, n_qubits: int, seed: int | None = None) -> EnsembleMetrics:
    gen, target = _pair(gen, target)
    if n_qubits >= 2:
        ent = wasserstein1(entanglement_profile(gen, n_qubits), entanglement_profile(target, n_qubits))
    else:
        ent = 0.0
    return EnsembleMetrics(
        f0=mean_fidelity(gen, target),
        mmd=mmd_overlap(gen, target),
        delta_obs=delta_obs(gen, target, n_qubits),
        ent_w1=ent,
        n_generated=len(gen),
        n_target=len(target),
        seed=seed,
    )
