"""Dense operators, reduced states and entropies for small qubit registers."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

HERMITIAN_TOL = 1e-12

_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class JacobiDidNotConverge(RuntimeError):
    pass


def _embed(op: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    # qubit 0 is the most significant bit
    out = np.ones((1, 1), dtype=complex)
    for q in range(n_qubits):
        out = np.kron(out, op if q == qubit else np.eye(2, dtype=complex))
    return out


@lru_cache(maxsize=None)
def _pauli_stack(n_qubits: int) -> np.ndarray:
    ops = [_embed(_PAULI[name], q, n_qubits) for q in range(n_qubits) for name in "XYZ"]
    stack = np.stack(ops)
    stack.flags.writeable = False
    return stack


def pauli_observables(n_qubits: int) -> list[np.ndarray]:
    """Single-qubit Paulis ``X_i, Y_i, Z_i`` for every qubit, ordered by qubit."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    return [op.copy() for op in _pauli_stack(n_qubits)]


def gell_mann_basis(d: int) -> list[np.ndarray]:
    """Generalized Gell-Mann matrices normalized to ``Tr(G_j G_k) = 2 delta_jk``.

    Order: symmetric off-diagonal, antisymmetric off-diagonal, diagonal. For
    ``d = 2`` this is ``[X, Y, Z]``.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    sym, anti, diag = [], [], []
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            sym.append(s)
            a = np.zeros((d, d), dtype=complex)
            a[j, k] = -1j
            a[k, j] = 1j
            anti.append(a)
    for l in range(1, d):
        g = np.zeros((d, d), dtype=complex)
        g[np.arange(l), np.arange(l)] = 1.0
        g[l, l] = -l
        diag.append(np.sqrt(2.0 / (l * (l + 1))) * g)
    return sym + anti + diag


def expectation(op: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Real expectation value ``<psi|O|psi>``; broadcasts over leading state axes."""
    op = np.asarray(op, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    if op.shape[-1] != psi.shape[-1]:
        raise ValueError(f"dimension mismatch: operator {op.shape} vs state {psi.shape}")
    val = np.sum(np.conj(psi) * (psi @ op.T), axis=-1)
    scale = max(1.0, float(np.max(np.abs(op))))
    if np.max(np.abs(val.imag), initial=0.0) > 1e-12 * scale * psi.shape[-1]:
        raise ValueError("operator is not Hermitian: complex expectation value")
    return val.real


def _qubit_count(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def partial_trace_first(psi: np.ndarray, n_keep: int, n_total: int) -> np.ndarray:
    """Reduced density matrix of the first ``n_keep`` qubits (big-endian order)."""
    psi = np.asarray(psi, dtype=complex)
    if _qubit_count(psi.shape[-1]) != n_total:
        raise ValueError(f"state dimension {psi.shape[-1]} != 2**{n_total}")
    if not 1 <= n_keep < n_total:
        raise ValueError("need 1 <= n_keep < n_total")
    m = psi.reshape(psi.shape[:-1] + (1 << n_keep, 1 << (n_total - n_keep)))
    return m @ np.conj(np.swapaxes(m, -1, -2))


def _jacobi_symmetric(a: np.ndarray, tol: float, max_sweeps: int) -> np.ndarray:
    """Cyclic Jacobi on a batch of real symmetric matrices; returns their diagonals."""
    a = a.copy()
    n = a.shape[-1]
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    for _ in range(max_sweeps):
        off = np.abs(a - np.einsum("...ii->...i", a)[..., None] * np.eye(n))
        if off.max(initial=0.0) < tol:
            return np.einsum("...ii->...i", a).copy()
        for p, q in pairs:
            apq = a[..., p, q]
            active = np.abs(apq) > 0
            if not np.any(active):
                continue
            tau = a[..., q, q] - a[..., p, p]
            denom = np.abs(tau) + np.hypot(tau, 2.0 * apq)
            safe = np.where(active, denom, 1.0)
            # smaller root of t^2 + (tau/apq) t - 1 = 0, written without dividing by apq
            t = np.where(active, np.where(tau >= 0, 1.0, -1.0) * 2.0 * apq / safe, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cc, ss = c[..., None], s[..., None]
            rp, rq = a[..., p, :].copy(), a[..., q, :].copy()
            a[..., p, :] = cc * rp - ss * rq
            a[..., q, :] = ss * rp + cc * rq
            cp, cq = a[..., :, p].copy(), a[..., :, q].copy()
            a[..., :, p] = cc * cp - ss * cq
            a[..., :, q] = ss * cp + cc * cq
            a[..., p, q] = 0.0
            a[..., q, p] = 0.0
    raise JacobiDidNotConverge(f"off-diagonal still >= {tol} after {max_sweeps} sweeps")


def hermitian_eigenvalues(h: np.ndarray, max_sweeps: int = 100) -> np.ndarray:
    """Ascending eigenvalues of Hermitian matrices via a real-symmetric Jacobi solve.

    ``H = A + iB`` is embedded as ``[[A, -B], [B, A]]``, whose spectrum is that of
    ``H`` with every eigenvalue doubled in multiplicity; one copy of each pair is
    returned. Broadcasts over leading axes.
    """
    h = np.asarray(h, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    if np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2))), initial=0.0) > HERMITIAN_TOL * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    a, b = h.real, h.imag
    top = np.concatenate([a, -b], axis=-1)
    bottom = np.concatenate([b, a], axis=-1)
    emb = np.concatenate([top, bottom], axis=-2)
    diag = np.sort(_jacobi_symmetric(emb, 1e-12 * scale, max_sweeps), axis=-1)
    lo, hi = diag[..., 0::2], diag[..., 1::2]
    if np.max(np.abs(hi - lo), initial=0.0) > 1e-9 * scale:
        raise JacobiDidNotConverge("embedded spectrum is not pairwise degenerate")
    return 0.5 * (lo + hi)


def von_neumann_entropy(rho: np.ndarray) -> np.ndarray:
    """Entropy ``-sum(l ln l)`` in nats, with ``0 ln 0 = 0``."""
    lam = np.clip(hermitian_eigenvalues(rho), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0, -lam * np.log(lam), 0.0)
    return np.sum(terms, axis=-1)
