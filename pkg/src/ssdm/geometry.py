r"""Fubini-Study geometry of the pure-state manifold :math:`\mathbb{CP}^{d-1}`.

States are complex arrays of shape ``(..., d)`` with unit Euclidean norm and
arbitrary global phase. A tangent vector at a state ``base`` is a complex array
of the same shape that is horizontal, i.e. :math:`\langle base, v\rangle = 0`.
With this convention the FS norm of a tangent vector is its Euclidean norm and
geodesic distances lie in :math:`[0, \pi/2]`.

All functions broadcast over leading axes and never mutate their inputs.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream

CUT_LOCUS_TOL = 1e-9


class OrthogonalStates(ValueError):
    """Raised when a log map or transport is requested at the cut locus."""


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hermitian inner product along the last axis, conjugate-linear in ``a``."""
    return np.sum(np.conj(a) * b, axis=-1)


def norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v.real**2 + v.imag**2, axis=-1))


def overlap(psi: np.ndarray, phi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    _check_dims(psi, phi)
    return inner(psi, phi)


def fs_distance(psi: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Geodesic distance ``arccos |<psi, phi>|``.

    Evaluated as ``atan2(|phi_perp|, |<psi, phi>|)`` so that nearly coincident
    and nearly orthogonal pairs keep full relative precision.
    """
    psi = np.asarray(psi, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    ov = overlap(psi, phi)
    perp = phi - ov[..., None] * psi
    return np.arctan2(norm(perp), np.abs(ov))


def phase_align(base: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Return ``phi`` rotated so that ``<base, phi>`` is real and positive."""
    base = np.asarray(base, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    ov = overlap(base, phi)
    mag = np.abs(ov)
    if np.any(mag <= CUT_LOCUS_TOL):
        raise OrthogonalStates(f"|overlap| = {np.min(mag):.3e} at or below {CUT_LOCUS_TOL}")
    return phi * (np.conj(ov) / mag)[..., None]


def project_horizontal(base: np.ndarray, ambient: np.ndarray) -> np.ndarray:
    """Remove the radial and phase components of ``ambient`` at ``base``."""
    base = np.asarray(base, dtype=complex)
    ambient = np.asarray(ambient, dtype=complex)
    _check_dims(base, ambient)
    return ambient - inner(base, ambient)[..., None] * base


def exp_map(base: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Follow the geodesic from ``base`` with initial velocity ``v`` for unit time."""
    base = np.asarray(base, dtype=complex)
    v = np.asarray(v, dtype=complex)
    n = norm(v)[..., None]
    safe = np.where(n > 0, n, 1.0)
    sinc = np.where(n > 0, np.sin(safe) / safe, 1.0)
    return np.cos(n) * base + sinc * v


def _geodesic_frame(base: np.ndarray, target: np.ndarray):
    """Phase-aligned target, unit direction, distance and the alignment phase."""
    ov = overlap(base, target)
    mag = np.abs(ov)
    if np.any(mag <= CUT_LOCUS_TOL):
        raise OrthogonalStates(f"|overlap| = {np.min(mag):.3e} at or below {CUT_LOCUS_TOL}")
    phase = ov / mag
    aligned = target * np.conj(phase)[..., None]
    h = aligned - mag[..., None] * base
    hn = norm(h)
    r = np.arctan2(hn, mag)
    safe = np.where(hn > 0, hn, 1.0)
    u = np.where((hn > 0)[..., None], h / safe[..., None], 0.0)
    return aligned, u, r, phase


def log_map(base: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Initial velocity at ``base`` of the minimal geodesic reaching ``target``.

    Raises :class:`OrthogonalStates` when ``|<base, target>| <= 1e-9``.
    """
    base = np.asarray(base, dtype=complex)
    target = np.asarray(target, dtype=complex)
    _check_dims(base, target)
    _, u, r, _ = _geodesic_frame(base, target)
    return r[..., None] * u


def parallel_transport(base: np.ndarray, target: np.ndarray, w: np.ndarray) -> np.ndarray:
    r"""Levi-Civita transport of ``w`` along the geodesic from ``base`` to ``target``.

    With ``u`` the unit geodesic direction and ``r`` the distance, the complex
    line spanned by ``u`` rotates into the geodesic velocity and everything
    orthogonal to it is carried unchanged:

    .. math:: w' = w + \langle u, w\rangle\big((\cos r - 1)u - \sin r\, base\big)

    The result is expressed at the representative ``target`` as passed in (not
    at its phase-aligned copy), so the output is horizontal at ``target``.
    """
    base = np.asarray(base, dtype=complex)
    target = np.asarray(target, dtype=complex)
    w = np.asarray(w, dtype=complex)
    _check_dims(base, target)
    aligned, u, r, phase = _geodesic_frame(base, target)
    c = inner(u, w)[..., None]
    moved = w + c * ((np.cos(r)[..., None] - 1.0) * u - np.sin(r)[..., None] * base)
    moved = project_horizontal(aligned, moved)
    return moved * phase[..., None]


def horizontal_noise(base: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Map a real ``(..., 2d)`` standard normal block to horizontal noise at ``base``."""
    base = np.asarray(base, dtype=complex)
    d = base.shape[-1]
    return project_horizontal(base, raw[..., :d] + 1j * raw[..., d:])


def sample_horizontal_gaussian(base: np.ndarray, rng: RngStream) -> np.ndarray:
    """Isotropic standard Gaussian on the ``2d - 2`` real-dimensional tangent space."""
    base = np.asarray(base, dtype=complex)
    raw = rng.normal(base.shape[:-1] + (2 * base.shape[-1],))
    return horizontal_noise(base, raw)


def haar_state(d: int, rng: RngStream, size: int | tuple | None = None) -> np.ndarray:
    """Unitarily invariant random state(s) of dimension ``d``."""
    if d < 2:
        raise ValueError("d must be >= 2")
    lead = () if size is None else tuple(np.atleast_1d(size))
    z = rng.complex_normal(lead + (d,))
    return z / norm(z)[..., None]


def basis_state(d: int, index: int = 0) -> np.ndarray:
    e = np.zeros(d, dtype=complex)
    e[index] = 1.0
    return e


def normalize(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return psi / norm(psi)[..., None]


def horizontal_frame(base: np.ndarray) -> np.ndarray:
    """Real orthonormal frame ``(2d - 2, d)`` of the horizontal space at one state.

    Rows are ``e_k`` and ``i e_k`` for a unitary completion ``e_2 .. e_d`` of
    ``base``; coordinates of a tangent ``v`` are ``Re <row, v>``.
    """
    base = normalize(base)
    d = base.shape[-1]
    seed = np.eye(d, dtype=complex)
    seed[:, 0] = base
    q, _ = np.linalg.qr(seed)
    rest = q[:, 1:].T
    return np.concatenate([rest, 1j * rest])
