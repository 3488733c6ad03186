"""Linear quadrature measurements ``Y = G^# A_out + G A_out^#``.

Validation of the measurement matrix, its real quadrature form, completion
to an invertible ``W`` whose rows still commute, and the conditioning gain
``K`` with ``E[Z_W | Z] = K Z`` for the reference noise processes.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError

COMMUTATION_TOL = 1e-12
GAIN_TOL = 1e-10
COND_WARN = 1e8
COND_MAX = 1e12


@dataclass(frozen=True)
class MeasurementSpec:
    G: np.ndarray
    commutation_residual: float

    @property
    def m(self):
        return self.G.shape[0]

    @property
    def nch(self):
        return self.G.shape[1]


@dataclass(frozen=True)
class CompletedMeasurement:
    W: np.ndarray
    Hrows: np.ndarray
    K: np.ndarray
    Sigma: np.ndarray
    condition_number: float

    @property
    def m(self):
        return self.Sigma.shape[0]


def symplectic_form(n):
    """The block matrix ``[[0, I], [-I, 0]]`` of size ``2n``."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def commutation_residual(G):
    """Max entry of ``[G^# G] K_n [G^*; G^T]``, i.e. ``G^# G^T - G G^*``."""
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    n = G.shape[1]
    left = np.hstack([G.conj(), G])
    right = np.vstack([G.conj().T, G.T])
    return float(np.max(np.abs(left @ symplectic_form(n) @ right)))


def validate_measurement(G, nch=None):
    """Check that ``G`` (m x nch) defines a self-commuting, full-rank measurement."""
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    if G.ndim != 2 or G.size == 0:
        raise DimensionError(f"G must be a non-empty matrix, got shape {G.shape}", stage="measurement")
    m, cols = G.shape
    if nch is not None and cols != nch:
        raise DimensionError(f"G has {cols} columns, expected {nch}", stage="measurement")
    if not np.all(np.isfinite(G)):
        raise ValidationError("G has non-finite entries", stage="measurement", check="finite")
    if m > cols:
        raise ValidationError(
            f"too many measurements: m = {m} > {cols} channels", stage="measurement", check="too-many-measurements"
        )
    residual = commutation_residual(G)
    scale = max(1.0, float(np.max(np.abs(G))) ** 2)
    if residual > COMMUTATION_TOL * scale:
        raise ValidationError(
            f"measurement outputs do not commute: G G^* is not real (commutation residual {residual:.3g})",
            stage="measurement",
            check="commutation",
            value=residual,
        )
    rank_pair = np.linalg.matrix_rank(np.hstack([G.conj(), G]))
    if rank_pair < m:
        raise ValidationError(
            f"[G^# G] has rank {rank_pair} < m = {m}", stage="measurement", check="rank-GG", value=rank_pair
        )
    rank_g = np.linalg.matrix_rank(G)
    if rank_g < m:
        raise ValidationError(f"G has rank {rank_g} < m = {m}", stage="measurement", check="rank-G", value=rank_g)
    return MeasurementSpec(G=G, commutation_residual=residual)


def to_quadrature(G):
    """Real form ``[G + G^#, -iG + iG^#]`` acting on (amplitude, phase) quadratures."""
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    return np.hstack([G + G.conj(), -1j * G + 1j * G.conj()]).real


def from_quadrature(T):
    n = T.shape[1] // 2
    return 0.5 * T[:, :n] + 0.5j * T[:, n:]


def _orthonormal_rows(rows):
    if rows.shape[0] == 0:
        return rows
    u, s, vh = np.linalg.svd(rows, full_matrices=False)
    keep = s > 1e-12 * s[0]
    return vh[keep]


def complete_rows(G, order=None):
    """Rows ``H`` such that ``W = [G; H]`` is square with ``W W^*`` real.

    Greedy symplectic Gram-Schmidt in the quadrature picture: each new row is
    the standard basis vector with the largest component outside the span of
    the current rows and their images under the symplectic form.  ``order``
    sets the tie-breaking priority of the basis vectors (default: index order).
    """
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    m, n = G.shape
    J = symplectic_form(n)
    rows = to_quadrature(G)
    order = np.arange(2 * n) if order is None else np.asarray(order)
    if sorted(order.tolist()) != list(range(2 * n)):
        raise ValueError(f"order must be a permutation of range({2 * n})")
    new = []
    for _ in range(n - m):
        basis = _orthonormal_rows(np.vstack([rows, rows @ J.T]))
        cand = np.eye(2 * n)[order]
        resid = cand - (cand @ basis.T) @ basis
        norms = np.linalg.norm(resid, axis=1)
        best = int(np.flatnonzero(norms >= norms.max() - 1e-12)[0])
        if norms[best] < 1e-8:
            raise AssertionError("completion failed: no admissible direction left")
        row = resid[best] / norms[best]
        rows = np.vstack([rows, row])
        new.append(row)
    if not new:
        return np.zeros((0, n), dtype=complex)
    H = from_quadrature(np.array(new))
    return H / np.linalg.norm(H, axis=1, keepdims=True)


def conditioning_gain(W, G):
    """Gain ``K = (W^# G^T)(G^# G^T)^{-1}`` and noise covariance ``Sigma = G^# G^T``."""
    W = np.asarray(W, dtype=complex)
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    Sigma = G.conj() @ G.T
    scale = max(1.0, float(np.max(np.abs(Sigma))))
    if np.max(np.abs(Sigma.imag)) > GAIN_TOL * scale:
        raise ValidationError("G^# G^T is not real", stage="gain", check="sigma-real")
    Sigma = 0.5 * (Sigma.real + Sigma.real.T)
    eig = np.linalg.eigvalsh(Sigma)
    if eig[0] <= 1e-12 * max(1.0, eig[-1]):
        raise ValidationError(
            f"noise covariance G^# G^T is singular (min eigenvalue {eig[0]:.3e}); G must have full rank",
            stage="gain",
            check="sigma-singular",
            value=float(eig[0]),
        )
    K = np.linalg.solve(Sigma, (W.conj() @ G.T).T).T
    imag = float(np.max(np.abs(K.imag)))
    if imag > GAIN_TOL * max(1.0, float(np.max(np.abs(K)))):
        raise ValidationError(
            f"conditioning gain has imaginary part {imag:.3e}", stage="gain", check="gain-real", value=imag
        )
    return K.real.copy(), Sigma


def complete_measurement(spec, order=None):
    """Complete a validated measurement and compute its gain."""
    G = spec.G
    m, n = G.shape
    H = complete_rows(G, order) if m < n else np.zeros((0, n), dtype=complex)
    W = np.vstack([G, H])
    cond = float(np.linalg.cond(W))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise ValidationError(
            f"completed W is ill-conditioned (condition number {cond:.3e})",
            stage="completion",
            check="condition",
            value=cond,
        )
    if cond > COND_WARN:
        warnings.warn(f"completed W has condition number {cond:.3e}", RuntimeWarning, stacklevel=2)
    K, Sigma = conditioning_gain(W, G)
    top = float(np.max(np.abs(K[:m] - np.eye(m))))
    if top > GAIN_TOL:
        raise ValidationError(
            f"top block of the gain differs from I by {top:.3e}", stage="gain", check="gain-top-block", value=top
        )
    return CompletedMeasurement(W=W, Hrows=H, K=K, Sigma=Sigma, condition_number=cond)
