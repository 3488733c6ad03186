"""Zero-mean Gaussian field states and their doubled-vacuum representation.

A Gaussian state of ``n`` boson fields is fixed by the correlations
``<b_j^* b_k> = N_jk`` and ``<b_j b_k> = M_jk``.  Its annihilators can be
realised on two independent vacuum fields as ``B = C1 A1 + C2 A2 + C3 A2^#``;
this module finds such ``(C1, C2, C3)`` and lifts coupling operators and
measurement matrices into that doubled vacuum picture.

Notation: ``X^#`` is the entrywise conjugate, ``X^*`` the conjugate transpose.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, ValidationError
from .hilbert import dag

STRUCTURE_TOL = 1e-12
PSD_TOL = 1e-10
FACTOR_TOL = 1e-10
NULL_TOL = 1e-14


def _square(x, name):
    arr = np.atleast_2d(np.asarray(x, dtype=complex))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {arr.shape}", stage="field")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries", stage="field", check="finite")
    return arr


@dataclass(frozen=True)
class GaussianFieldSpec:
    """Validated field parameters; build with :func:`validate_gaussian`."""

    N: np.ndarray
    M: np.ndarray
    F: np.ndarray
    min_eigenvalue: float

    @property
    def n(self):
        return self.N.shape[0]

    @property
    def is_vacuum(self):
        return not np.any(self.N) and not np.any(self.M)

    @cached_property
    def coefficients(self):
        return factorize(self)


@dataclass(frozen=True)
class ArakiWoodsCoefficients:
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    # the (N, M) the triple was built for; used for consistency checks downstream
    N: np.ndarray
    M: np.ndarray

    @property
    def n(self):
        return self.C1.shape[0]

    def residuals(self):
        """Residuals of the commutation, number and pair-correlation equations."""
        C1, C2, C3 = self.C1, self.C2, self.C3
        eye = np.eye(self.n)
        return {
            "commutation": float(np.max(np.abs(C1 @ dag(C1) + C2 @ dag(C2) - C3 @ dag(C3) - eye))),
            "number": float(np.max(np.abs(C3 @ dag(C3) - self.N.T))),
            "pair": float(np.max(np.abs(C2 @ C3.T - self.M))),
        }


@dataclass(frozen=True)
class ItoTable:
    """Coefficients (per unit dt) of the products of field increments.

    ``dB_dBdag[j, k]`` multiplies ``dB_j dB_k^*`` and so on.
    """

    dB_dBdag: np.ndarray
    dB_dB: np.ndarray
    dBdag_dBdag: np.ndarray
    dBdag_dB: np.ndarray

    def blocks(self):
        return (self.dB_dBdag, self.dB_dB, self.dBdag_dBdag, self.dBdag_dB)

    @classmethod
    def from_coefficients(cls, C):
        """Table implied by a doubled-vacuum realisation and the vacuum Itô rule."""
        C1, C2, C3 = C.C1, C.C2, C.C3
        return cls(
            dB_dBdag=C1 @ dag(C1) + C2 @ dag(C2),
            dB_dB=C2 @ C3.T,
            dBdag_dBdag=C3.conj() @ dag(C2),
            dBdag_dB=C3.conj() @ C3.T,
        )


def validate_gaussian(N, M=None):
    """Check ``(N, M)`` describe a physical Gaussian state and build ``F``.

    ``F = [[I + N^T, M], [M^*, N]]`` must be positive semidefinite.
    """
    N = _square(N, "N")
    M = np.zeros_like(N) if M is None else _square(M, "M")
    if M.shape != N.shape:
        raise DimensionError(f"N is {N.shape} but M is {M.shape}", stage="field")
    n = N.shape[0]

    herm = float(np.max(np.abs(N - dag(N))))
    if herm > STRUCTURE_TOL:
        raise ValidationError(
            f"field.N is not Hermitian (residual {herm:.3e})", stage="field", check="N-hermitian", value=herm
        )
    sym = float(np.max(np.abs(M - M.T)))
    if sym > STRUCTURE_TOL:
        raise ValidationError(
            f"field.M is not symmetric (residual {sym:.3e})", stage="field", check="M-symmetric", value=sym
        )
    N = 0.5 * (N + dag(N))
    M = 0.5 * (M + M.T)

    F = np.block([[np.eye(n) + N.T, M], [dag(M), N]])
    lam = float(np.linalg.eigvalsh(F)[0])
    if lam < -PSD_TOL:
        raise ValidationError(
            f"F-positivity violated: min eigenvalue of F is {lam:.6g}", stage="field", check="F-positivity", value=lam
        )
    if n == 1:
        nn, mm = N[0, 0].real, abs(M[0, 0]) ** 2
        if nn < -PSD_TOL or mm > nn * (nn + 1) + PSD_TOL:
            raise ValidationError(
                f"F-positivity violated: |M|^2 = {mm:.6g} > N(N+1) = {nn * (nn + 1):.6g}",
                stage="field",
                check="F-positivity",
                value=lam,
            )
    return GaussianFieldSpec(N=N, M=M, F=F, min_eigenvalue=lam)


def vacuum(n):
    return validate_gaussian(np.zeros((n, n)), np.zeros((n, n)))


def factorize(spec, tol=FACTOR_TOL):
    """Doubled-vacuum coefficients ``(C1, C2, C3)`` for a validated spec.

    C3 is the conjugate of sqrt(N), C2 solves C2 C3^T = M through a
    pseudo-inverse, and C1 is the square root of what remains of I + N^T.
    """
    N, M = spec.N, spec.M
    n = spec.n
    w, v = np.linalg.eigh(N)
    # eigenvalues at roundoff level belong to the kernel; keeping them would blow up R^+
    w = np.where(w <= NULL_TOL * max(1.0, float(w[-1])), 0.0, w)
    root = np.sqrt(w)
    R = (v * root) @ dag(v)
    R_pinv = (v * np.divide(1.0, root, out=np.zeros_like(root), where=root > 0)) @ dag(v)
    C3 = R.conj()
    # C3^T = R, so C2 = M R^+; exact because F >= 0 puts range(M^*) inside range(N)
    C2 = M @ R_pinv
    P = np.eye(n) + N.T - C2 @ dag(C2)
    P = 0.5 * (P + dag(P))
    lam = float(np.linalg.eigvalsh(P)[0])
    if lam < -tol:
        raise ValidationError(
            f"factorization failed: I + N^T - C2 C2^* has eigenvalue {lam:.3e}",
            stage="factorization",
            check="residual",
            value=lam,
        )
    # eigenvalues within tol of zero are roundoff of an exactly singular P (pure squeezing)
    w, v = np.linalg.eigh(P)
    w = np.where(w <= tol, 0.0, w)
    C1 = (v * np.sqrt(w)) @ dag(v)
    coeffs = ArakiWoodsCoefficients(C1=C1, C2=C2, C3=C3, N=N, M=M)
    res = coeffs.residuals()
    if max(res.values()) > tol:
        detail = ", ".join(f"{k}={v:.3e}" for k, v in res.items())
        raise ValidationError(
            f"factorization residuals exceed {tol:g}: {detail}", stage="factorization", check="residual", value=res
        )
    return coeffs


def ito_table(spec):
    """Itô products of the Gaussian field increments."""
    n = spec.n
    return ItoTable(
        dB_dBdag=np.eye(n) + spec.N.T,
        dB_dB=spec.M.copy(),
        dBdag_dBdag=spec.M.conj(),
        dBdag_dB=spec.N.copy(),
    )


def lift_coupling(L, C):
    """Coupling vector seen by the doubled vacuum field.

    Returns the ``2n`` operators ``(C1^* L, C2^* L - C3^T L^#)`` where
    ``L^#`` is the vector of operator adjoints.
    """
    L = np.asarray(L, dtype=complex)
    if L.ndim != 3 or L.shape[0] != C.n:
        raise DimensionError(f"need {C.n} coupling operators, got array of shape {L.shape}", stage="field")
    top = np.einsum("jk,kab->jab", dag(C.C1), L)
    bottom = np.einsum("jk,kab->jab", dag(C.C2), L) - np.einsum("jk,kab->jab", C.C3.T, dag(L))
    return np.concatenate([top, bottom])


def measurement_covariance(G, N, M):
    """Itô covariance of ``dY = G^# dB + G dB^#`` computed from the field table."""
    n = N.shape[0]
    Gc = G.conj()
    return Gc @ (np.eye(n) + N.T) @ G.T + G @ N @ dag(G) + Gc @ M @ dag(G) + G @ M.conj() @ G.T


def lift_measurement(G, C, tol=PSD_TOL):
    """Measurement matrix ``[G C1^#, G^# C3 + G C2^#]`` on the doubled vacuum."""
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    if G.shape[1] != C.n:
        raise DimensionError(f"G has {G.shape[1]} columns, expected {C.n}", stage="field")
    Gt = np.hstack([G @ C.C1.conj(), G.conj() @ C.C3 + G @ C.C2.conj()])
    lifted = Gt.conj() @ Gt.T
    direct = measurement_covariance(G, C.N, C.M)
    residual = float(np.max(np.abs(lifted - direct)))
    if residual > tol * max(1.0, float(np.max(np.abs(direct)))):
        raise ValidationError(
            f"lifted measurement covariance disagrees with the field table (residual {residual:.3e})",
            stage="field",
            check="covariance-consistency",
            value=residual,
        )
    return Gt
