"""Dense operator and superoperator algebra on a truncated Hilbert space.

Operators are plain ``(d, d)`` complex numpy arrays and vectors of operators
(coupling channels) are ``(n, d, d)`` arrays.  Superoperators act on
column-stacked density matrices, ``vec(rho) = rho.reshape(-1, order="F")``.

Two-level systems use the basis order ``(e, g)``: index 0 is the excited
state, so ``sigma_minus = |g><e| = [[0, 0], [1, 0]]``.
"""

import warnings

import numpy as np

from .errors import DimensionError, ValidationError

HERMITIAN_TOL = 1e-10
TRUNCATION_LIMIT = 1e-6

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    "plus": np.array([[0, 1], [0, 0]], dtype=complex),
    "minus": np.array([[0, 0], [1, 0]], dtype=complex),
}


def annihilation_op(d):
    """Truncated bosonic lowering operator with ``a[j, j+1] = sqrt(j+1)``."""
    if int(d) != d or d < 2:
        raise DimensionError(f"invalid dimension {d!r}: need an integer >= 2", check="invalid-dimension")
    d = int(d)
    return np.diag(np.sqrt(np.arange(1, d)), k=1).astype(complex)


def pauli(name):
    """Return the 2x2 Pauli or ladder matrix called ``name``.

    ``name`` is one of ``x, y, z, plus, minus``.
    """
    try:
        return _PAULI[name].copy()
    except (KeyError, TypeError):
        raise ValidationError(
            f"unknown Pauli name {name!r}; expected one of {sorted(_PAULI)}", check="invalid-argument"
        ) from None


def dag(op):
    """Operator adjoint; acts on the last two axes so it also maps stacks."""
    return np.conj(np.swapaxes(op, -1, -2))


def as_operator(op, d=None, name="operator"):
    arr = np.asarray(op, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise DimensionError(f"{name} has dimension {arr.shape[0]}, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries", check="finite")
    return arr


def as_channels(L, d):
    """Coerce a sequence of coupling operators to an ``(n, d, d)`` array."""
    if isinstance(L, np.ndarray) and L.ndim == 3:
        arr = L.astype(complex, copy=False)
    else:
        ops = [as_operator(op, d, name=f"coupling[{k}]") for k, op in enumerate(L)]
        arr = np.stack(ops) if ops else np.zeros((0, d, d), dtype=complex)
    if arr.shape[1:] != (d, d):
        raise DimensionError(f"coupling operators have shape {arr.shape[1:]}, expected {(d, d)}")
    return arr


def check_hermitian(H, tol=HERMITIAN_TOL, name="H"):
    residual = float(np.max(np.abs(H - dag(H)), initial=0.0))
    if residual > tol:
        raise ValidationError(
            f"{name} is not Hermitian (max |{name} - {name}^*| = {residual:.3e})", check="hermitian", value=residual
        )
    return residual


def _prepare(H, L):
    H = as_operator(H, name="H")
    check_hermitian(H)
    return H, as_channels(L, H.shape[0])


def lindblad_heisenberg(H, L, X):
    """Heisenberg-picture Lindbladian applied to ``X``.

    -i[X, H] + sum_k (L_k^* X L_k - (L_k^* L_k X + X L_k^* L_k) / 2)
    """
    H, L = _prepare(H, L)
    X = as_operator(X, H.shape[0], name="X")
    out = -1j * (X @ H - H @ X)
    for Lk in L:
        Lk_dag = dag(Lk)
        LdL = Lk_dag @ Lk
        out = out + Lk_dag @ X @ Lk - 0.5 * (LdL @ X + X @ LdL)
    return out


def liouvillian_apply(H, L, rho):
    """Schrödinger-picture generator: i[rho, H] + sum_k D[L_k](rho)."""
    H, L = _prepare(H, L)
    rho = as_operator(rho, H.shape[0], name="rho")
    out = 1j * (rho @ H - H @ rho)
    for Lk in L:
        Lk_dag = dag(Lk)
        LdL = Lk_dag @ Lk
        out = out + Lk @ rho @ Lk_dag - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def vec(rho):
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v, d):
    return np.asarray(v).reshape((d, d), order="F")


def liouvillian_matrix(H, L):
    """``d^2 x d^2`` matrix of the Liouvillian acting on ``vec(rho)``.

    Uses vec(A rho B) = (B^T kron A) vec(rho).
    """
    H, L = _prepare(H, L)
    d = H.shape[0]
    eye = np.eye(d)
    sup = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for Lk in L:
        LdL = dag(Lk) @ Lk
        sup = sup + np.kron(Lk.conj(), Lk) - 0.5 * (np.kron(eye, LdL) + np.kron(LdL.T, eye))
    return sup


def psd_project(rho):
    """Nearest PSD trace-1 matrix: clip negative eigenvalues, renormalise."""
    w, v = np.linalg.eigh(0.5 * (rho + dag(rho)))
    w = np.clip(w, 0.0, None)
    out = (v * w[..., None, :]) @ dag(v)
    tr = np.real(np.trace(out, axis1=-2, axis2=-1))
    return out / np.asarray(tr)[..., None, None]


def steady_state(H, L, tol=1e-10):
    """Unique stationary density matrix of the Liouvillian.

    Raises ``ValidationError`` when the null space is degenerate or no
    numerical null vector exists.
    """
    sup = liouvillian_matrix(H, L)
    d = int(round(np.sqrt(sup.shape[0])))
    _, s, vh = np.linalg.svd(sup)
    scale = max(1.0, float(s[0]))
    null = np.flatnonzero(s <= tol * scale)
    if null.size == 0:
        raise ValidationError(
            f"Liouvillian has no null vector (smallest singular value {s[-1]:.3e})", check="no-null-vector"
        )
    if null.size > 1:
        raise ValidationError(
            f"steady state is not unique: null space has dimension {null.size}", check="degenerate-null-space"
        )
    rho = unvec(vh[-1].conj(), d)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + dag(rho))
    if np.linalg.eigvalsh(rho)[0] < -1e-8:
        raise ValidationError("null vector is not a positive operator", check="not-psd")
    rho = psd_project(rho)
    residual = float(np.max(np.abs(liouvillian_apply(H, L, rho))))
    if residual > tol:
        raise ValidationError(f"steady-state residual {residual:.3e} exceeds {tol:g}", check="residual")
    return rho


def embed(op, k, dims):
    """Place ``op`` on subsystem ``k`` of a tensor product with identities elsewhere."""
    out = np.ones((1, 1), dtype=complex)
    for j, dj in enumerate(dims):
        out = np.kron(out, op if j == k else np.eye(dj))
    return out


def top_level_population(rho, dims, subsystems):
    """Largest population in the highest Fock level of the given subsystems.

    ``rho`` may be a single matrix or a stack.
    """
    if not subsystems:
        return 0.0
    diag = np.real(np.diagonal(rho, axis1=-2, axis2=-1)).reshape(np.shape(rho)[:-2] + tuple(dims))
    worst = 0.0
    for k in subsystems:
        top = np.take(diag, dims[k] - 1, axis=diag.ndim - len(dims) + k)
        worst = max(worst, float(np.max(top.sum(axis=tuple(range(top.ndim - len(dims) + 1, top.ndim))))))
    return worst


def warn_truncation(population, limit=TRUNCATION_LIMIT):
    if population > limit:
        warnings.warn(
            f"top Fock level population reached {population:.2e} (> {limit:g}); increase the truncation dimension",
            RuntimeWarning,
            stacklevel=3,
        )
