import numpy as np
import pytest
from scipy.linalg import expm

from qfilter import hilbert
from qfilter.measurement import from_quadrature, symplectic_form


def random_unitary(rng, n):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_field(rng, n, pure=False, rank_deficient=False):
    """Random physical ``(N, M)``: a Bogoliubov transform of a thermal state.

    b = U a + V a^# with U = W1 cosh(r) W2, V = W1 sinh(r) W2^#, where ``a``
    has occupations ``t``.  Then N = U^# t U^T + V^# (1 + t) V^T and
    M = U (1 + t) V^T + V t U^T.
    """
    W1, W2 = random_unitary(rng, n), random_unitary(rng, n)
    r = rng.uniform(0, 1.2, n)
    t = np.zeros(n) if pure else rng.exponential(0.5, n)
    if rank_deficient:
        r[0] = 0.0
        t[0] = 0.0
    U = W1 @ np.diag(np.cosh(r)) @ W2
    V = W1 @ np.diag(np.sinh(r)) @ W2.conj()
    T = np.diag(t)
    eye = np.eye(n)
    N = U.conj() @ T @ U.T + V.conj() @ (eye + T) @ V.T
    M = U @ (eye + T) @ V.T + V @ T @ U.T
    return 0.5 * (N + N.conj().T), 0.5 * (M + M.T)


def random_isotropic_G(rng, m, n, scale=0.5):
    """m x n complex G with commuting outputs: R [I_m 0] S for a random symplectic S."""
    h = rng.normal(size=(2 * n, 2 * n)) * scale
    S = expm(symplectic_form(n) @ (h + h.T) / 2)
    R = rng.normal(size=(m, m)) + 3 * np.eye(m)
    T = R @ S[:m]
    return from_quadrature(T)


@pytest.fixture
def qubit_ops():
    return {
        "sm": hilbert.pauli("minus"),
        "sp": hilbert.pauli("plus"),
        "sx": hilbert.pauli("x"),
        "sy": hilbert.pauli("y"),
        "sz": hilbert.pauli("z"),
        "plus": 0.5 * np.array([[1, 1], [1, 1]], dtype=complex),
        "e": np.diag([1, 0]).astype(complex),
    }
