"""Filter assembly and integration of the stochastic master equation.

The conditional state obeys

    d rho = Lv(rho) dt + sum_j (M_j rho + rho M_j^* - Tr(rho (M_j + M_j^*)) rho) d nu_j

where ``Lv`` is the Liouvillian built from the effective coupling vector,
``M_j = sum_k K_kj (L_W)_k`` are the gain operators (``L_W = W^{-T} L_eff``)
and ``nu`` is the innovations process with covariance ``Sigma dt``.  The
measurement record is ``dY = Sigma Tr(rho (M + M^*)) dt + d nu``.

All state arrays may carry leading batch axes; trajectories in an ensemble
are integrated together as one ``(B, d, d)`` stack.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import hilbert
from .errors import DimensionError, IntegrationError, ValidationError
from .gaussian_field import GaussianFieldSpec, lift_coupling, lift_measurement, vacuum, validate_gaussian
from .hilbert import dag
from .measurement import complete_measurement, validate_measurement

TRACE_TOL = 1e-9
TRACE_FAIL = 1e-6
PSD_FLOOR = -1e-12
PSD_FAIL = -1e-8
GAIN_CONSISTENCY_TOL = 1e-9
CHUNK_SIZE = 500
WORKERS_ENV = "QFILTER_WORKERS"


@dataclass(frozen=True)
class SystemSpec:
    """System Hamiltonian, coupling vector (length n) and initial state."""

    H: np.ndarray
    L: np.ndarray
    rho0: np.ndarray
    dims: tuple = ()
    bosonic: tuple = ()

    @property
    def d(self):
        return self.H.shape[0]

    @property
    def n(self):
        return self.L.shape[0]


def make_system(H, L, rho0, dims=None, S=None, bosonic=()):
    """Validate and bundle the system data.

    ``S`` is the scattering matrix; only the identity is supported.
    """
    H = hilbert.as_operator(H, name="H")
    d = H.shape[0]
    try:
        hilbert.check_hermitian(H)
    except ValidationError as exc:
        raise exc.with_stage("system")
    L = hilbert.as_channels(L, d)
    if L.shape[0] == 0:
        raise DimensionError("at least one coupling operator is required", stage="system")
    rho0 = hilbert.as_operator(rho0, d, name="rho0")
    check_density(rho0, "rho0")
    if S is not None:
        S = np.atleast_2d(np.asarray(S, dtype=complex))
        n = L.shape[0]
        if S.shape == (n, n):
            dev = float(np.max(np.abs(S - np.eye(n))))
        elif S.shape == (n * d, n * d):
            dev = float(np.max(np.abs(S - np.eye(n * d))))
        else:
            raise DimensionError(f"scattering matrix has shape {S.shape}, expected {(n, n)}", stage="system")
        if dev > 1e-12:
            raise ValidationError(
                "scattering matrix must be the identity: gauge-process coupling is not supported",
                stage="system",
                check="scattering",
                value=dev,
            )
    dims = tuple(int(x) for x in dims) if dims else (d,)
    if int(np.prod(dims)) != d:
        raise DimensionError(f"subsystem dimensions {dims} do not multiply to {d}", stage="system")
    return SystemSpec(H=H, L=L, rho0=rho0, dims=dims, bosonic=tuple(bosonic))


def check_density(rho, name="rho", tol=1e-9):
    herm = float(np.max(np.abs(rho - dag(rho))))
    if herm > 1e-10:
        raise ValidationError(f"{name} is not Hermitian (residual {herm:.3e})", stage="system", check="hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1) > tol:
        raise ValidationError(f"{name} has trace {tr:.12g}, expected 1", stage="system", check="trace")
    lam = float(np.linalg.eigvalsh(0.5 * (rho + dag(rho)))[0])
    if lam < -1e-10:
        raise ValidationError(f"{name} has negative eigenvalue {lam:.3e}", stage="system", check="psd")


@dataclass(frozen=True)
class FilterModel:
    """Everything the integrators need, precomputed once.

    ``mode`` is ``"vacuum"`` when the measurement acts directly on the
    original fields and ``"gaussian"`` when coupling and measurement were
    lifted to the doubled vacuum representation.
    """

    system: SystemSpec
    mode: str
    field: GaussianFieldSpec | None
    coefficients: object
    G: np.ndarray
    L_eff: np.ndarray
    G_eff: np.ndarray
    measurement: object
    completion: object
    L_W: np.ndarray
    gain_ops: np.ndarray

    @property
    def d(self):
        return self.system.d

    @property
    def m(self):
        return self.G.shape[0]

    @property
    def K(self):
        return self.completion.K

    @property
    def Sigma(self):
        return self.completion.Sigma

    @property
    def W(self):
        return self.completion.W

    @cached_property
    def drift_op(self):
        # A = -iH - (1/2) sum_k L_k^* L_k, so that Lv(rho) = A rho + rho A^* + sum_k L_k rho L_k^*
        D = np.einsum("kba,kbc->ac", self.L_eff.conj(), self.L_eff)
        return -1j * self.system.H - 0.5 * D

    @cached_property
    def L_eff_dag(self):
        return dag(self.L_eff)

    @cached_property
    def sigma_chol(self):
        return np.linalg.cholesky(self.Sigma)

    @cached_property
    def superoperator(self):
        return hilbert.liouvillian_matrix(self.system.H, self.L_eff)

    @cached_property
    def row_superoperators(self):
        return _RowSuperoperators.build(self)


@dataclass(frozen=True)
class _RowSuperoperators:
    """Generator pieces acting on row-stacked states, vec(A X B) = (A kron B^T) vec(X)."""

    liouvillian: np.ndarray
    gain: np.ndarray
    trace_vecs: np.ndarray

    @classmethod
    def build(cls, model):
        d = model.d
        eye = np.eye(d)
        A = model.drift_op
        lv = np.kron(A, eye) + np.kron(eye, A.conj())
        for Lk in model.L_eff:
            lv = lv + np.kron(Lk, Lk.conj())
        # M rho + rho M^* and the trace functional rho -> Tr(M rho + rho M^*)
        gain = np.stack([np.kron(M, eye) + np.kron(eye, M.conj()) for M in model.gain_ops])
        trace_vecs = np.stack([(M.T + M.conj()).reshape(-1) for M in model.gain_ops])
        return cls(liouvillian=lv, gain=gain, trace_vecs=trace_vecs)


def _gain_ops(L_W, K):
    return np.einsum("kj,kab->jab", K, L_W)


def closed_form_gain_ops(L_eff, G_eff, Sigma):
    """Completion-free expression ``L_eff^T G^* Sigma^{-1}`` of the gain operators."""
    coeff = np.linalg.solve(Sigma, G_eff.conj()).T
    return np.einsum("kj,kab->jab", coeff, L_eff)


def build_filter_model(system, G, field=None, mode="auto", completion_order=None):
    """Assemble a filter for ``system`` measured through ``G`` (m x n).

    ``field`` is a :class:`GaussianFieldSpec` (default: vacuum).  With
    ``mode="auto"`` a vacuum field uses the direct path and any other field
    the doubled-vacuum lift; ``"vacuum"`` and ``"gaussian"`` force a path.
    """
    n = system.n
    G = np.atleast_2d(np.asarray(G, dtype=complex))
    if field is not None and not isinstance(field, GaussianFieldSpec):
        N, M = field
        field = validate_gaussian(N, M)
    if field is not None and field.n != n:
        raise DimensionError(f"field has {field.n} channels but the system has {n} couplings", stage="field")
    if mode == "auto":
        mode = "vacuum" if field is None or field.is_vacuum else "gaussian"
    if mode not in ("vacuum", "gaussian"):
        raise ValueError(f"unknown mode {mode!r}")

    meas = validate_measurement(G, n)
    coeffs = None
    if mode == "vacuum":
        if field is not None and not field.is_vacuum:
            raise ValidationError("explicit vacuum mode requires N = M = 0", stage="field", check="vacuum")
        L_eff, G_eff = system.L, meas.G
    else:
        field = vacuum(n) if field is None else field
        coeffs = field.coefficients
        L_eff = lift_coupling(system.L, coeffs)
        G_eff = lift_measurement(meas.G, coeffs)
        try:
            meas = validate_measurement(G_eff, 2 * n)
        except ValidationError as exc:
            exc.stage = "lifted-measurement"
            raise
    completion = complete_measurement(meas, completion_order)
    W_inv_T = np.linalg.inv(completion.W).T
    L_W = np.einsum("kj,jab->kab", W_inv_T, L_eff)
    gain_ops = _gain_ops(L_W, completion.K)

    closed = closed_form_gain_ops(L_eff, G_eff, completion.Sigma)
    scale = max(1.0, float(np.max(np.abs(closed))))
    gap = float(np.max(np.abs(gain_ops - closed)))
    if gap > GAIN_CONSISTENCY_TOL * scale:
        raise ValidationError(
            f"gain operators from the completion disagree with the closed form by {gap:.3e}",
            stage="gain",
            check="gain-consistency",
            value=gap,
        )
    return FilterModel(
        system=system,
        mode=mode,
        field=field,
        coefficients=coeffs,
        G=G,
        L_eff=L_eff,
        G_eff=G_eff,
        measurement=meas,
        completion=completion,
        L_W=L_W,
        gain_ops=gain_ops,
    )


# ---------------------------------------------------------------------------
# right-hand sides


def liouvillian(model, rho):
    """Unconditional generator applied to a (stack of) density matrices."""
    A = model.drift_op
    out = A @ rho + rho @ dag(A)
    for Lk, Lk_dag in zip(model.L_eff, model.L_eff_dag):
        out = out + Lk @ rho @ Lk_dag
    return out


def innovation_drift(model, rho):
    """Expected measurement rate ``Sigma Tr(rho (M + M^*))``."""
    return _gain_expectations(model, rho) @ model.Sigma.T


def _gain_expectations(model, rho):
    # Tr(rho (M_j + M_j^*)) = 2 Re Tr(M_j rho)
    return 2.0 * np.einsum("jab,...ba->...j", model.gain_ops, rho).real


def _row_vec(rho, d):
    return rho.reshape(rho.shape[:-2] + (d * d,))


def sme_increment(model, rho, dnu, dt):
    """Raw Euler-Maruyama increment of the normalised filter (no repair).

    Evaluated on row-stacked states so that a whole batch costs a handful
    of small matrix products.
    """
    rho = np.asarray(rho, dtype=complex)
    dnu = np.asarray(dnu, dtype=float)
    d = model.d
    v = _row_vec(rho, d)
    ops = model.row_superoperators
    a = (v @ ops.trace_vecs.T).real
    inc = v @ (dt * ops.liouvillian.T)
    for j in range(model.m):
        inc = inc + dnu[..., j, None] * (v @ ops.gain[j].T - a[..., j, None] * v)
    return inc.reshape(rho.shape)


@dataclass
class Diagnostics:
    max_trace_error: float = 0.0
    max_hermiticity_error: float = 0.0
    min_eigenvalue: float = 1.0
    max_purity: float = 0.0
    projections: int = 0
    max_top_population: float = 0.0

    def as_dict(self):
        return dict(self.__dict__)


def min_eigenvalue(rho):
    """Smallest eigenvalue of Hermitian matrices (closed form for qubits)."""
    if rho.shape[-1] == 2:
        a = rho[..., 0, 0].real
        b = rho[..., 1, 1].real
        return 0.5 * (a + b) - np.hypot(0.5 * (a - b), np.abs(rho[..., 0, 1]))
    return np.linalg.eigvalsh(rho)[..., 0]


def _repair(rho_new, diag, step=None):
    """Hermitise, renormalise and, if needed, project onto the PSD cone."""
    rho_dag = dag(rho_new)
    herm = float(np.max(np.abs(rho_new - rho_dag)))
    rho_new = 0.5 * (rho_new + rho_dag)
    tr = np.trace(rho_new, axis1=-2, axis2=-1).real
    trace_err = float(np.max(np.abs(tr - 1.0)))
    if not np.all(np.isfinite(rho_new)):
        raise IntegrationError("non-finite conditional state", step=step)
    if trace_err > TRACE_FAIL:
        raise IntegrationError(f"trace drifted by {trace_err:.3e}", step=step)
    rho_new = rho_new / tr[..., None, None]
    lam = min_eigenvalue(rho_new)
    low = lam < PSD_FLOOR
    n_low = int(np.count_nonzero(low))
    if n_low:
        if rho_new.ndim == 2:
            rho_new = hilbert.psd_project(rho_new)
            rho_new = 0.5 * (rho_new + dag(rho_new))
            lam = min_eigenvalue(rho_new)
        else:
            fixed = hilbert.psd_project(rho_new[low])
            rho_new[low] = 0.5 * (fixed + dag(fixed))
            lam[low] = min_eigenvalue(rho_new[low])
    worst = float(np.min(lam))
    if worst < PSD_FAIL:
        raise IntegrationError(f"state left the PSD cone (eigenvalue {worst:.3e})", step=step)
    if diag is not None:
        purity = float(np.max(np.sum(rho_new.real**2 + rho_new.imag**2, axis=(-2, -1))))
        diag.max_trace_error = max(diag.max_trace_error, trace_err)
        diag.max_hermiticity_error = max(diag.max_hermiticity_error, herm)
        diag.min_eigenvalue = min(diag.min_eigenvalue, worst)
        diag.max_purity = max(diag.max_purity, purity)
        diag.projections += n_low
    return rho_new


def sme_step(model, rho_hat, dnu, dt, diagnostics=None):
    """One Euler-Maruyama step of the stochastic master equation."""
    dnu = np.asarray(dnu, dtype=float)
    if not np.all(np.isfinite(dnu)):
        raise IntegrationError("non-finite innovation increment")
    rho_hat = np.asarray(rho_hat, dtype=complex)
    return _repair(rho_hat + sme_increment(model, rho_hat, dnu, dt), diagnostics)


def zakai_step(model, sigma_un, dY, dt):
    """Euler step of the linear (unnormalised) filter driven by the record ``dY``."""
    sigma_un = np.asarray(sigma_un, dtype=complex)
    dY = np.asarray(dY, dtype=float)
    out = sigma_un + liouvillian(model, sigma_un) * dt
    for j, Mj in enumerate(model.gain_ops):
        Ms = Mj @ sigma_un
        out = out + dY[..., j, None, None] * (Ms + Ms.conj().swapaxes(-1, -2))
    tr = np.trace(out, axis1=-2, axis2=-1).real
    if np.any(tr <= 0):
        raise IntegrationError("unnormalised state lost positive trace (normalization-breakdown)")
    return out


def master_step(model, rho, dt):
    """Classical fourth-order Runge-Kutta step of the master equation."""
    rho = np.asarray(rho, dtype=complex)
    k1 = liouvillian(model, rho)
    k2 = liouvillian(model, rho + 0.5 * dt * k1)
    k3 = liouvillian(model, rho + 0.5 * dt * k2)
    k4 = liouvillian(model, rho + dt * k3)
    return rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def master_propagator(model, dt):
    """One RK4 step as a ``d^2 x d^2`` matrix (exactly the RK4 polynomial)."""
    hL = dt * model.superoperator
    eye = np.eye(hL.shape[0])
    return eye + hL @ (eye + hL @ (eye / 2 + hL @ (eye / 6 + hL / 24)))


def master_solve(model, T, dt, rho0=None):
    """States of the master equation on the grid ``0, dt, ..., T``."""
    steps = grid_steps(T, dt)
    d = model.d
    rho0 = model.system.rho0 if rho0 is None else rho0
    P = master_propagator(model, dt)
    out = np.empty((steps + 1, d, d), dtype=complex)
    v = hilbert.vec(rho0)
    out[0] = rho0
    for k in range(1, steps + 1):
        v = P @ v
        out[k] = hilbert.unvec(v, d)
    return out


# ---------------------------------------------------------------------------
# trajectories


def grid_steps(T, dt):
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    if dt > T:
        raise ValueError(f"dt = {dt:g} exceeds the horizon T = {T:g}")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * T:
        raise ValueError(f"T = {T:g} is not an integer multiple of dt = {dt:g}")
    return steps


def snapshot_indices(times, dt, steps):
    idx = []
    for t in times:
        k = int(round(t / dt))
        if k < 0 or k > steps or abs(k * dt - t) > 1e-6 * max(dt, abs(t)):
            raise ValueError(f"snapshot time {t:g} is not on the grid (dt = {dt:g}, T = {steps * dt:g})")
        idx.append(k)
    return idx


def innovation_noise(model, steps, dt, seed):
    """Innovation increments ``(steps, m)`` with covariance ``Sigma dt``."""
    xi = np.random.default_rng(seed).standard_normal((steps, model.m))
    return np.sqrt(dt) * xi @ model.sigma_chol.T


def _expectations(rho, ops):
    if len(ops) == 0:
        return np.zeros(rho.shape[:-2] + (0,), dtype=complex)
    return np.einsum("...ab,kba->...k", rho, ops)


def _evolve(model, rho, dnu, dt, diag):
    """Yield ``(k, rho_k, dY_k)`` for k = 1..steps; ``dnu`` is ``(..., steps, m)``."""
    steps = dnu.shape[-2]
    check_top = bool(model.system.bosonic)
    for k in range(steps):
        dn = dnu[..., k, :]
        dY = innovation_drift(model, rho) * dt + dn
        try:
            rho = _repair(rho + sme_increment(model, rho, dn, dt), diag, step=k + 1)
        except IntegrationError as exc:
            if exc.step is None:
                exc.step = k + 1
            raise
        if check_top:
            pop = hilbert.top_level_population(rho, model.system.dims, model.system.bosonic)
            diag.max_top_population = max(diag.max_top_population, pop)
        yield k + 1, rho, dY


@dataclass
class TrajectoryRecord:
    seed: int | None
    dt: float
    times: np.ndarray
    dY: np.ndarray
    nu: np.ndarray
    observable_names: list = field(default_factory=list)
    observables: np.ndarray | None = None
    snapshot_times: list = field(default_factory=list)
    snapshots: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    kind: str = "trajectory"


def _observable_ops(model, observables):
    names = list(observables or {})
    ops = [hilbert.as_operator(observables[k], model.d, name=f"observable {k}") for k in names]
    return names, (np.stack(ops) if ops else np.zeros((0, model.d, model.d), dtype=complex))


def simulate_trajectory(model, T, dt, seed, observables=None, snapshots=(), rho0=None):
    """Simulate one measurement record together with its conditional state.

    The filter itself generates the record, ``dY = drift dt + d nu``.
    ``observables`` maps names to operators whose conditional expectations
    are recorded at every grid time.
    """
    steps = grid_steps(T, dt)
    names, ops = _observable_ops(model, observables)
    snap_idx = snapshot_indices(snapshots, dt, steps)
    dnu = innovation_noise(model, steps, dt, seed)
    rho = np.array(model.system.rho0 if rho0 is None else rho0, dtype=complex)

    m = model.m
    dY = np.zeros((steps + 1, m))
    obs = np.empty((steps + 1, len(names)), dtype=complex)
    obs[0] = _expectations(rho, ops)
    snaps = {0: rho.copy()}
    diag = Diagnostics()
    for k, rho, dy in _evolve(model, rho, dnu, dt, diag):
        dY[k] = dy
        obs[k] = _expectations(rho, ops)
        if k in snap_idx:
            snaps[k] = rho.copy()
    hilbert.warn_truncation(diag.max_top_population)
    nu = np.vstack([np.zeros((1, m)), np.cumsum(dnu, axis=0)])
    return TrajectoryRecord(
        seed=seed,
        dt=dt,
        times=np.arange(steps + 1) * dt,
        dY=dY,
        nu=nu,
        observable_names=names,
        observables=obs,
        snapshot_times=[k * dt for k in snap_idx],
        snapshots=np.array([snaps[k] for k in snap_idx]).reshape(len(snap_idx), model.d, model.d),
        diagnostics=diag.as_dict(),
    )


def filter_record(model, dY, dt, rho0=None):
    """Run the normalised filter on an externally supplied record.

    ``dY`` has shape ``(steps, m)``.  Returns the conditional states on the
    grid and the cumulative innovations.
    """
    dY = np.atleast_2d(np.asarray(dY, dtype=float))
    if dY.shape[1] != model.m:
        raise DimensionError(f"record has {dY.shape[1]} components, expected {model.m}")
    rho = np.array(model.system.rho0 if rho0 is None else rho0, dtype=complex)
    states = [rho]
    nu = [np.zeros(model.m)]
    for k, dy in enumerate(dY):
        dnu = dy - innovation_drift(model, rho) * dt
        rho = _repair(rho + sme_increment(model, rho, dnu, dt), None, step=k + 1)
        states.append(rho)
        nu.append(nu[-1] + dnu)
    return np.array(states), np.array(nu)


@dataclass
class MasterRecord:
    dt: float
    times: np.ndarray
    observable_names: list
    observables: np.ndarray
    snapshot_times: list = field(default_factory=list)
    snapshots: np.ndarray | None = None
    kind: str = "master"


def master_record(model, T, dt, observables=None, snapshots=(), rho0=None):
    """Expectations of ``observables`` along the unconditional (master) evolution."""
    steps = grid_steps(T, dt)
    names, ops = _observable_ops(model, observables)
    snap_idx = snapshot_indices(snapshots, dt, steps)
    states = master_solve(model, T, dt, rho0)
    return MasterRecord(
        dt=dt,
        times=np.arange(steps + 1) * dt,
        observable_names=names,
        observables=_expectations(states, ops),
        snapshot_times=[k * dt for k in snap_idx],
        snapshots=states[snap_idx],
    )


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleResult:
    count: int
    base_seed: int
    dt: float
    times: np.ndarray
    observable_names: list
    observable_mean: np.ndarray
    observable_se: np.ndarray
    snapshot_times: list
    rho_mean: np.ndarray
    rho_se: np.ndarray
    master_rho: np.ndarray
    max_deviation: np.ndarray
    max_se: np.ndarray
    deviation_grid: np.ndarray
    se_grid: np.ndarray
    nu_final_mean: np.ndarray
    nu_final_se: np.ndarray
    quadratic_variation: np.ndarray
    expected_quadratic_variation: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    kind: str = "ensemble"


def _split_se(s1, s2, count):
    """Standard error of the mean from running sums (real arrays)."""
    mean = s1 / count
    var = np.clip(s2 / count - mean**2, 0.0, None) * count / (count - 1)
    return np.sqrt(var / count)


def _run_chunk(model, seeds, steps, dt, ops):
    d = model.d
    dnu = np.stack([innovation_noise(model, steps, dt, s) for s in seeds])
    rho = np.broadcast_to(model.system.rho0, (len(seeds), d, d)).astype(complex)
    k_obs = ops.shape[0]
    acc = {
        "rho": np.zeros((steps + 1, d, d), dtype=complex),
        "rho_re2": np.zeros((steps + 1, d, d)),
        "rho_im2": np.zeros((steps + 1, d, d)),
        "obs": np.zeros((steps + 1, k_obs), dtype=complex),
        "obs_re2": np.zeros((steps + 1, k_obs)),
        "obs_im2": np.zeros((steps + 1, k_obs)),
    }

    def accumulate(k, r):
        acc["rho"][k] = r.sum(axis=0)
        acc["rho_re2"][k] = (r.real**2).sum(axis=0)
        acc["rho_im2"][k] = (r.imag**2).sum(axis=0)
        e = _expectations(r, ops)
        acc["obs"][k] = e.sum(axis=0)
        acc["obs_re2"][k] = (e.real**2).sum(axis=0)
        acc["obs_im2"][k] = (e.imag**2).sum(axis=0)

    accumulate(0, rho)
    diag = Diagnostics()
    for k, r, _ in _evolve(model, rho, dnu, dt, diag):
        accumulate(k, r)
    nu_T = dnu.sum(axis=1)
    acc["nu_T"] = nu_T.sum(axis=0)
    acc["nu_T2"] = (nu_T**2).sum(axis=0)
    acc["qv"] = np.einsum("bsi,bsj->ij", dnu, dnu)
    acc["diag"] = diag
    return acc


def worker_count(workers=None):
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else min(4, os.cpu_count() or 1)
    return max(1, int(workers))


def ensemble_average(model, T, dt, count, base_seed=0, observables=None, snapshots=(), workers=None):
    """Average ``count`` trajectories and compare with the master equation.

    Trajectory ``i`` uses seed ``base_seed + i``, so it reproduces
    ``simulate_trajectory(model, T, dt, base_seed + i)``.  Trajectories are
    processed in fixed-size chunks whose partial sums are reduced in seed
    order, which keeps results bit-identical for any worker count.
    """
    if count < 2:
        raise ValueError("an ensemble needs at least 2 trajectories")
    steps = grid_steps(T, dt)
    names, ops = _observable_ops(model, observables)
    snap_idx = snapshot_indices(snapshots, dt, steps)
    seeds = [base_seed + i for i in range(count)]
    chunks = [seeds[i : i + CHUNK_SIZE] for i in range(0, count, CHUNK_SIZE)]

    n_workers = min(worker_count(workers), len(chunks))
    if n_workers == 1:
        parts = [_run_chunk(model, c, steps, dt, ops) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_run_chunk, model, c, steps, dt, ops) for c in chunks]
            parts = [f.result() for f in futures]

    total = parts[0]
    diag = total.pop("diag")
    for part in parts[1:]:
        pd = part.pop("diag")
        for key in total:
            total[key] = total[key] + part[key]
        diag.max_trace_error = max(diag.max_trace_error, pd.max_trace_error)
        diag.max_hermiticity_error = max(diag.max_hermiticity_error, pd.max_hermiticity_error)
        diag.min_eigenvalue = min(diag.min_eigenvalue, pd.min_eigenvalue)
        diag.max_purity = max(diag.max_purity, pd.max_purity)
        diag.projections += pd.projections
        diag.max_top_population = max(diag.max_top_population, pd.max_top_population)
    hilbert.warn_truncation(diag.max_top_population)

    rho_mean = total["rho"] / count
    rho_se = _split_se(total["rho"].real, total["rho_re2"], count) + 1j * _split_se(
        total["rho"].imag, total["rho_im2"], count
    )
    obs_mean = total["obs"] / count
    obs_se = _split_se(total["obs"].real, total["obs_re2"], count) + 1j * _split_se(
        total["obs"].imag, total["obs_im2"], count
    )
    master = master_solve(model, T, dt)
    diff = rho_mean - master
    dev_grid = np.maximum(np.abs(diff.real), np.abs(diff.imag)).max(axis=(1, 2))
    se_grid = np.maximum(rho_se.real, rho_se.imag).max(axis=(1, 2))

    nu_mean = total["nu_T"] / count
    nu_se = _split_se(total["nu_T"], total["nu_T2"], count)
    return EnsembleResult(
        count=count,
        base_seed=base_seed,
        dt=dt,
        times=np.arange(steps + 1) * dt,
        observable_names=names,
        observable_mean=obs_mean,
        observable_se=obs_se,
        snapshot_times=[k * dt for k in snap_idx],
        rho_mean=rho_mean[snap_idx],
        rho_se=rho_se[snap_idx],
        master_rho=master[snap_idx],
        max_deviation=dev_grid[snap_idx],
        max_se=se_grid[snap_idx],
        deviation_grid=dev_grid,
        se_grid=se_grid,
        nu_final_mean=nu_mean,
        nu_final_se=nu_se,
        quadratic_variation=total["qv"] / count,
        expected_quadratic_variation=model.Sigma * T,
        diagnostics=diag.as_dict(),
    )


# ---------------------------------------------------------------------------
# independent single-channel reference


class SingleFieldReference:
    """Direct scalar filter for one vacuum field measured with ``Y = g^* A_out + g A_out^*``.

    Written against the scalar equations alone, without the completion or
    gain machinery, so it can check the MIMO engine.
    """

    def __init__(self, H, L, g):
        self.H = np.asarray(H, dtype=complex)
        self.L = np.asarray(L, dtype=complex)
        self.g = complex(g)
        if self.g == 0:
            raise ValueError("g must be nonzero")
        self.Ld = self.L.conj().T
        self.LdL = self.Ld @ self.L

    def innovation_drift(self, rho):
        """pi(g^* L + g L^*)."""
        return np.trace(rho @ (self.g.conjugate() * self.L + self.g * self.Ld)).real

    def increment(self, rho, dnu, dt):
        H, L, Ld, LdL, g = self.H, self.L, self.Ld, self.LdL, self.g
        lind = 1j * (rho @ H - H @ rho) + L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
        gain = g.conjugate() * (L @ rho) + g * (rho @ Ld) - self.innovation_drift(rho) * rho
        return lind * dt + gain * dnu / abs(g) ** 2

    def __call__(self, rho, dnu, dt):
        new = rho + self.increment(rho, dnu, dt)
        new = 0.5 * (new + new.conj().T)
        new = new / np.trace(new).real
        w, v = np.linalg.eigh(new)
        if w[0] < PSD_FLOOR:
            w = np.clip(w, 0.0, None)
            new = (v * w) @ v.conj().T
            new = new / np.trace(new).real
            new = 0.5 * (new + new.conj().T)
        return new


def single_field_reference(model):
    """Reference step function for a model with one vacuum field and one output."""
    if model.mode != "vacuum" or model.system.n != 1 or model.m != 1:
        raise ValidationError(
            "single-field reference needs an explicit vacuum model with n = m = 1", check="non-scalar-model"
        )
    return SingleFieldReference(model.system.H, model.system.L[0], model.G[0, 0])
