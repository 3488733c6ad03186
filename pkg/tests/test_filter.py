import numpy as np
import pytest

from qfilter import filter as engine
from qfilter.errors import IntegrationError, ValidationError
from qfilter.gaussian_field import validate_gaussian
from qfilter.hilbert import pauli, steady_state

sm, sp = pauli("minus"), pauli("plus")
sx, sy, sz = pauli("x"), pauli("y"), pauli("z")
PLUS = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
EXCITED = np.diag([1, 0]).astype(complex)
GROUND = np.diag([0, 1]).astype(complex)


def qubit(rho0=PLUS, H=0.5 * sz, g=1.0, field=None, mode="auto"):
    system = engine.make_system(H, [sm], rho0)
    return engine.build_filter_model(system, [[g]], field=field, mode=mode)


def random_state(rng, d=2):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


def test_vacuum_identity_measurement():
    model = qubit(H=np.zeros((2, 2)))
    assert np.allclose(model.L_W[0], sm)
    assert model.K[0, 0] == 1 and model.Sigma[0, 0] == 1


def test_scaled_measurement_gain_operator():
    model = qubit(g=2j)
    assert np.allclose(model.L_W[0], -0.5j * sm, atol=1e-15)
    assert model.Sigma[0, 0] == pytest.approx(4)


def test_thermal_model_assembly():
    model = qubit(field=validate_gaussian([[0.25]]))
    assert model.mode == "gaussian"
    assert np.allclose(model.L_eff[0], np.sqrt(1.25) * sm)
    assert np.allclose(model.L_eff[1], -0.5 * sp)
    assert np.allclose(model.G_eff, [[np.sqrt(1.25), 0.5]])
    assert model.Sigma[0, 0] == pytest.approx(1.5)
    assert model.L_eff.shape[0] == model.G_eff.shape[1]


def test_scattering_must_be_identity():
    with pytest.raises(ValidationError) as info:
        engine.make_system(sz, [sm], PLUS, S=[[-1]])
    assert info.value.check == "scattering"


def test_dark_state_invariance():
    model = qubit(rho0=GROUND, H=np.zeros((2, 2)))
    for dnu in (-0.3, 0.0, 0.7):
        assert np.allclose(engine.sme_step(model, GROUND, [dnu], 1e-3), GROUND, atol=1e-15)
        assert np.allclose(engine.zakai_step(model, GROUND, [dnu], 1e-3), GROUND, atol=1e-15)
    assert np.allclose(engine.master_step(model, GROUND, 1e-2), GROUND, atol=1e-15)


def test_increment_trace_and_hermiticity():
    rng = np.random.default_rng(0)
    model = qubit(field=validate_gaussian([[0.2715403]], [[0.5876005 * np.exp(1j * np.pi / 5)]]))
    for _ in range(50):
        rho = random_state(rng)
        inc = engine.sme_increment(model, rho, rng.normal(size=1) * 0.03, 1e-3)
        assert abs(np.trace(inc)) < 1e-13
        assert np.max(np.abs(inc - inc.conj().T)) < 1e-13


def test_kushner_stratonovich_dual_form():
    """Tr(X drho) against the scalar-g gain written in Heisenberg form."""
    rng = np.random.default_rng(1)
    model = qubit(H=0.3 * sx)
    H, L = model.system.H, sm
    Ld = L.conj().T
    for _ in range(10):
        rho = random_state(rng)
        dt, dnu = 1e-3, 0.02
        drho = engine.sme_increment(model, rho, [dnu], dt)
        pi = lambda A: np.trace(rho @ A)
        for X in (sx, sy, sz):
            lind = 1j * (H @ X - X @ H) + Ld @ X @ L - 0.5 * (Ld @ L @ X + X @ Ld @ L)
            gain = pi(X @ L + Ld @ X) - pi(X) * pi(L + Ld)
            assert abs(np.trace(X @ drho) - (pi(lind) * dt + gain * dnu)) < 1e-12


def test_closed_form_gain_ops():
    model = qubit(field=validate_gaussian([[0.4]], [[0.3]]))
    closed = engine.closed_form_gain_ops(model.L_eff, model.G_eff, model.Sigma)
    assert np.allclose(model.gain_ops, closed, atol=1e-12)


def test_master_exponential_decay():
    model = qubit(rho0=EXCITED, H=np.zeros((2, 2)))
    states = engine.master_solve(model, 5.0, 1e-3)
    t = np.arange(states.shape[0]) * 1e-3
    assert np.max(np.abs(states[:, 0, 0].real - np.exp(-t))) < 1e-8


def test_master_step_matches_propagator():
    model = qubit()
    rho = engine.master_step(model, PLUS, 0.01)
    P = engine.master_propagator(model, 0.01)
    assert np.allclose(rho.reshape(-1, order="F"), P @ PLUS.reshape(-1, order="F"), atol=1e-15)
    assert abs(np.trace(rho) - 1) < 1e-12


def test_thermal_master_steady_state():
    N = 0.25
    model = qubit(rho0=EXCITED, field=validate_gaussian([[N]]))
    rho = engine.master_solve(model, 40.0, 0.01)[-1]
    assert abs(rho[0, 0].real - N / (1 + 2 * N)) < 1e-6
    ss = steady_state(model.system.H, model.L_eff)
    assert np.allclose(rho, ss, atol=1e-6)


def test_zakai_trace_changes():
    model = qubit()
    out = engine.zakai_step(model, PLUS, [0.1], 1e-3)
    assert abs(np.trace(out) - 1) > 1e-3


def test_zakai_normalises_to_sme_in_expectation():
    """Mean one-step gap between normalised Zakai and SME shrinks like dt^2."""
    model = qubit()
    rho = PLUS
    x, w = np.polynomial.hermite_e.hermegauss(20)
    w = w / w.sum()
    gaps = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        mean = 0
        for xi, wi in zip(x, w):
            dnu = np.array([xi * np.sqrt(dt)])
            dY = engine.innovation_drift(model, rho) * dt + dnu
            z = engine.zakai_step(model, rho, dY, dt)
            mean = mean + wi * (z / np.trace(z) - (rho + engine.sme_increment(model, rho, dnu, dt)))
        gaps.append(np.max(np.abs(mean)))
    ratios = [gaps[i] / gaps[i + 1] for i in range(2)]
    assert all(3.3 < r < 4.7 for r in ratios)


def test_zakai_breakdown():
    model = qubit()
    with pytest.raises(IntegrationError):
        engine.zakai_step(model, PLUS, [-50.0], 1e-3)


def test_trajectory_determinism_and_invariants():
    model = qubit()
    a = engine.simulate_trajectory(model, 1.0, 1e-3, seed=11, observables={"sz": sz}, snapshots=[0.5])
    b = engine.simulate_trajectory(model, 1.0, 1e-3, seed=11, observables={"sz": sz}, snapshots=[0.5])
    assert np.array_equal(a.dY, b.dY) and np.array_equal(a.observables, b.observables)
    assert a.times.shape == (1001,) and a.dY.shape == (1001, 1)
    assert a.diagnostics["max_trace_error"] < 1e-9
    assert a.diagnostics["max_purity"] <= 1 + 1e-9
    assert a.snapshots.shape == (1, 2, 2)


def test_decoupled_system_records_pure_noise():
    system = engine.make_system(np.zeros((2, 2)), [np.zeros((2, 2))], PLUS)
    model = engine.build_filter_model(system, [[1.5]])
    rec = engine.simulate_trajectory(model, 2.0, 1e-3, seed=3, observables={"sx": sx})
    assert np.allclose(rec.observables[:, 0], 1)
    dY = rec.dY[1:, 0]
    assert np.allclose(dY, np.diff(rec.nu[:, 0]))
    # chi-square test at the 1% level on the increment variance
    from scipy.stats import chi2

    k = dY.size
    stat = np.sum(dY**2) / (2.25 * 1e-3)
    assert chi2.ppf(0.005, k) < stat < chi2.ppf(0.995, k)


def test_filter_record_reproduces_trajectory():
    model = qubit(field=validate_gaussian([[0.25]]))
    rec = engine.simulate_trajectory(model, 0.5, 1e-3, seed=5)
    states, nu = engine.filter_record(model, rec.dY[1:], 1e-3)
    assert np.allclose(nu, rec.nu, atol=1e-12)


def test_ensemble_matches_individual_trajectories():
    model = qubit()
    ens = engine.ensemble_average(model, 0.2, 1e-3, 3, base_seed=40, observables={"sz": sz}, snapshots=[0.2])
    recs = [engine.simulate_trajectory(model, 0.2, 1e-3, seed=40 + i, observables={"sz": sz}) for i in range(3)]
    mean = np.mean([r.observables for r in recs], axis=0)
    assert np.allclose(ens.observable_mean, mean, atol=1e-13)


def test_ensemble_worker_independence(monkeypatch):
    model = qubit()
    monkeypatch.setattr(engine, "CHUNK_SIZE", 7)
    a = engine.ensemble_average(model, 0.1, 1e-3, 30, observables={"sz": sz}, workers=1)
    b = engine.ensemble_average(model, 0.1, 1e-3, 30, observables={"sz": sz}, workers=4)
    assert np.array_equal(a.observable_mean, b.observable_mean)
    assert np.array_equal(a.rho_mean, b.rho_mean)
    assert np.array_equal(a.quadratic_variation, b.quadratic_variation)


def test_ensemble_needs_two():
    with pytest.raises(ValueError):
        engine.ensemble_average(qubit(), 0.1, 1e-3, 1)


def test_grid_checks():
    assert engine.grid_steps(5, 1e-3) == 5000
    with pytest.raises(ValueError):
        engine.grid_steps(1, 2)
    with pytest.raises(ValueError):
        engine.grid_steps(1, 0.3)


def test_single_field_reference_requires_scalar_vacuum():
    with pytest.raises(ValidationError):
        engine.single_field_reference(qubit(field=validate_gaussian([[0.1]])))


def test_truncation_warning():
    d = 3
    a = np.diag(np.sqrt(np.arange(1, d)), k=1).astype(complex)
    rho0 = np.zeros((d, d), dtype=complex)
    rho0[d - 1, d - 1] = 1
    system = engine.make_system(np.zeros((d, d)), [a], rho0, bosonic=(0,))
    model = engine.build_filter_model(system, [[1]])
    with pytest.warns(RuntimeWarning, match="Fock level"):
        engine.simulate_trajectory(model, 0.01, 1e-3, seed=0)
