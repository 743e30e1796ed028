import numpy as np
import pytest
import scipy.linalg

from cpk import qbm
from cpk.operators import dagger
from cpk.qbm import OscillatorBasis, QbmParams, TruncationError


def vec(x):
    return x.reshape(-1, order="F")


def unvec(v, n):
    return v.reshape(n, n, order="F")


def interior_state(n, k, rng):
    g = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    rho = np.zeros((n, n), dtype=complex)
    rho[:k, :k] = g @ dagger(g)
    return rho / np.trace(rho).real


def test_derived_coefficients():
    p = QbmParams(M=2.0, T=3.0, D_pp=0.7, k_B=1.5)
    assert p.D_qq == pytest.approx((1 / (4 * 9.0)) ** 2 * 0.7)
    assert p.D_pp / (2 * p.D_qp) == pytest.approx(p.M * p.k_B * p.T, rel=1e-15)
    assert p.beta == pytest.approx(1 / 18.0)


def test_params_validation():
    with pytest.raises(ValueError):
        QbmParams(M=0.0, T=1.0, D_pp=1.0)
    with pytest.raises(ValueError):
        QbmParams(M=1.0, T=1.0, D_pp=-1.0)


def test_params_json_round_trip():
    p = QbmParams(1.5, 2.0, 0.3, beta_coeff=0.1)
    assert QbmParams.from_json(p.to_json()) == p


def test_basis_operators():
    b = OscillatorBasis(12, omega=1.3, M=0.8, hbar=0.9)
    x, p = b.x_matrix, b.p_matrix
    assert np.array_equal(x, dagger(x)) and np.array_equal(p, dagger(p))
    comm = x @ p - p @ x
    want = 1j * 0.9 * np.eye(12)
    assert np.allclose(comm[:-1, :-1], want[:-1, :-1], atol=1e-13)
    off = comm - want
    off[-1, -1] = 0
    assert np.abs(off).max() <= 1e-13


def test_coherent_state_moments():
    b = OscillatorBasis(40)
    rho = b.coherent_state(1.0 + 0.5j)
    assert np.trace(b.x_matrix @ rho).real == pytest.approx(np.sqrt(2) * 1.0, abs=1e-10)
    assert np.trace(b.p_matrix @ rho).real == pytest.approx(np.sqrt(2) * 0.5, abs=1e-10)


def test_unitary_when_no_diffusion():
    params = QbmParams(1.0, 1.0, 0.0)
    b = OscillatorBasis(10)
    h = b.p_matrix @ b.p_matrix / 2
    want = -1j * (np.kron(np.eye(10), h) - np.kron(h.T, np.eye(10)))
    assert np.allclose(qbm.qbm_generator(params, b).matrix, want)


def test_h_extra_dimension_mismatch():
    with pytest.raises(ValueError):
        qbm.qbm_generator(QbmParams(1, 1, 1), OscillatorBasis(10), np.eye(9))


def test_moment_oracles_at_t0():
    params = QbmParams(1.0, 2.0, 0.8)
    b = OscillatorBasis(30)
    gen = qbm.qbm_generator(params, b).matrix
    rng = np.random.default_rng(0)
    p = b.p_matrix
    for _ in range(5):
        rho = interior_state(30, 26, rng)
        drho = unvec(gen @ vec(rho), 30)
        want_p = -2 * params.D_qp * np.trace(p @ rho).real
        want_p2 = 2 * params.D_pp - 4 * params.D_qp * np.trace(p @ p @ rho).real
        assert np.trace(p @ drho).real == pytest.approx(want_p, rel=1e-8)
        assert np.trace(p @ p @ drho).real == pytest.approx(want_p2, rel=1e-8)


def test_generator_preserves_trace_and_hermiticity_on_interior():
    params = QbmParams(1.0, 1.0, 1.0)
    b = OscillatorBasis(20)
    gen = qbm.qbm_generator(params, b).matrix
    rho = interior_state(20, 18, np.random.default_rng(1))
    drho = unvec(gen @ vec(rho), 20)
    assert abs(np.trace(drho)) <= 1e-12
    assert np.linalg.norm(drho - dagger(drho)) <= 1e-12


def test_lindblad_form_unitary_when_no_diffusion():
    params = QbmParams(1.0, 1.0, 0.0)
    b = OscillatorBasis(10)
    assert np.allclose(qbm.qbm_lindblad_form(params, b).matrix, qbm.qbm_generator(params, b).matrix)


def test_jump_operator_expansion():
    b = OscillatorBasis(15)
    beta = 0.37
    x, p = b.x_matrix, b.p_matrix
    lop = x + 1j * beta * p
    resid = dagger(lop) @ lop - x @ x - beta ** 2 * p @ p - 1j * beta * (x @ p - p @ x)
    assert np.abs(resid).max() <= 1e-13


def test_dissipator_on_ground_state():
    params = QbmParams(1.0, 1.0, 1.0)
    b = OscillatorBasis(20)
    fixed, (a0, a1, a2) = qbm._lindblad_pieces(params, b)
    diss = a0 + params.beta * a1 + params.beta ** 2 * a2
    ground = np.zeros((20, 20), dtype=complex)
    ground[0, 0] = 1
    out = unvec(diss @ vec(ground), 20)
    assert np.linalg.norm(out - dagger(out)) <= 1e-12
    assert abs(np.trace(out)) <= 1e-12


def test_equivalence_no_diffusion():
    fit = qbm.equivalence_residual(QbmParams(1.0, 1.0, 0.0), OscillatorBasis(12), calibrate=False)
    assert fit.residual == 0.0


def test_equivalence_calibration_unit_params():
    params = QbmParams(1.0, 1.0, 1.0)
    fit24 = qbm.equivalence_residual(params, OscillatorBasis(24), calibrate=True)
    fit48 = qbm.equivalence_residual(params, OscillatorBasis(48), calibrate=True)
    assert fit24.relative_residual <= 1e-8
    assert fit48.beta == pytest.approx(fit24.beta, rel=1e-6)
    assert fit48.prefactor == pytest.approx(fit24.prefactor, rel=1e-6)
    # the literal pair differs from the fitted one by a factor two in beta
    assert fit24.beta == pytest.approx(params.beta / 2, rel=1e-8)
    assert fit24.prefactor == pytest.approx(params.dissipator_prefactor, rel=1e-8)
    literal = qbm.equivalence_residual(params, OscillatorBasis(24), calibrate=False)
    assert literal.relative_residual > 1e-3


def test_equivalence_report_keys():
    rep = qbm.equivalence_report(QbmParams(1.0, 1.0, 1.0), OscillatorBasis(16))
    assert set(rep) == {"residual_literal", "residual_calibrated", "beta_literal",
                        "beta_fitted", "prefactor_literal", "prefactor_fitted"}
    assert all(type(v) is float for v in rep.values())


def test_cp_small_time_at_zero():
    assert abs(qbm.cp_small_time(QbmParams(1, 1, 1), OscillatorBasis(12), 0.0)) <= 1e-12


def test_cp_small_time_exponential_is_cp():
    assert qbm.cp_small_time(QbmParams(1, 1, 1), OscillatorBasis(20), 1e-3, method="exp") >= -1e-8


def test_cp_small_time_first_order_defect_is_quadratic():
    params, b = QbmParams(1, 1, 1), OscillatorBasis(20)
    lo = [qbm.cp_small_time(params, b, dt) for dt in (1e-3, 5e-4)]
    assert lo[0] / lo[1] == pytest.approx(4.0, rel=0.05)


def test_caldeira_leggett_negativity_is_linear():
    params, b = QbmParams(1, 1, 1), OscillatorBasis(20)
    dts = np.array([1e-3, 5e-4, 2.5e-4])
    lo = np.array([qbm.cp_small_time(params, b, dt, D_qq=0.0) for dt in dts])
    assert np.all(lo < 0)
    c = np.polyfit(dts, -lo, 1)[0]
    assert c > 0 and np.all(-lo >= 0.9 * c * dts)
    assert lo[0] / lo[1] == pytest.approx(2.0, abs=0.2)
    assert lo[1] / lo[2] == pytest.approx(2.0, abs=0.2)


def test_harmonic_oscillation_without_diffusion():
    params = QbmParams(1.0, 1.0, 0.0)
    b = OscillatorBasis(40)
    rho0 = b.coherent_state(2.0)
    t = np.linspace(0, 2 * np.pi, 9)
    rows = qbm.moment_trajectory(params, b, b.harmonic_potential(), rho0, t)
    x = np.array([r[1] for r in rows])
    assert np.allclose(x, 2 * np.sqrt(2) * np.cos(t), atol=1e-6)
    assert all(abs(r[6] - 1) <= 1e-12 for r in rows)


def test_momentum_decay_rate():
    params = QbmParams(1.0, 1.0, 1.0)
    assert params.D_qp == 0.5
    b = OscillatorBasis(40)
    t = np.linspace(0, 1 / (2 * params.D_qp), 6)
    rows = qbm.moment_trajectory(params, b, None, b.coherent_state(2j), t)
    mean_p = np.array([r[2] for r in rows])
    rate = -np.polyfit(t, np.log(mean_p), 1)[0]
    assert rate == pytest.approx(2 * params.D_qp, rel=0.01)


def test_free_particle_momentum_spread_constant_without_diffusion():
    params = QbmParams(1.0, 10.0, 0.0)
    b = OscillatorBasis(60)
    rows = qbm.moment_trajectory(params, b, None, b.coherent_state(1.0), [0.0, 0.5, 1.0])
    assert all(abs(r[4] - rows[0][4]) <= 1e-8 for r in rows)


def test_truncation_leak_detected():
    params = QbmParams(1.0, 10.0, 0.0)
    b = OscillatorBasis(30)
    with pytest.raises(TruncationError):
        qbm.moment_trajectory(params, b, None, b.coherent_state(1.0), [0.0, 2.0])


def test_initial_state_must_be_interior():
    b = OscillatorBasis(10)
    rho = np.zeros((10, 10), dtype=complex)
    rho[8, 8] = 1
    with pytest.raises(TruncationError):
        qbm.moment_trajectory(QbmParams(1, 1, 1), b, None, rho, [0.0])


def test_sparse_path_matches_dense():
    params = QbmParams(1.0, 5.0, 0.3)
    b = OscillatorBasis(42)
    rho0 = b.coherent_state(1.0)
    t = [0.0, 0.5]
    sparse_rows = qbm.moment_trajectory(params, b, b.harmonic_potential(), rho0, t)
    gen = qbm.qbm_generator(params, b, b.harmonic_potential()).matrix
    rho = unvec(scipy.linalg.expm(0.5 * gen) @ vec(rho0), 42)
    assert sparse_rows[-1][4] == pytest.approx(np.trace(b.p_matrix @ b.p_matrix @ rho).real, rel=1e-6)


def test_moments_csv_header():
    b = OscillatorBasis(10)
    rows = qbm.moment_trajectory(QbmParams(1, 1, 0.1), b, b.harmonic_potential(), b.coherent_state(0.5), [0, 0.1])
    text = qbm.moments_csv(rows)
    assert text.splitlines()[0] == ",".join(qbm.MOMENT_COLUMNS)
    assert len(text.splitlines()) == 3
