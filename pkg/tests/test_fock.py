import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpk import fock
from cpk.fock import (
    BilinearGeneratorSpec,
    ModeSystem,
    QuasiDiagonalConfig,
    SeparationError,
    bilinear_generator_apply,
    decomposition_check,
    ladder,
    number_conservation_check,
    quasi_diagonal_pairs,
    reduce_to_one_particle,
    restricted_cp_check,
)
from cpk.lindblad import evolve_state, generator_schroedinger
from cpk.operators import StateError, dagger
from cpk.superop import apply


def random_density(d, rng):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


def random_hermitian(m, rng):
    g = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return 0.5 * (g + dagger(g))


def test_single_fermion_ladder():
    a, ad = ladder(ModeSystem(1), 0)
    assert np.array_equal(a, [[0, 1], [0, 0]])
    assert np.array_equal(ad, [[0, 0], [1, 0]])


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_car_exact(m):
    ms = ModeSystem(m)
    a = ms.annihilators
    ident = np.eye(ms.dim)
    for f in range(m):
        for g in range(m):
            anti = a[f] @ dagger(a[g]) + dagger(a[g]) @ a[f]
            assert np.array_equal(anti, ident if f == g else 0 * ident)
            assert np.array_equal(a[f] @ a[g] + a[g] @ a[f], 0 * ident)


def test_vacuum_is_index_zero():
    ms = ModeSystem(3)
    for a in ms.annihilators:
        assert np.all(a[:, 0] == 0)


def test_bosonic_number_operator():
    ms = ModeSystem(1, "bosonic", cutoff=3)
    a, ad = ladder(ms, 0)
    assert np.allclose(ad @ a, np.diag([0, 1, 2, 3]))


def test_bosonic_ccr_on_interior():
    ms = ModeSystem(2, "bosonic", cutoff=3)
    a = ms.annihilators
    p = ms.interior_projector()
    for f in range(2):
        for g in range(2):
            comm = a[f] @ dagger(a[g]) - dagger(a[g]) @ a[f]
            assert np.allclose(p @ comm @ p, p if f == g else 0 * p, atol=1e-14)


def test_ladder_index_error():
    with pytest.raises(IndexError):
        ladder(ModeSystem(2), 2)


def test_mode_system_validation():
    with pytest.raises(ValueError):
        ModeSystem(1, "bosonic")
    with pytest.raises(ValueError):
        ModeSystem(13)
    with pytest.raises(ValueError):
        ModeSystem(2, energies=[1.0])


def test_quasi_diagonal_examples():
    cfg = QuasiDiagonalConfig(t=2.0, tau0=0.1)
    assert quasi_diagonal_pairs([1.0, 1.0, 1.0], cfg) == {(h, k) for h in range(3) for k in range(3)}
    assert quasi_diagonal_pairs([0.0, 10 / cfg.t], cfg) == {(0, 0), (1, 1)}
    assert quasi_diagonal_pairs([0.0, 0.5 / cfg.t, 10 / cfg.t], cfg) == {(0, 0), (1, 1), (2, 2), (0, 1), (1, 0)}


def test_quasi_diagonal_separation_error():
    with pytest.raises(SeparationError):
        QuasiDiagonalConfig(t=0.5, tau0=0.1)
    QuasiDiagonalConfig(t=0.5, tau0=0.1, separation_factor=5)


def test_free_generator_matches_energy_difference():
    energies = [0.3, -1.1, 2.0]
    spec = BilinearGeneratorSpec(ModeSystem(3, energies=energies), hbar=0.5)
    a = spec.mode_system.annihilators
    for h in range(3):
        for k in range(3):
            want = 1j / 0.5 * (energies[h] - energies[k]) * (dagger(a[h]) @ a[k])
            assert np.allclose(bilinear_generator_apply(spec, h, k), want, atol=1e-14)


def test_generator_index_error():
    with pytest.raises(IndexError):
        bilinear_generator_apply(BilinearGeneratorSpec(ModeSystem(2)), 0, 2)


def test_diagonal_sum_vanishes_for_number_conserving_spec():
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(0))
    total = sum(bilinear_generator_apply(spec, h, h) for h in range(3))
    assert np.linalg.norm(total) <= 1e-12


def test_loss_and_gain_cancel_on_vacuum():
    rng = np.random.default_rng(1)
    r = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    spec = BilinearGeneratorSpec(ModeSystem(2), 1.0, None, 0.5 * dagger(r) @ r, (r,))
    for h in range(2):
        for k in range(2):
            out = bilinear_generator_apply(spec, h, k)
            assert np.allclose(out[:, 0], 0, atol=1e-15)
            assert np.allclose(out[0, :], 0, atol=1e-15)


def test_generator_linearity():
    rng = np.random.default_rng(2)
    spec = fock.random_number_conserving_spec(3, rng)
    x, y = rng.standard_normal((3, 3)), rng.standard_normal((3, 3)) * 1j
    al, be = 0.7, -1.3 + 0.2j
    lhs = fock.generator_on_bilinear(spec, al * x + be * y)
    rhs = al * fock.generator_on_bilinear(spec, x) + be * fock.generator_on_bilinear(spec, y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12


def test_decomposition_at_zero_dt():
    spec = fock.random_number_conserving_spec(2, np.random.default_rng(3))
    assert decomposition_check(spec, 0, 1, 0.0).full == 0.0


def test_decomposition_random_spec():
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(4))
    dt = 1e-3
    for h in range(3):
        for k in range(3):
            r = decomposition_check(spec, h, k, dt)
            assert r.first_order <= 1e-12
            assert r.full <= 10 * dt * dt


def test_decomposition_free_scaling():
    # free drift c_f = -(i/hbar) E_f a_f, so the residual is dt^2 |E_h E_k| |a_h^+ a_k|
    energies = [0.0, 1.0, 2.5]
    spec = BilinearGeneratorSpec(ModeSystem(3, energies=energies))
    a = spec.mode_system.annihilators
    for dt in (1e-2, 1e-3):
        r1, r2 = decomposition_check(spec, 1, 2, dt), decomposition_check(spec, 1, 2, dt / 2)
        assert r1.full / r2.full == pytest.approx(4.0, abs=0.1)
        want = dt * dt * energies[1] * energies[2] * np.linalg.norm(dagger(a[1]) @ a[2])
        assert r1.full == pytest.approx(want, rel=1e-9)


def test_decomposition_literal_sign_breaks_first_order():
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(5))
    assert decomposition_check(spec, 0, 1, 1e-3, literal_sign=True).first_order > 1e-3


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_decomposition_all_pairs(m):
    rng = np.random.default_rng(10 + m)
    for _ in range(5):
        spec = fock.random_number_conserving_spec(m, rng)
        for h in range(m):
            for k in range(m):
                assert decomposition_check(spec, h, k, 1e-3).first_order <= 1e-12


def test_restricted_cp_vacuum_value():
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(6))
    t = fock._evolved_bilinears(spec, 0.0)
    blocks = fock._restricted_blocks(t, [np.eye(3)])
    assert blocks[0, 0][0, 0] == 0


def test_restricted_cp_number_conserving():
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(7))
    assert restricted_cp_check(spec, 1e-3, 200, np.random.default_rng(8)) >= -1e-10


def test_restricted_cp_adversarial_first_order_defect():
    # the first-order map 1 + dt L' is only CP up to O(dt^2)
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(9), scale=2.0)
    lo1 = restricted_cp_check(spec, 1e-3, 20, np.random.default_rng(0), adversarial=True)
    lo2 = restricted_cp_check(spec, 5e-4, 20, np.random.default_rng(0), adversarial=True)
    assert lo1 < 0 and lo2 < 0
    assert lo1 / lo2 == pytest.approx(4.0, rel=0.1)


def test_negative_gamma_is_rejected():
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(10))
    with pytest.raises(ValueError):
        BilinearGeneratorSpec(spec.mode_system, 1.0, spec.V, -spec.Gamma, spec.R_ops)


def test_number_conservation_examples():
    rng = np.random.default_rng(11)
    v_only = BilinearGeneratorSpec(ModeSystem(3), 1.0, random_hermitian(3, rng))
    assert number_conservation_check(v_only) <= 1e-12
    r = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    good = BilinearGeneratorSpec(ModeSystem(3), 1.0, None, 0.5 * dagger(r) @ r, (r,))
    assert good.number_conserving and number_conservation_check(good) <= 1e-12
    bad = BilinearGeneratorSpec(ModeSystem(3), 1.0, None, dagger(r) @ r, (r,))
    assert not bad.number_conserving
    n_hat = bad.mode_system.bilinear(dagger(r) @ r)
    assert number_conservation_check(bad) == pytest.approx(np.linalg.norm(n_hat), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.booleans())
def test_number_conservation_iff(m, seed, perturb):
    rng = np.random.default_rng(seed)
    spec = fock.random_number_conserving_spec(m, rng)
    if perturb:
        g = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        spec = BilinearGeneratorSpec(spec.mode_system, 1.0, spec.V, spec.Gamma + 0.05 * g @ dagger(g), spec.R_ops)
    assert spec.number_conserving == (number_conservation_check(spec) <= 1e-12)


def test_reduction_examples():
    rng = np.random.default_rng(12)
    rho_m = random_density(2, rng)
    lhs, rhs = reduce_to_one_particle(random_density(3, rng), rho_m, np.eye(3))
    assert lhs == pytest.approx(1.0) and rhs == pytest.approx(1.0)
    e00 = np.diag([1.0, 0.0, 0.0])
    assert reduce_to_one_particle(e00, rho_m, e00) == pytest.approx((1.0, 1.0))


def test_reduction_random():
    rng = np.random.default_rng(13)
    for _ in range(20):
        lhs, rhs = reduce_to_one_particle(random_density(3, rng), random_density(2, rng),
                                          random_hermitian(3, rng))
        assert abs(lhs - rhs) <= 1e-12


def test_reduction_bosonic():
    rng = np.random.default_rng(14)
    lhs, rhs = reduce_to_one_particle(random_density(2, rng), np.eye(1), random_hermitian(2, rng), "bosonic")
    assert abs(lhs - rhs) <= 1e-12


def test_reduction_rejects_bad_state():
    with pytest.raises(StateError):
        reduce_to_one_particle(np.diag([0.5, 0.6]), np.eye(1), np.eye(2))


def test_one_particle_unitary():
    h0 = np.diag([0.0, 1.0])
    spec = fock.one_particle_master_generator(h0, np.zeros((2, 2)), [])
    assert spec.jump_ops == ()


def test_one_particle_amplitude_damping():
    gamma, hbar = 0.8, 0.5
    lop = math.sqrt(gamma * hbar) * np.array([[0.0, 1.0], [0.0, 0.0]])
    spec = fock.one_particle_master_generator(np.zeros((2, 2)), np.zeros((2, 2)), [lop], hbar)
    states = evolve_state(spec, np.diag([0.0, 1.0]), [0.0, 1.0, 2.0])
    assert [s[1, 1].real for s in states] == pytest.approx([1, math.exp(-gamma), math.exp(-2 * gamma)], abs=1e-12)


def test_one_particle_trace_preserving():
    rng = np.random.default_rng(15)
    for _ in range(50):
        m = int(rng.integers(1, 5))
        ls = [rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)) for _ in range(2)]
        spec = fock.one_particle_master_generator(random_hermitian(m, rng), random_hermitian(m, rng), ls, 0.7)
        drho = apply(generator_schroedinger(spec), random_density(m, rng))
        assert abs(np.trace(drho)) <= 1e-12


def test_spec_json_round_trip():
    spec = fock.random_number_conserving_spec(3, np.random.default_rng(16))
    back = BilinearGeneratorSpec.from_json(spec.to_json())
    assert np.array_equal(back.Gamma, spec.Gamma) and back.number_conserving
    assert np.array_equal(back.mode_system.energies, spec.mode_system.energies)
