import numpy as np
import pytest

from smefilter.diffusion import NonFiniteStateError
from smefilter.jump import (
    CountingRecord,
    InvalidCountingRecordError,
    JumpGauge,
    count_probability,
    jump_pathwise_schrodinger_rhs,
    jump_pathwise_solve,
    jump_sme_step,
    jump_unnorm_step,
    read_counting_record,
    sample_counting_record,
    write_counting_record,
)
from smefilter.linalg import dagger, max_abs
from smefilter.model import SIGMA, SIGMA_X, SIGMA_Z, build_jump_model, purity
from smefilter.ode import rk4_step

RHO_PLUS = np.full((2, 2), 0.5, dtype=complex)
GROUND = np.diag([0.0, 1.0]).astype(complex)
EXCITED = np.diag([1.0, 0.0]).astype(complex)


def unitary_jump_model(theta=0.4, lam=1.0, eta=0.7):
    """Invertible (unitary) jump operator, so the gauge power is benign."""
    c = np.cos(theta) * np.eye(2, dtype=complex) - 1j * np.sin(theta) * SIGMA_X
    return build_jump_model(c, 0.5 * SIGMA_Z, lam, eta)


def unnorm_path(model, record, rho_tilde0, refine=1):
    """Euler path of the linear equation, optionally on a refined grid with
    the count applied at the end of its original step."""
    rt = np.asarray(rho_tilde0, dtype=complex).copy()
    out = [rt.copy()]
    dt = record.dt / refine
    for dn in record.counts:
        for j in range(refine):
            rt = jump_unnorm_step(model, rt, int(dn) if j == refine - 1 else 0, dt)
        out.append(rt.copy())
    return out


class TestCountingRecord:
    def test_validation(self):
        with pytest.raises(ValueError, match="dt"):
            CountingRecord(0.0, np.array([0, 1]))
        with pytest.raises(ValueError, match="0 or 1"):
            CountingRecord(0.1, np.array([0, 2]))

    def test_derived_series(self):
        rec = CountingRecord(0.5, np.array([0, 1, 0, 1]), t0=1.0)
        assert np.array_equal(rec.cumulative_counts(), [0, 0, 1, 1, 2])
        assert np.allclose(rec.jump_times, [2.0, 3.0])
        assert rec.total == 2

    def test_csv_roundtrip(self, tmp_path):
        rec = CountingRecord(0.25, np.array([1, 0, 0, 1, 0]))
        path = tmp_path / "counts.csv"
        write_counting_record(path, rec)
        back = read_counting_record(path)
        assert back.dt == rec.dt and back.t0 == rec.t0
        assert np.array_equal(back.counts, rec.counts)

    def test_csv_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,dy\n0.1,0.3\n")
        with pytest.raises(ValueError, match="t,dN"):
            read_counting_record(path)


class TestSampling:
    def test_zero_coupling_gives_empty_record(self):
        m = build_jump_model(np.zeros((2, 2)), 0.5 * SIGMA_Z, 1.0, 1.0)
        rec = sample_counting_record(m, RHO_PLUS, dt=0.01, T=2.0, seed=1)
        assert rec.total == 0

    def test_identity_jump_operator_is_poisson(self):
        # tr(C rho C^dag) = 1, so counts are Bernoulli(lam dt) per step;
        # the seed-averaged total must sit within 3 sigma of lam T
        lam, dt, T, n_seeds = 1.0, 0.01, 2.0, 1000
        m = build_jump_model(np.eye(2), 0.5 * SIGMA_Z, lam, 1.0)
        totals = [sample_counting_record(m, RHO_PLUS, dt, T, seed).total for seed in range(n_seeds)]
        n = int(round(T / dt))
        p = lam * dt
        mean_expected = n * p
        sigma = np.sqrt(n * p * (1 - p) / n_seeds)
        assert abs(np.mean(totals) - mean_expected) <= 3.0 * sigma

    def test_increments_are_binary(self):
        m = unitary_jump_model()
        rec = sample_counting_record(m, RHO_PLUS, dt=0.01, T=3.0, seed=7)
        assert set(np.unique(rec.counts)).issubset({0, 1})
        assert np.all(np.diff(rec.cumulative_counts()) >= 0)

    def test_deterministic_given_seed(self):
        m = unitary_jump_model()
        a = sample_counting_record(m, RHO_PLUS, dt=0.01, T=2.0, seed=3)
        b = sample_counting_record(m, RHO_PLUS, dt=0.01, T=2.0, seed=3)
        assert np.array_equal(a.counts, b.counts)

    def test_rate_guard(self):
        m = build_jump_model(np.eye(2), np.zeros((2, 2)), 30.0, 1.0)
        with pytest.raises(ValueError, match="smaller dt"):
            sample_counting_record(m, RHO_PLUS, dt=0.01, T=1.0, seed=0)
        with pytest.raises(ValueError, match="smaller dt"):
            count_probability(m, RHO_PLUS, 0.01)


class TestSmeStep:
    def test_small_intensity_is_liouville(self):
        e_op = 0.5 * SIGMA_Z
        m = build_jump_model(np.eye(2), e_op, 1e-12, 1.0)
        dt = 1e-3
        got = jump_sme_step(m, RHO_PLUS, 0, dt)
        expected = RHO_PLUS + dt * (-1j) * (e_op @ RHO_PLUS - RHO_PLUS @ e_op)
        expected /= np.trace(expected).real
        assert max_abs(got - expected) <= 1e-9

    def test_count_flips_ground_to_excited(self):
        m = build_jump_model(SIGMA_X, np.zeros((2, 2)), 1.0, 1.0)
        out = jump_sme_step(m, GROUND, 1, 1e-9)
        assert max_abs(out - EXCITED) <= 1e-6

    def test_count_on_annihilated_state_rejected(self):
        # lowering operator kills the ground state
        m = build_jump_model(SIGMA, np.zeros((2, 2)), 1.0, 1.0)
        with pytest.raises(InvalidCountingRecordError):
            jump_sme_step(m, GROUND, 1, 1e-9)

    def test_input_validation(self):
        m = unitary_jump_model()
        with pytest.raises(ValueError, match="dn"):
            jump_sme_step(m, RHO_PLUS, 2, 0.01)
        with pytest.raises(ValueError, match="dt"):
            jump_sme_step(m, RHO_PLUS, 0, 0.0)


class TestUnnormStep:
    def test_small_intensity_unitary_flow(self):
        e_op = 0.5 * SIGMA_Z
        m = build_jump_model(np.eye(2), e_op, 1e-12, 1.0)
        dt = 1e-3
        got = jump_unnorm_step(m, RHO_PLUS, 0, dt)
        expected = RHO_PLUS + dt * (-1j) * (e_op @ RHO_PLUS - RHO_PLUS @ e_op)
        assert max_abs(got - expected) <= 1e-9

    def test_count_applies_jump_map(self):
        m = build_jump_model(SIGMA, np.zeros((2, 2)), 1.0, 1.0)
        out = jump_unnorm_step(m, np.eye(2, dtype=complex), 1, 1e-12)
        # C I C^dag = sigma sigma^dag projects onto the ground state
        assert max_abs(out - GROUND) <= 1e-9

    def test_normalized_path_matches_sme_path(self):
        m = unitary_jump_model()
        rec = sample_counting_record(m, RHO_PLUS, dt=0.01, T=3.0, seed=11)
        fine = unnorm_path(m, rec, RHO_PLUS, refine=100)
        rho = RHO_PLUS.copy()
        worst = 0.0
        for k, dn in enumerate(rec.counts):
            rho = jump_sme_step(m, rho, int(dn), rec.dt)
            ref = fine[k + 1] / np.trace(fine[k + 1]).real
            worst = max(worst, max_abs(rho - ref))
        assert worst <= 0.05


class TestJumpGauge:
    def test_requires_invertible(self):
        m = build_jump_model(SIGMA, np.zeros((2, 2)), 1.0, 1.0)
        with pytest.raises(ValueError, match="not invertible"):
            JumpGauge.identity(m)

    def test_count_multiplies_by_inverse(self):
        m = unitary_jump_model()
        g = JumpGauge.identity(m)
        a_before = g.a.copy()
        g.advance()
        assert np.array_equal(g.a, a_before @ m.C_inv)
        assert g.count == 1
        g.advance()
        assert max_abs(g.a @ g.a_inv - np.eye(2)) <= 1e-10


class TestPathwiseSolve:
    def test_empty_record_reduces_to_drift_ode(self):
        m = unitary_jump_model()
        rec = CountingRecord(0.01, np.zeros(300, dtype=int))
        _, recovered = jump_pathwise_solve(m, rec, RHO_PLUS, substeps=4)
        fine = unnorm_path(m, rec, RHO_PLUS, refine=50)
        gap = max(
            max_abs(st.rho - ft / np.trace(ft).real) for st, ft in zip(recovered, fine)
        )
        assert gap <= 1e-3

    def test_matches_fine_unnormalized_path(self):
        m = unitary_jump_model()
        rec = sample_counting_record(m, RHO_PLUS, dt=0.01, T=3.0, seed=5)
        assert rec.total > 0
        _, recovered = jump_pathwise_solve(m, rec, RHO_PLUS, substeps=8)
        fine = unnorm_path(m, rec, RHO_PLUS, refine=100)
        gap = max(
            max_abs(st.rho - ft / np.trace(ft).real) for st, ft in zip(recovered, fine)
        )
        assert gap <= 1e-3

    def test_r_is_continuous_but_recovered_state_jumps(self):
        m = unitary_jump_model(theta=0.9)
        rec = sample_counting_record(m, RHO_PLUS, dt=0.01, T=3.0, seed=5)
        jump_steps = np.flatnonzero(rec.counts)
        assert jump_steps.size > 0
        r_path, recovered = jump_pathwise_solve(m, rec, RHO_PLUS, substeps=4)
        k = int(jump_steps[0])
        r_step = max_abs(r_path[k + 1].r - r_path[k].r)
        rho_step = max_abs(recovered[k + 1].rho - recovered[k].rho)
        assert rho_step > 5 * r_step / max(1.0, max_abs(r_path[k].r))

    def test_recovered_jump_matches_jump_map(self):
        # at a count, the normalized recovered state transforms as
        # J rho / tr(J rho) of the drift-evolved preceding state
        m = unitary_jump_model(theta=0.7)
        dt = 1e-4
        rec = CountingRecord(dt, np.array([0, 0, 1, 0], dtype=int))
        _, recovered = jump_pathwise_solve(m, rec, RHO_PLUS, substeps=4)
        before = recovered[2].rho
        jumped = m.C @ before @ dagger(m.C)
        jumped /= np.trace(jumped).real
        assert max_abs(recovered[3].rho - jumped) <= 1e-3

    def test_perfect_detection_preserves_purity(self):
        m = unitary_jump_model(eta=1.0)
        rec = sample_counting_record(m, RHO_PLUS, dt=0.01, T=3.0, seed=9)
        _, recovered = jump_pathwise_solve(m, rec, RHO_PLUS, substeps=8)
        for st in recovered:
            assert purity(st.rho) >= 1.0 - 1e-6

    def test_noninvertible_rejected(self):
        m = build_jump_model(SIGMA, np.zeros((2, 2)), 1.0, 1.0)
        rec = CountingRecord(0.01, np.zeros(5, dtype=int))
        with pytest.raises(ValueError, match="not invertible"):
            jump_pathwise_solve(m, rec, RHO_PLUS)


class TestJumpPathwiseSchrodinger:
    def test_requires_perfect_detection(self):
        m = unitary_jump_model(eta=0.7)
        with pytest.raises(ValueError, match="eta = 1"):
            jump_pathwise_schrodinger_rhs(m, np.eye(2), np.eye(2), np.array([1.0, 0.0]))

    def test_identity_jump_operator_reduces_to_schrodinger(self):
        e_op = 0.5 * SIGMA_Z
        m = build_jump_model(np.eye(2), e_op, 1.0, 1.0)
        phi = np.array([0.6, 0.8], dtype=complex)
        got = jump_pathwise_schrodinger_rhs(m, np.eye(2), np.eye(2), phi)
        assert max_abs(got - (-1j) * (e_op @ phi)) <= 1e-14

    def test_rank_one_consistency(self):
        m = unitary_jump_model(eta=1.0)
        rec = sample_counting_record(m, RHO_PLUS, dt=0.01, T=2.0, seed=13)
        _, recovered = jump_pathwise_solve(m, rec, RHO_PLUS, substeps=4)
        gauge = JumpGauge.identity(m)
        phi = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
        substeps = 4
        h = rec.dt / substeps
        for k, dn in enumerate(rec.counts):
            a, a_inv = gauge.a, gauge.a_inv

            def deriv(_t, v):
                return jump_pathwise_schrodinger_rhs(m, a, a_inv, v)

            for _ in range(substeps):
                phi = rk4_step(deriv, 0.0, phi, h)
            if dn:
                gauge.advance()
        back = gauge.a_inv @ phi
        outer = np.outer(back, back.conj())
        outer /= np.trace(outer).real
        assert max_abs(outer - recovered[-1].rho) <= 1e-6
