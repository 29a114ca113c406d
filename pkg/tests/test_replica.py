"""Fixed-point solver: trivial points, analytic quadratic oracle, invariants."""
import numpy as np
import pytest

from asymmap.ensembles import MatrixEnsemble
from asymmap.model import SQUARED_ERROR, SUPPORT_MISMATCH, BlockSpec, PenaltySpec, SignalModel
from asymmap.replica import (
    ReplicaConvergenceError,
    fixed_point_residuals,
    multi_start,
    predict,
    solve_rs,
    solve_rs_robust,
)

from conftest import one_block_model, two_block_model

ZN = (PenaltySpec("zero_norm"),)
L1 = (PenaltySpec("l1"),)
L2 = (PenaltySpec("l2"),)


def l2_fixed_point_oracle(alpha, lam, lam0, c, tol=1e-14):
    """Analytic fixed point for the quadratic penalty with a dense Gaussian
    prior on the Marcenko-Pastur ensemble.

    With g = a y, a = 1/(1 + 2 theta c), the channel moments are
    se = a^2 (1 + theta0) - 2 a + 1 and cz = a theta0; no quadrature needed.
    """
    chi, p = 0.0, 1.0
    for _ in range(100_000):
        theta = lam + chi / alpha
        theta0 = lam0 + p / alpha
        a = 1.0 / (1.0 + 2.0 * theta * c)
        p_new = a * a * (1.0 + theta0) - 2.0 * a + 1.0
        chi_new = (theta / theta0) * a * theta0
        if max(abs(p_new - p), abs(chi_new - chi)) < tol:
            break
        chi, p = chi_new, p_new
    return chi, p


class TestTrivialFixedPoints:
    def test_all_zero_estimator(self):
        # Threshold far beyond the channel: g == 0, so p = E[x^2], chi = 0.
        m = two_block_model(rho0=0.3, rho1=0.05, f0=0.25, c0=1e4, c1=1e4, lam0=0.01)
        st = solve_rs(m, MatrixEnsemble.marcenko_pastur(1.0), ZN, lam=1.0)
        assert st.converged
        assert st.chi == pytest.approx(0.0, abs=1e-9)
        assert st.p == pytest.approx(m.second_moment(), rel=1e-9)

    def test_all_zero_prediction_aggregates(self):
        m = two_block_model(rho0=0.3, rho1=0.05, f0=0.25, c0=1e4, c1=1e4, lam0=0.01)
        st = solve_rs(m, MatrixEnsemble.marcenko_pastur(1.0), ZN, lam=1.0)
        pred = predict(st, m, ZN, distortions=(SQUARED_ERROR, SUPPORT_MISMATCH))
        assert pred.mse == pytest.approx(m.second_moment(), rel=1e-9)
        assert pred.d_w[SQUARED_ERROR] == pytest.approx(m.second_moment(), rel=1e-9)
        # Every nonzero is missed and nothing false-alarms: D = E[1{x != 0}].
        expected_sm = sum(b.fraction * b.rho for b in m.blocks)
        assert pred.d_w[SUPPORT_MISMATCH] == pytest.approx(expected_sm, rel=1e-9)

    def test_zero_weights_annihilate(self):
        m = SignalModel(
            (BlockSpec(1.0, 0.3, 1e4, w=0.0),), lam0=0.01
        )
        st = solve_rs(m, MatrixEnsemble.marcenko_pastur(1.0), ZN, lam=1.0)
        pred = predict(st, m, ZN, distortions=(SQUARED_ERROR,))
        assert pred.d_w[SQUARED_ERROR] == 0.0
        assert pred.mse == pytest.approx(0.3, rel=1e-9)  # mse ignores w


class TestQuadraticOracle:
    @pytest.mark.parametrize("alpha,lam", [(1.0, 0.1), (0.5, 0.3), (2.0, 0.05)])
    def test_matches_analytic_fixed_point(self, alpha, lam):
        lam0, c = 0.1, 0.5
        m = one_block_model(rho=1.0, c=c, lam0=lam0)
        st = solve_rs(m, MatrixEnsemble.marcenko_pastur(alpha), L2, lam=lam)
        chi_ref, p_ref = l2_fixed_point_oracle(alpha, lam, lam0, c)
        assert st.chi == pytest.approx(chi_ref, abs=1e-8)
        assert st.p == pytest.approx(p_ref, abs=1e-8)


class TestInvariants:
    @pytest.mark.parametrize(
        "table,lam",
        [(L2, 0.1), (L1, 0.1), (ZN, 0.3)],
    )
    def test_residuals_at_convergence(self, table, lam):
        m = two_block_model()
        ens = MatrixEnsemble.marcenko_pastur(0.5)
        st = solve_rs_robust(m, ens, table, lam)
        r_chi, r_p = fixed_point_residuals(st, m, ens, table)
        tol = 1e-10 * (1.0 + max(st.chi, st.p))
        assert r_chi <= 10 * tol and r_p <= 10 * tol

    def test_symmetric_reduction(self):
        # Two identical blocks must reproduce the single-block state.
        one = one_block_model(rho=0.1, c=1.0, lam0=0.01)
        two = SignalModel(
            (BlockSpec(0.5, 0.1, 1.0), BlockSpec(0.5, 0.1, 1.0)), lam0=0.01
        )
        ens = MatrixEnsemble.marcenko_pastur(0.5)
        for table, lam in ((L1, 0.1), (ZN, 0.3)):
            s1 = solve_rs(one, ens, table, lam)
            s2 = solve_rs(two, ens, table, lam)
            assert abs(s1.chi - s2.chi) <= 1e-9
            assert abs(s1.p - s2.p) <= 1e-9
            pred = predict(s2, two, table)
            assert pred.per_block[0].se == pytest.approx(pred.per_block[1].se, abs=1e-12)

    def test_uniform_blocks_have_identical_moments(self):
        m = SignalModel(
            (BlockSpec(0.3, 0.2, 1.5), BlockSpec(0.7, 0.2, 1.5)), lam0=0.01
        )
        st = solve_rs(m, MatrixEnsemble.marcenko_pastur(0.5), L1, 0.1)
        pred = predict(st, m, L1, distortions=(SQUARED_ERROR, SUPPORT_MISMATCH))
        b0, b1 = pred.per_block
        assert b0.se == pytest.approx(b1.se, abs=1e-12)
        assert b0.dist[SUPPORT_MISMATCH] == pytest.approx(b1.dist[SUPPORT_MISMATCH], abs=1e-12)

    def test_aggregation_identities(self):
        m = SignalModel(
            (BlockSpec(0.2, 0.1, 1.0, w=2.0), BlockSpec(0.8, 0.01, 2.0, w=0.5)), lam0=0.01
        )
        st = solve_rs_robust(m, MatrixEnsemble.marcenko_pastur(0.5), ZN, 0.1)
        pred = predict(st, m, ZN, distortions=(SQUARED_ERROR, SUPPORT_MISMATCH))
        mse = sum(b.fraction * blk.se for b, blk in zip(m.blocks, pred.per_block))
        dw = sum(
            b.fraction * b.w * blk.dist[SUPPORT_MISMATCH]
            for b, blk in zip(m.blocks, pred.per_block)
        )
        assert pred.mse == pytest.approx(mse, rel=1e-12)
        assert pred.d_w[SUPPORT_MISMATCH] == pytest.approx(dw, rel=1e-12)

    def test_invalid_lambda_rejected(self):
        with pytest.raises(ValueError):
            solve_rs(one_block_model(), MatrixEnsemble.marcenko_pastur(1.0), ZN, 0.0)

    def test_nonconvergence_raises_with_residual(self):
        # Small lambda in the zero-norm phase where Picard runs away.
        m = one_block_model(rho=0.1, c=1.0, lam0=0.01)
        with pytest.raises(ReplicaConvergenceError) as exc_info:
            solve_rs(m, MatrixEnsemble.marcenko_pastur(1.0), ZN, 1e-6)
        assert exc_info.value.residual is not None


class TestMultiStart:
    def test_convex_penalty_single_solution(self):
        m = one_block_model(rho=1.0, c=0.5, lam0=0.1)
        res = multi_start(m, MatrixEnsemble.marcenko_pastur(1.0), L2, 0.1)
        assert len(res.states) == 1
        assert not res.multiple_solutions

    def test_contains_default_result(self):
        m = one_block_model(rho=1.0, c=0.5, lam0=0.1)
        ens = MatrixEnsemble.marcenko_pastur(1.0)
        st = solve_rs(m, ens, L2, 0.1)
        res = multi_start(m, ens, L2, 0.1)
        assert any(
            abs(s.chi - st.chi) <= 1e-6 * (1 + abs(st.chi))
            and abs(s.p - st.p) <= 1e-6 * (1 + abs(st.p))
            for s in res.states
        )

    def test_states_sorted_and_deduplicated(self):
        m = two_block_model()
        res = multi_start(m, MatrixEnsemble.marcenko_pastur(0.25), ZN, 0.3)
        ps = [s.p for s in res.states]
        assert ps == sorted(ps)
        for i, a in enumerate(res.states):
            for b in res.states[i + 1 :]:
                close = abs(a.chi - b.chi) <= 1e-6 * (1 + abs(b.chi)) and abs(
                    a.p - b.p
                ) <= 1e-6 * (1 + abs(b.p))
                assert not close

    def test_solution_count_stable_under_grid_refinement(self):
        # Near the zero-norm phase boundary: count recorded, compared across
        # two grid resolutions (exploratory stability check, no ground truth).
        m = one_block_model(rho=0.1, c=1.0, lam0=0.01)
        ens = MatrixEnsemble.marcenko_pastur(0.25)
        coarse = multi_start(m, ens, ZN, 0.05)
        fine_grid = [
            (float(chi), float(p))
            for chi in np.geomspace(1e-4, 10.0, 8)
            for p in np.geomspace(1e-4, 0.2, 8)
        ]
        fine = multi_start(m, ens, ZN, 0.05, grid=fine_grid)
        assert len(coarse.states) == len(fine.states)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            multi_start(one_block_model(), MatrixEnsemble.marcenko_pastur(1.0), ZN, 0.1, grid=[])


class TestRobustSolver:
    def test_recovers_from_runaway_canonical_start(self):
        # At this load/lambda the canonical start diverges but a fixed point
        # exists and is reachable from small starts.
        m = two_block_model(c1=2.0)
        ens = MatrixEnsemble.marcenko_pastur(0.2)
        with pytest.raises(ReplicaConvergenceError):
            solve_rs(m, ens, ZN, 0.05)
        st = solve_rs_robust(m, ens, ZN, 0.05)
        assert st.converged
        r_chi, r_p = fixed_point_residuals(st, m, ens, ZN)
        assert max(r_chi, r_p) <= 1e-8

    def test_mse_nonincreasing_in_alpha(self):
        # More measurements never hurt (lambda tuned per point).
        from asymmap.sweep import tune_lambda

        m = two_block_model()
        mses = [
            tune_lambda(m, MatrixEnsemble.marcenko_pastur(a), L1).mse
            for a in (0.25, 0.5, 1.0)
        ]
        assert all(b <= a + 1e-9 for a, b in zip(mses, mses[1:]))
