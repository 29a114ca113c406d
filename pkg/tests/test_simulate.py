"""Finite-size instance generation, solvers, and the Monte-Carlo harness."""
import itertools
import math

import numpy as np
import pytest

from asymmap.ensembles import MatrixEnsemble
from asymmap.model import BlockSpec, SignalModel
from asymmap.scalar import scalar_map_vec
from asymmap.simulate import (
    generate,
    l0_objective,
    l1_objective,
    ridge_objective,
    run_validation,
    solve_ridge,
    solve_weighted_l0_exhaustive,
    solve_weighted_l1,
    write_histogram_csv,
)

from conftest import L1_TABLE, L2_TABLE, one_block_model, two_block_model


class TestGenerate:
    def test_deterministic(self):
        m = two_block_model()
        a = generate(m, 50, 0.5, seed=123)
        b = generate(m, 50, 0.5, seed=123)
        assert np.array_equal(a.A, b.A)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)

    def test_shapes_and_noise_free_case(self):
        m = two_block_model(lam0=0.0)
        inst = generate(m, 40, 0.5, seed=0)
        assert inst.A.shape == (20, 40)
        assert np.all(inst.z == 0.0)
        assert np.allclose(inst.y, inst.A @ inst.x)

    def test_column_norms_concentrate(self):
        m = one_block_model()
        inst = generate(m, 200, 2.0, seed=5)
        k = inst.A.shape[0]
        norms = np.linalg.norm(inst.A, axis=0)
        assert np.all(np.abs(norms - 1.0) <= 5.0 / math.sqrt(k))

    def test_degenerate_load_rejected(self):
        with pytest.raises(ValueError):
            generate(one_block_model(), 10, 0.01, seed=0)


class TestRidge:
    def test_one_dimensional_pinned(self):
        # K = N = 1, A = [a], y fixed: xhat = a y / (a^2 + 2 lam c).
        m = one_block_model(rho=1.0, c=0.5, lam0=0.1)
        inst = generate(m, 1, 1.0, seed=9)
        lam = 0.2
        xhat = solve_ridge(inst, lam)
        a, y = float(inst.A[0, 0]), float(inst.y[0])
        expected = a * y / (a * a + 2.0 * lam * 0.5)
        assert float(xhat[0]) == pytest.approx(expected, rel=1e-12)

    def test_large_weights_shrink_to_zero(self):
        m = one_block_model(rho=1.0, c=1.0, lam0=0.1)
        inst = generate(m, 30, 1.0, seed=2)
        small = np.linalg.norm(solve_ridge(inst, 0.1, c_profile=np.full(30, 1e6)))
        assert small <= 1e-4

    def test_randomized_optimality(self):
        # 20x40 instance: the solver's objective beats 1e5 random points.
        m = one_block_model(rho=0.5, c=1.3, lam0=0.05)
        inst = generate(m, 40, 0.5, seed=31)
        lam = 0.1
        xhat = solve_ridge(inst, lam)
        f_star = ridge_objective(inst, lam, inst.c, xhat)
        rng = np.random.default_rng(77)
        for _ in range(100):
            pts = xhat[None, :] + 0.3 * rng.standard_normal((1000, 40))
            for v in pts:
                assert ridge_objective(inst, lam, inst.c, v) >= f_star - 1e-9

    def test_invalid_inputs(self):
        inst = generate(one_block_model(), 10, 1.0, seed=0)
        with pytest.raises(ValueError):
            solve_ridge(inst, 0.0)
        with pytest.raises(ValueError):
            solve_ridge(inst, 0.1, c_profile=np.zeros(10))


class TestWeightedL1:
    def test_identity_matrix_gives_soft_threshold(self):
        # A = I makes the problem separable: compare against the scalar rule.
        m = one_block_model(rho=0.3, c=0.8, lam0=0.05)
        inst = generate(m, 50, 1.0, seed=4)
        inst = inst.__class__(
            np.eye(50), inst.x, inst.z[:50], inst.x + inst.z[:50],
            inst.rho, inst.c, inst.w, inst.block_id, inst.seed, 1.0,
        )
        lam = 0.2
        xhat, info = solve_weighted_l1(inst, lam)
        assert info.converged
        expected = scalar_map_vec(L1_TABLE[0], lam, 0.8, inst.y)
        assert np.max(np.abs(xhat - expected)) <= 1e-8

    def test_zero_weights_give_least_squares(self):
        # c = 0 removes the penalty entirely; compare to the pseudoinverse
        # solution on an overdetermined system.
        m = one_block_model(rho=1.0, c=1.0, lam0=0.1)
        inst = generate(m, 30, 2.0, seed=6)
        xhat, info = solve_weighted_l1(inst, 0.1, c_profile=np.zeros(30))
        assert info.converged
        ls = np.linalg.lstsq(inst.A, inst.y, rcond=None)[0]
        assert np.max(np.abs(xhat - ls)) <= 1e-4
        zeros = np.zeros(30)
        gap = l1_objective(inst, 0.1, zeros, xhat) - l1_objective(inst, 0.1, zeros, ls)
        assert gap <= 1e-8 * (1.0 + abs(l1_objective(inst, 0.1, zeros, ls)))

    def test_multistart_certificate(self):
        # 50 random restarts on a 50x100 instance all land on (or above)
        # the solver's objective from the default start.
        m = one_block_model(rho=0.2, c=1.0, lam0=0.05)
        inst = generate(m, 100, 0.5, seed=8)
        lam = 0.1
        xhat, info = solve_weighted_l1(inst, lam)
        f_star = l1_objective(inst, lam, inst.c, xhat)
        assert info.converged
        rng = np.random.default_rng(123)
        for _ in range(50):
            v = rng.standard_normal(100)
            assert l1_objective(inst, lam, inst.c, v) >= f_star - 1e-8

    def test_exact_zeros_produced(self):
        m = one_block_model(rho=0.1, c=2.0, lam0=0.05)
        inst = generate(m, 80, 0.5, seed=10)
        xhat, _ = solve_weighted_l1(inst, 0.5)
        assert np.any(xhat == 0.0)


class TestExhaustiveL0:
    def test_zero_observation_gives_zero(self):
        m = one_block_model(rho=0.3, c=1.0, lam0=0.0)
        inst = generate(m, 10, 0.6, seed=3)
        inst = inst.__class__(
            inst.A, inst.x, inst.z, np.zeros_like(inst.y),
            inst.rho, inst.c, inst.w, inst.block_id, inst.seed, inst.alpha,
        )
        xhat = solve_weighted_l0_exhaustive(inst, 0.1)
        assert np.all(xhat == 0.0)

    def test_free_support_gives_least_squares(self):
        # c = 0 on an overdetermined full-rank system: the optimum is the
        # unrestricted least-squares solution.
        m = one_block_model(rho=1.0, c=1.0, lam0=0.1)
        inst = generate(m, 8, 2.0, seed=12)
        xhat = solve_weighted_l0_exhaustive(inst, 0.1, c_profile=np.zeros(8))
        ls = np.linalg.lstsq(inst.A, inst.y, rcond=None)[0]
        assert np.max(np.abs(xhat - ls)) <= 1e-8

    def test_dominates_all_supports(self):
        # N = 12: re-enumerate every support independently and check the
        # returned solution's objective is the global minimum.
        m = one_block_model(rho=0.3, c=0.7, lam0=0.05)
        inst = generate(m, 12, 0.5, seed=21)
        lam = 0.15
        xhat = solve_weighted_l0_exhaustive(inst, lam)
        f_star = l0_objective(inst, lam, inst.c, xhat)
        for r in range(13):
            for sup in itertools.combinations(range(12), r):
                v = np.zeros(12)
                if sup:
                    sub = inst.A[:, list(sup)]
                    coef, *_ = np.linalg.lstsq(sub, inst.y, rcond=None)
                    v[list(sup)] = coef
                assert l0_objective(inst, lam, inst.c, v) >= f_star - 1e-9

    def test_size_limit_enforced(self):
        inst = generate(one_block_model(), 30, 1.0, seed=0)
        with pytest.raises(ValueError):
            solve_weighted_l0_exhaustive(inst, 0.1)


@pytest.fixture(scope="module")
def ridge_report():
    m = SignalModel((BlockSpec(1.0, 1.0, 0.5),), lam0=0.1)
    return run_validation(
        m, L2_TABLE, alpha=1.0, lam=0.1, solver="ridge",
        n=300, trials=8, seed=42, ens=MatrixEnsemble.marcenko_pastur(1.0),
    )


class TestRunValidation:

    def test_mse_matches_replica(self, ridge_report):
        rep = ridge_report
        assert rep.failed_trials == 0
        assert abs(rep.mse - rep.replica.mse) <= max(3 * rep.mse_stderr, 0.05 * rep.replica.mse)

    def test_histogram_masses_sum_to_one(self, ridge_report):
        h = ridge_report.histograms
        occupied = h.empirical.sum(axis=1) > 0
        assert np.allclose(h.empirical[occupied].sum(axis=1), 1.0)
        assert np.allclose(h.decoupled[occupied].sum(axis=1), 1.0)

    def test_deterministic(self):
        m = one_block_model(rho=1.0, c=0.5, lam0=0.1)
        kwargs = dict(
            model=m, penalty_table=L2_TABLE, alpha=1.0, lam=0.1,
            solver="ridge", n=100, trials=2, seed=7,
            ens=MatrixEnsemble.marcenko_pastur(1.0),
        )
        a = run_validation(**kwargs)
        b = run_validation(**kwargs)
        assert a.to_dict() == b.to_dict()

    def test_report_serializes(self, ridge_report):
        import json

        payload = json.dumps(ridge_report.to_dict())
        assert '"mse"' in payload

    def test_histogram_csv(self, ridge_report, tmp_path):
        path = tmp_path / "hist.csv"
        write_histogram_csv(ridge_report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin_left,bin_right,empirical_mass,decoupled_mass"
        assert lines[1].startswith("atom,atom,")
        assert len(lines) == 24  # header + atom + underflow + 20 bins + overflow

    def test_unknown_solver_rejected(self):
        with pytest.raises(ValueError):
            run_validation(
                one_block_model(), L1_TABLE, alpha=1.0, lam=0.1,
                solver="omp", n=20, trials=1, seed=0,
            )
