import warnings

import numpy as np
import pytest

import dagprox as dp
from oracles import central_difference_gradient


def chain_dag(n):
    return dp.validate_dag(n, [(i, i + 1) for i in range(n - 1)])


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(17)
    dag = chain_dag(6)
    a = rng.standard_normal((30, 6))
    beta = np.zeros(6)
    beta[:3] = [1.0, -0.8, 0.6]
    y = a @ beta + 0.05 * rng.standard_normal(30)
    return dag, dp.LeastSquaresLoss(a, y)


class TestLosses:
    @pytest.mark.parametrize("loss_kind", ["ls", "logistic"])
    def test_gradient_matches_central_differences(self, loss_kind):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((25, 7))
        if loss_kind == "ls":
            loss = dp.LeastSquaresLoss(a, rng.standard_normal(25))
        else:
            loss = dp.LogisticLoss(a, rng.choice([-1.0, 1.0], size=25))
        for _ in range(50):
            beta = rng.standard_normal(7)
            g = loss.gradient(beta)
            g_fd = central_difference_gradient(loss.value, beta, h=1e-6)
            rel = np.linalg.norm(g - g_fd) / max(1.0, np.linalg.norm(g))
            assert rel <= 1e-4

    def test_least_squares_value_nonnegative_and_exact(self):
        a = np.eye(3)
        y = np.array([1.0, 2.0, 3.0])
        loss = dp.LeastSquaresLoss(a, y)
        assert loss.value(y) == 0.0
        assert loss.value(np.zeros(3)) == pytest.approx(0.5 * 14.0)
        assert loss.lipschitz_hint() == pytest.approx(1.0)

    def test_logistic_value_at_zero(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((40, 5))
        loss = dp.LogisticLoss(a, rng.choice([-1.0, 1.0], size=40))
        assert loss.value(np.zeros(5)) == pytest.approx(40 * np.log(2.0), rel=1e-14)

    def test_logistic_stable_at_large_margins(self):
        a = np.array([[100.0], [-100.0]])
        loss = dp.LogisticLoss(a, np.array([1.0, -1.0]))
        with np.errstate(over="raise", invalid="raise"):
            v = loss.value(np.array([2.0]))
            g = loss.gradient(np.array([2.0]))
        assert np.isfinite(v) and v >= 0.0
        assert np.all(np.isfinite(g))
        # both samples are confidently correct: near-zero loss and gradient
        assert v <= 1e-80
        # mirrored labels give a confidently wrong fit with linear-in-margin loss
        v_wrong = loss.value(np.array([-2.0]))
        assert v_wrong == pytest.approx(400.0, rel=1e-10)

    def test_logistic_label_validation(self):
        with pytest.raises(ValueError):
            dp.LogisticLoss(np.eye(2), np.array([0.0, 1.0]))

    def test_shape_validation(self):
        with pytest.raises(dp.DimensionMismatch):
            dp.LeastSquaresLoss(np.eye(3), np.zeros(2))
        with pytest.raises(dp.NonFiniteInput):
            dp.LeastSquaresLoss(np.full((2, 2), np.nan), np.zeros(2))


class TestLambdaMax:
    def test_zero_gradient_gives_zero(self):
        dag = chain_dag(3)
        loss = dp.LeastSquaresLoss(np.eye(3), np.zeros(3))
        assert dp.lambda_max(loss, dag) == 0.0

    def test_single_group_is_dual_norm(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((20, 4))
        y = rng.standard_normal(20)
        loss = dp.LeastSquaresLoss(a, y)
        gs = dp.build_index_map([list(range(4))], weights=[1.0], d=4)
        assert dp.lambda_max(loss, gs) == pytest.approx(np.linalg.norm(a.T @ y), rel=1e-12)

    def test_fit_above_lambda_max_returns_zero(self, small_problem):
        dag, loss = small_problem
        lam = 1.01 * dp.lambda_max(loss, dag)
        result = dp.fit(loss, dag, lam)
        assert np.max(np.abs(result.beta)) <= 1e-8
        assert result.support.size == 0
        assert result.hierarchy.num_violations == 0


class TestFit:
    def test_identity_design_lambda_zero(self):
        y = np.array([1.0, -2.0, 0.5, 3.0])
        loss = dp.LeastSquaresLoss(np.eye(4), y)
        result = dp.fit(loss, chain_dag(4), 0.0, outer=dp.OuterOptions(tol=1e-8))
        assert result.converged
        assert np.max(np.abs(result.beta - y)) <= 1e-6

    def test_identity_single_group_reduces_to_prox(self):
        rng = np.random.default_rng(5)
        y = rng.standard_normal(5)
        loss = dp.LeastSquaresLoss(np.eye(5), y)
        gs = dp.build_index_map([list(range(5))], weights=[1.0], d=5)
        lam = 0.7
        result = dp.fit(loss, gs, lam, outer=dp.OuterOptions(tol=1e-10))
        expected = dp.group_soft_threshold(y, lam)
        assert np.max(np.abs(result.beta - expected)) <= 1e-8
        assert result.hierarchy is None

    def test_outer_objective_monotone_with_floor_tolerance(self, small_problem):
        dag, loss = small_problem
        lam = 0.1 * dp.lambda_max(loss, dag)
        outer = dp.OuterOptions(
            max_iter=200, tol=1e-8, inner_tol_coeff=1e-10, inner_tol_floor=1e-10
        )
        result = dp.fit(loss, dag, lam, outer=outer)
        objs = result.outer_trace.objectives
        assert np.all(np.diff(objs) <= 1e-8)

    def test_accelerated_agrees_with_plain(self, small_problem):
        dag, loss = small_problem
        lam = 0.05 * dp.lambda_max(loss, dag)
        plain = dp.fit(loss, dag, lam)
        accel = dp.fit(loss, dag, lam, accelerated=True)
        rel = abs(plain.objective - accel.objective) / max(1.0, abs(plain.objective))
        assert rel <= 1e-6

    def test_accelerated_usually_needs_fewer_outer_iterations(self):
        rng = np.random.default_rng(23)
        wins = 0
        total = 10
        for trial in range(total):
            dag = chain_dag(8)
            a = rng.standard_normal((40, 8))
            beta = np.zeros(8)
            beta[:4] = rng.uniform(0.5, 1.5, 4)
            y = a @ beta + 0.05 * rng.standard_normal(40)
            loss = dp.LeastSquaresLoss(a, y)
            lam = 0.1 * dp.lambda_max(loss, dag)
            outer = dp.OuterOptions(max_iter=2000, tol=1e-7)
            plain = dp.fit(loss, dag, lam, outer=outer)
            accel = dp.fit(loss, dag, lam, outer=outer, accelerated=True)
            if accel.outer_iterations <= plain.outer_iterations:
                wins += 1
        assert wins >= 0.8 * total

    def test_tree_fit_support_conforms_to_hierarchy(self, small_problem):
        dag, loss = small_problem
        for frac in (0.02, 0.1, 0.3):
            lam = frac * dp.lambda_max(loss, dag)
            result = dp.fit(loss, dag, lam)
            assert result.hierarchy.num_violations == 0

    def test_inner_budget_warning(self, small_problem):
        dag, loss = small_problem
        lam = 0.1 * dp.lambda_max(loss, dag)
        inner = dp.SolveOptions(max_iter=3)
        outer = dp.OuterOptions(max_iter=5, inner_tol_coeff=0.0, inner_tol_floor=1e-10)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            dp.fit(loss, dag, lam, outer=outer, inner=inner)
        assert any(issubclass(w.category, dp.InnerSolverWarning) for w in caught)

    def test_negative_lambda_rejected(self, small_problem):
        dag, loss = small_problem
        with pytest.raises(ValueError):
            dp.fit(loss, dag, -1.0)

    def test_gradient_dimension_checked(self):
        dag = chain_dag(3)
        loss = dp.LeastSquaresLoss(np.eye(4), np.zeros(4))
        with pytest.raises(dp.DimensionMismatch):
            dp.fit(loss, dag, 0.1)

    def test_inner_iterations_accumulated(self, small_problem):
        dag, loss = small_problem
        result = dp.fit(loss, dag, 0.1 * dp.lambda_max(loss, dag))
        assert result.inner_iters > 0
        assert result.outer_trace.records[-1].iter == result.outer_iterations


class TestChainRecoveryFixture:
    def test_sweep_recovers_hierarchical_support(self, fixtures_dir):
        design = dp.learn.load_design_matrix(fixtures_dir / "chain20_design.csv")
        response = dp.learn.load_response(fixtures_dir / "chain20_response.csv")
        truth = np.loadtxt(fixtures_dir / "chain20_truth.csv")
        dag = dp.read_edge_list(fixtures_dir / "chain20_graph.txt")
        loss = dp.LeastSquaresLoss(design, response)
        true_support = set(np.flatnonzero(np.abs(truth) > 0).tolist())

        lam_hi = dp.lambda_max(loss, dag)
        found = False
        for lam in lam_hi * np.logspace(-3, 0, 10):
            result = dp.fit(loss, dag, lam)
            assert result.hierarchy.num_violations == 0
            if true_support <= set(result.support.tolist()):
                found = True
        assert found


class TestDataAndModelFiles:
    def test_design_and_response_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((6, 3))
        y = rng.choice([-1.0, 1.0], size=6)
        np.savetxt(tmp_path / "a.csv", a, delimiter=",", fmt="%.17g")
        np.savetxt(tmp_path / "y.csv", y, delimiter=",", fmt="%.17g")
        assert np.allclose(dp.learn.load_design_matrix(tmp_path / "a.csv"), a)
        assert np.allclose(dp.learn.load_response(tmp_path / "y.csv", logistic=True), y)

    def test_logistic_labels_validated_on_load(self, tmp_path):
        np.savetxt(tmp_path / "y.csv", np.array([0.0, 1.0]), delimiter=",")
        with pytest.raises(ValueError):
            dp.learn.load_response(tmp_path / "y.csv", logistic=True)

    def test_model_file_round_trip(self, tmp_path):
        gs = dp.build_index_map([[0], [0, 1]], d=2)
        beta = np.array([0.25, -1.5])
        path = tmp_path / "model.txt"
        dp.learn.save_model(path, beta, 0.125, "least-squares", gs)
        loaded = dp.learn.load_model(path)
        assert np.array_equal(loaded["beta"], beta)
        assert loaded["lam"] == 0.125
        assert loaded["loss"] == "least-squares"
        assert loaded["groups_sha256"] == gs.content_hash()
