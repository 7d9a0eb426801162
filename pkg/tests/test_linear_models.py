import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog
from scipy.special import expit

from akinotes.features import FeatureMatrix, FeatureSet
from akinotes.linear_models import (LinearModel, Loss, NbModel, Penalty, SolverOptions, logistic_objective_grad,
                                    objective, top_features, train_linear, train_nb)

from .oracles import golden_section, logistic_objective_1d, nb_posterior


def matrix(X, y):
    X = sp.csr_matrix(np.asarray(X, dtype=np.float64))
    return FeatureMatrix(X, [f"S{i:04d}" for i in range(X.shape[0])], y, FeatureSet.WORDS)


def random_problem(seed, n=60, d=8, density=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * (rng.random((n, d)) < density)
    w = rng.normal(size=d)
    y = (X @ w + 0.5 * rng.normal(size=n) > 0).astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    return X, y


class TestNaiveBayes:
    def test_hand_example(self):
        # vocabulary (aki, ok); + doc "aki aki", - doc "ok"
        m = train_nb(matrix([[2, 0], [0, 1]], [1, 0]), alpha=1.0)
        p = m.predict_proba(np.array([[1.0, 0.0]]))[0]
        assert p == pytest.approx(0.69231, abs=1e-5)
        assert p == pytest.approx(nb_posterior([["aki", "aki"]], [["ok"]], ["aki"]), abs=1e-12)

    def test_likelihoods_sum_to_one(self):
        X, y = random_problem(0)
        m = train_nb(matrix(np.abs(X), y))
        np.testing.assert_allclose(np.exp(m.feature_log_prob).sum(axis=1), 1.0, atol=1e-9)

    def test_symmetric_corpus(self):
        m = train_nb(matrix([[1, 0], [0, 1]], [1, 0]))
        assert m.predict_proba(np.array([[1.0, 1.0]]))[0] == pytest.approx(0.5)

    def test_large_alpha_gives_prior(self):
        m = train_nb(matrix([[3, 0], [0, 1], [0, 2]], [1, 0, 0]), alpha=1e12)
        assert m.predict_proba(np.array([[5.0, 0.0]]))[0] == pytest.approx(1 / 3, abs=1e-6)

    def test_scaling_counts_keeps_argmax(self):
        X, y = random_problem(1)
        X = np.abs(X)
        m = train_nb(matrix(X, y))
        p1 = m.predict_proba(X)
        p2 = m.predict_proba(3.7 * X)
        np.testing.assert_array_equal(p1 > 0.5, p2 > 0.5)

    def test_single_class(self):
        with pytest.raises(ValueError):
            train_nb(matrix([[1, 0]], [1]))

    def test_round_trip(self):
        m = train_nb(matrix([[2, 0], [0, 1]], [1, 0]))
        back = NbModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.feature_log_prob, m.feature_log_prob)


class TestLogisticGradient:
    def test_central_differences(self):
        X, y = random_problem(2, n=40, d=6)
        Xs = sp.csr_matrix(X)
        rng = np.random.default_rng(5)
        h = 1e-6
        worst = 0.0
        for _ in range(100):
            w, b, lam = rng.normal(size=6), float(rng.normal()), float(rng.uniform(0, 1))
            _, gw, gb = logistic_objective_grad(w, b, Xs, y, lam)
            num = np.zeros(7)
            for j in range(7):
                e = np.zeros(7)
                e[j] = h
                plus = logistic_objective_grad(w + e[:6], b + e[6], Xs, y, lam)[0]
                minus = logistic_objective_grad(w - e[:6], b - e[6], Xs, y, lam)[0]
                num[j] = (plus - minus) / (2 * h)
            ana = np.append(gw, gb)
            worst = max(worst, np.linalg.norm(ana - num) / max(np.linalg.norm(ana), np.linalg.norm(num)))
        assert worst < 1e-6


class TestTrainLinear:
    def test_all_zero_features(self):
        m = train_linear(matrix(np.zeros((10, 3)), [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]), lam=0.1)
        assert not m.weights.any()
        assert m.intercept == pytest.approx(np.log(3 / 7), abs=1e-10)

    def test_one_feature_l2_golden_section(self):
        x = np.array([-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0, 2.5])
        y = (x > 0).astype(int)
        m = train_linear(matrix(x[:, None], y), Loss.LOGISTIC, Penalty.L2, lam=1.0)

        def profile(w):
            return golden_section(lambda b: logistic_objective_1d(w, b, x, y, 1.0), -20, 20)[1]

        _, best = golden_section(profile, -20, 20)
        assert m.objective == pytest.approx(best, rel=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_l1_lambda_max_gives_zero(self, seed):
        X, y = random_problem(seed, n=50, d=10)
        p = y.mean()
        lam_max = np.abs(X.T @ (p - y)).max() / len(y)
        m = train_linear(matrix(X, y), Loss.LOGISTIC, Penalty.L1, lam=lam_max)
        assert m.n_zero == 10
        below = train_linear(matrix(X, y), Loss.LOGISTIC, Penalty.L1, lam=lam_max * 0.9)
        assert below.n_zero < 10

    def test_l2_solution_beats_perturbations(self):
        X, y = random_problem(3)
        Xs = sp.csr_matrix(X)
        for loss in Loss:
            m = train_linear(matrix(X, y), loss, Penalty.L2, lam=0.05)
            best = objective(m.weights, m.intercept, Xs, y, loss, Penalty.L2, 0.05)
            rng = np.random.default_rng(0)
            for _ in range(50):
                dw = rng.normal(scale=1e-2, size=m.weights.size)
                db = float(rng.normal(scale=1e-2))
                other = objective(m.weights + dw, m.intercept + db, Xs, y, loss, Penalty.L2, 0.05)
                assert best <= other + 1e-9 * abs(best)

    def test_l1_sparsity_monotone(self):
        X, y = random_problem(4, n=80, d=15)
        counts = [np.count_nonzero(train_linear(matrix(X, y), Loss.LOGISTIC, Penalty.L1, lam).weights)
                  for lam in (1e-3, 1e-2, 3e-2, 1e-1, 3e-1)]
        assert counts == sorted(counts, reverse=True)

    def test_l1_svm_matches_linear_program(self):
        X, y = random_problem(6, n=40, d=5)
        lam = 0.02
        m = train_linear(matrix(X, y), Loss.HINGE, Penalty.L1, lam, SolverOptions(max_iter=20000, tol=1e-12))
        n, d = X.shape
        s = 2 * y - 1
        # variables: u (d), v (d), b+ , b-, xi (n)
        c = np.concatenate([lam * np.ones(2 * d), [0, 0], np.ones(n) / n])
        A = np.hstack([-s[:, None] * X, s[:, None] * X, -s[:, None], s[:, None], -np.eye(n)])
        res = linprog(c, A_ub=A, b_ub=-np.ones(n), bounds=[(0, None)] * (2 * d + 2 + n), method="highs")
        assert res.status == 0
        assert m.objective == pytest.approx(res.fun, rel=1e-5)

    def test_l2_svm_matches_qp(self):
        cp = pytest.importorskip("cvxpy")
        X, y = random_problem(7, n=40, d=5)
        lam = 0.05
        m = train_linear(matrix(X, y), Loss.HINGE, Penalty.L2, lam, SolverOptions(max_iter=20000, tol=1e-12))
        w, b = cp.Variable(5), cp.Variable()
        s = 2 * y - 1
        prob = cp.Problem(cp.Minimize(cp.sum(cp.pos(1 - cp.multiply(s, X @ w + b))) / 40
                                      + lam / 2 * cp.sum_squares(w)))
        prob.solve()
        assert m.objective == pytest.approx(prob.value, rel=1e-5)

    def test_negative_lambda(self):
        X, y = random_problem(0)
        with pytest.raises(ValueError):
            train_linear(matrix(X, y), lam=-1.0)

    def test_deterministic(self):
        X, y = random_problem(8)
        a = train_linear(matrix(X, y), Loss.HINGE, Penalty.L1, 0.01)
        b = train_linear(matrix(X, y), Loss.HINGE, Penalty.L1, 0.01)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestPrediction:
    def test_zero_model(self):
        m = LinearModel(np.zeros(3), 0.0, Loss.LOGISTIC, Penalty.L2, 0.0)
        assert m.predict_proba(np.ones((1, 3)))[0] == 0.5

    def test_clamped(self):
        m = LinearModel(np.array([1e6]), 0.0, Loss.HINGE, Penalty.L2, 0.0)
        p = m.predict_proba(np.array([[1.0], [-1.0]]))
        assert 0 < p[1] < 1e-11 and 1 - 1e-11 < p[0] < 1

    def test_dimension_mismatch(self):
        m = LinearModel(np.zeros(3), 0.0, Loss.LOGISTIC, Penalty.L2, 0.0)
        with pytest.raises(ValueError, match="dimension"):
            m.predict_proba(np.ones((1, 4)))

    @settings(max_examples=100)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.floats(-1e3, 1e3))
    def test_probabilities_in_unit_interval(self, w, b):
        m = LinearModel(np.array(w), b, Loss.LOGISTIC, Penalty.L2, 0.0)
        p = m.predict_proba(np.eye(3))
        assert np.all((p >= 0) & (p <= 1))

    def test_matches_sigmoid(self):
        X, y = random_problem(9)
        m = train_linear(matrix(X, y), lam=0.01)
        np.testing.assert_allclose(m.predict_proba(X), expit(X @ m.weights + m.intercept), rtol=1e-12)

    def test_round_trip(self):
        X, y = random_problem(9)
        m = train_linear(matrix(X, y), Loss.LOGISTIC, Penalty.L1, 0.05)
        back = LinearModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.weights, m.weights)
        assert back.intercept == m.intercept and back.penalty is Penalty.L1


class TestTopFeatures:
    def test_example(self):
        assert top_features([0.5, 0.2, -1.0], ["a", "b", "c"], 2) == [("a", 0.5), ("b", 0.2)]

    def test_all_negative(self):
        assert top_features([-0.5, -0.2], ["a", "b"], 5) == []

    def test_tie_is_lexicographic(self):
        assert top_features([0.5, 0.5], ["zeta", "alpha"], 2) == [("alpha", 0.5), ("zeta", 0.5)]

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            top_features([1.0], ["a"], 0)
