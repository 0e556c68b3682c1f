import numpy as np
import pytest
from scipy.optimize import minimize

from sdikit.models import (ModelSpec, fit_tree, log_loss_grad, train, train_forest,
                           train_logreg, train_ridge)


def test_logreg_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, d = rng.integers(5, 40), rng.integers(1, 8)
        x = rng.normal(size=(n, d))
        y = (rng.random(n) < 0.5).astype(float)
        params = rng.normal(size=d + 1)
        l2 = float(rng.uniform(0, 0.5))
        _, grad = log_loss_grad(params, x, y, l2)
        h = 1e-6
        fd = np.empty_like(params)
        for j in range(len(params)):
            e = np.zeros_like(params)
            e[j] = h
            fd[j] = (log_loss_grad(params + e, x, y, l2)[0]
                     - log_loss_grad(params - e, x, y, l2)[0]) / (2 * h)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-4


def _reference_loss(params, xs, y, l2):
    w, b = params[:-1], params[-1]
    p = 1 / (1 + np.exp(-(xs @ w + b)))
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)) + 0.5 * l2 * w @ w


def test_logreg_reaches_optimum():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 4))
    y = (x @ [1.0, -2.0, 0.5, 0.0] + rng.normal(size=200) > 0).astype(float)
    spec = ModelSpec("logreg", {"epochs": 20000, "tol": 1e-12, "l2": 0.01})
    model = train_logreg(x, y, spec)
    xs = model.scaler(x)
    ref = minimize(_reference_loss, np.zeros(5), args=(xs, y, 0.01), method="BFGS",
                   options={"gtol": 1e-10})
    got = _reference_loss(np.append(model.coef, model.intercept), xs, y, 0.01)
    assert got == pytest.approx(ref.fun, abs=1e-6)
    assert np.all(np.diff(model.loss_history) <= 1e-12)


def test_logreg_rejects_single_class():
    with pytest.raises(ValueError, match="both classes"):
        train_logreg(np.ones((4, 2)), np.zeros(4))


def test_ridge_matches_normal_equations():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(50, 3)) * [1, 10, 0.1] + 4
    y = rng.normal(size=50)
    model = train_ridge(x, y, ModelSpec("ridge", {"l2": 2.5}))
    xs = (x - x.mean(0)) / x.std(0)
    a = np.hstack([xs, np.ones((50, 1))])
    pen = np.diag([2.5, 2.5, 2.5, 0.0])
    beta = np.linalg.inv(a.T @ a + pen) @ a.T @ y
    np.testing.assert_allclose(model.coef, beta[:3], atol=1e-10)
    assert model.intercept == pytest.approx(beta[3], abs=1e-10)


def _brute_force_split(x, y, classify):
    best = np.inf
    for f in range(x.shape[1]):
        vals = np.unique(x[:, f])
        for t in vals[:-1]:
            left, right = y[x[:, f] <= t], y[x[:, f] > t]
            if classify:
                imp = sum(len(s) * 2 * s.mean() * (1 - s.mean()) for s in (left, right))
            else:
                imp = sum(((s - s.mean()) ** 2).sum() for s in (left, right))
            best = min(best, imp)
    return best


def _split_impurity(tree, x, y, classify):
    f, t = tree.feature[0], tree.threshold[0]
    left, right = y[x[:, f] <= t], y[x[:, f] > t]
    if classify:
        return sum(len(s) * 2 * s.mean() * (1 - s.mean()) for s in (left, right))
    return sum(((s - s.mean()) ** 2).sum() for s in (left, right))


@pytest.mark.parametrize("classify", [True, False])
def test_stump_finds_exhaustive_best_split(classify):
    rng = np.random.default_rng(17)
    for _ in range(50):
        x = rng.integers(0, 12, size=(30, 3)).astype(float)
        y = (rng.random(30) < 0.4).astype(float) if classify else rng.normal(size=30)
        if classify and len(np.unique(y)) < 2:
            continue
        tree = fit_tree(x, y, classify, max_depth=1)
        assert _split_impurity(tree, x, y, classify) == pytest.approx(
            _brute_force_split(x, y, classify), abs=1e-9)


def test_xor_needs_depth_two():
    x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0], dtype=float)
    deep = fit_tree(x, y, True, max_depth=2)
    assert deep.predict_value(x).tolist() == y.tolist()
    # every single split of XOR leaves each child half positive
    stump = fit_tree(x, y, True, max_depth=1)
    assert np.all(stump.predict_value(x) == 0.5)


def test_tree_leaf_values_are_means():
    x = np.arange(10, dtype=float)[:, None]
    y = np.array([1, 1, 1, 1, 1, 5, 5, 5, 5, 5], dtype=float)
    tree = fit_tree(x, y, False, max_depth=1)
    assert tree.threshold[0] == 4.5
    assert tree.predict_value(np.array([[0.0], [9.0]])).tolist() == [1.0, 5.0]


def test_forest_deterministic_and_accurate():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(300, 5))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    spec = ModelSpec("random_forest_cls", {"n_trees": 20}, seed=4)
    a, b = train_forest(x, y, spec), train_forest(x, y, spec)
    xt = rng.normal(size=(200, 5))
    assert np.array_equal(a.predict_proba(xt), b.predict_proba(xt))
    assert (a.predict(xt) == (xt[:, 0] + xt[:, 1] > 0)).mean() > 0.85
    other = train_forest(x, y, ModelSpec("random_forest_cls", {"n_trees": 20}, seed=5))
    assert not np.array_equal(a.predict_proba(xt), other.predict_proba(xt))


def test_forest_regression_fits_step():
    x = np.linspace(0, 1, 200)[:, None]
    y = np.where(x[:, 0] > 0.5, 3.0, -1.0)
    model = train(x, y, ModelSpec("random_forest_reg", {"n_trees": 10}, seed=1))
    assert np.abs(model.predict(x) - y).mean() < 0.1


@pytest.mark.parametrize("kind,params", [
    ("svm", {}), ("logreg", {"depth": 3}), ("ridge", {"l2": -1}),
    ("random_forest_cls", {"n_trees": 0}),
])
def test_model_spec_validation(kind, params):
    with pytest.raises(ValueError):
        ModelSpec(kind, params)


def test_features_must_be_finite():
    with pytest.raises(ValueError, match="finite"):
        train_ridge(np.array([[np.nan], [1.0]]), np.array([0.0, 1.0]))

