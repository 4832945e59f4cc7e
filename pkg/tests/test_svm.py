import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrtext.errors import FormatError, InsufficientData, SingleClassData
from ctrtext.svm import (
    C_GRID,
    GAMMA_GRID,
    SvmModel,
    build_filter_dataset,
    grid_search_cv,
    load_model,
    predict,
    rbf_kernel,
    rbf_matrix,
    save_model,
    stratified_folds,
    train_smo,
)

from .helpers import rect

TWO = np.array([[0.0, 0, 0], [2.0, 0, 0]])
TWO_Y = np.array([-1, 1])


def test_rbf_examples():
    x = np.array([0.3, -1.0, 2.0])
    assert rbf_kernel(x, x, 0.5) == 1.0
    assert rbf_kernel([0, 0, 0], [1, 0, 0], 1.0) == pytest.approx(np.exp(-1))
    y = np.array([1.0, 0.5, -0.2])
    assert rbf_kernel(x, y, 0.3) == rbf_kernel(y, x, 0.3)
    M = rbf_matrix(np.vstack([x, y]), np.vstack([x, y]), 0.3)
    assert np.allclose(M, M.T) and np.allclose(np.diag(M), 1)


def test_two_point_symmetry_and_tie():
    m = train_smo(TWO, TWO_Y, C=10, gamma=1)
    labels, _ = predict(m, [[0.5, 0, 0], [1.5, 0, 0]])
    assert labels.tolist() == [-1, 1]
    assert predict(m, TWO)[0].tolist() == [-1, 1]
    lab, val = predict(m, [[1.0, 0, 0]])
    assert val[0] == pytest.approx(0.0, abs=1e-12)
    # an exact zero goes to the positive class
    zero = SvmModel(np.zeros((0, 3)), np.zeros(0), 0.0, 1.0, 1.0, np.zeros(3), np.ones(3))
    assert predict(zero, [[1, 2, 3]])[0].tolist() == [1]


def test_decision_continuous():
    m = train_smo(TWO, TWO_Y, C=10, gamma=1)
    a = m.decision_function([[0.7, 0.1, 0.2]])
    b = m.decision_function([[0.7 + 1e-9, 0.1, 0.2]])
    assert abs(a - b)[0] < 1e-6


def test_xor_training_accuracy():
    X = np.array([[0, 0, 0], [1, 1, 0], [1, 0, 0], [0, 1, 0.0]])
    y = np.array([-1, -1, 1, 1])
    m = train_smo(X, y, C=100, gamma=1)
    assert (predict(m, X)[0] == y).all()
    assert (np.abs(m.dual_coef) <= m.C + 1e-12).all()


def test_matches_libsvm(rng):
    from sklearn.svm import SVC

    X = rng.normal(size=(120, 3))
    y = np.where(X[:, 0] ** 2 + X[:, 1] - 0.5 * X[:, 2] > 0.4, 1, -1)
    flip = rng.random(120) < 0.1
    y[flip] *= -1
    for C, gamma in [(1.0, 0.5), (10.0, 0.1)]:
        m = train_smo(X, y, C=C, gamma=gamma, tol=1e-6)
        ref = SVC(C=C, gamma=gamma, tol=1e-6).fit(m.standardize(X), y)
        Z = rng.normal(size=(50, 3))
        ours = m.decision_function(Z)
        theirs = ref.decision_function(m.standardize(Z))
        assert np.abs(ours - theirs).max() < 1e-3


def test_box_constraint_and_single_class(rng):
    X = rng.normal(size=(60, 3))
    y = np.where(rng.random(60) < 0.5, 1, -1)
    m = train_smo(X, y, C=0.1, gamma=1.0)
    assert ((np.abs(m.dual_coef) > 0) & (np.abs(m.dual_coef) <= 0.1 + 1e-12)).all()
    with pytest.raises(SingleClassData):
        train_smo(X, np.ones(60), C=1, gamma=1)


def test_separable_full_training_accuracy(rng):
    X = rng.normal(size=(80, 3))
    y = np.where(X @ [1.0, -2.0, 0.5] > 0, 1, -1)
    X += 0.3 * y[:, None] * np.array([1.0, -2.0, 0.5])
    for C in (10, 100):
        m = train_smo(X, y, C=C, gamma=0.1)
        assert (predict(m, X)[0] == y).all()


def test_standardization_invariance(rng):
    X = rng.normal(size=(50, 3))
    y = np.where(X[:, 0] + X[:, 2] > 0, 1, -1)
    A = np.array([3.0, 0.01, 250.0])
    b = np.array([-7.0, 1.0, 40.0])
    m1 = train_smo(X, y, C=1, gamma=0.5)
    m2 = train_smo(X * A + b, y, C=1, gamma=0.5)
    Z = rng.normal(size=(20, 3))
    assert np.abs(m1.decision_function(Z) - m2.decision_function(Z * A + b)).max() < 1e-8


def _separable(n=40):
    X = np.vstack([np.zeros((n, 3)), np.full((n, 3), 5.0)]) + np.linspace(0, 0.1, 2 * n)[:, None]
    return X, np.repeat([-1, 1], n)


def test_grid_search_default_grid_and_tie_rule():
    assert C_GRID == (0.1, 1.0, 10.0, 100.0)
    assert GAMMA_GRID == (1.0, 0.1, 0.001, 0.0001, 0.00001)
    X, y = _separable()
    res = grid_search_cv(X, y, seed=1)
    assert len(res.table) == 20
    assert all(r["mean_accuracy"] == 1.0 for r in res.table)
    assert (res.C, res.gamma) == (0.1, 0.00001)
    one = grid_search_cv(X, y, C_grid=[10.0], gamma_grid=[0.1])
    assert (one.C, one.gamma) == (10.0, 0.1)


def test_grid_search_deterministic(rng):
    X = rng.normal(size=(60, 3))
    y = np.where(X[:, 0] > 0.2, 1, -1)
    a = grid_search_cv(X, y, C_grid=[1, 10], gamma_grid=[1, 0.1], seed=4)
    b = grid_search_cv(X, y, C_grid=[1, 10], gamma_grid=[1, 0.1], seed=4)
    assert a.table == b.table


def test_grid_search_insufficient():
    X = np.zeros((10, 3))
    y = np.array([1, 1, 1, 1, -1, -1, -1, -1, -1, -1])
    with pytest.raises(InsufficientData):
        grid_search_cv(X, y)
    with pytest.raises(SingleClassData):
        grid_search_cv(X, np.ones(10))


@settings(max_examples=30)
@given(st.integers(5, 40), st.integers(5, 40), st.integers(0, 1000))
def test_stratified_folds_partition(npos, nneg, seed):
    y = np.array([1] * npos + [-1] * nneg)
    folds = stratified_folds(y, 5, seed)
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(len(y)))
    for f in folds:
        assert abs((y[f] > 0).sum() - npos / 5) <= 1
        assert abs((y[f] < 0).sum() - nneg / 5) <= 1


def test_build_filter_dataset():
    g = rect(0, 0, 10, 10)
    # IoU of [0,10]x[0,10] with [x,10+x]x[0,10] is (10-x)/(10+x), which is 0.49 at x = 5.1/1.49
    x = 10 * 0.51 / 1.49
    dets = [[((1, 0, 1), g), ((1, 0, 2), rect(50, 50, 60, 60)), ((1, 0, 3), rect(x, 0, 10 + x, 10))]]
    X, y = build_filter_dataset(dets, [[g]])
    assert y.tolist() == [1, -1, -1]
    assert X.shape == (3, 3)
    X, y = build_filter_dataset([[((1, 0, 1), g)]], [[]])
    assert y.tolist() == [-1]


def test_model_json_round_trip(tmp_path, rng):
    X = rng.normal(size=(30, 3))
    y = np.where(X[:, 1] > 0, 1, -1)
    m = train_smo(X, y, C=10, gamma=0.1)
    m.cv_table = [{"C": 10.0, "gamma": 0.1, "fold_accuracy": [1.0], "mean_accuracy": 1.0}]
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    Z = rng.normal(size=(10, 3))
    assert np.array_equal(back.decision_function(Z), m.decision_function(Z))
    assert back.cv_table == m.cv_table
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad.json")
    (tmp_path / "v2.json").write_text('{"format_version": 2}')
    with pytest.raises(FormatError):
        load_model(tmp_path / "v2.json")
