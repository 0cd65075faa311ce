import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedbotnet.dataset import DataError, Dataset
from fedbotnet.preprocess import Scaler, apply_scaler, fit_scaler


def ds(X, labels=None):
    X = np.asarray(X, dtype=float)
    return Dataset(X, labels if labels is not None else np.zeros(len(X), dtype=int), [f"f{j}" for j in range(X.shape[1])])


def test_two_point_column():
    s = fit_scaler(ds([[2.0], [4.0]]))
    assert s.means.tolist() == [3.0]
    assert s.stds.tolist() == [1.0]


def test_constant_column_sentinel():
    s = fit_scaler(ds([[5.0], [5.0], [5.0]]))
    assert s.means.tolist() == [5.0] and s.stds.tolist() == [1.0]
    assert apply_scaler(s, ds([[5.0]])).features.tolist() == [[0.0]]


def test_random_matrix_moments(rng):
    X = rng.normal(3.0, 7.0, size=(100, 5))
    Z = apply_scaler(fit_scaler(ds(X)), ds(X)).features
    assert np.abs(Z.mean(axis=0)).max() < 1e-9
    assert np.abs(Z.std(axis=0) - 1.0).max() < 1e-9


def test_identity_scaler(rng):
    X = rng.normal(size=(4, 3))
    s = Scaler.from_moments(np.zeros(3), np.ones(3))
    assert np.array_equal(apply_scaler(s, ds(X)).features, X)


def test_test_rows_use_train_statistics():
    train = ds([[1.0, 10.0, -2.0], [3.0, 30.0, -2.0], [5.0, 20.0, 4.0]])
    test = ds([[0.0, 0.0, 0.0], [2.0, 15.0, 1.0], [9.0, -5.0, 7.0]], labels=[0, 1, 0])
    s = fit_scaler(train)
    out = apply_scaler(s, test)
    cols = list(zip(*train.features.tolist()))
    for i, row in enumerate(test.features.tolist()):
        for j, x in enumerate(row):
            mean = sum(cols[j]) / 3
            std = (sum((c - mean) ** 2 for c in cols[j]) / 3) ** 0.5
            assert out.features[i, j] == pytest.approx((x - mean) / std, rel=1e-12, abs=1e-12)
    assert out.labels.tolist() == [0, 1, 0]


def test_column_mismatch():
    s = fit_scaler(ds([[1.0, 2.0], [3.0, 4.0]]))
    with pytest.raises(DataError, match="expects 2 features"):
        apply_scaler(s, ds([[1.0]]))


def test_empty_rejected():
    with pytest.raises(DataError):
        fit_scaler(Dataset(np.zeros((0, 2)), [], ["a", "b"]))


def test_json_round_trip(rng):
    s = fit_scaler(ds(rng.normal(size=(20, 4))))
    back = Scaler.from_json(s.to_json())
    assert np.array_equal(back.means, s.means) and np.array_equal(back.stds, s.stds)


def test_from_moments_rejects_nonpositive_std():
    with pytest.raises(ValueError):
        Scaler.from_moments([0.0], [0.0])


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(col=arrays(np.float64, st.integers(2, 30), elements=finite), a=st.floats(0.01, 100), b=finite)
def test_affine_relation(col, a, b):
    # standardizing a*x + b gives the same column as standardizing x (a > 0)
    X = col[:, None]
    z1 = Scaler().fit_transform(X)
    z2 = Scaler().fit_transform(a * X + b)
    if np.ptp(col) > 1e-6 * max(1.0, np.abs(col).max()):
        np.testing.assert_allclose(z2, z1, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(X=arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 4)), elements=finite))
def test_inverse_recovers_input(X):
    s = Scaler().fit(X)
    np.testing.assert_allclose(s.inverse_transform(s.transform(X)), X, rtol=1e-9, atol=1e-9)
