import io

import numpy as np
import pytest

from mmesbm.network import (
    CovariateMatrix,
    InputError,
    Network,
    load_adjacency_matrix,
    load_covariates,
    load_edge_list,
    make_folds,
    mask_fold,
    standardize,
    write_edge_list,
)


def test_edge_list_two_reciprocal_links():
    net = load_edge_list(io.StringIO("1,2\n2,1"), 3)
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 1] = expected[1, 0] = 1
    assert np.array_equal(net.adjacency, expected)
    assert net.n_links == 2


def test_empty_edge_list():
    net = load_edge_list(io.StringIO(""), 2)
    assert net.n_links == 0 and net.density() == 0.0


@pytest.mark.parametrize("text, msg", [
    ("1,1", "self-loop"),
    ("1,3", "outside"),
    ("1;2", "expected"),
    ("a,2", "non-integer"),
])
def test_edge_list_errors(text, msg):
    with pytest.raises(InputError, match=msg):
        load_edge_list(io.StringIO(text), 2)


def test_edge_list_comments_and_roundtrip():
    net = load_edge_list(io.StringIO("# header\n1,3\n\n3,2  # trailing\n"), 3)
    out = io.StringIO()
    write_edge_list(net, out)
    assert out.getvalue() == "1,3\n3,2\n"
    assert np.array_equal(load_edge_list(io.StringIO(out.getvalue()), 3).adjacency, net.adjacency)


def test_adjacency_matrix_ignores_diagonal():
    net = load_adjacency_matrix(io.StringIO("1 1 0\n0 1 1\n1,0,1\n"))
    assert net.adjacency.tolist() == [[0, 1, 0], [0, 0, 1], [1, 0, 0]]
    with pytest.raises(InputError):
        load_adjacency_matrix(io.StringIO("0 1\n0 1 1\n"))
    with pytest.raises(InputError):
        load_adjacency_matrix(io.StringIO("0 2\n0 0\n"))


def test_standardized_continuous_column():
    cov = load_covariates(io.StringIO("x\n1\n2\n3\n"), {"x": "continuous"}, 3)
    assert cov.column_names == ("intercept", "x")
    assert np.allclose(cov.values[:, 1], [-1.0, 0.0, 1.0], atol=1e-15)


def test_law_school_dummies():
    text = "school,gender\n0,0\n1,1\n2,0\n1,0\n"
    schema = {
        "school": {"kind": "categorical", "baseline": 0, "labels": {"1": "UConn", "2": "Other"}},
        "gender": "binary",
    }
    cov = load_covariates(io.StringIO(text), schema, 4)
    assert cov.column_names == ("intercept", "UConn", "Other", "gender")
    assert cov.values[:, 1].tolist() == [0, 1, 0, 1]
    assert cov.values[:, 2].tolist() == [0, 0, 1, 0]


@pytest.mark.parametrize("text, schema, msg", [
    ("x\n4\n4\n4\n", {"x": "continuous"}, "zero variance"),
    ("x\n1\n\n", {"x": "continuous"}, "rows"),
    ("x\n1\nNA\n2\n", {"x": "continuous"}, "missing"),
    ("s\n0\n3\n0\n", {"s": {"kind": "categorical", "baseline": 0, "levels": [0, 1]}}, "unknown level"),
    ("x,y\n1,2\n2,3\n3,3\n", {"x": "continuous"}, "no schema"),
    ("b\n0\n2\n1\n", {"b": "binary"}, "0/1"),
])
def test_covariate_errors(text, schema, msg):
    with pytest.raises(InputError, match=msg):
        load_covariates(io.StringIO(text), schema, 3)


def test_excluded_column_is_dropped():
    cov = load_covariates(io.StringIO("office,x\n1,1\n2,5\n3,2\n"),
                          {"office": "exclude", "x": "continuous"}, 3)
    assert cov.column_names == ("intercept", "x")


def test_standardize_is_tight_for_badly_scaled_data():
    rng = np.random.default_rng(5)
    z = standardize(1e9 + rng.normal(size=71) * 1e-3)
    assert abs(z.mean()) < 1e-12 and abs(z.std(ddof=1) - 1.0) < 1e-12


def test_fold_sizes():
    net71 = Network.from_adjacency(np.zeros((71, 71), dtype=int))
    assert make_folds(net71, 10, seed=1).sizes == (497,) * 10
    net3 = Network.from_adjacency(np.zeros((3, 3), dtype=int))
    assert make_folds(net3, 3, seed=1).sizes == (2, 2, 2)


def test_folds_deterministic_and_partition():
    net = Network.from_adjacency(np.zeros((9, 9), dtype=int))
    a, b = make_folds(net, 4, seed=8), make_folds(net, 4, seed=8)
    assert np.array_equal(a.fold_of_dyad, b.fold_of_dyad)
    assert sum(a.sizes) == 9 * 8
    dropped = [~mask_fold(net, a, f).mask & net.mask for f in range(1, 5)]
    assert np.array_equal(np.sum(dropped, axis=0), net.mask.astype(int))


@pytest.mark.parametrize("k", [1, 7])
def test_fold_count_out_of_range(k):
    with pytest.raises(InputError):
        make_folds(Network.from_adjacency(np.zeros((3, 3), dtype=int)), k)


def test_mask_fold_counts():
    net = Network.from_adjacency(np.zeros((3, 3), dtype=int))
    folds = make_folds(net, 3, seed=0)
    assert mask_fold(net, folds, 1).n_observed == 4
    with pytest.raises(InputError):
        mask_fold(net, folds, 0)


def test_leave_one_out_folds_drop_single_dyads():
    net = Network.from_adjacency(np.zeros((3, 3), dtype=int))
    folds = make_folds(net, 6, seed=0)
    for f in range(1, 7):
        assert net.n_observed - mask_fold(net, folds, f).n_observed == 1


def test_masked_values_are_kept():
    y = np.array([[0, 1], [1, 0]])
    net = Network(y, np.array([[False, False], [True, False]]))
    assert net.adjacency[0, 1] == 1 and net.n_observed == 1 and net.n_links == 1
    assert not net.is_fully_observed()


def test_covariate_matrix_validation():
    with pytest.raises((InputError, ValueError)):
        CovariateMatrix(np.ones((3, 2)), ("intercept",), ("intercept",))
