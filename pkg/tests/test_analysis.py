import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from manifold_reg import analysis
from manifold_reg.data import Dataset
from manifold_reg.exceptions import ContractError, NumericError
from manifold_reg.model import build, mlp_config


def _report(train, test, W=32, L=9, alpha=(0.001, 0.01)):
    return {
        "config": {"batch_size": L, "net": {"min_width": W, "head": "bottleneck"}, "loss": {"alpha": list(alpha)}},
        "epochs": [{"train_acc": train, "test_acc": test}],
    }


def test_gen_error_from_table_values():
    (row,) = analysis.generalization_table([_report(89.76, 85.70)])
    assert row.gen_error == pytest.approx(4.06, abs=1e-9)
    assert row.accuracy == 85.70 and row.regularized


def test_gen_error_zero_when_equal():
    assert analysis.generalization_table([_report(80.0, 80.0)])[0].gen_error == 0.0


def test_rows_sorted_by_L_then_W():
    rows = analysis.generalization_table([_report(90, 80, W=8, L=5), _report(90, 80, W=32, L=5), _report(90, 80, W=8, L=9)])
    assert [(r.L, r.W) for r in rows] == [(9, 8), (5, 32), (5, 8)]


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100))
def test_gen_error_recomputed_exactly(train, test):
    assert analysis.generalization_table([_report(train, test)])[0].gen_error == train - test


def test_render_table_blocks():
    rows = analysis.generalization_table([_report(90, 85, alpha=(0, 0)), _report(91, 87)])
    text = analysis.render_table(rows)
    assert "Mini-batch size = 9" in text and "With regularizer" in text and "Without regularizer" in text


def test_pca_recovers_axis_aligned_plane():
    # symmetric grid: exactly centred, exactly diagonal covariance
    a, b = np.meshgrid([-3.0, -1.0, 1.0, 3.0], [-1.0, 1.0])
    x = np.c_[a.ravel(), b.ravel()]
    np.testing.assert_allclose(analysis.pca_2d(x), x, atol=1e-12)


def test_pca_plane_in_3d_has_no_residual(rng):
    basis = np.linalg.qr(rng.normal(size=(3, 2)))[0]
    x = rng.normal(size=(100, 2)) @ basis.T + 5.0
    out = analysis.pca_2d(x)
    mean, comps, _ = analysis.pca_components(x, 2)
    resid = (x - mean) - out @ comps
    assert (resid**2).sum(axis=1).mean() < 1e-9


def test_pca_variance_matches_eigen_oracle(rng):
    x = rng.normal(size=(10, 5))
    out = analysis.pca_2d(x)
    cov = np.cov(x.T)
    top = np.sort(np.linalg.eigh(cov)[0])[::-1][:2]
    np.testing.assert_allclose(out.var(axis=0, ddof=1), top, rtol=1e-9)


def test_pca_row_order_invariant(rng):
    x = rng.normal(size=(30, 4))
    perm = rng.permutation(30)
    np.testing.assert_allclose(analysis.pca_2d(x)[perm], analysis.pca_2d(x[perm]), atol=1e-10)


def test_pca_rank_one_warns(rng):
    x = np.outer(rng.normal(size=20), [1.0, 2.0, 3.0])
    with pytest.warns(RuntimeWarning):
        out = analysis.pca_2d(x)
    assert not out[:, 1].any()


def test_lda_separated_blobs(rng):
    x = np.r_[rng.normal(-5, 1, (100, 2)), rng.normal(5, 1, (100, 2))]
    y = np.repeat([0, 1], 100)
    assert analysis.lda_accuracy(analysis.lda_fit(x, y), x, y) == 1.0


def test_lda_identical_distributions_near_chance(rng):
    x = rng.normal(size=(4000, 2))
    y = rng.integers(0, 2, 4000)
    acc = analysis.lda_accuracy(analysis.lda_fit(x[:2000], y[:2000]), x[2000:], y[2000:])
    assert abs(acc - 0.5) < 0.05


def test_lda_matches_closed_form_two_class():
    x = np.array([[0.0, 0.0], [1.0, 0.5], [0.5, 1.5], [3.0, 2.0], [2.5, 3.5], [4.0, 3.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    model = analysis.lda_fit(x, y, ridge=0.0)
    w, c = oracles.lda_two_class(x, y)
    grid = np.random.default_rng(0).uniform(-2, 6, size=(50, 2))
    scores = model.decision_function(grid)
    np.testing.assert_allclose(scores[:, 1] - scores[:, 0], grid @ w + c, atol=1e-9)


def test_lda_affine_invariant(rng):
    x = np.r_[rng.normal(0, 1, (60, 2)), rng.normal(1.2, 1, (60, 2))]
    y = np.repeat([0, 1], 60)
    A, b = np.array([[2.0, 1.0], [-0.5, 3.0]]), np.array([4.0, -7.0])
    acc = analysis.lda_accuracy(analysis.lda_fit(x, y, 0.0), x, y)
    xt = x @ A.T + b
    acc_t = analysis.lda_accuracy(analysis.lda_fit(xt, y, 0.0), xt, y)
    assert 0.0 <= acc <= 1.0 and acc == pytest.approx(acc_t, abs=1e-9)


def test_lda_singular_without_ridge():
    x = np.c_[np.arange(10.0), np.zeros(10)]
    y = np.repeat([0, 1], 5)
    with pytest.raises(NumericError):
        analysis.lda_fit(x, y, ridge=0.0)
    analysis.lda_fit(x, y, ridge=1e-6)


def test_probe_curve_shape_and_chance_on_random_labels(rng):
    net = build(mlp_config(6, 8, 4, 2), 0)
    ds = Dataset(rng.normal(size=(400, 6)), rng.integers(0, 2, 400), 2)
    curve = analysis.layer_probe(net, ds, (0, 1))
    assert [name for name, _ in curve] == ["extractor", "fc0", "fc1", "fc2", "fc3"]
    assert len(curve) == len(net.dense) - 1 + 1
    for _, acc in curve:
        assert abs(acc - 0.5) < 0.1


def test_probe_subset_contracts(rng):
    ds = Dataset(rng.normal(size=(20, 3)), np.repeat([0, 1], 10), 3)
    with pytest.raises(ContractError):
        analysis.probe_subset(ds, (1, 1), 5)
    with pytest.raises(ContractError):
        analysis.probe_subset(ds, (0, 2), 5)
    assert len(analysis.probe_subset(ds, (0, 1), 4)) == 8


def test_embeddings_csv_rows(rng):
    net = build(mlp_config(6, 4, 4, 2), 0)
    ds = Dataset(rng.normal(size=(30, 6)), np.repeat([0, 1], 15), 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        emb = analysis.embed_layers(net, ds, (0, 1))
    assert len(emb.to_csv().splitlines()) == 1 + 30 * len(emb.layers)
    assert analysis.probe_csv([("a", 0.5)]) == "layer,lda_accuracy\na,0.5\n"
