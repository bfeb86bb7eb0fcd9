import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_bags
from mimil.errors import DataError, ParameterError
from mimil.explain import (
    ShapExplanation, background_row, explain_bag, export_heatmap, global_importance,
    kernel_shap, modality_groups, read_heatmap_csv, shapley_kernel_weight,
)
from mimil.models import MimilModel


def brute_force_shapley(f, x, b):
    """Average marginal contribution over all orderings of the players."""
    M = x.size
    phi = np.zeros(M)
    orders = list(itertools.permutations(range(M)))
    for order in orders:
        z = b.copy()
        prev = f(z)
        for i in order:
            z[i] = x[i]
            cur = f(z)
            phi[i] += cur - prev
            prev = cur
    return phi / len(orders)


def batch(f):
    return lambda X: np.array([f(row) for row in np.asarray(X)])


def test_kernel_weight_examples():
    assert shapley_kernel_weight(4, 1) == 0.25
    assert shapley_kernel_weight(4, 3) == 0.25
    assert shapley_kernel_weight(4, 2) == 0.125
    assert math.isinf(shapley_kernel_weight(4, 0)) and math.isinf(shapley_kernel_weight(4, 4))
    with pytest.raises(ParameterError):
        shapley_kernel_weight(4, 5)


@settings(max_examples=30, deadline=None)
@given(M=st.integers(2, 40), s=st.integers(1, 39))
def test_kernel_weight_symmetry(M, s):
    if s < M:
        assert math.isclose(shapley_kernel_weight(M, s), shapley_kernel_weight(M, M - s))


def test_constant_model():
    e = kernel_shap(lambda X: np.full(len(X), 0.3), np.ones(5), np.zeros(5))
    assert np.allclose(e.phi, 0) and e.base_value == 0.3


@pytest.mark.parametrize("M", [1, 2, 5, 12])
def test_linear_model_closed_form(M):
    r = np.random.default_rng(M)
    w, x, b = r.normal(size=M), r.normal(size=M), r.normal(size=M)
    e = kernel_shap(lambda X: np.asarray(X) @ w, x, b)
    assert np.allclose(e.phi, w * (x - b), atol=1e-6)
    assert e.local_error() <= 1e-6


def test_permutation_oracle_m3():
    f = lambda z: 0.3 * z[0] + z[1] * z[2] - 0.5 * z[0] * z[2] ** 2 + np.sin(z[1])
    x, b = np.array([1.2, -0.7, 2.0]), np.array([0.1, 0.4, -0.3])
    e = kernel_shap(batch(f), x, b)
    assert np.allclose(e.phi, brute_force_shapley(f, x, b), atol=1e-9, rtol=0)


@pytest.mark.parametrize("M", [4, 8, 12])
def test_exact_local_accuracy_nonlinear(M):
    r = np.random.default_rng(M)
    W = r.normal(size=(M, M))
    f = lambda z: np.tanh(z @ W @ z / M) + z.sum()
    e = kernel_shap(batch(f), r.normal(size=M), r.normal(size=M))
    assert e.local_error() <= 1e-6


def test_symmetry_and_dummy_axioms():
    f = lambda z: z[0] * z[1] + np.exp(0.1 * z[2]) + 0 * z[3]
    x, b = np.array([1.5, 1.5, 0.3, 9.0]), np.array([0.2, 0.2, -1.0, 4.0])
    e = kernel_shap(batch(f), x, b)
    assert abs(e.phi[0] - e.phi[1]) <= 1e-6
    assert abs(e.phi[3]) <= 1e-9


def test_sampled_mode_convergence():
    M = 16
    r = np.random.default_rng(0)
    W = r.normal(size=(M, M)) / M
    f = batch(lambda z: np.tanh(z @ W @ z) + np.sin(z).sum())
    x, b = r.normal(size=M), r.normal(size=M)
    exact = kernel_shap(f, x, b).phi

    def err(n):
        return np.mean([np.abs(kernel_shap(f, x, b, n, "sampled", seed=s).phi - exact).mean() for s in range(5)])

    e1, e4 = err(40), err(160)
    assert e4 <= 0.6 * e1


def test_sampled_mode_requires_enough_coalitions():
    with pytest.raises(ParameterError):
        kernel_shap(lambda X: np.zeros(len(X)), np.ones(10), np.zeros(10), 23, "sampled")
    with pytest.raises(ParameterError):
        kernel_shap(lambda X: np.zeros(len(X)), np.ones(21), np.zeros(21))


def test_groups_make_one_player_per_id():
    x = np.arange(6.0).reshape(2, 3)
    groups = np.array([[0, 0, 1], [1, 2, 2]])
    e = kernel_shap(lambda X: np.asarray(X).reshape(len(X), -1).sum(axis=1), x, np.zeros_like(x),
                    groups=groups)
    assert np.allclose(e.phi, [0 + 1, 2 + 3, 4 + 5])


def test_modality_groups_layout():
    g = modality_groups("raw")
    assert g.shape == (19, 24) and g.max() == 75
    assert len(set(g[0, :6])) == 1 and g[0, 6] != g[0, 5] and g[1, 0] == 4


def test_explain_bag_on_model():
    bags = random_bags(8, seed=3)
    model = MimilModel(seed=0).fit_standardization(np.stack([b.matrix for b in bags]))
    bg = background_row([b.matrix for b in bags])
    full = explain_bag(model, bags[0], bg, "full", n_coalitions=1024)
    assert full.phi.shape == (19, 24)
    assert full.local_error() <= 0.05 * abs(full.predicted - full.base_value) + 1e-12
    assert abs((1 - full.predicted) - model.predict_proba(bags[0].matrix)[0]) < 1e-12
    grouped = explain_bag(model, bags[0], bg, "grouped", n_coalitions=400)
    assert grouped.phi.shape == (19, 4)
    assert grouped.meta["sign_convention"]["negative"] == "CWS"
    back = ShapExplanation.from_dict(grouped.to_dict())
    assert np.array_equal(back.phi, grouped.phi) and back.window_id == bags[0].window_id


def _exp(phi, true, pred):
    return ShapExplanation(np.asarray(phi, float), 0.0, 0.0, true_label=true, predicted_label=pred)


def test_global_importance_examples():
    phi = np.random.default_rng(0).normal(size=(19, 4))
    assert np.array_equal(global_importance([_exp(phi, 1, 1)], "CWS").grid, phi)
    g = global_importance([_exp(phi, 1, 1), _exp(-phi, 1, 1)], "CWS")
    assert np.allclose(g.grid, 0) and g.n_windows == 2
    g2 = global_importance([_exp(phi, 1, 1), _exp(-phi, 1, 1), _exp(phi * 7, 1, 0)], "CWS")
    assert np.array_equal(g2.grid, g.grid)
    with pytest.raises(DataError, match="CWNS"):
        global_importance([_exp(phi, 1, 1)], "CWNS")
    g3 = global_importance([_exp(phi, 0, 1), _exp(-phi, 0, 0)], "CWNS")
    assert np.array_equal(g3.grid, -phi)


def test_export_heatmaps(tmp_path):
    zero = np.zeros((19, 24))
    path = export_heatmap(zero, tmp_path / "z.pgm", "pgm")
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n24 19\n255\n") and set(raw[len(b"P5\n24 19\n255\n"):]) == {0}
    assert (tmp_path / "z_sign.csv").exists()

    grid = np.random.default_rng(0).normal(size=(19, 24)) * 1e-3
    names, back = read_heatmap_csv(export_heatmap(grid, tmp_path / "g.csv", "csv"))
    assert back.shape == (19, 24) and len(names) == 24 and names[0] == "Heart rate Mean"
    assert np.allclose(back, grid, atol=1e-9, rtol=0)

    import json
    doc = json.loads(export_heatmap(grid, tmp_path / "g.json", "json").read_text())
    assert doc["scale"]["min"] == -doc["scale"]["max"] == -np.abs(grid).max()
    assert doc["sign_convention"]["positive"] == "CWNS"
    with pytest.raises(ParameterError):
        export_heatmap(grid * np.nan, tmp_path / "n.csv")
