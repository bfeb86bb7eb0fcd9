"""KernelSHAP attributions over bag feature grids and their aggregation.

Attributions target the model's CWNS probability ``1 - P(CWS)`` so that a
negative value pushes a window toward CWS (the "red" pole of the heatmaps)
and a positive value toward CWNS ("blue").
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .features import MODALITIES, N_SEGMENTS, columns_per_modality, feature_names
from .nn.optim import make_rng

EXACT_MAX_FEATURES = 20
DEFAULT_COALITIONS = 4096
PREDICT_CHUNK = 512
SIGN_CONVENTION = {"negative": "CWS", "negative_color": "red", "positive": "CWNS", "positive_color": "blue"}


def shapley_kernel_weight(M: int, s: int) -> float:
    """(M-1) / (C(M, s) s (M-s)); the empty and full coalitions weigh infinity."""
    if M < 1 or not 0 <= s <= M:
        raise ParameterError(f"coalition size {s} outside [0, {M}]")
    if s in (0, M):
        return math.inf
    return (M - 1) / (math.comb(M, s) * s * (M - s))


@dataclass
class ShapExplanation:
    phi: np.ndarray
    base_value: float
    predicted: float
    window_id: str = ""
    participant_id: str = ""
    true_label: int | None = None
    predicted_label: int | None = None
    feature_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def local_error(self) -> float:
        return abs(self.base_value + float(np.sum(self.phi)) - self.predicted)

    def to_dict(self) -> dict:
        n_rows, n_cols = self.phi.shape if self.phi.ndim == 2 else (1, self.phi.size)
        return {
            "window_id": self.window_id,
            "participant_id": self.participant_id,
            "base_value": self.base_value,
            "predicted": self.predicted,
            "true_label": self.true_label,
            "predicted_label": self.predicted_label,
            "phi": [float(v) for v in self.phi.ravel()],
            "n_rows": n_rows,
            "n_cols": n_cols,
            "feature_names": list(self.feature_names),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapExplanation":
        phi = np.asarray(d["phi"], dtype=np.float64).reshape(d["n_rows"], d["n_cols"])
        return cls(phi, d["base_value"], d["predicted"], d.get("window_id", ""), d.get("participant_id", ""),
                   d.get("true_label"), d.get("predicted_label"), d.get("feature_names", []), d.get("meta", {}))


# -- coalition design ------------------------------------------------------

def _all_coalitions(M: int):
    codes = np.arange(1, 2 ** M - 1, dtype=np.int64)
    Z = ((codes[:, None] >> np.arange(M)) & 1).astype(bool)
    sizes = Z.sum(axis=1)
    w = np.array([shapley_kernel_weight(M, s) for s in range(M + 1)])[sizes]
    return Z, w


def _sampled_coalitions(M: int, budget: int, rng):
    """Coalitions and weights: whole size classes are enumerated from the
    extremes inward while the budget covers them; the rest is drawn as
    complementary pairs with sizes proportional to their kernel mass."""
    n_pairs = M // 2
    sizes = np.arange(1, n_pairs + 1)
    mass = np.array([(M - 1) / (s * (M - s)) * (1 if 2 * s == M else 2) for s in sizes])
    mass /= mass.sum()
    rows, weights = [], []
    left_budget, left_mass = budget, 1.0
    full = 0
    for s, m in zip(sizes, mass):
        count = math.comb(M, s) * (1 if 2 * s == M else 2)
        if count > left_budget or left_budget * m / left_mass < count - 1e-9:
            break
        w = m / count
        for combo in _combinations(M, s):
            z = np.zeros(M, dtype=bool)
            z[list(combo)] = True
            rows.append(z)
            weights.append(w)
            if 2 * s != M:
                rows.append(~z)
                weights.append(w)
        left_budget -= count
        left_mass -= m
        full += 1
    rest = sizes[full:]
    if rest.size and left_budget >= 2:
        p = mass[full:] / mass[full:].sum()
        n_draw = left_budget // 2
        draws = rng.choice(rest, size=n_draw, p=p)
        w = left_mass / (2 * n_draw)
        for s in draws:
            z = np.zeros(M, dtype=bool)
            z[rng.choice(M, size=int(s), replace=False)] = True
            rows += [z, ~z]
            weights += [w, w]
    return np.array(rows, dtype=bool), np.array(weights)


def _combinations(M, s):
    from itertools import combinations

    return combinations(range(M), s)


def _solve(Z, w, y, total):
    """Weighted least squares with sum(phi) == total, by eliminating the last variable."""
    M = Z.shape[1]
    Zf = Z.astype(np.float64)
    if M == 1:
        return np.array([total])
    A = Zf[:, :-1] - Zf[:, -1:]
    b = y - Zf[:, -1] * total
    sw = np.sqrt(w)
    Aw, bw = A * sw[:, None], b * sw
    sol, _, rank, _ = np.linalg.lstsq(Aw, bw, rcond=None)
    if rank < M - 1:
        return None
    return np.concatenate([sol, [total - sol.sum()]])


# -- estimator -------------------------------------------------------------

def _predict_masked(predict, x, background, groups, Z):
    flat_x, flat_b = x.ravel(), background.ravel()
    out = np.empty(Z.shape[0])
    for lo in range(0, Z.shape[0], PREDICT_CHUNK):
        mask = Z[lo:lo + PREDICT_CHUNK][:, groups.ravel()]
        X = np.where(mask, flat_x, flat_b).reshape(-1, *x.shape)
        out[lo:lo + PREDICT_CHUNK] = np.asarray(predict(X), dtype=np.float64).ravel()
    return out


def kernel_shap(predict, x, background, n_coalitions: int | None = None, mode: str = "exact",
                groups=None, grid_shape=None, seed: int = 0) -> ShapExplanation:
    """Shapley values of ``predict`` at ``x`` relative to one background point.

    ``predict`` maps a batch (n, *x.shape) to n outputs. ``groups`` (same
    shape as ``x``, integer ids 0..M-1) makes each id one player; by default
    every cell is a player. Masked players take their background values.
    """
    x = np.asarray(x, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if background.shape != x.shape:
        raise ParameterError(f"background shape {background.shape} differs from input {x.shape}")
    if groups is None:
        groups = np.arange(x.size).reshape(x.shape)
        grid_shape = grid_shape or x.shape
    groups = np.asarray(groups, dtype=np.int64)
    if groups.shape != x.shape:
        raise ParameterError(f"group map shape {groups.shape} differs from input {x.shape}")
    M = int(groups.max()) + 1
    if set(np.unique(groups).tolist()) != set(range(M)):
        raise ParameterError("group ids must cover 0..M-1")
    grid_shape = tuple(grid_shape or (M,))

    f_base = float(np.asarray(predict(background[None]), dtype=np.float64).ravel()[0])
    f_x = float(np.asarray(predict(x[None]), dtype=np.float64).ravel()[0])
    total = f_x - f_base
    meta = {"mode": mode, "n_players": M}

    if mode == "exact":
        if M > EXACT_MAX_FEATURES:
            raise ParameterError(f"exact mode enumerates 2^M coalitions; M={M} exceeds {EXACT_MAX_FEATURES}")
        Z, w = _all_coalitions(M) if M > 1 else (np.zeros((0, 1), bool), np.zeros(0))
        y = _predict_masked(predict, x, background, groups, Z) - f_base if len(Z) else np.zeros(0)
        phi = _solve(Z, w, y, total)
        if phi is None:
            raise NumericError("exact coalition system is singular")
    elif mode == "sampled":
        n = DEFAULT_COALITIONS if n_coalitions is None else int(n_coalitions)
        if n < 2 * M + 4:
            raise ParameterError(f"sampled mode needs at least 2M+4 = {2 * M + 4} coalitions, got {n}")
        rng = make_rng(seed, 0x5A4B)
        phi = None
        for attempt in range(2):
            Z, w = _sampled_coalitions(M, n, rng)
            y = _predict_masked(predict, x, background, groups, Z) - f_base
            phi = _solve(Z, w, y, total)
            if phi is not None:
                break
        if phi is None:
            raise NumericError(f"coalition system singular after resampling (M={M}, n={n})")
        meta["n_coalitions"] = int(len(Z))
    else:
        raise ParameterError(f"mode must be 'exact' or 'sampled', got {mode!r}")

    if not np.all(np.isfinite(phi)):
        raise NumericError("non-finite Shapley estimate")
    return ShapExplanation(phi.reshape(grid_shape), f_base, f_x, meta=meta)


# -- model-facing helpers --------------------------------------------------

def modality_groups(feature_mode: str) -> np.ndarray:
    """(19, D) player ids: one player per (timestep, modality)."""
    d = columns_per_modality(feature_mode)
    rows = np.arange(N_SEGMENTS)[:, None] * len(MODALITIES)
    cols = np.repeat(np.arange(len(MODALITIES)), d)[None, :]
    return rows + cols


def background_row(train_matrices) -> np.ndarray:
    """Per-feature mean over every training instance, broadcast to a (19, D) grid."""
    X = np.asarray(train_matrices, dtype=np.float64)
    return np.broadcast_to(X.reshape(-1, X.shape[-1]).mean(axis=0), X.shape[1:]).copy()


def cwns_output(model):
    return lambda X: 1.0 - model.predict_proba(X)


def explain_bag(model, bag, background, mode: str = "full", n_coalitions: int | None = None,
                seed: int = 0) -> ShapExplanation:
    """Explain one bag; ``mode`` is "full" (every cell) or "grouped" (19 x 4)."""
    predict = cwns_output(model)
    if mode == "full":
        exp = kernel_shap(predict, bag.matrix, background, n_coalitions, "sampled", seed=seed)
        names = feature_names(bag.feature_mode)
    elif mode == "grouped":
        exp = kernel_shap(predict, bag.matrix, background, n_coalitions or 1024, "sampled",
                          modality_groups(bag.feature_mode), (N_SEGMENTS, len(MODALITIES)), seed=seed)
        names = feature_names("grouped")
    else:
        raise ParameterError(f"explanation mode must be 'full' or 'grouped', got {mode!r}")
    p_cws = 1.0 - exp.predicted
    exp.window_id, exp.participant_id = bag.window_id, bag.participant_id
    exp.true_label, exp.predicted_label = int(bag.label), int(p_cws >= 0.5)
    exp.feature_names = names
    exp.meta.update({"output": "cwns_probability", "background": "training feature mean",
                     "sign_convention": SIGN_CONVENTION})
    return exp


# -- aggregation -----------------------------------------------------------

@dataclass
class GlobalImportance:
    grid: np.ndarray
    cls: str
    n_windows: int


def global_importance(explanations, cls: str = "CWS", predictions=None) -> GlobalImportance:
    """Mean attribution grid over correctly classified windows of ``cls``.

    ``predictions`` optionally overrides each explanation's predicted label
    with a CWS probability (thresholded at 0.5).
    """
    if cls not in ("CWS", "CWNS"):
        raise ParameterError(f"class must be CWS or CWNS, got {cls!r}")
    target = 1 if cls == "CWS" else 0
    explanations = list(explanations)
    if predictions is not None:
        labels = [int(p >= 0.5) for p in predictions]
        if len(labels) != len(explanations):
            raise DataError("one prediction per explanation required")
    else:
        labels = [e.predicted_label for e in explanations]
    chosen = [e.phi for e, p in zip(explanations, labels) if e.true_label == target and p == target]
    if not chosen:
        raise DataError(f"no correctly classified {cls} windows to aggregate")
    return GlobalImportance(np.mean(chosen, axis=0), cls, len(chosen))


# -- export ----------------------------------------------------------------

def export_heatmap(grid, out, fmt: str = "csv", names=None) -> Path:
    """Write a (19, D) grid as csv, pgm (plus a sign csv) or json."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or not np.all(np.isfinite(g)):
        raise ParameterError("heatmap grid must be a finite 2-D array")
    out = Path(out)
    names = list(names) if names is not None else _default_names(g.shape[1])
    if len(names) != g.shape[1]:
        raise ParameterError(f"{len(names)} column names for {g.shape[1]} columns")
    if fmt == "csv":
        _write_csv(out, g, names, "%.17g")
    elif fmt == "pgm":
        peak = np.abs(g).max()
        pixels = np.zeros(g.shape, np.uint8) if peak == 0 else np.round(255 * np.abs(g) / peak).astype(np.uint8)
        with open(out, "wb") as fh:
            fh.write(f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode())
            fh.write(pixels.tobytes())
        _write_csv(out.with_name(out.stem + "_sign.csv"), np.sign(g), names, "%d")
    elif fmt == "json":
        bound = float(np.abs(g).max())
        out.write_text(json.dumps({
            "grid": g.tolist(), "n_rows": g.shape[0], "n_cols": g.shape[1], "feature_names": names,
            "scale": {"min": -bound, "max": bound}, "sign_convention": SIGN_CONVENTION,
        }, indent=1) + "\n")
    else:
        raise ParameterError(f"unknown heatmap format {fmt!r}")
    return out


def _default_names(n_cols):
    for mode in ("raw", "change"):
        names = feature_names(mode)
        if len(names) == n_cols:
            return names
    if n_cols == len(MODALITIES):
        return feature_names("grouped")
    return [f"f{i}" for i in range(n_cols)]


def _write_csv(path, g, names, fmt):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["timestep", *[f'"{n}"' if "," in n else n for n in names]]) + "\n")
        for t, row in enumerate(g):
            fh.write(",".join([str(t), *(fmt % v for v in row)]) + "\n")


def read_heatmap_csv(path) -> tuple[list[str], np.ndarray]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0][1:], np.array([[float(v) for v in r[1:]] for r in rows[1:]])
