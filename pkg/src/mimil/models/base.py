"""Common machinery for bag classifiers: standardization, inference, persistence."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import nn
from ..errors import DataError, ParameterError, ShapeError
from ..features import MODALITIES, N_SEGMENTS, columns_per_modality

THRESHOLD = 0.5


class BagModel:
    """A classifier mapping (B, 19, D) feature tensors to CWS probabilities.

    Subclasses register parameters in ``_build`` and implement ``_forward``
    returning bag logits plus a dict of numpy diagnostics.
    """

    arch = "base"
    defaults: dict = {}

    def __init__(self, feature_mode: str = "raw", seed: int = 0, config: dict | None = None,
                 dtype=np.float32):
        unknown = set(config or {}) - set(self.defaults)
        if unknown:
            raise ParameterError(f"{self.arch}: unknown architecture keys {sorted(unknown)}")
        self.config = {**self.defaults, **(config or {})}
        self.feature_mode = feature_mode
        self.cols = columns_per_modality(feature_mode)
        self.n_cols = self.cols * len(MODALITIES)
        self.seed = int(seed)
        self.store = nn.ParameterStore(dtype)
        self.z_mean = np.zeros(self.n_cols)
        self.z_std = np.ones(self.n_cols)
        self._build(nn.make_rng(self.seed, 0xB01D))

    # -- subclass hooks ---------------------------------------------------
    def _build(self, rng):
        raise NotImplementedError

    def _forward(self, x: nn.Tensor, training: bool, rng):
        raise NotImplementedError

    # -- standardization --------------------------------------------------
    def fit_standardization(self, X):
        """Per-feature z-scoring statistics over every instance row of ``X``."""
        rows = np.asarray(X, dtype=np.float64).reshape(-1, self.n_cols)
        self.z_mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        self.z_std = np.where(std > 1e-8, std, 1.0)
        return self

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (N_SEGMENTS, self.n_cols):
            raise ShapeError(f"{self.arch} input", X.shape[1:], (N_SEGMENTS, self.n_cols))
        return ((X - self.z_mean) / self.z_std).astype(self.store.dtype)

    # -- inference --------------------------------------------------------
    def forward(self, X, training: bool = False, rng=None):
        """Bag logits (Tensor of shape (B,)) and diagnostics for raw inputs ``X``."""
        return self._forward(nn.Tensor(self.standardize(X)), training, rng)

    def predict_proba(self, X, batch_size: int = 256) -> np.ndarray:
        probs, _ = self.predict_with_diagnostics(X, batch_size)
        return probs

    def predict_with_diagnostics(self, X, batch_size: int = 256):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        out, diags = [], []
        with nn.no_grad():
            for lo in range(0, X.shape[0], batch_size):
                logits, diag = self.forward(X[lo:lo + batch_size], training=False)
                out.append(nn.tensor._sigmoid(logits.data.astype(np.float64)))
                diags.append(diag)
        merged = {k: np.concatenate([d[k] for d in diags]) for k in (diags[0] if diags else {})}
        return np.concatenate(out), merged

    # -- persistence ------------------------------------------------------
    def sidecar(self) -> dict:
        return {
            "architecture": self.arch,
            "feature_mode": self.feature_mode,
            "zscore": {"mean": [float(v) for v in self.z_mean], "std": [float(v) for v in self.z_std]},
            "config": self.config,
            "seed": self.seed,
        }

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>`` (MIML weights) and ``<path>.json`` (sidecar)."""
        path = Path(path)
        nn.save_weights(path, self.store.arrays())
        meta_path = path.with_name(path.name + ".json")
        meta = {**self.sidecar(), "weights": path.name}
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path, meta_path

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict) -> "BagModel":
        model = cls(meta["feature_mode"], seed=meta.get("seed", 0), config=meta.get("config"))
        model.store.restore(arrays)
        model.z_mean = np.asarray(meta["zscore"]["mean"], dtype=np.float64)
        model.z_std = np.asarray(meta["zscore"]["std"], dtype=np.float64)
        return model


def load_model(path) -> BagModel:
    """Load a model from its weight file (sidecar at ``<path>.json``)."""
    from . import MODEL_REGISTRY

    path = Path(path)
    meta_path = path.with_name(path.name + ".json")
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model sidecar {meta_path}: {exc}") from exc
    arch = meta.get("architecture")
    if arch not in MODEL_REGISTRY:
        raise DataError(f"{meta_path}: unknown architecture {arch!r}")
    return MODEL_REGISTRY[arch].from_arrays(meta, nn.load_weights(path))
