"""Mini-batch Adam training with early stopping on validation F1."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import nn
from ..bags import Bag, stack
from ..errors import ConfigError, DataError, NumericError
from ..metrics import compute_metrics
from .base import THRESHOLD, BagModel


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 20
    batch_size: int = 16
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    feature_mode: str = "raw"
    dropout: float | None = None
    class_weighting: bool = True
    model_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list must not be empty", "seeds")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}", "lr")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be positive", "epochs")
        if self.dropout is not None and not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}", "dropout")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown training key {key!r}", key)
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def build_model(arch: str, feature_mode: str, seed: int, config: TrainConfig | None = None) -> BagModel:
    from . import MODEL_REGISTRY

    if arch not in MODEL_REGISTRY:
        raise ConfigError(f"unknown model {arch!r}; choose from {sorted(MODEL_REGISTRY)}", "model")
    cls = MODEL_REGISTRY[arch]
    model_config = dict(config.model_config) if config else {}
    if config is not None and config.dropout is not None:
        rate = config.dropout
        model_config["dropout"] = ({m: rate for m in cls.defaults["dropout"]}
                                   if isinstance(cls.defaults.get("dropout"), dict) else rate)
    return cls(feature_mode, seed=seed, config=model_config)


def _check_inputs(train_bags, val_bags, feature_mode):
    if not train_bags or not val_bags:
        raise DataError("training and validation sets must both be non-empty")
    overlap = {b.participant_id for b in train_bags} & {b.participant_id for b in val_bags}
    if overlap:
        raise DataError(f"participants in both train and validation: {sorted(overlap)}")
    modes = {b.feature_mode for b in [*train_bags, *val_bags]}
    if modes != {feature_mode}:
        raise DataError(f"bags carry feature modes {sorted(modes)}, expected {feature_mode!r}")
    labels = {b.label for b in train_bags}
    if labels != {0, 1}:
        raise DataError(f"training set holds a single class {sorted(labels)}; both are required")


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i:i + size] for i in range(0, order.size, size)]
    if len(chunks) > 1 and chunks[-1].size == 1:
        chunks[-2] = np.concatenate(chunks[-2:])
        chunks.pop()
    return chunks


def class_weights(y: np.ndarray) -> np.ndarray:
    """Per-sample weights N / (2 N_c) for the sample's class c."""
    n = y.size
    counts = np.array([np.sum(y == 0), np.sum(y == 1)], dtype=np.float64)
    return (n / (2.0 * counts))[y.astype(int)]


def train(train_bags: list[Bag], val_bags: list[Bag], config: TrainConfig | None = None,
          arch: str = "mimil", seed: int | None = None):
    """Train one model and return (best-validation model, per-epoch history).

    ``seed`` defaults to the first configured seed. Standardization statistics
    are fit on the training bags only.
    """
    config = config or TrainConfig()
    seed = config.seeds[0] if seed is None else int(seed)
    _check_inputs(train_bags, val_bags, config.feature_mode)
    X, y = stack(train_bags)
    Xv, yv = stack(val_bags)

    model = build_model(arch, config.feature_mode, seed, config)
    model.fit_standardization(X)
    w_all = class_weights(y) if config.class_weighting else np.ones(y.size)
    rng = nn.make_rng(seed, 0x7EA1)

    history = []
    best_key, best_state, stale = None, None, 0
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in _batches(rng.permutation(y.size), config.batch_size):
            model.store.zero_grad()
            logits, _ = model.forward(X[idx], training=True, rng=rng)
            loss = nn.bce_with_logits(logits, y[idx], w_all[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss (seed {seed}, epoch {epoch})")
            loss.backward()
            try:
                nn.adam_step(model.store, lr=config.lr)
            except NumericError as exc:
                raise NumericError(f"{exc} (seed {seed}, epoch {epoch})") from exc
            total += value * idx.size
        pv = model.predict_proba(Xv)
        val_loss = float(np.mean([nn.bce_loss(p, t) for p, t in zip(pv, yv)]))
        val_f1 = compute_metrics(pv, yv, THRESHOLD).f1
        history.append({"epoch": epoch, "train_loss": total / y.size, "val_loss": val_loss, "val_f1": val_f1})
        key = (val_f1, -val_loss)
        if best_key is None or key > best_key:
            best_key, best_state, stale = key, model.store.snapshot(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.store.restore(best_state)
    return model, history
