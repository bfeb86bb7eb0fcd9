"""Reference classifiers: single-stream attention MIL, instance-max MIL and a flat DNN."""
from __future__ import annotations

import numpy as np

from .. import nn
from ..features import N_SEGMENTS
from .base import BagModel
from .mimil import attention_pool


def _mlp(x, store, prefix, n_layers):
    for i in range(1, n_layers + 1):
        x = nn.relu(nn.linear(x, store[f"{prefix}.fc{i}.weight"], store[f"{prefix}.fc{i}.bias"]))
    return x


def _bn(x, store, name, training):
    return nn.batch_norm(x, store[f"{name}.gamma"], store[f"{name}.beta"],
                         store.buffers[f"{name}.running_mean"], store.buffers[f"{name}.running_var"],
                         training)


def _add_bn(store, name, width):
    store.add(f"{name}.gamma", np.ones(width))
    store.add(f"{name}.beta", np.zeros(width))
    store.add_buffer(f"{name}.running_mean", np.zeros(width))
    store.add_buffer(f"{name}.running_var", np.ones(width))


class AttentionMilModel(BagModel):
    """All 4 modalities concatenated per instance, one embedding and one attention pool."""

    arch = "attnmil"
    defaults = {"hidden": [200, 64], "embed_dim": 128, "attn_dim": 64, "classifier": 64, "dropout": 0.1}

    def _build(self, rng):
        c, s = self.config, self.store
        h1, h2 = c["hidden"]
        s.linear("embed.fc1", rng, self.n_cols, h1)
        s.linear("embed.fc2", rng, h1, h2)
        _add_bn(s, "embed.bn", h2)
        s.linear("embed.fc3", rng, h2, c["embed_dim"])
        L, p = c["attn_dim"], c["embed_dim"]
        s.add("pool.V", nn.glorot_uniform(rng, (L, p), p, L, s.dtype))
        s.add("pool.w", nn.glorot_uniform(rng, (L, 1), L, 1, s.dtype))
        s.linear("classifier.fc1", rng, p, c["classifier"])
        s.linear("classifier.fc2", rng, c["classifier"], 1)

    def _forward(self, x, training, rng):
        s = self.store
        B, k, D = x.shape
        h = nn.reshape(x, (B * k, D))
        h = nn.relu(nn.linear(h, s["embed.fc1.weight"], s["embed.fc1.bias"]))
        h = nn.dropout(h, self.config["dropout"], training, rng)
        h = nn.relu(nn.linear(h, s["embed.fc2.weight"], s["embed.fc2.bias"]))
        h = _bn(h, s, "embed.bn", training)
        h = nn.relu(nn.linear(h, s["embed.fc3.weight"], s["embed.fc3.bias"]))
        E = nn.reshape(h, (B, k, -1))
        a, t = attention_pool(E, s["pool.w"], s["pool.V"])
        z = _mlp(t, s, "classifier", 1)
        logit = nn.linear(z, s["classifier.fc2.weight"], s["classifier.fc2.bias"])
        return nn.reshape(logit, (B,)), {"ALL": a.data.astype(np.float64)}


class InstanceMaxModel(BagModel):
    """Per-instance scorer; the bag logit is the largest instance logit."""

    arch = "instmax"
    defaults = {"hidden": [64, 32], "dropout": 0.1}

    def _build(self, rng):
        h1, h2 = self.config["hidden"]
        self.store.linear("instance.fc1", rng, self.n_cols, h1)
        self.store.linear("instance.fc2", rng, h1, h2)
        self.store.linear("instance.fc3", rng, h2, 1)

    def instance_logits(self, x, training=False, rng=None):
        s = self.store
        B, k, D = x.shape
        h = nn.relu(nn.linear(nn.reshape(x, (B * k, D)), s["instance.fc1.weight"], s["instance.fc1.bias"]))
        h = nn.dropout(h, self.config["dropout"], training, rng)
        h = nn.relu(nn.linear(h, s["instance.fc2.weight"], s["instance.fc2.bias"]))
        return nn.reshape(nn.linear(h, s["instance.fc3.weight"], s["instance.fc3.bias"]), (B, k))

    def _forward(self, x, training, rng):
        inst = self.instance_logits(x, training, rng)
        probs = nn.tensor._sigmoid(inst.data.astype(np.float64))
        return nn.max_along(inst, axis=1), {"instance_probability": probs}

    def instance_scorer(self):
        """Callable mapping one raw instance row (D,) to its probability."""
        def score(row):
            X = np.broadcast_to(np.asarray(row, dtype=np.float64), (N_SEGMENTS, self.n_cols))
            with nn.no_grad():
                logit = self.instance_logits(nn.Tensor(self.standardize(X)))
            return float(nn.tensor._sigmoid(np.float64(logit.data[0, 0])))
        return score


def instance_max_predict(bag, instance_scorer) -> float:
    """Bag probability as the maximum instance probability."""
    return max(float(instance_scorer(row)) for row in np.asarray(bag))


class DnnModel(BagModel):
    """Flattened 19*D input through a plain MLP; no MIL structure."""

    arch = "dnn"
    defaults = {"hidden": [512, 128], "dropout": 0.1}

    def _build(self, rng):
        h1, h2 = self.config["hidden"]
        self.store.linear("mlp.fc1", rng, N_SEGMENTS * self.n_cols, h1)
        self.store.linear("mlp.fc2", rng, h1, h2)
        _add_bn(self.store, "mlp.bn", h2)
        self.store.linear("mlp.out", rng, h2, 1)

    def _forward(self, x, training, rng):
        s = self.store
        B = x.shape[0]
        h = nn.relu(nn.linear(nn.reshape(x, (B, -1)), s["mlp.fc1.weight"], s["mlp.fc1.bias"]))
        h = nn.dropout(h, self.config["dropout"], training, rng)
        h = nn.relu(nn.linear(h, s["mlp.fc2.weight"], s["mlp.fc2.bias"]))
        h = _bn(h, s, "mlp.bn", training)
        return nn.reshape(nn.linear(h, s["mlp.out.weight"], s["mlp.out.bias"]), (B,)), {}


def attention_mil_forward(bag_matrix, model: AttentionMilModel):
    """(probability, attention over the 19 instances) for one bag."""
    probs, diag = model.predict_with_diagnostics(bag_matrix)
    return float(probs[0]), diag["ALL"][0]


def dnn_forward(bag_matrix, model: DnnModel) -> float:
    return float(model.predict_proba(bag_matrix)[0])
