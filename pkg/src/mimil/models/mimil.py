"""Modality-invariant MIL classifier.

Per modality: a shared per-instance embedding block and a gated-free
attention pool produce one bag embedding t_m. The four t_m are stacked as
channels of a (4, N) map; a non-local block with embedded-Gaussian affinity
over the N embedding positions fuses them into a (2, N) representation,
which a three-layer classifier maps to a CWS logit.
"""
from __future__ import annotations

import numpy as np

from .. import nn
from ..errors import ShapeError
from ..features import MODALITIES
from .base import BagModel


def _batched(x):
    x = nn.as_tensor(x)
    if x.ndim == 2:
        return nn.reshape(x, (1, *x.shape)), True
    return x, False


def embed_modality(x, params: dict, p_drop: float = 0.0, training: bool = False, rng=None) -> nn.Tensor:
    """Per-instance map: linear -> ReLU -> dropout -> linear.

    ``x`` is (k, d) or (B, k, d); rows never interact.
    """
    x, single = _batched(x)
    if x.shape[-1] != params["fc1.weight"].shape[0]:
        raise ShapeError("embed_modality", x.shape, params["fc1.weight"].shape)
    h = nn.relu(nn.linear(x, params["fc1.weight"], params["fc1.bias"]))
    h = nn.dropout(h, p_drop, training, rng)
    e = nn.linear(h, params["fc2.weight"], params["fc2.bias"])
    return nn.reshape(e, e.shape[1:]) if single else e


def attention_pool(E, w, V):
    """Attention weights a = softmax_i(w^T tanh(V e_i^T)) and t = sum_i a_i e_i.

    ``E`` is (k, p) or (B, k, p); ``w`` is (L, 1); ``V`` is (L, p).
    """
    E, single = _batched(E)
    w, V = nn.as_tensor(w), nn.as_tensor(V)
    if V.ndim != 2 or w.shape != (V.shape[0], 1) or E.shape[-1] != V.shape[1]:
        raise ShapeError("attention_pool", E.shape, w.shape, V.shape)
    B, k, _ = E.shape
    u = nn.tanh(nn.linear(E, nn.swap_last(V)))
    scores = nn.reshape(nn.linear(u, w), (B, k))
    a = nn.softmax(scores, axis=1)
    t = nn.attention_sum(a, E)
    if single:
        return nn.reshape(a, (k,)), nn.reshape(t, (t.shape[1],))
    return a, t


def fusion_affinity(T, params: dict):
    """theta, phi, g channel maps and the position-attention matrix A."""
    theta = nn.pointwise_conv(T, params["theta.weight"], params.get("theta.bias"))
    phi = nn.pointwise_conv(T, params["phi.weight"], params.get("phi.bias"))
    g = nn.pointwise_conv(T, params["g.weight"], params.get("g.bias"))
    A = nn.softmax(nn.matmul(nn.swap_last(theta), phi), axis=-1)
    return theta, phi, g, A


def modality_fusion(T, params: dict) -> nn.Tensor:
    """Z[:, i] = sum_j softmax_j(theta_i . phi_j) g[:, j] over positions i, j.

    ``T`` is (C, N) or (B, C, N) with modalities as channels. No residual.
    """
    T, single = _batched(T)
    if T.shape[-2] != params["theta.weight"].shape[1]:
        raise ShapeError("modality_fusion", T.shape, params["theta.weight"].shape)
    _, _, g, A = fusion_affinity(T, params)
    Z = nn.matmul(g, nn.swap_last(A))
    return nn.reshape(Z, Z.shape[1:]) if single else Z


def classifier_logits(Z, params: dict) -> nn.Tensor:
    """Flatten Z and apply linear-ReLU-linear-ReLU-linear; returns (B,) logits."""
    Z, single = _batched(Z)
    B = Z.shape[0]
    h = nn.reshape(Z, (B, -1))
    if h.shape[1] != params["fc1.weight"].shape[0]:
        raise ShapeError("classify", Z.shape, params["fc1.weight"].shape)
    h = nn.relu(nn.linear(h, params["fc1.weight"], params["fc1.bias"]))
    h = nn.relu(nn.linear(h, params["fc2.weight"], params["fc2.bias"]))
    logit = nn.reshape(nn.linear(h, params["fc3.weight"], params["fc3.bias"]), (B,))
    return nn.reshape(logit, ()) if single else logit


def classify(Z, params: dict) -> nn.Tensor:
    return nn.sigmoid(classifier_logits(Z, params))


def _sub(store: nn.ParameterStore, prefix: str) -> dict:
    n = len(prefix) + 1
    return {name[n:]: t for name, t in store.params.items() if name.startswith(prefix + ".")}


class MimilModel(BagModel):
    arch = "mimil"
    defaults = {
        "hidden": 128,
        "embed_dim": 256,
        "attn_dim": 256,
        "fused_channels": 2,
        "classifier": [256, 64],
        "dropout": {"HR": 0.1, "EDA": 0.1, "RSP_AMP": 0.1, "RSP_RATE": 0.1},
    }

    def _build(self, rng):
        c = self.config
        s = self.store
        p, L, C = c["embed_dim"], c["attn_dim"], len(MODALITIES)
        for m in MODALITIES:
            s.linear(f"embed.{m}.fc1", rng, self.cols, c["hidden"])
            s.linear(f"embed.{m}.fc2", rng, c["hidden"], p)
            s.add(f"pool.{m}.V", nn.glorot_uniform(rng, (L, p), p, L, s.dtype))
            s.add(f"pool.{m}.w", nn.glorot_uniform(rng, (L, 1), L, 1, s.dtype))
        half = c["fused_channels"]
        for name in ("theta", "phi", "g"):
            s.add(f"fusion.{name}.weight", nn.glorot_uniform(rng, (half, C), C, half, s.dtype))
            s.add(f"fusion.{name}.bias", np.zeros(half))
        sizes = [half * p, *c["classifier"], 1]
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
            s.linear(f"classifier.fc{i}", rng, a, b)

    def modality_params(self, m: str) -> tuple[dict, nn.Tensor, nn.Tensor]:
        return (_sub(self.store, f"embed.{m}"), self.store[f"pool.{m}.w"], self.store[f"pool.{m}.V"])

    def _forward(self, x, training, rng):
        pooled, attention = [], {}
        for i, m in enumerate(MODALITIES):
            xm = nn.take(x, (slice(None), slice(None), slice(i * self.cols, (i + 1) * self.cols)))
            embed, w, V = self.modality_params(m)
            E = embed_modality(xm, embed, self.config["dropout"][m], training, rng)
            a, t = attention_pool(E, w, V)
            pooled.append(t)
            attention[m] = a.data.astype(np.float64)
        T = nn.stack(pooled, axis=1)
        Z = modality_fusion(T, _sub(self.store, "fusion"))
        return classifier_logits(Z, _sub(self.store, "classifier")), attention

    def forward_details(self, X):
        """Eval-mode probability, attention, bag embeddings and fused representation."""
        x = nn.Tensor(self.standardize(X))
        with nn.no_grad():
            pooled, attention = [], {}
            for i, m in enumerate(MODALITIES):
                xm = nn.take(x, (slice(None), slice(None), slice(i * self.cols, (i + 1) * self.cols)))
                embed, w, V = self.modality_params(m)
                a, t = attention_pool(embed_modality(xm, embed), w, V)
                pooled.append(t)
                attention[m] = a.data.astype(np.float64)
            T = nn.stack(pooled, axis=1)
            Z = modality_fusion(T, _sub(self.store, "fusion"))
            logits = classifier_logits(Z, _sub(self.store, "classifier"))
        return {
            "probability": nn.tensor._sigmoid(logits.data.astype(np.float64)),
            "attention": attention,
            "embeddings": {m: T.data[:, i].astype(np.float64) for i, m in enumerate(MODALITIES)},
            "fused": Z.data.astype(np.float64),
        }


def mimil_forward(bag_matrix, model: MimilModel, mode: str = "eval", rng=None):
    """Single-bag forward: (probability, attention per modality, bag embeddings, fused Z)."""
    if mode == "train":
        logits, attention = model.forward(bag_matrix, training=True, rng=rng)
        prob = float(nn.tensor._sigmoid(logits.data.astype(np.float64))[0])
        return prob, {m: a[0] for m, a in attention.items()}, None, None
    d = model.forward_details(bag_matrix)
    return (float(d["probability"][0]), {m: a[0] for m, a in d["attention"].items()},
            {m: e[0] for m, e in d["embeddings"].items()}, d["fused"][0])
