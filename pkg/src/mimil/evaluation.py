"""Person-disjoint splitting, multi-seed experiments and latency benchmarks."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .bags import Bag, stack
from .errors import DataError
from .features import feature_matrix, window_hlds
from .metrics import METRIC_NAMES, MetricsReport, compute_metrics
from .models import THRESHOLD, TrainConfig, load_model, train
from .nn.optim import make_rng

N_TEST_PER_CLASS = 3
N_VAL_PER_CLASS = 3


# -- splitting -------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple
    test: tuple
    seed: int

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]))

    def assign(self, bags) -> tuple[list[Bag], list[Bag], list[Bag]]:
        """Partition bags by participant; every bag must belong to exactly one set."""
        check_disjoint(self)
        where = {pid: name for name in ("train", "val", "test") for pid in getattr(self, name)}
        parts: dict[str, list[Bag]] = {"train": [], "val": [], "test": []}
        for b in bags:
            if b.participant_id not in where:
                raise DataError(f"participant {b.participant_id} is not assigned to any split")
            parts[where[b.participant_id]].append(b)
        for name, items in parts.items():
            if not items:
                raise DataError(f"{name} split holds no bags")
        return parts["train"], parts["val"], parts["test"]


def check_disjoint(split: SplitSpec):
    sets = {n: set(getattr(split, n)) for n in ("train", "val", "test")}
    for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
        both = sets[a] & sets[b]
        if both:
            raise DataError(f"participants in both {a} and {b}: {sorted(both)}")


def participant_groups(bags) -> dict[str, int]:
    """Participant id -> label, rejecting participants whose bags disagree."""
    out: dict[str, int] = {}
    for b in bags:
        if out.setdefault(b.participant_id, b.label) != b.label:
            raise DataError(f"participant {b.participant_id} has bags with both labels")
    return out


def person_disjoint_split(participants, seed: int = 0, n_test: int = N_TEST_PER_CLASS,
                          n_val: int = N_VAL_PER_CLASS) -> SplitSpec:
    """Hold out ``n_test`` + ``n_val`` participants per class; the rest train.

    ``participants`` maps participant id to group ("CWS"/"CWNS" or 1/0).
    """
    by_class: dict[int, list[str]] = {1: [], 0: []}
    for pid, g in dict(participants).items():
        label = 1 if g in ("CWS", 1, True) else 0 if g in ("CWNS", 0, False) else None
        if label is None:
            raise DataError(f"participant {pid}: unknown group {g!r}")
        by_class[label].append(pid)
    need = n_test + n_val + 1
    for label, name in ((1, "CWS"), (0, "CWNS")):
        have = len(by_class[label])
        if have < need:
            raise DataError(f"{name}: {have} participants, need at least {need} (short by {need - have})")
    rng = make_rng(seed, 0x5B17)
    test, val, tr = [], [], []
    for label in (1, 0):
        ids = sorted(by_class[label])
        order = [ids[i] for i in rng.permutation(len(ids))]
        test += order[:n_test]
        val += order[n_test:n_test + n_val]
        tr += order[n_test + n_val:]
    return SplitSpec(tuple(sorted(tr)), tuple(sorted(val)), tuple(sorted(test)), int(seed))


# -- experiments -----------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj, n: int = 12) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:n]


def bags_digest(bags) -> str:
    h = hashlib.sha256()
    for b in bags:
        h.update(canonical_json([b.participant_id, b.window_id, b.label, b.feature_mode]).encode())
        h.update(np.ascontiguousarray(b.matrix, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class ExperimentReport:
    model: str
    feature_mode: str
    config: dict
    split: dict
    per_seed: list
    mean: dict
    run_dir: str | None = None
    models: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"model": self.model, "feature_mode": self.feature_mode, "config": self.config,
                "split": self.split, "per_seed": self.per_seed, "mean": self.mean}


def mean_metrics(reports: list[MetricsReport]) -> dict:
    out = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
    for k in ("tp", "fp", "tn", "fn"):
        out[k] = int(sum(getattr(r, k) for r in reports))
    return out


def run_experiment(bags: list[Bag], arch: str = "mimil", config: TrainConfig | None = None,
                   split_seed: int = 0, out_root=None, resplit_per_seed: bool = False,
                   split: SplitSpec | None = None) -> ExperimentReport:
    """Train and test one architecture for every configured seed.

    One split (``split_seed``) is shared by all seeds unless
    ``resplit_per_seed`` draws a fresh split per training seed.
    """
    config = config or TrainConfig(feature_mode=bags[0].feature_mode)
    groups = participant_groups(bags)
    echo = {
        "model": arch,
        "train": config.to_dict(),
        "split_seed": int(split_seed),
        "resplit_per_seed": bool(resplit_per_seed),
        "inputs": bags_digest(bags),
    }
    if split is not None:
        echo["split"] = split.to_dict()
    run_dir = None
    if out_root is not None:
        run_dir = Path(out_root) / f"{arch}-{config.feature_mode}-{config_hash(echo)}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")

    per_seed, reports, models = [], [], []
    for seed in config.seeds:
        sp = split or person_disjoint_split(groups, seed if resplit_per_seed else split_seed)
        tr, va, te = sp.assign(bags)
        model, history = train(tr, va, config, arch=arch, seed=seed)
        Xt, yt = stack(te)
        probs = model.predict_proba(Xt)
        rep = compute_metrics(probs, yt, THRESHOLD)
        reports.append(rep)
        models.append(model)
        best = max(history, key=lambda h: (h["val_f1"], -h["val_loss"]))
        entry = {"seed": int(seed), "split": sp.to_dict(), "metrics": rep.to_dict(),
                 "epochs": len(history), "best_epoch": best["epoch"]}
        if run_dir is not None:
            weights, _ = model.save(run_dir / f"seed{seed}.miml")
            entry["weights"] = weights.name
            preds = {"window_id": [b.window_id for b in te], "label": [int(b.label) for b in te],
                     "probability": [float(p) for p in probs]}
            (run_dir / f"seed{seed}_predictions.json").write_text(json.dumps(preds) + "\n")
            (run_dir / f"seed{seed}_history.json").write_text(json.dumps(history) + "\n")
        per_seed.append(entry)

    report = ExperimentReport(arch, config.feature_mode, echo, per_seed[0]["split"], per_seed,
                              mean_metrics(reports), str(run_dir) if run_dir else None, models)
    if run_dir is not None:
        (run_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report


def evaluate_run(run_dir, bags: list[Bag]) -> dict:
    """Recompute every seed's test metrics from a run directory's stored weights."""
    run_dir = Path(run_dir)
    report = json.loads((run_dir / "report.json").read_text())
    out = []
    for entry in report["per_seed"]:
        model = load_model(run_dir / entry["weights"])
        _, _, te = SplitSpec.from_dict(entry["split"]).assign(bags)
        Xt, yt = stack(te)
        out.append({"seed": entry["seed"], "metrics": compute_metrics(model.predict_proba(Xt), yt).to_dict()})
    return {"per_seed": out, "mean": mean_metrics([MetricsReport(**{k: v for k, v in e["metrics"].items()
                                                                    if k != "undefined"})
                                                   for e in out])}


# -- latency ---------------------------------------------------------------

def _timings(fn, n_iters: int, warmup: int) -> dict:
    for _ in range(warmup):
        fn()
    t = np.empty(n_iters)
    for i in range(n_iters):
        t0 = time.perf_counter()
        fn()
        t[i] = time.perf_counter() - t0
    return {"mean_s": float(t.mean()), "p95_s": float(np.percentile(t, 95)), "max_s": float(t.max()),
            "n_iters": int(n_iters)}


def bench_latency(model, bag_matrix, n_iters: int = 1000, warmup: int = 10, window=None,
                  baseline=None, threads: int = 1) -> dict:
    """Wall-clock single-window inference statistics.

    ``bag_matrix`` times the model alone. When a raw ``window`` is given the
    same statistics are also reported for feature extraction plus inference.
    """
    warmup = max(int(warmup), 10)
    X = np.asarray(bag_matrix, dtype=np.float64)
    out = {"threads": threads, "warmup": warmup}
    with threadpool_limits(limits=threads):
        out["model_only"] = _timings(lambda: model.predict_proba(X), n_iters, warmup)
        if window is not None:
            mode = model.feature_mode

            def full():
                return model.predict_proba(feature_matrix(window_hlds(window), mode, baseline))

            out["with_features"] = _timings(full, n_iters, warmup)
    return out
