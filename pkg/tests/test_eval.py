import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimil.bags import Bag
from mimil.errors import DataError
from mimil.evaluation import (
    SplitSpec, bench_latency, check_disjoint, evaluate_run, person_disjoint_split, run_experiment,
)
from mimil.metrics import MetricsReport, compute_metrics
from mimil.models import MimilModel, TrainConfig


def _pool(n_cws, n_cwns):
    return {**{f"S{i:02d}": "CWS" for i in range(n_cws)}, **{f"N{i:02d}": "CWNS" for i in range(n_cwns)}}


def participant_bags(n_per_class=8, per_participant=3, shift=0.8, seed=0):
    r = np.random.default_rng(seed)
    bags = []
    for p in range(2 * n_per_class):
        label = p % 2
        pid = f"P{p:03d}"
        for w in range(per_participant):
            m = r.normal(size=(19, 24))
            m[4:8, :6] += shift * label
            bags.append(Bag(pid, f"{pid}/task/{w:03d}", label, "raw", m))
    return bags


# -- splits ------------------------------------------------------------------------

def test_split_scripted_dataset_shape():
    sp = person_disjoint_split(_pool(18, 20), seed=0)
    train = set(sp.train)
    assert sum(p.startswith("S") for p in train) == 12
    assert sum(p.startswith("N") for p in train) == 14
    for part in (sp.val, sp.test):
        assert sum(p.startswith("S") for p in part) == 3 and sum(p.startswith("N") for p in part) == 3


def test_split_is_deterministic():
    assert person_disjoint_split(_pool(10, 9), 7) == person_disjoint_split(_pool(10, 9), 7)
    assert person_disjoint_split(_pool(10, 9), 7) != person_disjoint_split(_pool(10, 9), 8)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_split_disjoint_over_seeds(seed):
    sp = person_disjoint_split(_pool(9, 11), seed)
    sets = [set(sp.train), set(sp.val), set(sp.test)]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert set().union(*sets) == set(_pool(9, 11))


def test_split_deficit_is_named():
    with pytest.raises(DataError, match=r"CWS: 6 participants.*short by 1"):
        person_disjoint_split(_pool(6, 10))


def test_overlapping_split_rejected():
    with pytest.raises(DataError, match="train and test"):
        check_disjoint(SplitSpec(("A", "B"), ("C",), ("B",), 0))


def test_assign_keeps_participants_together():
    bags = participant_bags()
    sp = person_disjoint_split({b.participant_id: b.label for b in bags}, 3)
    tr, va, te = sp.assign(bags)
    assert len(tr) + len(va) + len(te) == len(bags)
    owners = [{b.participant_id for b in part} for part in (tr, va, te)]
    assert not (owners[0] & owners[1] or owners[0] & owners[2] or owners[1] & owners[2])


# -- metrics -----------------------------------------------------------------------

def test_metrics_perfect():
    r = compute_metrics([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    assert all(v == 1.0 for v in r.metrics().values())


def test_metrics_all_positive_predictor():
    r = compute_metrics(np.ones(10), [1, 0] * 5)
    assert (r.accuracy, r.recall, r.specificity, r.precision) == (0.5, 1.0, 0.0, 0.5)
    assert abs(r.f1 - 2 / 3) < 1e-12


def test_metrics_hand_confusion():
    r = MetricsReport.from_counts(tp=49, fp=11, tn=39, fn=1)
    assert r.recall == 0.98 and r.specificity == 0.78 and abs(r.accuracy - 0.88) < 1e-12
    assert abs(r.precision - 49 / 60) < 1e-12 and round(r.precision, 3) == 0.817
    assert round(r.f1, 3) == 0.891


def test_metrics_zero_denominator_flagged():
    r = compute_metrics([0.1, 0.2], [0, 0])
    assert r.precision == 0 and "precision" in r.undefined and "recall" in r.undefined


def test_metrics_threshold_is_inclusive():
    assert compute_metrics([0.5], [1]).tp == 1


def test_metrics_empty_rejected():
    with pytest.raises(DataError):
        compute_metrics([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metrics_recomputable_from_counts(pairs):
    p, y = zip(*pairs)
    r = compute_metrics(p, y)
    again = MetricsReport.from_counts(r.tp, r.fp, r.tn, r.fn)
    for k, v in r.metrics().items():
        assert abs(getattr(again, k) - v) <= 1e-12 and 0 <= v <= 1


# -- experiments -------------------------------------------------------------------

FAST = dict(epochs=4, patience=4, seeds=[0, 1])


def test_run_experiment_is_deterministic(tmp_path):
    bags = participant_bags()
    a = run_experiment(bags, "attnmil", TrainConfig(**FAST), out_root=tmp_path / "a")
    b = run_experiment(bags, "attnmil", TrainConfig(**FAST), out_root=tmp_path / "b")
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert len(a.per_seed) == 2
    assert set(a.mean) >= {"accuracy", "f1", "precision", "recall", "specificity", "tp"}


def test_run_directory_reproduces_metrics(tmp_path):
    bags = participant_bags()
    rep = run_experiment(bags, "mimil", TrainConfig(**FAST), out_root=tmp_path)
    again = evaluate_run(rep.run_dir, bags)
    for stored, redo in zip(rep.per_seed, again["per_seed"]):
        assert stored["metrics"] == redo["metrics"]
    assert json.loads((tmp_path.glob("mimil-raw-*/config.json").__next__()).read_text())["model"] == "mimil"


def test_resplit_per_seed_draws_new_splits():
    bags = participant_bags()
    rep = run_experiment(bags, "dnn", TrainConfig(**FAST), resplit_per_seed=True)
    assert rep.per_seed[0]["split"] != rep.per_seed[1]["split"]


# -- latency -----------------------------------------------------------------------

def test_bench_order_statistics_and_stability():
    model = MimilModel(seed=0)
    x = np.random.default_rng(0).normal(size=(19, 24))
    a = bench_latency(model, x, n_iters=200)["model_only"]
    b = bench_latency(model, x, n_iters=200)["model_only"]
    assert a["p95_s"] >= a["mean_s"] and a["max_s"] >= a["p95_s"]
    assert abs(a["mean_s"] - b["mean_s"]) < 0.5 * max(a["mean_s"], b["mean_s"])
    assert a["n_iters"] == 200
