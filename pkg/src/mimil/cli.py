"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import socketserver
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .bags import Bag, read_bags, stack, write_bags
from .errors import ConfigError, DataError, MimilError, NumericError, ParameterError
from .evaluation import (
    SplitSpec, bags_digest, bench_latency, config_hash, evaluate_run, participant_groups,
    person_disjoint_split, run_experiment,
)
from .explain import background_row, explain_bag, export_heatmap, global_importance
from .features import FEATURE_MODES, MODALITIES, N_SEGMENTS, feature_names
from .models import MODEL_REGISTRY, THRESHOLD, TrainConfig, load_model, ridge_rank
from .pipeline import featurize, recording_hlds
from .signal import load_manifest
from .synth import SynthConfig, generate_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# -- config handling -------------------------------------------------------

def read_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _split_keys(cfg: dict, allowed: set[str]) -> dict:
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", key)
    return cfg


def _run_dir(root, prefix: str, echo: dict) -> Path:
    d = Path(root) / f"{prefix}-{config_hash(echo)}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    return d


def _file_digest(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _train_config(cfg: dict, args) -> tuple[TrainConfig, int]:
    cfg = dict(cfg)
    split_seed = int(cfg.pop("split_seed", 0))
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    if getattr(args, "feature_mode", None):
        cfg["feature_mode"] = args.feature_mode
    return TrainConfig.from_dict(cfg), split_seed


# -- commands --------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = SynthConfig.from_dict(cfg)
    out = Path(args.out or f"synth-{config_hash(config.to_dict())}")
    ds = generate_dataset(config, out)
    manifest = out / "dataset.json"
    manifest.write_text(json.dumps({"config": config.to_dict(), "files": ds.paths,
                                    "groups": ds.groups}, indent=2, sort_keys=True) + "\n")
    print(manifest)
    return EXIT_OK


def cmd_featurize(args) -> int:
    recordings = load_manifest(args.manifest)
    mode = args.feature_mode or "raw"
    bags = featurize(recordings, (mode,))[mode]
    out = Path(args.out or f"bags_{mode}.jsonl")
    write_bags(out, bags)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    bags = read_bags(args.bags)
    cfg = read_config(args.config)
    cfg.setdefault("feature_mode", bags[0].feature_mode)
    config, split_seed = _train_config(cfg, args)
    report = run_experiment(bags, args.model, config, split_seed=split_seed, out_root=args.out or "runs")
    print(report.run_dir)
    print(json.dumps(report.mean, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bags = read_bags(args.bags)
    result = evaluate_run(args.run, bags)
    stored = json.loads((Path(args.run) / "report.json").read_text())
    result["matches_training_report"] = all(
        a["metrics"] == b["metrics"] for a, b in zip(result["per_seed"], stored["per_seed"])
    )
    (Path(args.run) / "evaluation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result["mean"], sort_keys=True))
    return EXIT_OK


def _load_run(run):
    run = Path(run)
    report = json.loads((run / "report.json").read_text())
    entry = report["per_seed"][0]
    return run, load_model(run / entry["weights"]), SplitSpec.from_dict(entry["split"])


def cmd_explain(args) -> int:
    bags = read_bags(args.bags)
    run, model, split = _load_run(args.run)
    tr, _, te = split.assign(bags)
    background = background_row(stack(tr)[0])
    windows = te if args.windows is None else te[: args.windows]
    echo = {"command": "explain", "run": str(run), "mode": args.mode, "n_coalitions": args.n_coalitions,
            "windows": len(windows), "inputs": bags_digest(bags), "seed": args.seed or 0}
    out = _run_dir(args.out or run, "explain", echo)
    explanations = []
    with open(out / "explanations.jsonl", "w") as fh:
        for bag in windows:
            e = explain_bag(model, bag, background, args.mode, args.n_coalitions, seed=args.seed or 0)
            explanations.append(e)
            fh.write(json.dumps(e.to_dict()) + "\n")
    names = explanations[0].feature_names
    summary = {}
    for cls in ("CWS", "CWNS"):
        try:
            g = global_importance(explanations, cls)
        except DataError as exc:
            summary[cls] = {"error": str(exc)}
            continue
        for fmt in ("csv", "json", "pgm"):
            export_heatmap(g.grid, out / f"global_{cls}.{fmt}", fmt, names)
        summary[cls] = {"n_windows": g.n_windows, "shape": list(g.grid.shape)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(out)
    return EXIT_OK


def cmd_rank(args) -> int:
    bags = read_bags(args.bags)
    X, y = stack(bags)
    rows = X.reshape(-1, X.shape[-1])
    labels = np.repeat(y, X.shape[1])
    std = rows.std(axis=0)
    Z = (rows - rows.mean(axis=0)) / np.where(std > 0, std, 1.0)
    ranking = ridge_rank(Z, labels, args.lam)
    names = feature_names(bags[0].feature_mode)
    lines = [f"{'Rank':>4}  {'Feature name':<32} {'Coefficient':>12}"]
    lines += [f"{r:>4}  {names[i]:<32} {c:>12.6f}" for r, (i, c) in enumerate(ranking, 1)]
    print("\n".join(lines))
    if args.out:
        echo = {"command": "rank", "lambda": args.lam, "inputs": bags_digest(bags)}
        out = _run_dir(args.out, "rank", echo)
        (out / "ranking.json").write_text(json.dumps(
            [{"rank": r, "feature": names[i], "index": i, "coefficient": c}
             for r, (i, c) in enumerate(ranking, 1)], indent=2) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    model = load_model(args.model_path)
    bags = read_bags(args.bags) if args.bags else None
    X = bags[0].matrix if bags else np.zeros((N_SEGMENTS, model.n_cols))
    window = baseline = None
    if args.manifest:
        recs = load_manifest(args.manifest)
        task = next(r for r in recs if r.condition == "task")
        windows, _ = recording_hlds(task)
        window = windows[0]
        if model.feature_mode != "raw":
            from .features import baseline_score

            base = next(r for r in recs if r.condition == "baseline" and r.participant_id == task.participant_id)
            bw, bh = recording_hlds(base)
            baseline = baseline_score(bw, bh)
    report = bench_latency(model, X, args.n_iters, window=window, baseline=baseline)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        echo = {"command": "bench", "model": _file_digest(args.model_path), "n_iters": args.n_iters}
        out = _run_dir(args.out, "bench", echo)
        (out / "bench.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- streaming -------------------------------------------------------------

def _parse_stream_record(rec, model) -> tuple[str, np.ndarray]:
    if not isinstance(rec, dict):
        raise DataError("record must be a JSON object")
    missing = {"window_id", "feature_mode", "matrix"} - set(rec)
    if missing:
        raise DataError(f"missing keys {sorted(missing)}")
    if rec["feature_mode"] != model.feature_mode:
        raise DataError(f"feature_mode {rec['feature_mode']!r} but model expects {model.feature_mode!r}")
    m = np.asarray(rec["matrix"], dtype=np.float64)
    if m.ndim == 1 and m.size == N_SEGMENTS * model.n_cols:
        m = m.reshape(N_SEGMENTS, model.n_cols)
    if m.shape != (N_SEGMENTS, model.n_cols):
        raise DataError(f"matrix shape {m.shape}, expected {(N_SEGMENTS, model.n_cols)}")
    if not np.all(np.isfinite(m)):
        raise DataError("matrix holds non-finite values")
    return str(rec["window_id"]), m


def process_stream_line(line: str, model, lineno: int = 0) -> dict:
    t0 = time.perf_counter()
    window_id = None
    try:
        rec = json.loads(line)
        if isinstance(rec, dict) and "window_id" in rec:
            window_id = str(rec["window_id"])
        window_id, m = _parse_stream_record(rec, model)
        probs, diag = model.predict_with_diagnostics(m)
    except (json.JSONDecodeError, ValueError, TypeError, MimilError) as exc:
        return {"error": str(exc), "line": lineno, "window_id": window_id}
    p = float(probs[0])
    return {
        "window_id": window_id,
        "probability": p,
        "predicted_class": "CWS" if p >= THRESHOLD else "CWNS",
        "attention": {k: [float(v) for v in a[0]] for k, a in diag.items() if a.ndim == 2},
        "latency_s": time.perf_counter() - t0,
    }


def infer_stream(model, lines, out) -> int:
    """Score each input line and write one output line per input, in order."""
    n = 0
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        out.write(json.dumps(process_stream_line(line, model, n)) + "\n")
        out.flush()
    return n


def _serve_tcp(model, address: str):
    host, _, port = address.rpartition(":")
    if not port.isdigit():
        raise ConfigError(f"--stream-tcp expects host:port, got {address!r}", "stream-tcp")

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                if line.strip():
                    self.wfile.write((json.dumps(process_stream_line(line, model)) + "\n").encode())
                    self.wfile.flush()

    socketserver.TCPServer.allow_reuse_address = True
    with socketserver.TCPServer((host or "127.0.0.1", int(port)), Handler) as server:
        print(f"listening on {server.server_address[0]}:{server.server_address[1]}", file=sys.stderr, flush=True)
        server.serve_forever()


def cmd_stream(args) -> int:
    try:
        model = load_model(args.model_path)
    except (DataError, ParameterError) as exc:
        print(f"mimil stream: cannot load model: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.stream_tcp:
        _serve_tcp(model, args.stream_tcp)
    else:
        infer_stream(model, sys.stdin, sys.stdout)
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimil", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        return sp

    g = common(sub.add_parser("generate", help="synthesize a dataset"))
    g.set_defaults(func=cmd_generate)

    f = common(sub.add_parser("featurize", help="recordings -> bags"), config=False)
    f.add_argument("--manifest", required=True)
    f.add_argument("--feature-mode", choices=FEATURE_MODES)
    f.set_defaults(func=cmd_featurize)

    t = common(sub.add_parser("train", help="multi-seed training and testing"))
    t.add_argument("--bags", required=True)
    t.add_argument("--model", choices=sorted(MODEL_REGISTRY), default="mimil")
    t.add_argument("--feature-mode", choices=FEATURE_MODES)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="recompute test metrics of a run")
    e.add_argument("--run", required=True)
    e.add_argument("--bags", required=True)
    e.set_defaults(func=cmd_evaluate)

    x = common(sub.add_parser("explain", help="KernelSHAP grids for a run's test windows"), config=False)
    x.add_argument("--run", required=True)
    x.add_argument("--bags", required=True)
    x.add_argument("--mode", choices=("grouped", "full"), default="grouped")
    x.add_argument("--n-coalitions", type=int)
    x.add_argument("--windows", type=int, help="explain only the first N test windows")
    x.set_defaults(func=cmd_explain)

    r = common(sub.add_parser("rank", help="ridge-regression feature ranking"), config=False)
    r.add_argument("--bags", required=True)
    r.add_argument("--lambda", dest="lam", type=float, default=1.0)
    r.set_defaults(func=cmd_rank)

    b = common(sub.add_parser("bench", help="single-window latency"), config=False)
    b.add_argument("--model", dest="model_path", required=True)
    b.add_argument("--bags")
    b.add_argument("--manifest", help="recordings, to time feature extraction too")
    b.add_argument("--n-iters", type=int, default=1000)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("stream", help="line-delimited JSON inference")
    s.add_argument("--model", dest="model_path", required=True)
    s.add_argument("--stream-tcp", metavar="HOST:PORT")
    s.set_defaults(func=cmd_stream)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("MIMIL_THREADS")
    try:
        limit = int(threads) if threads else None
    except ValueError:
        print(f"mimil: MIMIL_THREADS must be an integer, got {threads!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=limit):
            return args.func(args)
    except ConfigError as exc:
        print(f"mimil {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"mimil {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"mimil {args.command}: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MimilError as exc:
        print(f"mimil {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
