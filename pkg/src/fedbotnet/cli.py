"""Command-line pipeline: synth -> train -> cross-eval -> score -> federate -> report.

Every command reads one JSON config (flags override its fields), works inside
the output directory and writes its files atomically. Output layout::

    <out>/config.json                 resolved config (provenance)
    <out>/data/device_<k>/*.csv       synthetic federation (synth)
    <out>/models/<kind>/node_<i>.fbm  serialized node models (train)
    <out>/metrics/<kind>.csv          per-node accuracy / time / rows (train)
    <out>/cross_eval/<kind>_matrix.{csv,json}
    <out>/score/scorecard.{csv,json}
    <out>/federation/report.{csv,json}
    <out>/report/long.csv             model,node,metric,value
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from importlib import resources
from pathlib import Path

from .dataset import (
    DataError,
    LabelMode,
    SplitSpec,
    SyntheticFederationSpec,
    generate_synthetic_federation,
    load_federation,
    split,
    write_device_csvs,
)
from .evaluation import (
    TIMING_MODES,
    AccuracyMatrix,
    NodeMetrics,
    ScoreWeights,
    accuracy,
    accuracy_matrix,
    long_format_csv,
    metrics_from_csv,
    metrics_to_csv,
    score_models,
    timed_train,
    to_json,
)
from .federation import (
    aggregate,
    communication_cost,
    diagonal_weights,
    evaluate_federation,
    raw_train_bytes,
    report_from_matrix,
    update_from_model,
)
from .models import TRAINERS, ModelFormatError, TrainerSpec, deserialize_model, serialize_model

logger = logging.getLogger("fedbotnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
MODEL_KINDS = ("tree", "knn", "logistic")
# distance-based and gradient-based models always see standardized features
_ALWAYS_SCALED = ("knn", "logistic")

DEFAULT_CONFIG = {
    "data": {"synthetic": {k: v for k, v in asdict(SyntheticFederationSpec()).items() if k != "seed"}},
    "label_mode": "multiclass",
    "split": {"train_fraction": 0.8, "stratified": True},
    "models": {"tree": {}, "knn": {"k": 5}, "logistic": {}},
    "scale_trees": False,
    "weights": {"accuracy": 0.5, "training_time": 0.5},
    "timing": "wall",
    "federate_model": "tree",
    "ensemble_weights": "equal",
    "seed": 0,
    "jobs": 1,
    "out": "runs/latest",
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key == "data":
            out["data"] = copy.deepcopy(value)  # data sources replace, never merge
        elif isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    if args.label_mode is not None:
        cfg["label_mode"] = args.label_mode
    if args.model:
        cfg["models"] = {k: cfg["models"].get(k, {}) for k in dict.fromkeys(args.model)}
    if args.weights is not None:
        w = ScoreWeights.parse(args.weights)
        cfg["weights"] = {"accuracy": w.accuracy_weight, "training_time": w.training_time_weight}
    if args.out is not None:
        cfg["out"] = args.out
    if getattr(args, "timing", None):
        cfg["timing"] = args.timing
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    data = cfg["data"]
    if not isinstance(data, dict) or len(data) != 1 or next(iter(data)) not in ("synthetic", "nbaiot_root"):
        raise ConfigError("data must name exactly one source: {'synthetic': {...}} or {'nbaiot_root': PATH}")
    if "synthetic" in data:
        try:
            SyntheticFederationSpec(**data["synthetic"], seed=0)
        except TypeError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None
    try:
        LabelMode.parse(cfg["label_mode"])
        SplitSpec(seed=0, **cfg["split"])
        ScoreWeights(cfg["weights"]["accuracy"], cfg["weights"]["training_time"])
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise ConfigError("jobs must be a positive integer")
    if cfg["timing"] not in TIMING_MODES:
        raise ConfigError(f"timing must be one of {TIMING_MODES}")
    if not cfg["models"]:
        raise ConfigError("no models selected")
    for kind, params in cfg["models"].items():
        if kind not in TRAINERS:
            raise ConfigError(f"unknown model {kind!r}; choose from {sorted(TRAINERS)}")
        if kind in _ALWAYS_SCALED and params.get("standardize") is False:
            raise ConfigError(f"{kind} requires standardized features")
        trainer_spec(cfg, kind)
    if cfg["ensemble_weights"] not in ("equal", "diagonal"):
        raise ConfigError("ensemble_weights must be 'equal' or 'diagonal'")


def trainer_spec(cfg: dict, kind: str) -> TrainerSpec:
    params = dict(cfg["models"][kind])
    if kind == "tree":
        params.setdefault("standardize", bool(cfg["scale_trees"]))
    try:
        return TrainerSpec(kind, params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"models.{kind}: {exc}") from None


def provenance(cfg: dict) -> dict:
    """Config as embedded in reports; the output path is omitted so runs compare byte for byte."""
    doc = {k: v for k, v in cfg.items() if k not in ("out", "jobs")}
    doc["standardized"] = {k: trainer_spec(cfg, k).build().get_params().get("standardize", False)
                           for k in cfg["models"]}
    return doc


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def atomic_write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{path}: missing {what}; run the earlier pipeline step first")
    return path


def _out(cfg) -> Path:
    return Path(cfg["out"])


def _write_config(cfg) -> None:
    atomic_write(_out(cfg) / "config.json", to_json(provenance(cfg)))


def load_nodes(cfg: dict):
    mode = LabelMode.parse(cfg["label_mode"])
    if "synthetic" in cfg["data"]:
        root = _require(_out(cfg) / "data", "synthetic data")
        nodes = load_federation(root, mode, require_complete=False, jobs=cfg["jobs"])
    else:
        nodes = load_federation(cfg["data"]["nbaiot_root"], mode, jobs=cfg["jobs"])
    if len(nodes) < 2:
        raise DataError("need at least two nodes")
    return nodes


def node_splits(cfg: dict, nodes):
    s = cfg["split"]
    return [split(ds, SplitSpec(s["train_fraction"], cfg["seed"] + ds.node_id, s["stratified"])) for ds in nodes]


def _model_path(cfg, kind, node_id) -> Path:
    return _out(cfg) / "models" / kind / f"node_{node_id}.fbm"


def load_models(cfg, kind, node_ids):
    models = []
    for i in node_ids:
        path = _require(_model_path(cfg, kind, i), f"{kind} model for node {i}")
        models.append(deserialize_model(path.read_bytes()))
    return models


def load_matrix(cfg, kind) -> AccuracyMatrix:
    path = _require(_out(cfg) / "cross_eval" / f"{kind}_matrix.json", f"{kind} accuracy matrix")
    return AccuracyMatrix.from_dict(json.loads(path.read_text())["matrix"])


def published_matrix(name: str) -> AccuracyMatrix:
    files = {"tree": "published_tree_matrix.csv", "knn": "published_knn_matrix.csv"}
    if name not in files:
        raise ConfigError(f"no bundled matrix {name!r}; choose from {sorted(files)}")
    text = resources.files("fedbotnet").joinpath("fixtures", files[name]).read_text()
    return AccuracyMatrix.from_csv(text, name)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: dict, args=None) -> list[Path]:
    if "synthetic" not in cfg["data"]:
        raise ConfigError("synth needs a synthetic data source in the config")
    spec = SyntheticFederationSpec(**cfg["data"]["synthetic"], seed=cfg["seed"])
    nodes = generate_synthetic_federation(spec)
    _write_config(cfg)
    written = []
    with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
        for files in pool.map(lambda ds: write_device_csvs(ds, _out(cfg) / "data" / f"device_{ds.node_id}"), nodes):
            written.extend(files)
    logger.info("wrote %d nodes x %d rows to %s", spec.n_nodes, spec.rows_per_node, _out(cfg) / "data")
    return written


def cmd_train(cfg: dict, args=None) -> dict:
    splits = node_splits(cfg, load_nodes(cfg))
    _write_config(cfg)
    results = {}
    for kind in cfg["models"]:
        trainer = trainer_spec(cfg, kind)

        def _one(tt, trainer=trainer, kind=kind):
            train, test = tt
            model, seconds = timed_train(trainer, train, cfg["timing"])
            atomic_write(_model_path(cfg, kind, train.node_id), serialize_model(model))
            return NodeMetrics(train.node_id, accuracy(model, test), seconds, train.n_rows)

        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            metrics = list(pool.map(_one, splits))
        atomic_write(_out(cfg) / "metrics" / f"{kind}.csv", metrics_to_csv(metrics))
        results[kind] = metrics
        logger.info("trained %s on %d nodes", kind, len(metrics))
    return results


def cmd_cross_eval(cfg: dict, args=None) -> dict:
    splits = node_splits(cfg, load_nodes(cfg))
    tests = [te for _, te in splits]
    _write_config(cfg)
    out = {}
    for kind in cfg["models"]:
        models = load_models(cfg, kind, [t.node_id for t in tests])
        m = accuracy_matrix(models, tests, kind, jobs=cfg["jobs"])
        base = _out(cfg) / "cross_eval" / f"{kind}_matrix"
        atomic_write(base.with_suffix(".csv"), m.to_csv())
        atomic_write(base.with_suffix(".json"), to_json({"config": provenance(cfg), "matrix": m.to_dict()}))
        out[kind] = m
    return out


def _load_metrics(cfg, kind):
    path = _require(_out(cfg) / "metrics" / f"{kind}.csv", f"{kind} node metrics")
    return metrics_from_csv(path.read_text())


def cmd_score(cfg: dict, args=None):
    if len(cfg["models"]) < 2:
        raise ConfigError("score compares models; select at least two")
    metrics = {kind: _load_metrics(cfg, kind) for kind in cfg["models"]}
    w = ScoreWeights(cfg["weights"]["accuracy"], cfg["weights"]["training_time"])
    card = score_models(metrics, w)
    _write_config(cfg)
    atomic_write(_out(cfg) / "score" / "scorecard.csv", card.to_csv())
    atomic_write(_out(cfg) / "score" / "scorecard.json", to_json({"config": provenance(cfg), **card.to_dict()}))
    return card


def cmd_federate(cfg: dict, args=None):
    fixture = getattr(args, "matrix", None) if args is not None else None
    target = _out(cfg) / "federation"
    if fixture:
        matrix = published_matrix(fixture) if not Path(fixture).exists() else \
            AccuracyMatrix.from_csv(Path(fixture).read_text())
        report = report_from_matrix(matrix)
        atomic_write(target / "report.csv", report.to_csv())
        atomic_write(target / "report.json", to_json({"config": provenance(cfg), "source_matrix": str(fixture),
                                                            **report.to_dict()}))
        return report

    kind = cfg["federate_model"]
    if kind not in TRAINERS:
        raise ConfigError(f"federate_model {kind!r} is not a known model")
    splits = node_splits(cfg, load_nodes(cfg))
    tests = [te for _, te in splits]
    node_ids = [t.node_id for t in tests]
    metrics = {m.node_id: m for m in _load_metrics(cfg, kind)}
    if sorted(metrics) != node_ids:
        raise DataError(f"{kind} metrics cover nodes {sorted(metrics)}, data has {node_ids}")
    # each node ships only its serialized model and scalar metadata
    updates = [update_from_model(m, metrics[i].training_time, metrics[i].train_rows)
               for i, m in zip(node_ids, load_models(cfg, kind, node_ids))]
    matrix = load_matrix(cfg, kind)
    weights = diagonal_weights(matrix) if cfg["ensemble_weights"] == "diagonal" else None
    ensemble = aggregate(updates, weights)
    comm = communication_cost(updates, [raw_train_bytes(tr) for tr, _ in splits])
    report = evaluate_federation(ensemble, matrix, tests, comm)
    _write_config(cfg)
    atomic_write(target / "report.csv", report.to_csv())
    atomic_write(target / "report.json", to_json({"config": provenance(cfg), "model": kind, **report.to_dict()}))
    return report


def cmd_report(cfg: dict, args=None) -> Path:
    out = _out(cfg)
    rows = []
    for kind in cfg["models"]:
        for m in _load_metrics(cfg, kind):
            node = f"node_{m.node_id}"
            rows += [(kind, node, "accuracy", m.accuracy), (kind, node, "training_time", m.training_time),
                     (kind, node, "train_rows", m.train_rows)]
        mpath = out / "cross_eval" / f"{kind}_matrix.json"
        if mpath.exists():
            matrix = load_matrix(cfg, kind)
            for i, row in zip(matrix.node_ids, matrix.values.tolist()):
                rows += [(kind, f"node_{i}", f"accuracy_on_node_{j}", v) for j, v in zip(matrix.node_ids, row)]
    spath = out / "score" / "scorecard.json"
    if spath.exists():
        for entry in json.loads(spath.read_text())["models"]:
            rows += [(entry["model"], "all", k, v) for k, v in entry.items() if k != "model"]
    fpath = out / "federation" / "report.json"
    if fpath.exists():
        doc = json.loads(fpath.read_text())
        label = f"ensemble_{doc.get('model', 'fixture')}"
        for r in doc["nodes"]:
            rows.append((label, f"node_{r['node']}", "avg_accuracy_per_node", r["avg_accuracy_per_node"]))
            if r["ensemble_accuracy"] is not None:
                rows.append((label, f"node_{r['node']}", "ensemble_accuracy", r["ensemble_accuracy"]))
        if doc.get("communication"):
            rows += [(label, "all", k, v) for k, v in doc["communication"].items()]
    path = out / "report" / "long.csv"
    atomic_write(path, long_format_csv(rows))
    return path


def cmd_run(cfg: dict, args=None) -> None:
    if "synthetic" in cfg["data"]:
        cmd_synth(cfg)
    cmd_train(cfg)
    cmd_cross_eval(cfg)
    if len(cfg["models"]) >= 2:
        cmd_score(cfg)
    if cfg["federate_model"] in cfg["models"]:
        cmd_federate(cfg)
    cmd_report(cfg)


COMMANDS = {
    "synth": (cmd_synth, "write a synthetic federation as per-device CSV files"),
    "train": (cmd_train, "train every selected model on every node; write models and node metrics"),
    "cross-eval": (cmd_cross_eval, "evaluate each node model on every node's test split"),
    "score": (cmd_score, "rank models by the weighted accuracy / training-time score"),
    "federate": (cmd_federate, "aggregate node models by majority vote and compare with row averages"),
    "report": (cmd_report, "collect all outputs into a long-format CSV"),
    "run": (cmd_run, "synth (if synthetic), train, cross-eval, score, federate and report"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker threads for per-node work")
    common.add_argument("--label-mode", choices=[m.value for m in LabelMode])
    common.add_argument("--model", action="append", choices=MODEL_KINDS, help="repeatable; default: all")
    common.add_argument("--weights", metavar="ACC:TIME", help="score weights, e.g. 0.5:0.5")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--timing", choices=TIMING_MODES, help="wall-clock or deterministic work-unit timing")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fedbotnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "federate":
            p.add_argument("--matrix", help="report row averages of a stored matrix CSV, or a bundled "
                                            "published matrix: 'tree' or 'knn'")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command][0](cfg, args)
    except (ConfigError,) as exc:
        print(f"fedbotnet: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, OSError) as exc:
        print(f"fedbotnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"fedbotnet: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"fedbotnet: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
