"""Command-line front end.

Everything that affects results lives in a JSON config file; flags only pick
the command, the config path and an optional ``--seed`` override::

    pmiprint train --config run.json
    pmiprint attack --config run.json
    pmiprint fingerprint --config run.json
    pmiprint report out/report.json
    pmiprint diff out/model.bin out/attacked_model.bin
    pmiprint selfcheck
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import selfcheck
from .dataset import (Dataset, SplitPools, generate_synthetic, load_csv, load_idx,
                      split_pools)
from .errors import ConfigError, PmiError
from .nn import (MlpModel, TrainConfig, fine_tune, finetune_config, load_model,
                 model_to_bytes, prune, train)
from .pmi import infer_from_features, read_logit_file
from .protocol import FingerprintReport, ProtocolConfig, TrialRecord, run_all

logger = logging.getLogger("pmiprint")

DATA_SOURCES = ("synthetic", "idx", "csv", "logits")


# --------------------------------------------------------------------------- config

def load_config(path, seed: int | None = None) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = copy.deepcopy(cfg)
    base = Path(path).resolve().parent
    if seed is not None:
        cfg["seed"] = seed
    return resolve_config(cfg, base)


def _resolve_path(base: Path, p: str) -> str:
    return str(p if os.path.isabs(p) else base / p)


def resolve_config(cfg: dict, base: Path = Path(".")) -> dict:
    """Fill in derived seeds and defaults, resolve relative paths, validate."""
    seed = int(cfg.setdefault("seed", 0))
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    source = cfg.get("dataset")
    if not isinstance(source, dict) or len(source) != 1 or next(iter(source)) not in DATA_SOURCES:
        raise ConfigError(f"dataset must name exactly one of {', '.join(DATA_SOURCES)}")
    kind, spec = next(iter(source.items()))
    if kind == "synthetic":
        spec.setdefault("seed", seed)
    elif kind == "idx":
        for key in ("images", "labels"):
            if key not in spec:
                raise ConfigError(f"idx dataset needs '{key}'")
            spec[key] = _resolve_path(base, spec[key])
            if not os.path.exists(spec[key]):
                raise FileNotFoundError(f"{spec[key]} does not exist")
    elif kind == "csv":
        if "path" not in spec:
            raise ConfigError("csv dataset needs 'path'")
        spec["path"] = _resolve_path(base, spec["path"])
        if not os.path.exists(spec["path"]):
            raise FileNotFoundError(f"{spec['path']} does not exist")
    elif kind == "logits":
        for trial in spec.get("trials", []):
            trial["files"] = [_resolve_path(base, p) for p in trial["files"]]
            for p in trial["files"]:
                if not os.path.exists(p):
                    raise FileNotFoundError(f"{p} does not exist")
    split = cfg.setdefault("split", {})
    split.setdefault("train_fraction", 5 / 7)
    split.setdefault("seed", seed + 1)
    split.setdefault("stratify", False)
    cfg.setdefault("train", {}).setdefault("seed", seed + 2)
    cfg.setdefault("protocol", {}).setdefault("base_seed", seed + 3)
    attack = cfg.get("attack")
    if attack is not None:
        if attack.get("kind") not in ("prune", "finetune"):
            raise ConfigError("attack.kind must be 'prune' or 'finetune'")
        attack.setdefault("seed", seed + 4)
    out = cfg.setdefault("output_dir", "out")
    cfg["output_dir"] = _resolve_path(base, out)
    for key in ("model", "manifest"):
        if cfg.get(key):
            cfg[key] = _resolve_path(base, cfg[key])
    # construct once so bad values fail before any work is done
    train_config(cfg)
    protocol_config(cfg)
    return cfg


def _build(cls, section: dict, what: str):
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from exc


def train_config(cfg: dict) -> TrainConfig:
    return _build(TrainConfig, cfg["train"], "train")


def protocol_config(cfg: dict, **override) -> ProtocolConfig:
    section = dict(cfg["protocol"], **override)
    if section.get("classes") is not None:
        section["classes"] = tuple(section["classes"])
    return _build(ProtocolConfig, section, "protocol")


def finetune_train_config(cfg: dict) -> TrainConfig:
    attack = cfg["attack"]
    tc = finetune_config(train_config(cfg))
    extra = {k: attack[k] for k in ("epochs", "learning_rate", "batch_size") if k in attack}
    return TrainConfig(**{**asdict(tc), **extra, "seed": attack["seed"]})


def load_dataset(cfg: dict) -> Dataset:
    kind, spec = next(iter(cfg["dataset"].items()))
    if kind == "synthetic":
        params = {k: spec[k] for k in ("seed", "c", "d", "per_class", "spread") if k in spec}
        missing = {"c", "d", "per_class", "spread"} - set(params)
        if missing:
            raise ConfigError(f"synthetic dataset missing {sorted(missing)}")
        return generate_synthetic(**params, separation=spec.get("separation", 3.0))
    if kind == "idx":
        return load_idx(spec["images"], spec["labels"], spec.get("c"))
    if kind == "csv":
        return load_csv(spec["path"])
    raise ConfigError("this command needs a sample dataset, not logit files")


def load_pools(cfg: dict) -> SplitPools:
    split = cfg["split"]
    pools = split_pools(load_dataset(cfg), split["train_fraction"], split["seed"],
                        stratify=split["stratify"])
    manifest = cfg.get("manifest")
    if manifest:
        with open(manifest) as f:
            pools = pools.with_consumed(json.load(f)["consumed"])
    return pools


def model_path(cfg: dict) -> str:
    return cfg.get("model") or os.path.join(cfg["output_dir"], "model.bin")


# --------------------------------------------------------------------------- output

def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_atomic(path, data: bytes | str) -> None:
    """Write through a temporary file so a failure leaves no partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def csv_text(header: list[str], rows) -> str:
    return "\n".join([",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]) + "\n"


# --------------------------------------------------------------------------- commands

def cmd_train(cfg: dict) -> list[str]:
    if "logits" in cfg["dataset"]:
        raise ConfigError("train needs a sample dataset, not logit files")
    pools = load_pools(cfg)
    tc = train_config(cfg)
    history: list[dict] = []
    model = train(pools, tc, history)
    out = cfg["output_dir"]
    paths = [os.path.join(out, name) for name in ("model.bin", "train_log.csv", "run.json")]
    write_atomic(paths[1], csv_text(
        ["epoch", "loss", "holdout_accuracy"],
        ([h["epoch"], h["loss"], h["holdout_accuracy"]] for h in history)))
    resolved = {
        "seed": cfg["seed"],
        "dataset": cfg["dataset"],
        "split": cfg["split"],
        "train": asdict(tc),
        "train_size": len(pools.train),
        "holdout_size": len(pools.holdout),
    }
    write_atomic(paths[2], json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    write_atomic(paths[0], model_to_bytes(model))
    return paths


def cmd_attack(cfg: dict) -> list[str]:
    attack = cfg.get("attack")
    if attack is None:
        raise ConfigError("config has no 'attack' section")
    model = load_model(model_path(cfg))
    out = cfg["output_dir"]
    model_out = os.path.join(out, "attacked_model.bin")
    if attack["kind"] == "prune":
        if "rate" not in attack:
            raise ConfigError("prune attack needs 'rate'")
        write_atomic(model_out, model_to_bytes(prune(model, attack["rate"])))
        return [model_out]
    pools = load_pools(cfg)
    tuned, new_pools = fine_tune(model, pools, attack.get("fraction", 0.2),
                                 finetune_train_config(cfg), attack["seed"])
    consumed = sorted(new_pools.consumed - pools.consumed)
    manifest_out = os.path.join(out, "consumed.json")
    write_atomic(manifest_out, json.dumps(
        {"consumed": sorted(new_pools.consumed), "added": consumed}, indent=1) + "\n")
    write_atomic(model_out, model_to_bytes(tuned))
    return [model_out, manifest_out]


def _logit_report(cfg: dict) -> FingerprintReport:
    trials = cfg["dataset"]["logits"].get("trials", [])
    if not trials:
        raise ConfigError("logit mode needs at least one trial")
    matrices = [[read_logit_file(p, i) for i, p in enumerate(t["files"])] for t in trials]
    shapes = {f.rows.shape for group in matrices for f in group}
    if len(shapes) != 1:
        raise ConfigError(f"logit files disagree on (n, c): {sorted(shapes)}")
    (n, _), = shapes
    ms = {len(group) for group in matrices}
    if len(ms) != 1 or ms == {1}:
        raise ConfigError("every trial needs the same number (>= 2) of logit files")
    counts = {}
    for t in trials:
        counts[t["class"]] = counts.get(t["class"], 0) + 1
    if len(set(counts.values())) != 1:
        raise ConfigError("every class needs the same number of trials")
    pcfg = protocol_config(cfg, m=ms.pop(), n=n, t=next(iter(counts.values())), classes=None)
    records = []
    seen = dict.fromkeys(counts, 0)
    for t, group in zip(trials, matrices):
        seed = pcfg.base_seed + seen[t["class"]]
        seen[t["class"]] += 1
        records.append(TrialRecord(int(t["class"]), seed, infer_from_features(group, seed),
                                   int(t.get("member", -1))))
    per_class = {r: sum(rec.success for rec in records if rec.cls == r) / pcfg.t
                 for r in sorted(counts)}
    return FingerprintReport(pcfg, per_class,
                             tuple(sorted(records, key=lambda rec: (rec.cls, rec.seed))))


def cmd_fingerprint(cfg: dict) -> list[str]:
    out = cfg["output_dir"]
    if "logits" in cfg["dataset"]:
        report = _logit_report(cfg)
        rows = [[report.config.m, report.config.n, 0.0, r, acc]
                for r, acc in report.per_class.items()]
    else:
        model = load_model(model_path(cfg))
        pools = load_pools(cfg)
        report = run_all(model, pools, protocol_config(cfg))
        sweep = cfg.get("sweep")
        if sweep:
            rows = []
            for rate in sweep.get("prune_rates", [0.0]):
                pruned = prune(model, rate)
                for m in sweep.get("m", [report.config.m]):
                    for n in sweep.get("n", [report.config.n]):
                        rep = run_all(pruned, pools, protocol_config(cfg, m=m, n=n))
                        rows += [[m, n, float(rate), r, acc] for r, acc in rep.per_class.items()]
        else:
            rows = [[report.config.m, report.config.n, 0.0, r, acc]
                    for r, acc in report.per_class.items()]
    paths = [os.path.join(out, name) for name in ("report.txt", "report.json", "accuracy.csv")]
    write_atomic(paths[0], report.format_table())
    write_atomic(paths[1], report.to_json())
    write_atomic(paths[2], csv_text(["m", "n", "prune_rate", "r", "acc_r"], rows))
    return paths


def model_diff(a: MlpModel, b: MlpModel) -> dict:
    if (a.d, a.h, a.c) != (b.d, b.h, b.c):
        raise ConfigError(f"architectures differ: {(a.d, a.h, a.c)} vs {(b.d, b.h, b.c)}")
    wa = np.concatenate([a.W1.ravel(), a.W2.ravel()])
    wb = np.concatenate([b.W1.ravel(), b.W2.ravel()])
    ba = np.concatenate([a.b1, a.b2])
    bb = np.concatenate([b.b1, b.b2])
    return {
        "weights": int(wa.size),
        "weights_changed": int(np.sum(wa != wb)),
        "weights_zeroed": int(np.sum((wa != 0) & (wb == 0))),
        "biases_changed": int(np.sum(ba != bb)),
    }


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmiprint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "attack", "fingerprint"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
    p = sub.add_parser("report", help="pretty-print a structured report")
    p.add_argument("path")
    p = sub.add_parser("diff", help="compare the parameters of two model files")
    p.add_argument("a")
    p.add_argument("b")
    sub.add_parser("selfcheck", help="run the randomized oracle cross-checks")
    return parser


def _exit_code(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, PmiError):
        return exc.exit_code, exc.code
    if isinstance(exc, OSError):
        return 4, "IO"
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return 2, "CONFIG"
    return 1, "ERROR"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selfcheck":
            return 0 if selfcheck.run() else 1
        if args.command == "report":
            with open(args.path) as f:
                sys.stdout.write(FingerprintReport.from_json(f.read()).format_table())
            return 0
        if args.command == "diff":
            diff = model_diff(load_model(args.a), load_model(args.b))
            print(" ".join(f"{k}={v}" for k, v in diff.items()))
            return 0
        cfg = load_config(args.config, args.seed)
        command = {"train": cmd_train, "attack": cmd_attack, "fingerprint": cmd_fingerprint}
        for path in command[args.command](cfg):
            print(path)
        if args.command == "fingerprint":
            with open(os.path.join(cfg["output_dir"], "report.txt")) as f:
                sys.stdout.write(f.read())
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code, name = _exit_code(exc)
        msg = str(exc).replace("\n", " ")
        print(f"error code={name} exit={code} type={type(exc).__name__} msg={msg}",
              file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
