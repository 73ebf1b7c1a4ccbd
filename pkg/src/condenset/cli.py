"""Command-line interface: run orchestration and artifact plumbing.

Subcommands: condense, eval, baseline, diagnose, continual. Configuration is
a flat key/value text file with dotted section prefixes (data.*, condense.*,
eval.*, run.*); every key can be overridden with a `--section.key value`
flag. Log output is one JSON record per line; every artifact embeds the full
resolved configuration and its hash.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, fields

import numpy as np
from threadpoolctl import threadpool_limits

from . import convnet, data, model_queue
from .condense import CondenseConfig, SyntheticSet, condense
from .errors import CondensetError, ConfigError, DataFormatError
from .estimators import ForgettingCoreset, HerdingCoreset, IDMCondenser, RandomCoreset
from .evaluation import (
    CoresetConfig,
    EvalConfig,
    consistency_ratio,
    continual_harness,
    evaluate,
    select_forgetting,
    select_herding,
    select_random,
)

OUT_ROOT_ENV = "CONDENSET_OUT_ROOT"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3


def log_event(event: str, **kw) -> None:
    record = {"event": event, "ts": round(time.time(), 3)}
    record.update(kw)
    print(json.dumps(record), flush=True)


# ---------------------------------------------------------------------------
# configuration: flat dotted keys


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config_file(path) -> dict:
    cfg = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = line.split("=", 1)
                cfg[key.strip()] = parse_value(value.strip())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return cfg


def apply_cli_overrides(cfg: dict, extra: list[str]) -> dict:
    """Consume trailing `--section.key value` pairs."""
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument {token!r}; overrides look like "
                              f"--section.key value")
        if i + 1 >= len(extra):
            raise ConfigError(f"override {token!r} is missing a value")
        cfg[token[2:]] = parse_value(extra[i + 1])
        i += 2
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def section(cfg: dict, prefix: str) -> dict:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def build_dataclass(cls, values: dict, prefix: str):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown {prefix} key(s): "
                          + ", ".join(f"{prefix}.{k}" for k in unknown))
    coerced = dict(values)
    if "augment_strategies" in coerced and isinstance(coerced["augment_strategies"], str):
        coerced["augment_strategies"] = tuple(
            s.strip() for s in coerced["augment_strategies"].split(",") if s.strip()
        )
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"bad {prefix} configuration: {exc}") from exc


# ---------------------------------------------------------------------------
# dataset construction


def require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing required config key: {key}")
    return cfg[key]


def load_datasets(cfg: dict) -> tuple[data.LabeledDataset, data.LabeledDataset]:
    """Build (train, test) from the data.* section."""
    kind = require(cfg, "data.kind")
    seed = int(cfg.get("data.seed", 0))
    if kind in ("blobs", "digits16"):
        classes = int(cfg.get("data.classes", 10))
        hw = int(cfg.get("data.hw", 16))
        train = data.make_toy(classes=classes, per_class=int(cfg.get("data.per_class", 500)),
                              hw=hw, kind=kind, seed=seed, split="train")
        test = data.make_toy(classes=classes,
                             per_class=int(cfg.get("data.test_per_class", 100)),
                             hw=hw, kind=kind, seed=seed, split="test")
        normalize_default = False
    elif kind == "idx":
        train = data.load_idx(require(cfg, "data.images"), require(cfg, "data.labels"))
        test = data.load_idx(require(cfg, "data.test_images"),
                             require(cfg, "data.test_labels"))
        normalize_default = True
    elif kind == "cifar":
        paths = require(cfg, "data.paths")
        test_paths = require(cfg, "data.test_paths")
        split = lambda p: [s.strip() for s in p.split(",")] if isinstance(p, str) else p
        train = data.load_cifar_binary(split(paths))
        test = data.load_cifar_binary(split(test_paths))
        normalize_default = True
    else:
        raise ConfigError(f"data.kind must be blobs, digits16, idx, or cifar; got {kind!r}")

    if bool(cfg.get("data.normalize", normalize_default)):
        train = data.normalize(train)
        test = data.normalize_with(test, train.mean, train.std)
    return train, test


def resolve_out_dir(args_out, command: str) -> str:
    if args_out:
        out = args_out
    else:
        root = os.environ.get(OUT_ROOT_ENV, "runs")
        out = os.path.join(root, f"{command}-{time.strftime('%Y%m%d-%H%M%S')}")
    os.makedirs(out, exist_ok=True)
    return out


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_condense(args, cfg: dict) -> int:
    out = resolve_out_dir(args.out, "condense")
    chash = config_hash(cfg)
    write_json(os.path.join(out, "config.json"), {"config": cfg, "config_hash": chash})
    train, _ = load_datasets(cfg)
    ccfg = build_dataclass(CondenseConfig, section(cfg, "condense"), "condense")
    log_event("condense.start", out=out, config_hash=chash,
              classes=train.class_count, train_size=len(train))

    metrics_path = os.path.join(out, "metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as mfh:
        def on_metrics(record):
            mfh.write(json.dumps(record) + "\n")
            if record["iter"] % max(1, ccfg.iterations // 20) == 0:
                log_event("condense.progress", **record)

        result = condense(train, ccfg, out_dir=out, on_metrics=on_metrics)

    synthetic = result.synthetic
    set_path = os.path.join(out, "condensed.dcs")
    synthetic.save(set_path, extra={"config": cfg, "config_hash": chash,
                                    "elapsed_sec": result.elapsed_sec})
    data.export_image_grid(synthetic.images.data, os.path.join(out, "grid.ppm"),
                           per_row=synthetic.ipc, mean=synthetic.mean, std=synthetic.std)
    model_queue.save_queue(os.path.join(out, "queue"), result.queue)
    log_event("condense.done", out=out, elapsed_sec=round(result.elapsed_sec, 2),
              images=int(synthetic.images.shape[0]), config_hash=chash)
    return EXIT_OK


def _load_condensed(path) -> tuple[SyntheticSet, dict]:
    try:
        return SyntheticSet.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"condensed set not found: {path}") from exc


def _test_split_for(header: dict, cfg: dict) -> data.LabeledDataset:
    _, test = load_datasets(cfg)
    return test


def cmd_eval(args, cfg: dict) -> int:
    synthetic, header = _load_condensed(args.condensed)
    test = _test_split_for(header, cfg)
    ecfg = build_dataclass(EvalConfig, section(cfg, "eval"), "eval")
    if args.runs:
        ecfg = EvalConfig(**{**asdict(ecfg), "runs": args.runs})
    images, labels = synthetic.to_arrays()
    report = evaluate(images, labels, test.images, test.labels, ecfg,
                      num_classes=test.class_count)
    payload = {
        "report": asdict(report),
        "condensed_config_hash": header.get("config_hash"),
        "eval_config_hash": config_hash(cfg),
    }
    out = resolve_out_dir(args.out, "eval")
    write_json(os.path.join(out, "report.json"), payload)
    log_event("eval.done", mean=report.mean, std=report.std,
              runs=ecfg.runs, out=out,
              condensed_config_hash=header.get("config_hash"))
    return EXIT_OK


_SELECTORS = {"random": select_random, "herding": select_herding,
              "forgetting": select_forgetting}


def cmd_baseline(args, cfg: dict) -> int:
    if args.method not in _SELECTORS:
        raise ConfigError(f"unknown baseline method {args.method!r}; "
                          f"choose from {sorted(_SELECTORS)}")
    train, test = load_datasets(cfg)
    ipc = int(cfg.get("baseline.ipc", 10))
    ccfg = build_dataclass(CoresetConfig, section(cfg, "coreset"), "coreset")
    if args.method == "random":
        idx = select_random(train.labels, train.class_count, ipc, ccfg.seed)
    elif args.method == "herding":
        idx = select_herding(train.images, train.labels, train.class_count, ipc, ccfg)
    else:
        idx = select_forgetting(train.images, train.labels, train.class_count, ipc, ccfg)

    out = resolve_out_dir(args.out, f"baseline-{args.method}")
    chash = config_hash(cfg)
    order = np.argsort(train.labels[idx], kind="stable")
    idx = idx[order]
    from . import tensor as T

    coreset = SyntheticSet(T.Tensor(train.images[idx].copy(), requires_grad=True),
                           train.class_count, ipc, train.mean, train.std)
    coreset.save(os.path.join(out, "coreset.dcs"),
                 extra={"config": cfg, "config_hash": chash, "method": args.method,
                        "indices": idx.tolist()})
    ecfg = build_dataclass(EvalConfig, section(cfg, "eval"), "eval")
    report = evaluate(train.images[idx], train.labels[idx], test.images, test.labels,
                      ecfg, num_classes=test.class_count)
    write_json(os.path.join(out, "report.json"),
               {"method": args.method, "report": asdict(report), "config_hash": chash})
    log_event("baseline.done", method=args.method, mean=report.mean, std=report.std,
              out=out, config_hash=chash)
    return EXIT_OK


def cmd_diagnose(args, cfg: dict) -> int:
    synthetic, header = _load_condensed(args.condensed)
    train, _ = load_datasets(cfg)
    k_list = [int(k) for k in args.k.split(",") if k.strip()]
    if not k_list:
        raise ConfigError("diagnose requires at least one k")

    if args.queue:
        queue = model_queue.load_queue(args.queue)
        params = model_queue.newest_trained_entry(queue).params
        extractor = "queue"
    else:
        ecfg = build_dataclass(EvalConfig, section(cfg, "eval"), "eval")
        from .evaluation import _train_fresh_net

        params = _train_fresh_net(train.images, train.labels, train.class_count,
                                  ecfg, ecfg.seed)
        extractor = "fresh"

    images, labels = synthetic.to_arrays()
    ratios = {str(k): consistency_ratio(images, labels, train.images, train.labels,
                                        params, k) for k in k_list}
    payload = {
        "ratios": ratios,
        "extractor": extractor,
        "condensed_config_hash": header.get("config_hash"),
        "config_hash": config_hash(cfg),
    }
    out = resolve_out_dir(args.out, "diagnose")
    write_json(os.path.join(out, "consistency.json"), payload)
    log_event("diagnose.done", out=out, **{f"k{k}": v for k, v in ratios.items()})
    return EXIT_OK


def _continual_strategy(name: str, cfg: dict, mem_ipc: int):
    if name == "idm":
        ccfg = build_dataclass(CondenseConfig, section(cfg, "condense"), "condense")
        kwargs = {k: v for k, v in asdict(ccfg).items()
                  if k in IDMCondenser().get_params()}
        kwargs["ipc"] = mem_ipc
        return IDMCondenser(**kwargs)
    coreset = build_dataclass(CoresetConfig, section(cfg, "coreset"), "coreset")
    if name == "random":
        return RandomCoreset(ipc=mem_ipc, seed=coreset.seed)
    common = dict(ipc=mem_ipc, batch=coreset.batch, lr=coreset.lr,
                  momentum=coreset.momentum, weight_decay=coreset.weight_decay,
                  model_depth=coreset.model_depth, model_width=coreset.model_width,
                  seed=coreset.seed)
    if name == "herding":
        return HerdingCoreset(epochs=coreset.epochs, **common)
    if name == "forgetting":
        return ForgettingCoreset(epochs=coreset.forgetting_epochs, **common)
    raise ConfigError(f"unknown continual strategy {name!r}")


def cmd_continual(args, cfg: dict) -> int:
    train, test = load_datasets(cfg)
    strategy = _continual_strategy(args.strategy, cfg, args.mem_ipc)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    ecfg = build_dataclass(EvalConfig, section(cfg, "eval"), "eval")
    result = continual_harness(strategy, train, test, steps=args.steps,
                               mem_ipc=args.mem_ipc, seeds=seeds, eval_cfg=ecfg)
    out = resolve_out_dir(args.out, f"continual-{args.strategy}")
    result["strategy"] = args.strategy
    result["config_hash"] = config_hash(cfg)
    write_json(os.path.join(out, "curves.json"), result)
    with open(os.path.join(out, "curves.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed"] + [f"stage_{i + 1}" for i in range(args.steps)])
        for seed, row in zip(seeds, result["curves"]):
            writer.writerow([seed] + [f"{v:.6f}" for v in row])
        writer.writerow(["mean"] + [f"{v:.6f}" for v in result["mean_curve"]])
    log_event("continual.done", strategy=args.strategy, out=out,
              final_mean=result["mean_curve"][-1])
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "condense": cmd_condense,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "diagnose": cmd_diagnose,
    "continual": cmd_continual,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condenset",
        description="Dataset condensation by distribution matching, with "
                    "evaluation, baselines, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help=f"output directory (default under ${OUT_ROOT_ENV})")
        p.add_argument("--seed", type=int, help="shorthand for --run.seed")
        p.add_argument("--threads", type=int, default=0,
                       help="BLAS thread cap (0 = library default)")

    common(sub.add_parser("condense", help="synthesize a condensed set"))

    p = sub.add_parser("eval", help="train fresh models on a condensed set")
    common(p)
    p.add_argument("--condensed", required=True, help="path to a .dcs file")
    p.add_argument("--runs", type=int, help="override eval.runs")

    p = sub.add_parser("baseline", help="coreset selection baselines")
    common(p)
    p.add_argument("--method", required=True, help="random | herding | forgetting")

    p = sub.add_parser("diagnose", help="feature-space class consistency")
    common(p)
    p.add_argument("--condensed", required=True)
    p.add_argument("--k", default="5,10,20,50", help="comma-separated neighbour counts")
    p.add_argument("--queue", help="queue snapshot dir for the extractor model")

    p = sub.add_parser("continual", help="class-incremental memory comparison")
    common(p)
    p.add_argument("--strategy", required=True, help="idm | random | herding | forgetting")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--mem-ipc", type=int, default=20)
    p.add_argument("--seeds", default="0,1,2,3,4")

    return parser


def resolve_config(args, extra) -> dict:
    cfg = load_config_file(args.config) if args.config else {}
    cfg = apply_cli_overrides(cfg, extra)
    if args.seed is not None:
        cfg["run.seed"] = args.seed
    if "run.seed" in cfg:
        cfg.setdefault("condense.seed", cfg["run.seed"])
        cfg.setdefault("eval.seed", cfg["run.seed"])
        cfg.setdefault("coreset.seed", cfg["run.seed"])
        cfg.setdefault("data.seed", cfg["run.seed"])
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = resolve_config(args, extra)
        limit = args.threads if args.threads else None
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        log_event("error", category="config", message=str(exc))
        return EXIT_CONFIG
    except DataFormatError as exc:
        log_event("error", category="format", message=str(exc))
        return EXIT_FORMAT
    except CondensetError as exc:
        log_event("error", category="runtime", message=str(exc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
