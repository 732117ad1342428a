"""Command-line entry point.

Every command writes into ``--out-dir`` (default ``runs/<command>``) and
records the fully resolved configuration, derived seeds and the element and
enthalpy table versions in ``run.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import zlib
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import DEFAULTS, expand_design_matrix, make_fit_predict
from .chem import (
    CompositionError,
    UnknownElementError,
    canonical_string,
    default_element_table,
    default_pair_table,
    load_element_table,
    load_pair_table,
    parse_composition,
)
from .datagen import GeneratorConfig, generate_corpus
from .dataset import DatasetError, Row, feature_array, ingest_dataset, target_array
from .encoder import (
    ALL,
    EncoderConfig,
    Model,
    TrainConfig,
    finetune,
    load_model,
    predict,
    pretrain,
    pretraining_texts,
    save_model,
    training_log,
)
from .evaluate import (
    cross_validate,
    dataset_summary,
    metrics,
    write_report,
    write_residuals,
    write_summary,
    zscore_outliers,
    zscores,
)
from .features import FEATURE_NAMES, FeatureVector, write_feature_csv
from .interpret import element_attention, export_attention

log = logging.getLogger("heaformer")

DEFAULT_CONFIG = {
    "seed": 0,
    "target": "target",
    "folds": 5,
    "use_features": True,
    "element_table": None,
    "pair_table": None,
    "encoder": asdict(EncoderConfig()),
    "train": {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)},
    "generator": {
        "corpus_size": 6000,
        "equimolar_fraction": 0.5,
        "element_count_range": [4, 8],
        "coefficient_range": [0.1, 2.0],
        "element_weights": {},
        "shards": 1,
    },
    "baseline": {k: dict(v) for k, v in DEFAULTS.items()},
}


def substream_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed for a named component."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path, encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ValueError(f"{path}: config must be a mapping")
        cfg = _merge(cfg, user)
    return cfg


def _parse_layers(text: str):
    if text is None or text.strip().lower() == ALL:
        return ALL
    if not text.strip():
        return set()
    return {int(v) for v in text.split(",")}


def _tables(cfg):
    t = load_element_table(cfg["element_table"]) if cfg.get("element_table") else default_element_table()
    p = load_pair_table(cfg["pair_table"]) if cfg.get("pair_table") else default_pair_table()
    return t, p


def _encoder_config(cfg) -> EncoderConfig:
    return EncoderConfig(**cfg["encoder"])


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(**cfg["train"])


def _record_run(out: Path, command: str, cfg: dict, seeds: dict, tables) -> None:
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "seeds": seeds,
        "element_table": tables[0].version,
        "pair_table": tables[1].version,
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=list) + "\n", encoding="utf-8")
    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True), encoding="utf-8")


def _rows(args, cfg, tables, need_target=True):
    target = cfg["target"] if need_target else None
    return ingest_dataset(args.input, target, *tables)


# ---------------------------------------------------------------- commands

def cmd_featurize(args, cfg, out, tables):
    rows = _rows(args, cfg, tables, need_target=False)
    dest = Path(args.output) if args.output else out / "features.csv"
    write_feature_csv(dest, [(r.composition, FeatureVector(*r.features)) for r in rows])
    return {}


def cmd_stats(args, cfg, out, tables):
    rows = _rows(args, cfg, tables)
    summary = dataset_summary(
        [r.composition for r in rows], target_array(rows), feature_array(rows), FEATURE_NAMES, bins=args.bins
    )
    write_summary(out, summary)
    return {}


def cmd_outliers(args, cfg, out, tables):
    rows = _rows(args, cfg, tables)
    y = target_array(rows)
    z = zscores(y)
    hits = zscore_outliers(y, args.threshold)
    with open(out / "outliers.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "line", "composition", "value", "z"])
        for i, zi in hits:
            w.writerow([i, rows[i].line, canonical_string(rows[i].composition), repr(y[i]), repr(zi)])
    with open(out / "zscores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "value", "z"])
        for i in range(len(y)):
            w.writerow([i, repr(y[i]), repr(float(z[i]))])
    return {}


def cmd_gen_corpus(args, cfg, out, tables):
    g = cfg["generator"]
    seed = substream_seed(cfg["seed"], "corpus")
    gcfg = GeneratorConfig(
        element_weights=dict(g["element_weights"]),
        corpus_size=int(g["corpus_size"]),
        equimolar_fraction=float(g["equimolar_fraction"]),
        element_count_range=tuple(g["element_count_range"]),
        coefficient_range=tuple(g["coefficient_range"]),
        seed=seed,
    )
    corpus = generate_corpus(gcfg, *tables, shards=int(g.get("shards", 1)))
    dest = Path(args.output) if args.output else out / "corpus.csv"
    write_feature_csv(dest, corpus)
    return {"corpus": seed}


def _read_corpus(path, tables):
    rows = ingest_dataset(path, None, *tables)
    return [(canonical_string(r.composition), FeatureVector(*r.features)) for r in rows]


def cmd_pretrain(args, cfg, out, tables):
    corpus = _read_corpus(args.corpus, tables)
    ecfg = _encoder_config(cfg)
    ecfg.seed = substream_seed(cfg["seed"], "init")
    tcfg = _train_config(cfg)
    tcfg.seed = substream_seed(cfg["seed"], "pretrain")
    texts, scaler = pretraining_texts(corpus, cfg["use_features"])
    state, vocab, hist = pretrain(texts, ecfg, tcfg)
    save_model(Model(state, vocab, cfg["use_features"], scaler, None), out / "model.bin")
    vocab.save(out / "vocab.txt")
    (out / "training_log.csv").write_text("\n".join(hist.log_lines()) + "\n", encoding="utf-8")
    return {"init": ecfg.seed, "train": tcfg.seed}


def cmd_finetune(args, cfg, out, tables):
    rows = _rows(args, cfg, tables)
    pre = load_model(args.model) if args.model else None
    ecfg = _encoder_config(cfg)
    ecfg.seed = substream_seed(cfg["seed"], "init")
    tcfg = _train_config(cfg)
    tcfg.seed = substream_seed(cfg["seed"], "finetune")
    split = substream_seed(cfg["seed"], "split")
    model, reports = finetune(
        rows, pre, _parse_layers(args.layers), ecfg, tcfg, cfg["use_features"], cfg["folds"], split
    )
    write_report(out / "report.json", reports, {"model": "transformer", "layers": args.layers or ALL})
    write_residuals(out / "residuals.csv", reports)
    (out / "training_log.csv").write_text("\n".join(training_log(reports)) + "\n", encoding="utf-8")
    save_model(model, out / "model.bin")
    return {"init": ecfg.seed, "train": tcfg.seed, "split": split}


def cmd_baseline(args, cfg, out, tables):
    rows = _rows(args, cfg, tables)
    dm = expand_design_matrix(rows, cfg["use_features"])
    split = substream_seed(cfg["seed"], "split")
    boot = substream_seed(cfg["seed"], "bootstrap")
    params = cfg["baseline"].get(args.algo, {})
    reports = cross_validate(dm.X, dm.y, make_fit_predict(args.algo, boot, **params), cfg["folds"], split)
    write_report(out / "report.json", reports, {"model": args.algo, "columns": dm.columns})
    write_residuals(out / "residuals.csv", reports)
    return {"split": split, "bootstrap": boot}


def cmd_evaluate(args, cfg, out, tables):
    rows = _rows(args, cfg, tables)
    model = load_model(args.model)
    pred = predict(model, rows)
    y = target_array(rows)
    m = metrics(pred, y)
    (out / "metrics.json").write_text(json.dumps(m.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "actual", "predicted", "residual"])
        for i, (a, p) in enumerate(zip(y, pred)):
            w.writerow([i, repr(float(a)), repr(float(p)), repr(float(a - p))])
    return {}


def cmd_attention(args, cfg, out, tables):
    model = load_model(args.model)
    comp = parse_composition(args.composition, tables[0])
    m = element_attention(model, comp, args.include_features)
    dest = Path(args.output) if args.output else out / "attention.csv"
    export_attention(m, dest)
    return {}


COMMANDS = {
    "featurize": cmd_featurize,
    "stats": cmd_stats,
    "outliers": cmd_outliers,
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "attention": cmd_attention,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heaformer", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True, target=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--out-dir", help="run directory (default runs/<command>)")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if data:
            p.add_argument("--input", required=True, help="CSV with a composition column")
        if target:
            p.add_argument("--target", help="target column name")

    p = sub.add_parser("featurize", help="compute descriptor columns")
    common(p)
    p.add_argument("--output")

    p = sub.add_parser("stats", help="dataset summary tables")
    common(p, target=True)
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("outliers", help="z-score outliers of the target")
    common(p, target=True)
    p.add_argument("--threshold", type=float, default=3.0)

    p = sub.add_parser("gen-corpus", help="synthetic pre-training corpus")
    common(p, data=False)
    p.add_argument("--size", type=int)
    p.add_argument("--equimolar-fraction", type=float)
    p.add_argument("--output")

    p = sub.add_parser("pretrain", help="masked-token pre-training")
    common(p, data=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-features", action="store_true")

    p = sub.add_parser("finetune", help="K-fold regression fine-tuning")
    common(p, target=True)
    p.add_argument("--model", help="pre-trained model artifact")
    p.add_argument("--layers", help="'all' or comma-separated 1-based layer indices")
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-features", action="store_true")

    p = sub.add_parser("baseline", help="K-fold classical regressor")
    common(p, target=True)
    p.add_argument("--algo", required=True, choices=sorted(DEFAULTS))
    p.add_argument("--folds", type=int)
    p.add_argument("--no-features", action="store_true")

    p = sub.add_parser("evaluate", help="score a fine-tuned model on a dataset")
    common(p, target=True)
    p.add_argument("--model", required=True)

    p = sub.add_parser("attention", help="element-pair attention heat-map data")
    common(p, data=False)
    p.add_argument("--model", required=True)
    p.add_argument("--composition", required=True)
    p.add_argument("--include-features", action="store_true")
    p.add_argument("--output")
    return ap


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "target", None):
        cfg["target"] = args.target
    if getattr(args, "folds", None):
        cfg["folds"] = args.folds
    if getattr(args, "epochs", None):
        cfg["train"]["epochs"] = args.epochs
    if getattr(args, "no_features", False):
        cfg["use_features"] = False
    if getattr(args, "size", None):
        cfg["generator"]["corpus_size"] = args.size
    if getattr(args, "equimolar_fraction", None) is not None:
        cfg["generator"]["equimolar_fraction"] = args.equimolar_fraction
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(args.out_dir or Path("runs") / args.command)
        out.mkdir(parents=True, exist_ok=True)
        tables = _tables(cfg)
        seeds = COMMANDS[args.command](args, cfg, out, tables)
        _record_run(out, args.command, cfg, seeds, tables)
    except (DatasetError, CompositionError, UnknownElementError, ValueError, KeyError, OSError) as exc:
        print(f"heaformer {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None):
    sys.exit(run(argv))
