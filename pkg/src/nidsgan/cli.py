"""Command-line entry points.

Every command reads one YAML config and works inside
``<output_dir>/<config hash>-seed<seed>/``:

    config.yaml        resolved config (re-run from it to reproduce)
    data/              prepared train/test splits and the load report
    models/target.pt   trained target classifier
    attack/<class>/    generator, critic and training trace per attacked class
    tables/*.csv       result tables (each row carries config_hash and seed)
    summary.txt        written by ``report``
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ExperimentConfig, load_config
from .constraints import build_profile, unconstrained_profile
from .evaluation import SweepExperiment, Variant, perturbation_sweep
from .flows import (
    DatasetError,
    FlowDataset,
    SyntheticSpec,
    load_cicids,
    load_nslkdd,
    synthetic_dataset,
)
from .nids import build_spec, load_classifier, reference_training_config, train_classical, train_classifier
from .threatmodels import (
    ThreatModelError,
    run_blackbox,
    run_restricted_blackbox,
    run_transfer,
    run_whitebox,
)

log = logging.getLogger("nidsgan")

COMMANDS = ("prepare-data", "train-nids", "attack", "sweep", "report")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    if v is None:
        return ""
    return str(v)


def write_table(path: Path, header: list[str], rows: list[list], cfg: ExperimentConfig) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config_hash", "seed", *header])
    for row in rows:
        w.writerow([cfg.content_hash(), cfg.seed, *map(_fmt, row)])
    path.write_text(buf.getvalue())


def _setup(cfg: ExperimentConfig) -> Path:
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)
    run = cfg.run_dir()
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.yaml").write_text(cfg.dump())
    return run


def prepare_data(cfg: ExperimentConfig, run: Path) -> tuple[FlowDataset, FlowDataset]:
    data_dir = run / "data"
    if (data_dir / "train.npz").exists() and (data_dir / "test.npz").exists():
        return FlowDataset.load(data_dir / "train.npz"), FlowDataset.load(data_dir / "test.npz")
    d = cfg.section("dataset")
    kind = d["kind"]
    if kind == "synthetic":
        s = dict(d.get("synthetic") or {})
        if "class_counts" in s:
            s["class_counts"] = tuple(s["class_counts"])
        train, test = synthetic_dataset(SyntheticSpec(seed=cfg.seed, **s))
    elif kind == "nslkdd":
        if "train_path" not in d or "test_path" not in d:
            raise ConfigError("nslkdd dataset needs train_path and test_path")
        train, test = load_nslkdd(d["train_path"], d["test_path"], d.get("semantic"))
    else:
        if "paths" not in d:
            raise ConfigError("cicids dataset needs paths")
        train, test = load_cicids(d["paths"], d.get("test_fraction", 0.25), semantic=d.get("semantic"))
    data_dir.mkdir(parents=True, exist_ok=True)
    train.save(data_dir / "train.npz")
    test.save(data_dir / "test.npz")
    if train.report is not None:
        train.report.write(data_dir / "load_report.txt")
    rows = [[split.split_tag, lbl, cnt] for split in (train, test) for lbl, cnt in split.class_counts().items()]
    write_table(run / "tables" / "class_counts.csv", ["split", "class", "count"], rows, cfg)
    return train, test


def train_nids(cfg: ExperimentConfig, run: Path):
    train, test = prepare_data(cfg, run)
    path = run / "models" / "target.pt"
    if path.exists():
        return load_classifier(path), train, test
    t = cfg.section("target")
    spec = build_spec(t.get("family", "idsnet"), train.schema, t.get("layer_widths"))
    training = cfg.target_training(reference_training_config(train.schema, cfg.seed))
    model = train_classifier(spec, train, training, test=test)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    m = model.metrics_on_test
    write_table(
        run / "tables" / "target_metrics.csv",
        ["family", "accuracy", "precision", "recall", "f1"],
        [[spec.family, m.accuracy, m.precision, m.recall, m.f1]],
        cfg,
    )
    rows = [[name, *scores] for name, scores in m.per_class_scores.items()]
    write_table(run / "tables" / "target_per_class.csv", ["class", "precision", "recall", "f1"], rows, cfg)
    return model, train, test


def _profiles(cfg: ExperimentConfig, train: FlowDataset):
    a = cfg.section("attack")
    classes = a.get("classes") or [c for c in train.label_set if c != train.schema.benign_label]
    unknown = [c for c in classes if c not in train.label_set]
    if unknown:
        raise ConfigError(f"attack.classes: unknown classes {unknown}")
    if a.get("constrained", True):
        return {c: build_profile(train.schema, train, c, a.get("protocol")) for c in classes}
    return {c: unconstrained_profile(train.schema.n_encoded, c) for c in classes}


def attack(cfg: ExperimentConfig, run: Path) -> None:
    target, train, test = train_nids(cfg, run)
    profiles = _profiles(cfg, train)
    attack_cfg = cfg.attack_config()
    mode = cfg.section("threat_model").get("mode", "whitebox")
    if mode == "whitebox":
        report, arts = run_whitebox(target, train, test, attack_cfg, list(profiles.values()))
    else:
        tm = cfg.threat_config()
        runner = run_blackbox if mode == "blackbox" else run_restricted_blackbox
        custom = profiles if not cfg.section("attack").get("constrained", True) else None
        report, state = runner(target, train, test, tm, attack_cfg, list(profiles), custom)
        if report.error:
            raise ThreatModelError(report.error)
        arts = state["artifacts"]
    for cls, art in arts.items():
        art.save(run / "attack" / cls.replace("/", "_"))
    led = report.ledger
    rows = [
        [mode, cls, rate, report.local_fraction, led["labeling_queries"], led["active_learning_queries"],
         led["evaluation_queries"], report.extra.get("per_class_without_al", {}).get(cls)]
        for cls, rate in sorted(report.per_class.items())
    ]
    rows.append([mode, "overall", report.success_rate, report.local_fraction, led["labeling_queries"],
                 led["active_learning_queries"], led["evaluation_queries"], report.extra.get("success_without_al")])
    write_table(
        run / "tables" / "evasion.csv",
        ["mode", "class", "success_rate", "local_fraction", "labeling_queries", "active_learning_queries",
         "evaluation_queries", "success_without_al"],
        rows, cfg,
    )
    write_table(
        run / "tables" / "perturbation.csv",
        ["mode", "mean_l2", "p50_l2", "p90_l2", "max_l2"],
        [[mode, report.mean_l2, *(report.l2_percentiles.get(k) for k in ("p50", "p90", "max"))]],
        cfg,
    )
    tr = cfg.section("transfer")
    if tr.get("models"):
        params = tr.get("params") or {}
        classical = {k: train_classical(k, train, params.get(k), seed=cfg.seed) for k in tr["models"]}
        rows = []
        for cls, art in arts.items():
            X = test.of_class(cls).X
            source = float(np.mean(target.predict_labels(art.generate(X)) == test.benign_index)) if len(X) else 0.0
            for name, rep in run_transfer(art, classical, X, test.benign_index).items():
                rows.append([cls, name, rep.success_rate, source])
        write_table(run / "tables" / "transfer.csv", ["class", "model", "success_rate", "source_success_rate"],
                    rows, cfg)


def sweep(cfg: ExperimentConfig, run: Path) -> None:
    target, train, test = train_nids(cfg, run)
    s = cfg.section("sweep")
    eps = s.get("epsilons") or [0.0, 0.1, 0.2, 0.3]
    variants = tuple(Variant(v["constrained"], v["gan_variant"]) for v in s.get("variants") or []) or None
    profiles = _profiles(cfg, train)
    rows = []
    for cls, profile in profiles.items():
        exp = SweepExperiment(target, train, test, profile, cfg.attack_config())
        if variants:
            exp = SweepExperiment(target, train, test, profile, cfg.attack_config(), variants)
        res = perturbation_sweep(eps, exp)
        rows += [[cls, r["variant"], r["epsilon"], r["success_rate"], r["mean_l2"]] for r in res.rows()]
    write_table(run / "tables" / "sweep.csv", ["class", "variant", "epsilon", "success_rate", "mean_l2"], rows, cfg)


def report(cfg: ExperimentConfig, run: Path) -> str:
    tables = sorted((run / "tables").glob("*.csv")) if (run / "tables").exists() else []
    if not tables:
        raise FileNotFoundError(f"no result tables under {run}; run train-nids, attack or sweep first")
    out = [f"run {run.name}", f"config_hash {cfg.content_hash()}", f"seed {cfg.seed}", ""]
    for t in tables:
        with open(t) as fh:
            rows = list(csv.reader(fh))
        body = [r[2:] for r in rows]
        widths = [max(len(r[i]) for r in body) for i in range(len(body[0]))]
        out.append(f"[{t.stem}]")
        out += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in body]
        out.append("")
    text = "\n".join(out)
    (run / "summary.txt").write_text(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nidsgan", description="Constrained GAN evasion experiments on flow-based NIDS.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", required=True, help="YAML experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        run = _setup(cfg)
        if args.command == "prepare-data":
            prepare_data(cfg, run)
        elif args.command == "train-nids":
            train_nids(cfg, run)
        elif args.command == "attack":
            attack(cfg, run)
        elif args.command == "sweep":
            sweep(cfg, run)
        else:
            print(report(cfg, run))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, ThreatModelError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(str(run), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
