"""``birdxfer`` command line: pseudolabel | train | predict | evaluate | mine | profile.

Every subcommand reads an optional ``--config`` JSON file (relative paths are
resolved against the config's directory), applies flag overrides, writes its
artifacts into the output directory and records a ``run_manifest_<cmd>.json``
with the effective config, seed and SHA-256 of every input and artifact.

On failure a single line ``error:<category>: <message>`` goes to stderr and
the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import importlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from birdxfer import __version__
from birdxfer.cooccur import (
    association_rules,
    build_transactions,
    export_rule_graph,
    fpgrowth,
    frequent_itemset_size_distribution,
    itemset_size_distribution,
    min_support_from_fraction,
    species_frequency,
    write_itemsets,
    write_rules,
    write_size_histogram,
)
from birdxfer.dataset import load_embedding_table, split_indices, summarize_table
from birdxfer.errors import ConfigError, DataError, TrainingError
from birdxfer.metrics import EvalReport, evaluate
from birdxfer.profiler import BudgetSpec, StageError, budget_report, extrapolate, time_stage
from birdxfer.pseudolabel import (
    LabelMatrix,
    PseudoLabelConfig,
    build_label_matrix,
    call_indicator,
    load_folder_species,
    read_label_matrix,
    threshold_predictions,
    write_label_matrix,
)
from birdxfer.trainer import TrainConfig, load_model, predict, save_model, train

log = logging.getLogger("birdxfer")

PATH_KEYS = (
    "embeddings",
    "manifest",
    "folder_species",
    "labels",
    "checkpoint",
    "predictions",
    "output_dir",
)


@dataclass(frozen=True)
class MineConfig:
    min_support: int | None = None
    min_support_fraction: float | None = None
    min_confidence: float = 0.8
    per_interval: bool = False
    size_source: str = "transactions"

    def __post_init__(self) -> None:
        if self.size_source not in ("transactions", "itemsets"):
            raise ConfigError("mine.size_source must be 'transactions' or 'itemsets'")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ConfigError("mine.min_confidence must lie in [0, 1]")


@dataclass(frozen=True)
class ProfileConfig:
    n_test: int = 1100
    budget_minutes: float = 120.0
    recording_minutes: float = 4.0
    repetitions: int = 3
    n_profiled: int = 20
    stages: tuple[dict, ...] = ()


@dataclass
class PipelineConfig:
    paths: dict[str, Path] = field(default_factory=dict)
    pseudolabel: PseudoLabelConfig = field(default_factory=PseudoLabelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mine: MineConfig = field(default_factory=MineConfig)
    eval_threshold: float = 0.5
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path) -> PipelineConfig:
        unknown = sorted(set(data) - {"paths", "pseudolabel", "train", "mine", "evaluate", "profile"})
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
        paths = {}
        for key, value in data.get("paths", {}).items():
            if key not in PATH_KEYS:
                raise ConfigError(f"unknown path key paths.{key}")
            paths[key] = (base_dir / value).resolve()
        try:
            pl = PseudoLabelConfig(**data.get("pseudolabel", {}))
            mine = MineConfig(**data.get("mine", {}))
            prof = dict(data.get("profile", {}))
            prof["stages"] = tuple(prof.get("stages", ()))
            profile = ProfileConfig(**prof)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except DataError as exc:
            raise ConfigError(str(exc)) from None
        threshold = data.get("evaluate", {}).get("threshold", 0.5)
        return cls(paths, pl, TrainConfig.from_dict(data.get("train", {})), mine, float(threshold), profile)

    def to_dict(self) -> dict:
        return {
            "paths": {k: str(v) for k, v in sorted(self.paths.items())},
            "pseudolabel": asdict(self.pseudolabel),
            "train": self.train.to_dict(),
            "mine": asdict(self.mine),
            "evaluate": {"threshold": self.eval_threshold},
            "profile": asdict(self.profile),
        }

    def path(self, key: str, must_exist: bool = True) -> Path:
        if key not in self.paths:
            raise ConfigError(f"missing required path paths.{key}")
        p = self.paths[key]
        if must_exist and not p.exists():
            raise FileNotFoundError(f"paths.{key}: {p} does not exist")
        return p

    def output_dir(self) -> Path:
        out = self.paths.get("output_dir", Path.cwd())
        out.mkdir(parents=True, exist_ok=True)
        return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(
    command: str, cfg: PipelineConfig, inputs: dict[str, Path], artifacts: dict[str, Path]
) -> Path:
    doc = {
        "command": command,
        "version": __version__,
        "seed": cfg.train.seed,
        "config": cfg.to_dict(),
        "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in sorted(inputs.items())},
        "artifacts": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in sorted(artifacts.items())},
    }
    path = cfg.output_dir() / f"run_manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load_table(cfg: PipelineConfig):
    return load_embedding_table(cfg.path("embeddings"), cfg.path("manifest"))


def _table_inputs(cfg: PipelineConfig) -> dict[str, Path]:
    return {"embeddings": cfg.path("embeddings"), "manifest": cfg.path("manifest")}


def cmd_pseudolabel(cfg: PipelineConfig) -> dict[str, Path]:
    table = _load_table(cfg)
    inputs = _table_inputs(cfg)
    folder_species = None
    if cfg.pseudolabel.use_species_augmentation:
        inputs["folder_species"] = cfg.path("folder_species")
        folder_species = load_folder_species(inputs["folder_species"])
    labels = build_label_matrix(table, folder_species, cfg.pseudolabel)
    summary = summarize_table(table, cfg.pseudolabel.p_threshold)
    n = len(labels)
    out = cfg.output_dir()
    labels_path = out / "labels.csv"
    write_label_matrix(labels, labels_path)
    summary_doc = {
        **summary.to_dict(),
        "label_call_fraction": float(np.mean(call_indicator(labels.bits))) if n else 0.0,
        "positive_labels": int(labels.bits.sum()),
        "p_threshold": cfg.pseudolabel.p_threshold,
        "species_augmentation": cfg.pseudolabel.use_species_augmentation,
    }
    summary_path = out / "pseudolabel_summary.json"
    summary_path.write_text(json.dumps(summary_doc, indent=2) + "\n", encoding="utf-8")
    print(
        f"{n} intervals ({summary.hours:.2f} h), {summary.call_fraction:.1%} with at least one call; "
        f"labels -> {labels_path}"
    )
    artifacts = {"labels": labels_path, "summary": summary_path}
    write_run_manifest("pseudolabel", cfg, inputs, artifacts)
    return artifacts


def _train_labels(cfg: PipelineConfig, table) -> tuple[LabelMatrix, dict[str, Path]]:
    if "labels" in cfg.paths:
        path = cfg.path("labels")
        labels = read_label_matrix(path)
        if labels.vocab.codes != table.vocab.codes:
            raise DataError("label file species columns differ from the table vocabulary")
        if not labels.aligned_with(table):
            raise DataError(
                f"label rows ({len(labels)}) are not aligned with embedding rows ({len(table)})"
            )
        return labels, {"labels": path}
    # no label file: derive pseudo-labels on the fly
    pl = replace(cfg.pseudolabel, use_species_augmentation=cfg.train.species_augmentation)
    inputs: dict[str, Path] = {}
    folder_species = None
    if pl.use_species_augmentation:
        inputs["folder_species"] = cfg.path("folder_species")
        folder_species = load_folder_species(inputs["folder_species"])
    return build_label_matrix(table, folder_species, pl), inputs


def cmd_train(cfg: PipelineConfig) -> dict[str, Path]:
    table = _load_table(cfg)
    labels, label_inputs = _train_labels(cfg, table)
    model, history = train(table, labels, cfg.train)
    out = cfg.output_dir()
    ckpt = out / "checkpoint.json"
    save_model(model, ckpt)
    hist_path = out / "history.csv"
    history.write_csv(hist_path)
    _, val_idx = split_indices(len(table), cfg.train.train_fraction, cfg.train.seed)
    report = evaluate(
        predict(model, table.embeddings[val_idx]),
        labels.bits[val_idx],
        cfg.eval_threshold,
        table.vocab.codes,
    )
    report_path = out / "eval_report.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.format_table())
    print(f"best epoch {history.best_epoch}; checkpoint -> {ckpt}")
    artifacts = {"checkpoint": ckpt, "history": hist_path, "eval_report": report_path}
    write_run_manifest("train", cfg, {**_table_inputs(cfg), **label_inputs}, artifacts)
    return artifacts


def write_predictions(row_ids: list[str], codes, probs: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", *codes])
        for rid, row in zip(row_ids, probs):
            w.writerow([rid, *(repr(float(p)) for p in row)])


def read_predictions(path: Path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "row_id":
            raise DataError(f"{path}: expected header row_id,<codes...>")
        ids, rows = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path} row {row_no}: expected {len(header)} fields")
            ids.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise DataError(f"{path} row {row_no}: non-numeric probability") from None
    return ids, header[1:], np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)


def cmd_predict(cfg: PipelineConfig) -> dict[str, Path]:
    ckpt = cfg.path("checkpoint")
    model = load_model(ckpt)
    table = _load_table(cfg)
    if model.vocab.codes != table.vocab.codes:
        a, b = set(model.vocab.codes), set(table.vocab.codes)
        diff = sorted(a ^ b)
        detail = ", ".join(diff) if diff else "same codes in a different order"
        raise DataError(f"checkpoint and table vocabularies differ: {detail}")
    probs = predict(model, table)
    out_path = cfg.paths.get("predictions") or cfg.output_dir() / "predictions.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(table.row_ids(), table.vocab.codes, probs, out_path)
    print(f"{len(table)} rows x {len(table.vocab)} species -> {out_path}")
    artifacts = {"predictions": out_path}
    write_run_manifest("predict", cfg, {**_table_inputs(cfg), "checkpoint": ckpt}, artifacts)
    return artifacts


def cmd_evaluate(cfg: PipelineConfig) -> EvalReport:
    pred_path = cfg.path("predictions")
    labels_path = cfg.path("labels")
    row_ids, codes, probs = read_predictions(pred_path)
    labels = read_label_matrix(labels_path)
    if list(labels.vocab.codes) != codes:
        raise DataError("prediction and label files have different species columns")
    label_rows = {rid: i for i, rid in enumerate(labels.row_ids())}
    missing = [r for r in row_ids if r not in label_rows]
    extra = sorted(set(label_rows) - set(row_ids))
    if missing or extra or len(row_ids) != len(label_rows):
        sample = ", ".join((missing + extra)[:5])
        raise DataError(f"row_id mismatch between predictions and labels ({len(missing) + len(extra)} rows, e.g. {sample})")
    y = labels.bits[[label_rows[r] for r in row_ids]]
    report = evaluate(probs, y, cfg.eval_threshold, codes)
    out = cfg.output_dir()
    report_path = out / "eval_report.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.format_table())
    write_run_manifest("evaluate", cfg, {"predictions": pred_path, "labels": labels_path}, {"eval_report": report_path})
    return report


def cmd_mine(cfg: PipelineConfig) -> dict[str, Path]:
    labels_path = cfg.path("labels")
    labels = read_label_matrix(labels_path)
    mc = cfg.mine
    transactions = build_transactions(labels, labels.vocab, per_interval=mc.per_interval)
    if mc.min_support is not None:
        min_support = mc.min_support
    elif mc.min_support_fraction is not None:
        min_support = min_support_from_fraction(mc.min_support_fraction, len(transactions))
    else:
        raise ConfigError("mine.min_support (or --min-support) is required")
    itemsets = fpgrowth(transactions, min_support)
    rules = association_rules(itemsets, mc.min_confidence)
    if mc.size_source == "itemsets":
        hist = frequent_itemset_size_distribution(itemsets, normalize=True)
    else:
        hist = itemset_size_distribution(transactions, normalize=True)
    out = cfg.output_dir()
    artifacts = {
        "itemsets": out / "itemsets.csv",
        "rules": out / "rules.csv",
        "size_histogram": out / "itemset_sizes.csv",
        "rule_graph": out / "rule_graph.csv",
        "species_frequency": out / "species_frequency.csv",
    }
    write_itemsets(itemsets, artifacts["itemsets"])
    write_rules(rules, artifacts["rules"])
    write_size_histogram(hist, artifacts["size_histogram"])
    export_rule_graph(rules, artifacts["rule_graph"])
    with open(artifacts["species_frequency"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["species_code", "interval_count"])
        w.writerows(species_frequency(labels))
    print(
        f"{len(transactions)} transactions, min_support {min_support}: "
        f"{len(itemsets)} itemsets, {len(rules)} rules at confidence >= {mc.min_confidence}"
    )
    write_run_manifest("mine", cfg, {"labels": labels_path}, artifacts)
    return artifacts


def _builtin_stage(kind: str, cfg: PipelineConfig) -> Callable[[list[str]], Any]:
    table = _load_table(cfg)
    rows_by_rec: dict[str, list[int]] = {}
    for i, rid in enumerate(table.recording_ids):
        rows_by_rec.setdefault(rid, []).append(i)

    def rows(recs: list[str]) -> list[int]:
        return [i for r in recs for i in rows_by_rec[r]]

    if kind == "predict":
        model = load_model(cfg.path("checkpoint"))

        def stage(recs: list[str]) -> Any:
            return predict(model, table.embeddings[rows(recs)])

    elif kind == "pseudolabel":
        if table.logits is None:
            raise DataError("pseudolabel stage needs a table with logits")
        logits = table.logits

        def stage(recs: list[str]) -> Any:
            return threshold_predictions(logits[rows(recs)], cfg.pseudolabel.p_threshold)

    elif kind == "load":

        def stage(recs: list[str]) -> Any:
            return load_embedding_table(cfg.path("embeddings"), cfg.path("manifest"))

    else:
        raise ConfigError(f"unknown builtin stage {kind!r}; expected predict, pseudolabel or load")
    return stage


def _import_stage(spec: str) -> Callable:
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ConfigError(f"stage callable {spec!r} must look like 'module:function'")
    try:
        return getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot resolve stage callable {spec!r}: {exc}") from None


def cmd_profile(cfg: PipelineConfig) -> dict[str, Path]:
    pc = cfg.profile
    budget = BudgetSpec(pc.n_test, pc.budget_minutes, pc.recording_minutes)
    results = []
    recordings: list[str] | None = None
    for entry in pc.stages:
        name = entry.get("name") or entry.get("builtin") or entry.get("callable")
        if not name:
            raise ConfigError("every profile stage needs a name, builtin or callable")
        if "profile_sec" in entry:
            results.append(extrapolate(float(entry["profile_sec"]), int(entry.get("n_profiled", pc.n_profiled)), budget, name))
            continue
        if "builtin" in entry:
            stage = _builtin_stage(entry["builtin"], cfg)
        elif "callable" in entry:
            stage = _import_stage(entry["callable"])
        else:
            raise ConfigError(f"profile stage {name!r} needs profile_sec, builtin or callable")
        if recordings is None:
            # first n recordings sorted by identifier
            table = _load_table(cfg)
            recordings = sorted(set(table.recording_ids))[: pc.n_profiled]
        sec = time_stage(stage, recordings, pc.repetitions, name=name)
        results.append(extrapolate(sec, max(len(recordings), 1), budget, name))
    report = budget_report(results, budget)
    out = cfg.output_dir()
    json_path, text_path = out / "budget_report.json", out / "budget_report.txt"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    table_text = report.format_table()
    text_path.write_text(table_text + "\n", encoding="utf-8")
    print(table_text)
    inputs = {k: cfg.paths[k] for k in ("embeddings", "manifest", "checkpoint") if k in cfg.paths and cfg.paths[k].exists()}
    artifacts = {"budget_report_json": json_path, "budget_report_text": text_path}
    write_run_manifest("profile", cfg, inputs, artifacts)
    return artifacts


COMMANDS = {
    "pseudolabel": cmd_pseudolabel,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "mine": cmd_mine,
    "profile": cmd_profile,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="birdxfer", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="pipeline config JSON")
        p.add_argument("--output-dir", type=Path, help="directory for artifacts")

    p = sub.add_parser("pseudolabel", help="threshold surrogate logits into a label matrix")
    common(p)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--folder-species", type=Path)
    p.add_argument("--threshold", type=float, help="p_threshold for the surrogate sigmoid")
    aug = p.add_mutually_exclusive_group()
    aug.add_argument("--species-augmentation", dest="augment", action="store_true", default=None)
    aug.add_argument("--no-species-augmentation", dest="augment", action="store_false")

    p = sub.add_parser("train", help="train a classifier head")
    common(p)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--labels", type=Path)
    p.add_argument("--folder-species", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--loss", choices=("bce", "asl", "sigmoidf1"))
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--threshold", type=float, help="decision threshold for the validation report")

    p = sub.add_parser("predict", help="write competition-style probabilities")
    common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--predictions", type=Path, help="output CSV path")

    p = sub.add_parser("evaluate", help="score a prediction CSV against a label CSV")
    common(p)
    p.add_argument("--predictions", type=Path)
    p.add_argument("--labels", type=Path)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("mine", help="frequent itemsets and association rules")
    common(p)
    p.add_argument("--labels", type=Path)
    p.add_argument("--min-support", type=int)
    p.add_argument("--min-confidence", type=float)
    p.add_argument("--per-interval", action="store_true", default=None, help="one basket per interval")
    p.add_argument("--size-source", choices=("transactions", "itemsets"))

    p = sub.add_parser("profile", help="time stages and extrapolate to the test budget")
    common(p)
    p.add_argument("--embeddings", type=Path, help="table used by builtin stages")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--checkpoint", type=Path, help="model for the builtin predict stage")
    p.add_argument("--budget-minutes", type=float)
    p.add_argument("--n-test", type=int)
    p.add_argument("--repetitions", type=int)
    return ap


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    for key in PATH_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg.paths[key] = value.resolve()
    cmd = args.command
    threshold = getattr(args, "threshold", None)
    if cmd == "pseudolabel":
        pl = cfg.pseudolabel
        if threshold is not None:
            pl = replace(pl, p_threshold=threshold)
        if args.augment is not None:
            pl = replace(pl, use_species_augmentation=args.augment)
        cfg.pseudolabel = pl
    elif threshold is not None:
        cfg.eval_threshold = threshold
    train_over = {
        k: getattr(args, k)
        for k in ("seed", "epochs", "learning_rate", "loss", "hidden_dim")
        if getattr(args, k, None) is not None
    }
    if train_over:
        cfg.train = replace(cfg.train, **train_over)
    mine_over = {
        k: getattr(args, k)
        for k in ("min_support", "min_confidence", "per_interval", "size_source")
        if getattr(args, k, None) is not None
    }
    if mine_over:
        cfg.mine = replace(cfg.mine, **mine_over)
    prof_over = {
        k: getattr(args, k) for k in ("budget_minutes", "n_test", "repetitions") if getattr(args, k, None) is not None
    }
    if prof_over:
        cfg.profile = replace(cfg.profile, **prof_over)
    return cfg


def load_config(path: Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return PipelineConfig.from_dict(data, path.resolve().parent)


ERROR_CATEGORIES: list[tuple[type[BaseException], str, int]] = [
    (ConfigError, "config", 2),
    (FileNotFoundError, "path", 3),
    (TrainingError, "training", 4),
    (StageError, "stage", 5),
    (DataError, "data", 1),
    (OSError, "io", 6),
]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        COMMANDS[args.command](cfg)
    except tuple(cls for cls, _, _ in ERROR_CATEGORIES) as exc:
        for cls, category, code in ERROR_CATEGORIES:
            if isinstance(exc, cls):
                message = " ".join(str(exc).split())
                print(f"error:{category}: {message}", file=sys.stderr)
                return code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
