"""Macro-F1 and the competition-style macro AUROC.

A class contributes to macro AUROC only when it has at least one positive and
one negative label; other classes are reported as skipped.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from birdxfer.errors import DataError


@dataclass(frozen=True)
class ClassReport:
    code: str
    f1: float
    auroc: float | None
    positives: int


@dataclass(frozen=True)
class EvalReport:
    macro_f1: float
    macro_auroc: float | None
    per_class: list[ClassReport] = field(default_factory=list)
    skipped_classes: list[str] = field(default_factory=list)
    # classes skipped for having only positives; flagged because the upstream rule only skips missing positives
    all_positive_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        width = max([7] + [len(c.code) for c in self.per_class])
        lines = [f"{'species':<{width}}  {'pos':>6}  {'f1':>7}  {'auroc':>7}"]
        for c in self.per_class:
            auroc = "skipped" if c.auroc is None else f"{c.auroc:7.4f}"
            lines.append(f"{c.code:<{width}}  {c.positives:>6d}  {c.f1:7.4f}  {auroc:>7}")
        macro_auroc = "n/a" if self.macro_auroc is None else f"{self.macro_auroc:.4f}"
        lines.append(f"macro-F1 {self.macro_f1:.4f}  macro-AUROC {macro_auroc}  skipped {len(self.skipped_classes)}")
        if self.all_positive_classes:
            lines.append(f"skipped with no negatives: {', '.join(self.all_positive_classes)}")
        return "\n".join(lines)


def _as_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise DataError(f"scores shape {s.shape} != labels shape {y.shape}")
    if np.isnan(s).any():
        raise DataError("scores contain NaN")
    return s, y.astype(bool)


def binary_auroc(scores, labels) -> float | None:
    """Mann-Whitney AUROC with mid-ranks for ties; None when a class has no positives or no negatives."""
    s, y = _as_pair(scores, labels)
    if s.ndim != 1 or s.size < 1:
        raise DataError("binary_auroc expects a non-empty 1-D score vector")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auroc(scores, labels) -> tuple[float, list[int]]:
    """Mean AUROC over evaluable classes and the indices of skipped ones."""
    s, y = _as_pair(scores, labels)
    if s.ndim != 2:
        raise DataError("macro_auroc expects N x C matrices")
    values, skipped = [], []
    for c in range(s.shape[1]):
        a = binary_auroc(s[:, c], y[:, c])
        if a is None:
            skipped.append(c)
        else:
            values.append(a)
    if not values:
        raise DataError("every class lacks positives or negatives; macro AUROC is undefined")
    return float(np.mean(values)), skipped


def per_class_f1(pred_bits, labels) -> np.ndarray:
    p, y = _as_pair(pred_bits, labels)
    p = p.astype(bool)
    if p.ndim != 2:
        raise DataError("expected N x C matrices")
    tp = (p & y).sum(axis=0)
    fp = (p & ~y).sum(axis=0)
    fn = (~p & y).sum(axis=0)
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def macro_f1(pred_bits, labels) -> float:
    """Unweighted mean of per-class F1; a class with no positives and no predictions scores 0."""
    return float(per_class_f1(pred_bits, labels).mean())


def evaluate(
    scores,
    labels,
    decision_threshold: float = 0.5,
    codes: Sequence[str] | None = None,
) -> EvalReport:
    s, y = _as_pair(scores, labels)
    if s.ndim != 2:
        raise DataError("evaluate expects N x C matrices")
    n_classes = s.shape[1]
    codes = list(codes) if codes is not None else [str(i) for i in range(n_classes)]
    if len(codes) != n_classes:
        raise DataError(f"{len(codes)} codes for {n_classes} classes")
    f1 = per_class_f1(s > decision_threshold, y)
    per_class, skipped, all_pos, valid = [], [], [], []
    n = s.shape[0]
    for c, code in enumerate(codes):
        positives = int(y[:, c].sum())
        a = binary_auroc(s[:, c], y[:, c]) if n else None
        if a is None:
            skipped.append(code)
            if n and positives == n:
                all_pos.append(code)
        else:
            valid.append(a)
        per_class.append(ClassReport(code, float(f1[c]), a, positives))
    return EvalReport(
        macro_f1=float(f1.mean()) if n_classes else 0.0,
        macro_auroc=float(np.mean(valid)) if valid else None,
        per_class=per_class,
        skipped_classes=skipped,
        all_positive_classes=all_pos,
    )
