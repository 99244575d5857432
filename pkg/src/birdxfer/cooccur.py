"""Species co-occurrence: transactions, FP-growth, association rules, histograms."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from birdxfer.dataset import SpeciesVocabulary
from birdxfer.errors import DataError
from birdxfer.pseudolabel import LabelMatrix


@dataclass(frozen=True)
class Transaction:
    recording_id: str
    items: frozenset[str]


@dataclass(frozen=True)
class FrequentItemset:
    items: frozenset[str]
    support_count: int

    def sorted_items(self) -> tuple[str, ...]:
        return tuple(sorted(self.items))


@dataclass(frozen=True)
class AssociationRule:
    antecedent: frozenset[str]
    consequent: frozenset[str]
    confidence: float
    support_count: int


def build_transactions(
    labels: LabelMatrix,
    vocab: SpeciesVocabulary | None = None,
    per_interval: bool = False,
) -> list[Transaction]:
    """One basket per recording (union of its interval labels), or one per interval.

    Empty baskets are kept. Recordings appear in first-seen order.
    """
    vocab = vocab or labels.vocab
    if labels.bits.shape[1] != len(vocab):
        raise DataError(f"label width {labels.bits.shape[1]} != vocabulary size {len(vocab)}")
    codes = vocab.codes
    if per_interval:
        return [
            Transaction(f"{rid}_{int(start)}", frozenset(codes[j] for j in np.flatnonzero(row)))
            for rid, start, row in zip(labels.recording_ids, labels.interval_starts, labels.bits)
        ]
    groups: dict[str, np.ndarray] = {}
    for rid, row in zip(labels.recording_ids, labels.bits):
        if rid in groups:
            groups[rid] |= row.astype(bool)
        else:
            groups[rid] = row.astype(bool).copy()
    return [Transaction(rid, frozenset(codes[j] for j in np.flatnonzero(mask))) for rid, mask in groups.items()]


class _Node:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item: str | None, parent: _Node | None) -> None:
        self.item = item
        self.count = 0
        self.parent = parent
        self.children: dict[str, _Node] = {}


def _build_tree(
    weighted: Iterable[tuple[Sequence[str], int]], min_support: int
) -> tuple[dict[str, list[_Node]], dict[str, int]]:
    """FP-tree over weighted paths; returns node lists per item and item supports."""
    weighted = list(weighted)
    counts: Counter[str] = Counter()
    for items, w in weighted:
        for it in items:
            counts[it] += w
    frequent = {it: c for it, c in counts.items() if c >= min_support}
    # descending support, ties lexicographic
    rank = {it: r for r, it in enumerate(sorted(frequent, key=lambda it: (-frequent[it], it)))}
    root = _Node(None, None)
    header: dict[str, list[_Node]] = defaultdict(list)
    for items, w in weighted:
        path = sorted((it for it in set(items) if it in rank), key=rank.__getitem__)
        node = root
        for it in path:
            child = node.children.get(it)
            if child is None:
                child = _Node(it, node)
                node.children[it] = child
                header[it].append(child)
            child.count += w
            node = child
    return header, frequent


def _mine(
    weighted: list[tuple[Sequence[str], int]],
    min_support: int,
    suffix: tuple[str, ...],
    out: dict[frozenset[str], int],
) -> None:
    header, frequent = _build_tree(weighted, min_support)
    for item, support in frequent.items():
        itemset = suffix + (item,)
        out[frozenset(itemset)] = support
        # conditional pattern base: prefix paths of every node holding `item`
        base: list[tuple[list[str], int]] = []
        for node in header[item]:
            path = []
            parent = node.parent
            while parent is not None and parent.item is not None:
                path.append(parent.item)
                parent = parent.parent
            if path:
                base.append((path, node.count))
        if base:
            _mine(base, min_support, itemset, out)


def _canonical_order(itemsets: Iterable[FrequentItemset]) -> list[FrequentItemset]:
    return sorted(itemsets, key=lambda s: (-s.support_count, len(s.items), s.sorted_items()))


def fpgrowth(transactions: Sequence[Transaction], min_support: int) -> list[FrequentItemset]:
    """All itemsets with support count >= ``min_support``.

    Sorted by descending support, then ascending size, then sorted item tuple.
    """
    if int(min_support) != min_support or min_support < 1:
        raise DataError(f"min_support must be a positive integer count, got {min_support}")
    found: dict[frozenset[str], int] = {}
    _mine([(tuple(t.items), 1) for t in transactions], int(min_support), (), found)
    return _canonical_order(FrequentItemset(items, c) for items, c in found.items())


def min_support_from_fraction(fraction: float, n_transactions: int) -> int:
    """Absolute count for a fractional support threshold (ceiling, at least 1)."""
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"support fraction must lie in (0, 1], got {fraction}")
    return max(1, math.ceil(fraction * n_transactions))


def association_rules(itemsets: Sequence[FrequentItemset], min_confidence: float = 0.8) -> list[AssociationRule]:
    """Single-species-antecedent rules ``a -> itemset - {a}`` with confidence >= ``min_confidence``.

    Sorted by descending confidence, then descending support, then antecedent and consequent.
    """
    support = {s.items: s.support_count for s in itemsets}
    rules = []
    for s in itemsets:
        if len(s.items) < 2:
            continue
        for a in sorted(s.items):
            ante = frozenset([a])
            if ante not in support:
                raise DataError(f"support of {{{a}}} missing; itemsets are not downward closed")
            conf = s.support_count / support[ante]
            if conf >= min_confidence:
                rules.append(AssociationRule(ante, s.items - ante, conf, s.support_count))
    rules.sort(key=lambda r: (-r.confidence, -r.support_count, sorted(r.antecedent), sorted(r.consequent)))
    return rules


def _normalize(counts: Counter[int], normalize: bool) -> dict[int, float]:
    total = sum(counts.values())
    if normalize and total:
        return {k: counts[k] / total for k in sorted(counts)}
    return {k: counts[k] for k in sorted(counts)}


def itemset_size_distribution(transactions: Sequence[Transaction], normalize: bool = True) -> dict[int, float]:
    """Histogram of basket sizes (size 0 included)."""
    return _normalize(Counter(len(t.items) for t in transactions), normalize)


def frequent_itemset_size_distribution(itemsets: Sequence[FrequentItemset], normalize: bool = True) -> dict[int, float]:
    """Histogram of mined itemset sizes, the alternative reading of a size plot."""
    return _normalize(Counter(len(s.items) for s in itemsets), normalize)


def species_frequency(labels: LabelMatrix, vocab: SpeciesVocabulary | None = None) -> list[tuple[str, int]]:
    """Intervals per species, most frequent first, ties lexicographic."""
    vocab = vocab or labels.vocab
    counts = labels.bits.sum(axis=0).astype(int) if len(labels) else np.zeros(len(vocab), int)
    return sorted(((c, int(n)) for c, n in zip(vocab.codes, counts)), key=lambda p: (-p[1], p[0]))


def _join(items: Iterable[str]) -> str:
    return "|".join(sorted(items))


def write_itemsets(itemsets: Sequence[FrequentItemset], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["items", "support_count"])
        for s in itemsets:
            w.writerow([_join(s.items), s.support_count])


def write_rules(rules: Sequence[AssociationRule], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["antecedent", "consequent", "confidence", "support_count"])
        for r in rules:
            w.writerow([_join(r.antecedent), _join(r.consequent), repr(r.confidence), r.support_count])


def write_size_histogram(hist: dict[int, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "value"])
        for k, v in hist.items():
            w.writerow([k, repr(v) if isinstance(v, float) else v])


def export_rule_graph(rules: Sequence[AssociationRule], path: str | Path) -> None:
    """Directed edge list ``source,target,confidence``: one edge per antecedent/consequent item pair."""
    path = Path(path)
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write rule graph to {path}: {exc.strerror}") from None
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "confidence"])
        for r in rules:
            for src in sorted(r.antecedent):
                for dst in sorted(r.consequent):
                    w.writerow([src, dst, repr(r.confidence)])
