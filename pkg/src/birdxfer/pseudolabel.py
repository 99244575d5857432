"""Pseudo multi-labels from surrogate-model logits.

Labels come from thresholding the surrogate's sigmoid outputs. For training
recordings filed under a single species folder, that folder species is added
to any interval where the surrogate detected at least one call::

    y_species = y_hat OR (call(y_hat) AND onehot(folder))
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from birdxfer.dataset import INTERVAL_SEC, EmbeddingTable, SpeciesVocabulary
from birdxfer.errors import DataError


@dataclass(frozen=True)
class PseudoLabelConfig:
    p_threshold: float = 0.5
    use_species_augmentation: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.p_threshold < 1.0:
            raise DataError(f"p_threshold must lie in (0, 1), got {self.p_threshold}")


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    """Binary N x C targets aligned row-for-row with an embedding table."""

    recording_ids: tuple[str, ...]
    interval_starts: np.ndarray
    bits: np.ndarray
    vocab: SpeciesVocabulary

    def __post_init__(self) -> None:
        bits = np.array(self.bits, dtype=np.uint8, copy=True)
        starts = np.array(self.interval_starts, dtype=np.int64).reshape(-1)
        if bits.ndim != 2 or bits.shape != (len(self.recording_ids), len(self.vocab)):
            raise DataError(
                f"label matrix shape {bits.shape} does not match ({len(self.recording_ids)}, {len(self.vocab)})"
            )
        if starts.shape[0] != bits.shape[0]:
            raise DataError("interval starts do not match label rows")
        if (bits > 1).any():
            raise DataError("label matrix entries must be 0 or 1")
        bits.flags.writeable = False
        starts.flags.writeable = False
        object.__setattr__(self, "recording_ids", tuple(self.recording_ids))
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "interval_starts", starts)

    def __len__(self) -> int:
        return len(self.recording_ids)

    def take(self, indices) -> LabelMatrix:
        idx = np.asarray(indices, dtype=np.int64)
        return LabelMatrix(
            tuple(self.recording_ids[i] for i in idx), self.interval_starts[idx], self.bits[idx], self.vocab
        )

    def row_ids(self) -> list[str]:
        return [f"{r}_{int(s) + INTERVAL_SEC}" for r, s in zip(self.recording_ids, self.interval_starts)]

    def aligned_with(self, table: EmbeddingTable) -> bool:
        return self.recording_ids == table.recording_ids and np.array_equal(
            self.interval_starts, table.interval_starts
        )


def sigmoid(x) -> np.ndarray:
    """Logistic function, exact 0 at -inf and overflow-free for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise DataError("sigmoid input contains NaN")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def threshold_predictions(logits, p_threshold: float = 0.5, vocab: SpeciesVocabulary | None = None) -> np.ndarray:
    """Bits with ``sigmoid(logit) > p_threshold`` (strict) along the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    if vocab is not None and logits.shape[-1] != len(vocab):
        raise DataError(f"logits have {logits.shape[-1]} entries but the vocabulary has {len(vocab)}")
    return (sigmoid(logits) > p_threshold).astype(np.uint8)


def call_indicator(label) -> np.ndarray | int:
    """1 where any species bit is set along the last axis."""
    label = np.asarray(label)
    out = np.any(label != 0, axis=-1).astype(np.uint8)
    return int(out) if out.ndim == 0 else out


def species_onehot(code: str, vocab: SpeciesVocabulary) -> np.ndarray:
    if code not in vocab:
        raise DataError(f"unknown species {code!r}")
    out = np.zeros(len(vocab), dtype=np.uint8)
    out[vocab.index_of(code)] = 1
    return out


def augment_with_species(y_hat, onehot) -> np.ndarray:
    y_hat = np.asarray(y_hat, dtype=np.uint8)
    onehot = np.asarray(onehot, dtype=np.uint8)
    if y_hat.shape[-1] != onehot.shape[-1]:
        raise DataError(f"label length {y_hat.shape[-1]} != one-hot length {onehot.shape[-1]}")
    call = np.asarray(call_indicator(y_hat), dtype=np.uint8)[..., None]
    return (y_hat | (call & onehot)).astype(np.uint8)


def build_label_matrix(
    table: EmbeddingTable,
    folder_species: Mapping[str, str] | None,
    config: PseudoLabelConfig,
) -> LabelMatrix:
    if table.logits is None:
        raise DataError("pseudo-labels need a table with logits")
    y_hat = threshold_predictions(table.logits, config.p_threshold, table.vocab)
    if config.use_species_augmentation:
        folder_species = folder_species or {}
        missing = sorted({r for r in table.recording_ids if r not in folder_species})
        if missing:
            raise DataError(f"no folder species for recordings: {', '.join(missing)}")
        onehots = np.zeros_like(y_hat)
        for i, rid in enumerate(table.recording_ids):
            onehots[i] = species_onehot(folder_species[rid], table.vocab)
        y_hat = augment_with_species(y_hat, onehots)
    return LabelMatrix(table.recording_ids, table.interval_starts, y_hat, table.vocab)


def load_folder_species(path: str | Path) -> dict[str, str]:
    """Read a ``recording_id,species_code`` CSV."""
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"recording_id", "species_code"}:
            raise DataError(f"{path}: expected header recording_id,species_code")
        for row_no, row in enumerate(reader, start=1):
            rid, code = row["recording_id"].strip(), row["species_code"].strip()
            if rid in out and out[rid] != code:
                raise DataError(f"{path} row {row_no}: recording {rid!r} has more than one folder species")
            out[rid] = code
    return out


def write_label_matrix(labels: LabelMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "interval_start_sec", *labels.vocab.codes])
        for rid, start, row in zip(labels.recording_ids, labels.interval_starts, labels.bits):
            writer.writerow([rid, int(start), *(int(b) for b in row)])


def read_label_matrix(path: str | Path) -> LabelMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if header[:2] != ["recording_id", "interval_start_sec"] or len(header) < 3:
            raise DataError(f"{path}: expected header recording_id,interval_start_sec,<codes...>")
        vocab = SpeciesVocabulary(tuple(header[2:]))
        ids, starts, rows = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path} row {row_no}: expected {len(header)} fields, got {len(row)}")
            try:
                bits = [int(c) for c in row[2:]]
                start = int(row[1])
            except ValueError:
                raise DataError(f"{path} row {row_no}: non-integer cell") from None
            if any(b not in (0, 1) for b in bits):
                raise DataError(f"{path} row {row_no}: label cells must be 0 or 1")
            ids.append(row[0])
            starts.append(start)
            rows.append(bits)
    return LabelMatrix(
        tuple(ids), np.array(starts, dtype=np.int64), np.array(rows, dtype=np.uint8).reshape(len(ids), len(vocab)), vocab
    )
