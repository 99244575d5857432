"""Embedding tables, species vocabularies and their on-disk formats.

A table is stored as a CSV data file plus a JSON manifest::

    recording_id,interval_start_sec,emb_0,...,emb_{D-1}[,logit_0,...,logit_{C-1}]

    {"embedding_dim": D, "has_logits": true, "vocabulary": "vocab.txt", "source_tag": "..."}

The vocabulary path in the manifest is resolved relative to the manifest.
Floats are written with ``repr`` (shortest string that round-trips a 64-bit
double, at most 17 significant digits). Logit columns may hold the literal
``-inf``; no other non-finite value is accepted anywhere.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from birdxfer.errors import DataError
from birdxfer.rng import SplitMix64

INTERVAL_SEC = 5


@dataclass(frozen=True)
class SpeciesVocabulary:
    codes: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        codes = tuple(self.codes)
        object.__setattr__(self, "codes", codes)
        index: dict[str, int] = {}
        for i, code in enumerate(codes):
            if not code:
                raise DataError(f"empty species code at index {i}")
            if code in index:
                raise DataError(f"duplicate species code {code!r}")
            index[code] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: object) -> bool:
        return code in self._index

    def index_of(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise DataError(f"unknown species code {code!r}") from None


@dataclass(frozen=True)
class EmbeddingRecord:
    recording_id: str
    interval_start_sec: int
    embedding: np.ndarray
    logits: np.ndarray | None = None

    @property
    def row_id(self) -> str:
        return f"{self.recording_id}_{self.interval_start_sec + INTERVAL_SEC}"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Column-oriented store of embedding rows; arrays are read-only."""

    recording_ids: tuple[str, ...]
    interval_starts: np.ndarray
    embeddings: np.ndarray
    vocab: SpeciesVocabulary
    logits: np.ndarray | None = None
    source_tag: str = ""

    def __post_init__(self) -> None:
        ids = tuple(str(r) for r in self.recording_ids)
        starts = np.array(self.interval_starts, dtype=np.int64).reshape(-1)
        emb = _readonly(self.embeddings)
        n = len(ids)
        if emb.ndim != 2 or emb.shape[0] != n:
            raise DataError(f"embedding matrix shape {emb.shape} does not match {n} rows")
        if starts.shape[0] != n:
            raise DataError(f"{starts.shape[0]} interval starts for {n} rows")
        if not np.isfinite(emb).all():
            bad = int(np.nonzero(~np.isfinite(emb).all(axis=1))[0][0])
            raise DataError(f"non-finite embedding value in row {bad}")
        _check_intervals(starts)
        starts.flags.writeable = False
        logits = None
        if self.logits is not None:
            logits = _readonly(self.logits)
            if logits.shape != (n, len(self.vocab)):
                raise DataError(
                    f"logit matrix shape {logits.shape} does not match ({n}, {len(self.vocab)})"
                )
            _check_logits(logits)
        seen: set[tuple[str, int]] = set()
        for i, key in enumerate(zip(ids, starts.tolist())):
            if key in seen:
                raise DataError(f"duplicate (recording_id, interval_start_sec) {key} at row {i}")
            seen.add(key)
        object.__setattr__(self, "recording_ids", ids)
        object.__setattr__(self, "interval_starts", starts)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def from_records(
        cls,
        records: Sequence[EmbeddingRecord],
        vocab: SpeciesVocabulary,
        source_tag: str = "",
        embedding_dim: int | None = None,
    ) -> EmbeddingTable:
        if not records:
            if embedding_dim is None:
                raise DataError("embedding_dim is required for an empty table")
            return cls((), np.zeros(0, np.int64), np.zeros((0, embedding_dim)), vocab, None, source_tag)
        dims = {len(r.embedding) for r in records}
        if len(dims) != 1:
            raise DataError(f"records have mixed embedding dimensions {sorted(dims)}")
        with_logits = [r.logits is not None for r in records]
        if any(with_logits) and not all(with_logits):
            raise DataError("either every record or no record may carry logits")
        logits = np.array([r.logits for r in records], dtype=np.float64) if all(with_logits) else None
        return cls(
            tuple(r.recording_id for r in records),
            np.array([r.interval_start_sec for r in records], dtype=np.int64),
            np.array([r.embedding for r in records], dtype=np.float64),
            vocab,
            logits,
            source_tag,
        )

    def __len__(self) -> int:
        return len(self.recording_ids)

    @property
    def embedding_dim(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def has_logits(self) -> bool:
        return self.logits is not None

    @property
    def records(self) -> list[EmbeddingRecord]:
        return [self.record(i) for i in range(len(self))]

    def record(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(
            self.recording_ids[i],
            int(self.interval_starts[i]),
            self.embeddings[i],
            None if self.logits is None else self.logits[i],
        )

    def row_ids(self) -> list[str]:
        return [f"{r}_{int(s) + INTERVAL_SEC}" for r, s in zip(self.recording_ids, self.interval_starts)]

    def take(self, indices: Sequence[int] | np.ndarray) -> EmbeddingTable:
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingTable(
            tuple(self.recording_ids[i] for i in idx),
            self.interval_starts[idx],
            self.embeddings[idx],
            self.vocab,
            None if self.logits is None else self.logits[idx],
            self.source_tag,
        )

    def same_rows(self, other: EmbeddingTable) -> bool:
        return self.recording_ids == other.recording_ids and np.array_equal(
            self.interval_starts, other.interval_starts
        )


@dataclass(frozen=True)
class SplitPair:
    train: EmbeddingTable
    validation: EmbeddingTable
    seed: int


@dataclass(frozen=True)
class DatasetSummary:
    n_intervals: int
    hours: float
    call_fraction: float

    def to_dict(self) -> dict:
        return {"n_intervals": self.n_intervals, "hours": self.hours, "call_fraction": self.call_fraction}


def _check_intervals(starts: np.ndarray) -> None:
    bad = np.nonzero((starts < 0) | (starts % INTERVAL_SEC != 0))[0]
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"row {i}: interval_start_sec {int(starts[i])} is not a non-negative multiple of {INTERVAL_SEC}"
        )


def _check_logits(logits: np.ndarray) -> None:
    bad = np.isnan(logits) | (logits == np.inf)
    if bad.any():
        i = int(np.nonzero(bad.any(axis=1))[0][0])
        raise DataError(f"row {i}: logits must be finite or -inf")


def load_vocabulary(path: str | Path) -> SpeciesVocabulary:
    """One species code per non-empty line; index is the ordinal among those lines."""
    path = Path(path)
    codes = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    codes = [c for c in codes if c]
    if not codes:
        raise DataError(f"vocabulary file {path} is empty")
    return SpeciesVocabulary(tuple(codes))


def write_vocabulary(vocab: SpeciesVocabulary, path: str | Path) -> None:
    Path(path).write_text("".join(f"{c}\n" for c in vocab.codes), encoding="utf-8")


def _parse_float(token: str, row: int, column: str, allow_neg_inf: bool) -> float:
    token = token.strip()
    if allow_neg_inf and token == "-inf":
        return -math.inf
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"row {row}, column {column}: cannot parse {token!r} as a number") from None
    if math.isnan(value):
        raise DataError(f"row {row}, column {column}: NaN is not allowed")
    if math.isinf(value):
        raise DataError(f"row {row}, column {column}: infinite value {token!r} is not allowed")
    return value


def read_manifest(manifest_path: str | Path) -> dict:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for key in ("embedding_dim", "has_logits", "vocabulary"):
        if key not in manifest:
            raise DataError(f"manifest {manifest_path} lacks required key {key!r}")
    if not isinstance(manifest["embedding_dim"], int) or manifest["embedding_dim"] < 1:
        raise DataError(f"manifest embedding_dim must be a positive integer, got {manifest['embedding_dim']!r}")
    if not isinstance(manifest["has_logits"], bool):
        raise DataError("manifest has_logits must be a boolean")
    return manifest


def load_embedding_table(data_path: str | Path, manifest_path: str | Path) -> EmbeddingTable:
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    vocab = load_vocabulary(manifest_path.parent / manifest["vocabulary"])
    dim = manifest["embedding_dim"]
    has_logits = manifest["has_logits"]
    n_classes = len(vocab) if has_logits else 0

    with open(data_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{data_path} is empty") from None
        header = [h.strip() for h in header]
        n_emb = sum(1 for h in header if h.startswith("emb_"))
        n_logit = sum(1 for h in header if h.startswith("logit_"))
        if n_emb != dim or n_logit != n_classes:
            raise DataError(
                f"header has {n_emb} embedding and {n_logit} logit columns; "
                f"manifest expects {dim} and {n_classes}"
            )
        expected = (
            ["recording_id", "interval_start_sec"]
            + [f"emb_{i}" for i in range(dim)]
            + [f"logit_{i}" for i in range(n_classes)]
        )
        if header != expected:
            raise DataError(f"header columns out of order or misnamed; expected {expected[:3]}...")

        ids: list[str] = []
        starts: list[int] = []
        emb_rows: list[list[float]] = []
        logit_rows: list[list[float]] = []
        width = len(expected)
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"row {row_no}: expected {width} fields, got {len(row)}")
            ids.append(row[0])
            try:
                starts.append(int(row[1]))
            except ValueError:
                raise DataError(f"row {row_no}: interval_start_sec {row[1]!r} is not an integer") from None
            emb_rows.append([_parse_float(t, row_no, f"emb_{j}", False) for j, t in enumerate(row[2 : 2 + dim])])
            if has_logits:
                logit_rows.append(
                    [_parse_float(t, row_no, f"logit_{j}", True) for j, t in enumerate(row[2 + dim :])]
                )

    return EmbeddingTable(
        tuple(ids),
        np.array(starts, dtype=np.int64),
        np.array(emb_rows, dtype=np.float64).reshape(len(ids), dim),
        vocab,
        np.array(logit_rows, dtype=np.float64).reshape(len(ids), n_classes) if has_logits else None,
        str(manifest.get("source_tag", "")),
    )


def _fmt(x: float) -> str:
    return "-inf" if x == -math.inf else repr(float(x))


def write_embedding_table(
    table: EmbeddingTable,
    data_path: str | Path,
    manifest_path: str | Path,
    vocabulary_path: str | Path | None = None,
) -> None:
    """Write ``table`` as CSV + manifest. The vocabulary file defaults to ``vocab.txt`` beside the manifest."""
    data_path, manifest_path = Path(data_path), Path(manifest_path)
    vocabulary_path = Path(vocabulary_path) if vocabulary_path else manifest_path.parent / "vocab.txt"
    write_vocabulary(table.vocab, vocabulary_path)
    dim = table.embedding_dim
    header = ["recording_id", "interval_start_sec"] + [f"emb_{i}" for i in range(dim)]
    if table.has_logits:
        header += [f"logit_{i}" for i in range(len(table.vocab))]
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(table)):
            row = [table.recording_ids[i], str(int(table.interval_starts[i]))]
            row += [_fmt(v) for v in table.embeddings[i]]
            if table.logits is not None:
                row += [_fmt(v) for v in table.logits[i]]
            writer.writerow(row)
    try:
        vocab_ref = str(vocabulary_path.resolve().relative_to(manifest_path.parent.resolve()))
    except ValueError:
        vocab_ref = str(vocabulary_path.resolve())
    manifest = {
        "embedding_dim": dim,
        "has_logits": table.has_logits,
        "vocabulary": vocab_ref,
        "source_tag": table.source_tag,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the train and validation parts, each in ascending order.

    Rows are shuffled with SplitMix64 Fisher-Yates seeded by ``seed``; the first
    ``floor(train_fraction * n)`` shuffled rows form the training part.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if n < 1:
        raise DataError("cannot split an empty table")
    order = SplitMix64(seed).permutation(n)
    n_train = math.floor(train_fraction * n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def train_val_split(table: EmbeddingTable, train_fraction: float, seed: int) -> SplitPair:
    train_idx, val_idx = split_indices(len(table), train_fraction, seed)
    return SplitPair(table.take(train_idx), table.take(val_idx), seed)


def aggregate_windows(windows: Iterable[Sequence[float]]) -> np.ndarray:
    """Element-wise mean of equally sized window embeddings.

    Columns where every window agrees return that value unchanged, so the
    mean of n copies of v is exactly v.
    """
    rows = [np.asarray(w, dtype=np.float64).reshape(-1) for w in windows]
    if not rows:
        raise DataError("aggregate_windows needs at least one window")
    dims = {r.shape[0] for r in rows}
    if len(dims) != 1:
        raise DataError(f"windows have mixed dimensions {sorted(dims)}")
    stacked = np.stack(rows)
    same = (stacked == stacked[0]).all(axis=0)
    return np.where(same, stacked[0], stacked.mean(axis=0))


def flatten_frames(frames: Sequence[Sequence[float]]) -> np.ndarray:
    """Row-major concatenation of an F x K frame matrix."""
    rows = [np.asarray(f, dtype=np.float64).reshape(-1) for f in frames]
    if not rows:
        raise DataError("flatten_frames needs at least one frame")
    widths = {r.shape[0] for r in rows}
    if len(widths) != 1:
        raise DataError(f"ragged frames with widths {sorted(widths)}")
    if 0 in widths:
        raise DataError("frames must have at least one column")
    return np.concatenate(rows)


def summarize_table(table: EmbeddingTable, threshold: float = 0.5) -> DatasetSummary:
    from birdxfer.pseudolabel import call_indicator, threshold_predictions

    if table.logits is None:
        raise DataError("summarize_table needs a table with logits")
    n = len(table)
    bits = threshold_predictions(table.logits, threshold)
    calls = int(np.sum(call_indicator(bits))) if n else 0
    return DatasetSummary(n, n * INTERVAL_SEC / 3600.0, calls / n if n else 0.0)
