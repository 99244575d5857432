"""Seeded synthetic tables for demos and tests."""

from __future__ import annotations

import numpy as np

from birdxfer.dataset import INTERVAL_SEC, EmbeddingTable, SpeciesVocabulary
from birdxfer.pseudolabel import LabelMatrix
from birdxfer.rng import SplitMix64


def _layout(n: int, per_recording: int) -> tuple[tuple[str, ...], np.ndarray]:
    ids = tuple(f"rec{i // per_recording:04d}" for i in range(n))
    starts = np.array([INTERVAL_SEC * (i % per_recording) for i in range(n)], dtype=np.int64)
    return ids, starts


def separable_task(
    seed: int = 42, n: int = 600, dim: int = 8, n_classes: int = 3, per_recording: int = 48
) -> tuple[EmbeddingTable, LabelMatrix]:
    """Uniform features in [-1, 1]^dim, labels = sign of a fixed random linear map.

    The logits column stores that linear map, so thresholding at 0.5 reproduces the labels.
    """
    gen = SplitMix64(seed)
    x = gen.uniform(n * dim).reshape(n, dim) * 2.0 - 1.0
    w = gen.uniform(dim * n_classes).reshape(dim, n_classes) * 2.0 - 1.0
    scores = x @ w
    vocab = SpeciesVocabulary(tuple(f"sp{c}" for c in range(n_classes)))
    ids, starts = _layout(n, per_recording)
    table = EmbeddingTable(ids, starts, x, vocab, scores, "synthetic-separable")
    return table, LabelMatrix(ids, starts, (scores > 0).astype(np.uint8), vocab)


def folder_species_task(
    seed: int = 7,
    n_recordings: int = 40,
    per_recording: int = 15,
    dim: int = 8,
    n_classes: int = 4,
    call_rate: float = 0.7,
    surrogate_hit_rate: float = 0.35,
) -> tuple[EmbeddingTable, dict[str, str], LabelMatrix]:
    """Recordings whose folder species is what is actually calling.

    Embeddings of a calling interval sit near a per-species centroid. The
    surrogate detects the call but names the right species only with
    probability ``surrogate_hit_rate``; otherwise it names the next species
    in the vocabulary. Returns the table (with surrogate logits), the
    folder-species map and the ground-truth labels.
    """
    gen = SplitMix64(seed)
    vocab = SpeciesVocabulary(tuple(f"sp{c}" for c in range(n_classes)))
    n = n_recordings * per_recording
    ids, starts = _layout(n, per_recording)
    folder = {f"rec{r:04d}": vocab.codes[r % n_classes] for r in range(n_recordings)}
    species = np.array([r % n_classes for r in range(n_recordings)]).repeat(per_recording)

    u_call, u_hit = gen.uniform(n), gen.uniform(n)
    noise = gen.uniform(n * dim).reshape(n, dim) - 0.5
    calls = u_call < call_rate
    x = noise.copy()
    x[np.nonzero(calls)[0], species[calls]] += 2.0

    logits = np.full((n, n_classes), -5.0)
    named = np.where(u_hit < surrogate_hit_rate, species, (species + 1) % n_classes)
    logits[np.nonzero(calls)[0], named[calls]] = 3.0

    truth = np.zeros((n, n_classes), dtype=np.uint8)
    truth[np.nonzero(calls)[0], species[calls]] = 1
    table = EmbeddingTable(ids, starts, x, vocab, logits, "synthetic-folder")
    return table, folder, LabelMatrix(ids, starts, truth, vocab)
