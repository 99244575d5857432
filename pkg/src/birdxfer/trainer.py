"""Linear and one-hidden-layer classifier heads trained with Adam on embeddings.

Everything is plain numpy. Randomness (weight init, split, per-epoch batch
order) comes from SplitMix64 so a (data, config, seed) triple fixes every
parameter bit-for-bit.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from birdxfer.dataset import EmbeddingTable, SpeciesVocabulary, split_indices
from birdxfer.errors import ConfigError, DataError, TrainingError
from birdxfer.losses import AslParams, LossResult, SigmoidF1Params, make_loss
from birdxfer.metrics import evaluate
from birdxfer.pseudolabel import LabelMatrix, sigmoid
from birdxfer.rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    hidden_dim: int
    output_dim: int

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1 or self.hidden_dim < 0:
            raise DataError(f"invalid architecture {self}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        if self.hidden_dim == 0:
            return [(self.input_dim, self.output_dim)]
        return [(self.input_dim, self.hidden_dim), (self.hidden_dim, self.output_dim)]


@dataclass
class ClassifierModel:
    arch: ModelArch
    vocab: SpeciesVocabulary
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        shapes = self.arch.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise DataError(f"expected {len(shapes)} layers, got {len(self.weights)}")
        for k, (w, b, shape) in enumerate(zip(self.weights, self.biases, shapes)):
            if w.shape != shape or b.shape != (shape[1],):
                raise DataError(f"layer {k}: weight {w.shape} / bias {b.shape} do not match {shape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise DataError(f"layer {k}: non-finite parameters")
        if self.arch.output_dim != len(self.vocab):
            raise DataError(f"output_dim {self.arch.output_dim} != vocabulary size {len(self.vocab)}")

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> ClassifierModel:
        return ClassifierModel(
            self.arch,
            self.vocab,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            copy.deepcopy(self.meta),
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 1000
    learning_rate: float = 1e-3
    seed: int = 0
    train_fraction: float = 0.8
    species_augmentation: bool = False
    hidden_dim: int = 0
    loss: str = "bce"
    gamma_pos: float = 1.0
    gamma_neg: float = 4.0
    margin: float = 0.05
    # sigmoidF1 sweep convention: S = -beta, E = eta
    S: float = -1.0
    E: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.hidden_dim < 0:
            raise ConfigError("hidden_dim must be >= 0")
        if self.loss not in ("bce", "asl", "sigmoidf1"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        try:
            self.asl_params()
            self.sigmoidf1_params()
        except DataError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in data.items():
            ftype = type(getattr(cls, key))
            if ftype is str and not isinstance(value, str):
                raise ConfigError(f"train config {key!r} must be a string")
            if ftype is bool and not isinstance(value, bool):
                raise ConfigError(f"train config {key!r} must be a boolean")
            if ftype in (int, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigError(f"train config {key!r} must be a number")
            if ftype is int and not float(value).is_integer():
                raise ConfigError(f"train config {key!r} must be an integer")
            kwargs[key] = ftype(value)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    def asl_params(self) -> AslParams:
        return AslParams(self.gamma_pos, self.gamma_neg, self.margin)

    def sigmoidf1_params(self) -> SigmoidF1Params:
        return SigmoidF1Params.from_sweep(self.S, self.E)

    def loss_fn(self):
        return make_loss(self.loss, self.asl_params(), self.sigmoidf1_params())


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: float
    val_macro_auroc: float | None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_macro_f1", "val_macro_auroc"])
            for r in self.records:
                auroc = "" if r.val_macro_auroc is None else repr(r.val_macro_auroc)
                writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_macro_f1), auroc])


def init_model(arch: ModelArch, seed: int, vocab: SpeciesVocabulary | None = None) -> ClassifierModel:
    """Glorot-uniform weights from SplitMix64(seed), zero biases."""
    if vocab is None:
        vocab = SpeciesVocabulary(tuple(f"class_{i}" for i in range(arch.output_dim)))
    gen = SplitMix64(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_shapes():
        a = math.sqrt(6.0 / (fan_in + fan_out))
        u = gen.uniform(fan_in * fan_out).reshape(fan_in, fan_out)
        weights.append((2.0 * u - 1.0) * a)
        biases.append(np.zeros(fan_out))
    return ClassifierModel(arch, vocab, weights, biases, {"seed": seed})


def _as_input(model: ClassifierModel, embeddings) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise DataError(f"input shape {x.shape} does not match model input_dim {model.arch.input_dim}")
    return x


def _forward_cached(model: ClassifierModel, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    # cache holds the input of every layer
    cache = [x]
    h = x
    n_layers = len(model.weights)
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if k < n_layers - 1:
            h = np.maximum(h, 0.0)
            cache.append(h)
    return h, cache


def forward(model: ClassifierModel, embeddings) -> np.ndarray:
    """Logits: ``XW + b`` or ``ReLU(XW1 + b1) W2 + b2``."""
    logits, _ = _forward_cached(model, _as_input(model, embeddings))
    return logits


def loss_and_grads(model: ClassifierModel, embeddings, labels, loss_fn) -> tuple[LossResult, list[np.ndarray]]:
    """Loss on a batch and gradients for ``model.params()`` (same order)."""
    x = _as_input(model, embeddings)
    logits, cache = _forward_cached(model, x)
    res = loss_fn(logits, labels)
    delta = res.grad_logits
    grads: list[np.ndarray] = []
    for k in range(len(model.weights) - 1, -1, -1):
        inp = cache[k]
        grads = [inp.T @ delta, delta.sum(axis=0)] + grads
        if k > 0:
            delta = (delta @ model.weights[k].T) * (cache[k] > 0)
    return res, grads


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float) -> None:
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def predict(model: ClassifierModel, table: EmbeddingTable | np.ndarray) -> np.ndarray:
    """N x C probabilities, row-aligned with the table."""
    x = table.embeddings if isinstance(table, EmbeddingTable) else table
    return sigmoid(forward(model, x))


def _selection_key(rec: EpochRecord) -> tuple[float, float, int]:
    auroc = -math.inf if rec.val_macro_auroc is None else rec.val_macro_auroc
    return (auroc, rec.val_macro_f1, rec.epoch)


def train(
    table: EmbeddingTable,
    labels: LabelMatrix,
    config: TrainConfig,
) -> tuple[ClassifierModel, TrainHistory]:
    """Train a head on a seeded train/validation split of ``table``.

    Returns the parameters from the epoch with the best validation AUROC
    (ties broken by macro-F1, then by the later epoch).
    """
    if not labels.aligned_with(table):
        raise DataError(f"labels ({len(labels)} rows) are not aligned with the table ({len(table)} rows)")
    if labels.vocab.codes != table.vocab.codes:
        raise DataError("label and table vocabularies differ")
    if not labels.bits.any():
        raise DataError("label matrix has no positive labels")

    train_idx, val_idx = split_indices(len(table), config.train_fraction, config.seed)
    if train_idx.size == 0:
        raise DataError(f"training split is empty for {len(table)} rows at fraction {config.train_fraction}")
    x_train = table.embeddings[train_idx]
    y_train = labels.bits[train_idx].astype(np.float64)
    x_val = table.embeddings[val_idx]
    y_val = labels.bits[val_idx]

    arch = ModelArch(table.embedding_dim, config.hidden_dim, len(table.vocab))
    model = init_model(arch, config.seed, table.vocab)
    params = model.params()
    opt = Adam(params, config.learning_rate)
    loss_fn = config.loss_fn()
    history = TrainHistory()
    best: ClassifierModel | None = None
    best_key = None

    n_train = train_idx.size
    for epoch in range(1, config.epochs + 1):
        order = SplitMix64(derive_seed(config.seed, epoch)).permutation(n_train)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n_train, config.batch_size)):
            batch = order[start : start + config.batch_size]
            yb = y_train[batch]
            if config.loss == "sigmoidf1" and not yb.any():
                log.warning("epoch %d batch %d has no positives; skipped for sigmoidF1", epoch, b)
                continue
            res, grads = loss_and_grads(model, x_train[batch], yb, loss_fn)
            if not math.isfinite(res.value) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            opt.step(params, grads)
            total += res.value * batch.size
            seen += batch.size
        report = evaluate(predict(model, x_val), y_val)
        rec = EpochRecord(epoch, total / seen if seen else math.nan, report.macro_f1, report.macro_auroc)
        history.records.append(rec)
        log.info("epoch %d loss %.6f val_f1 %.4f val_auroc %s", epoch, rec.train_loss, rec.val_macro_f1, rec.val_macro_auroc)
        key = _selection_key(rec)
        if best_key is None or key >= best_key:
            best_key = key
            best = model.copy()
            history.best_epoch = epoch

    assert best is not None
    best.meta = {
        "seed": config.seed,
        "epochs_run": config.epochs,
        "best_epoch": history.best_epoch,
        "loss": config.loss,
    }
    return best, history


def _layer_to_json(w: np.ndarray, b: np.ndarray) -> dict:
    return {"w": w.tolist(), "b": b.tolist()}


def save_model(model: ClassifierModel, path: str | Path) -> None:
    doc = {
        "schema": SCHEMA_VERSION,
        "arch": asdict(model.arch),
        "vocab": list(model.vocab.codes),
        "layers": [_layer_to_json(w, b) for w, b in zip(model.weights, model.biases)],
        "meta": model.meta,
    }
    # json writes floats with repr, which round-trips every double exactly
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ClassifierModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: checkpoint must be a JSON object")

    def need(obj: dict, key: str, where: str):
        if not isinstance(obj, dict) or key not in obj:
            raise DataError(f"{path}: missing field {where}{key}")
        return obj[key]

    schema = need(doc, "schema", "")
    if schema != SCHEMA_VERSION:
        raise DataError(f"{path}: schema version {schema!r} is not supported (expected {SCHEMA_VERSION})")
    arch_doc = need(doc, "arch", "")
    try:
        arch = ModelArch(*(int(need(arch_doc, k, "arch.")) for k in ("input_dim", "hidden_dim", "output_dim")))
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid field arch ({exc})") from None
    vocab = SpeciesVocabulary(tuple(need(doc, "vocab", "")))
    layers = need(doc, "layers", "")
    weights, biases = [], []
    for k, layer in enumerate(layers):
        for key, dest in (("w", weights), ("b", biases)):
            raw = need(layer, key, f"layers[{k}].")
            try:
                dest.append(np.array(raw, dtype=np.float64))
            except (TypeError, ValueError):
                raise DataError(f"{path}: field layers[{k}].{key} holds non-numeric values") from None
    meta = doc.get("meta", {})
    try:
        return ClassifierModel(arch, vocab, weights, biases, meta)
    except DataError as exc:
        raise DataError(f"{path}: field layers: {exc}") from None
