"""Multi-label losses with analytic gradients with respect to logits.

BCE and ASL are summed over classes and averaged over samples. sigmoidF1
computes a single soft F1 ratio from confusion counts summed over the whole
batch, so its value is not a per-sample mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from birdxfer.errors import DataError


@dataclass(frozen=True)
class AslParams:
    gamma_pos: float = 1.0
    gamma_neg: float = 4.0
    margin: float = 0.05

    def __post_init__(self) -> None:
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise DataError("ASL focusing exponents must be non-negative")
        if not 0.0 <= self.margin < 1.0:
            raise DataError(f"ASL margin must lie in [0, 1), got {self.margin}")


@dataclass(frozen=True)
class SigmoidF1Params:
    """Slope ``beta`` and offset ``eta`` of the relaxed step S(u) = 1 / (1 + exp(-beta (u + eta)))."""

    beta: float = 1.0
    eta: float = 0.0

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise DataError(f"sigmoidF1 beta must be positive, got {self.beta}")

    @classmethod
    def from_sweep(cls, S: float, E: float) -> SigmoidF1Params:
        """Build from the sweep convention S = -beta, E = eta."""
        return cls(beta=-S, eta=E)


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_logits: np.ndarray


def _check(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape != y.shape:
        raise DataError(f"logits shape {x.shape} and labels shape {y.shape} must match and be 2-D")
    return x, y


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; both branches are accurate in their half-line.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bce_loss(logits, labels) -> LossResult:
    x, y = _check(logits, labels)
    n = x.shape[0]
    per_elem = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    value = float(per_elem.sum() / n) if n else 0.0
    grad = (_sigmoid(x) - y) / max(n, 1)
    return LossResult(value, grad)


def asl_loss(logits, labels, params: AslParams = AslParams()) -> LossResult:
    """Asymmetric loss with shifted negative probability p_m = max(p - margin, 0).

    The clamped branch (p <= margin) contributes neither loss nor gradient.
    """
    x, y = _check(logits, labels)
    n = x.shape[0]
    gp, gn, m = params.gamma_pos, params.gamma_neg, params.margin
    p = _sigmoid(x)
    q = _sigmoid(-x)  # 1 - p without cancellation

    # positives: -(1-p)^gp log p
    log_p = -_softplus(-x)
    w_pos = q**gp
    loss_pos = -w_pos * log_p
    grad_pos = gp * w_pos * p * log_p - w_pos * q

    # negatives: -p_m^gn log(1 - p_m)
    active = p > m
    pm = np.where(active, p - m, 0.0)
    one_minus_pm = np.where(active, q + m, 1.0)
    log_1m_pm = -_softplus(x) if m == 0 else np.log(one_minus_pm)
    log_1m_pm = np.where(active, log_1m_pm, 0.0)
    w_neg = pm**gn
    loss_neg = -w_neg * log_1m_pm
    dp = p * q
    # p(1-p) / (1 - p_m) reduces to p when margin is 0
    ratio = p if m == 0 else dp / one_minus_pm
    grad_neg = w_neg * ratio
    if gn != 0:
        safe_pm = np.where(active, pm, 1.0)
        grad_neg = grad_neg - gn * safe_pm ** (gn - 1.0) * log_1m_pm * dp
    grad_neg = np.where(active, grad_neg, 0.0)
    loss_neg = np.where(active, loss_neg, 0.0)

    per_elem = y * loss_pos + (1.0 - y) * loss_neg
    grad = y * grad_pos + (1.0 - y) * grad_neg
    d = max(n, 1)
    return LossResult(float(per_elem.sum() / d) if n else 0.0, grad / d)


def sigmoidf1_loss(logits, labels, params: SigmoidF1Params = SigmoidF1Params()) -> LossResult:
    """1 - soft F1 where tp, fp, fn are batch sums of the relaxed step S(logit)."""
    x, y = _check(logits, labels)
    n_pos = float(y.sum())
    if n_pos <= 0:
        raise DataError("sigmoidF1 is undefined for a batch without positive labels")
    z = params.beta * (x + params.eta)
    s = _sigmoid(z)
    tp = float((s * y).sum())
    fp = float((s * (1.0 - y)).sum())
    fn = float(((1.0 - s) * y).sum())
    denom = 2.0 * tp + fn + fp
    value = 1.0 - 2.0 * tp / denom
    # denom == n_pos + sum(s), so d denom / d s = 1 everywhere
    d_s = -(2.0 * y * denom - 2.0 * tp) / denom**2
    grad = d_s * params.beta * s * _sigmoid(-z)
    return LossResult(value, grad)


def make_loss(name: str, asl: AslParams | None = None, sigmoidf1: SigmoidF1Params | None = None):
    """Return ``f(logits, labels) -> LossResult`` for a loss name."""
    if name == "bce":
        return bce_loss
    if name == "asl":
        params = asl or AslParams()
        return lambda x, y: asl_loss(x, y, params)
    if name == "sigmoidf1":
        params_f1 = sigmoidf1 or SigmoidF1Params()
        return lambda x, y: sigmoidf1_loss(x, y, params_f1)
    raise DataError(f"unknown loss {name!r}; expected bce, asl or sigmoidf1")
