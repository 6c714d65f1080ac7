"""Weighted preference losses and their analytic gradients.

The per-pair loss is ``-log sigmoid(beta * delta - margin)`` where
``delta`` is the weighted difference of per-token scores between the
chosen and rejected responses. The score is the policy/reference
log-ratio q for every scheme except the length-normalized policy-only
scheme ("simpo"), which by its definition uses raw policy log-probs and
a fixed margin. Gradients are taken with respect to the per-token score
inputs with the weights held constant: weights are functions of hidden
states, never of the scores they multiply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PreferencePair, SchemaError
from .weighting import SimPo, TokenWeights, WeightScheme, weights


def softplus(x: float) -> float:
    """log(1 + exp(x)) via the max/log1p split, stable for any magnitude."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class LossConfig:
    beta: float
    scheme: WeightScheme
    simpo_gamma: float = 0.0

    def __post_init__(self):
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise SchemaError(f"beta must be finite and > 0, got {self.beta}")
        if not (self.simpo_gamma >= 0 and np.isfinite(self.simpo_gamma)):
            raise SchemaError(f"simpo_gamma must be finite and >= 0, got {self.simpo_gamma}")


@dataclass(frozen=True)
class LossReport:
    """Loss, reward difference, and per-token contributions for one pair."""

    delta_r: float
    loss: float
    dloss_ddelta: float
    grad_q_chosen: np.ndarray
    grad_q_rejected: np.ndarray
    per_token_chosen: np.ndarray
    per_token_rejected: np.ndarray


@dataclass(frozen=True)
class BatchSummary:
    mean_loss: float
    mean_delta_r: float
    mean_grad_norm: float
    n_pairs: int


def _scores(pair: PreferencePair, cfg: LossConfig):
    if isinstance(cfg.scheme, SimPo):
        return pair.chosen.logp_policy, pair.rejected.logp_policy, cfg.simpo_gamma
    return pair.chosen.log_ratio, pair.rejected.log_ratio, 0.0


def weighted_delta_r(q_c, q_r, w: TokenWeights) -> float:
    """Weighted chosen-minus-rejected total of per-token scores."""
    q_c = np.asarray(q_c, dtype=np.float64)
    q_r = np.asarray(q_r, dtype=np.float64)
    if q_c.shape != w.w_chosen.shape:
        raise SchemaError(
            f"chosen scores have length {q_c.size} but weights have {w.w_chosen.size}"
        )
    if q_r.shape != w.w_rejected.shape:
        raise SchemaError(
            f"rejected scores have length {q_r.size} but weights have {w.w_rejected.size}"
        )
    return float((w.w_chosen * q_c).sum() - (w.w_rejected * q_r).sum())


def pair_loss(pair: PreferencePair, cfg: LossConfig,
              token_weights: TokenWeights | None = None) -> LossReport:
    """Loss report for one pair; ``token_weights`` may be passed to reuse
    weights that were computed earlier (they do not depend on scores)."""
    w = token_weights if token_weights is not None else weights(pair, cfg.scheme)
    s_c, s_r, margin = _scores(pair, cfg)
    if w.w_chosen.size != s_c.size or w.w_rejected.size != s_r.size:
        raise SchemaError(
            f"weight lengths ({w.w_chosen.size}, {w.w_rejected.size}) do not match"
            f" the pair's token counts ({s_c.size}, {s_r.size})"
        )
    per_c = w.w_chosen * s_c
    per_r = w.w_rejected * s_r
    delta = float(per_c.sum() - per_r.sum())
    z = cfg.beta * delta - margin
    loss_val = softplus(-z)
    dld = -cfg.beta * sigmoid(-z)
    return LossReport(
        delta_r=delta,
        loss=loss_val,
        dloss_ddelta=dld,
        grad_q_chosen=dld * w.w_chosen,
        grad_q_rejected=-dld * w.w_rejected,
        per_token_chosen=per_c,
        per_token_rejected=per_r,
    )


def grad_norm(report: LossReport) -> float:
    """L2 norm of the concatenated per-token gradient vectors."""
    return float(
        np.sqrt((report.grad_q_chosen ** 2).sum() + (report.grad_q_rejected ** 2).sum())
    )


def batch_loss(pairs, cfg: LossConfig) -> BatchSummary:
    """Arithmetic means over per-pair reports, in pair order."""
    if len(pairs) == 0:
        raise SchemaError("batch_loss requires a nonempty batch")
    reports = [pair_loss(p, cfg) for p in pairs]
    n = len(reports)
    return BatchSummary(
        mean_loss=sum(r.loss for r in reports) / n,
        mean_delta_r=sum(r.delta_r for r in reports) / n,
        mean_grad_norm=sum(grad_norm(r) for r in reports) / n,
        n_pairs=n,
    )


def report_to_record(pair_id: str, report: LossReport) -> dict:
    """JSON-ready per-pair loss record."""
    return {
        "pair_id": pair_id,
        "delta_r": report.delta_r,
        "loss": report.loss,
        "dloss_ddelta": report.dloss_ddelta,
        "grad_q_chosen": report.grad_q_chosen.tolist(),
        "grad_q_rejected": report.grad_q_rejected.tolist(),
        "per_token_chosen": report.per_token_chosen.tolist(),
        "per_token_rejected": report.per_token_rejected.tolist(),
    }
