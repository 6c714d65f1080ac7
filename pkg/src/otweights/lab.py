"""Desk-scale verification lab.

A bigram softmax policy is the smallest model whose token log-probs
depend nontrivially on parameters, which keeps finite-difference checks
of the training gradients fast and sharp. The synthetic generator plants
a shared token span at the front of both responses (same ids, same
hidden vectors) followed by divergent filler, plus an optional expected
length offset between chosen and rejected; this is the setting where
context-aware weighting and plain uniform weighting should behave
differently. Hidden states come from a fixed embedding table plus
per-token noise, never from the policy itself, mirroring the contract
that hidden states are caller-supplied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PreferencePair, SchemaError, TokenSeq
from .loss import LossConfig
from .ot import NumericalError
from .weighting import SimPo, weights

BOS_CONTEXT = 0     # bigram context used for the first token of a response
BASE_LEN = 12       # mean response length before bias and jitter
LEN_JITTER = 2      # lengths vary by a uniform integer in [-LEN_JITTER, LEN_JITTER]


@dataclass
class ToyPolicy:
    """Bigram policy: logits[c, t] scores token t after context token c.

    The embedding table is only used to synthesize hidden states for
    generated corpora; the policy's probabilities never touch it.
    """

    logits: np.ndarray
    embedding: np.ndarray

    @classmethod
    def create(cls, vocab_size: int, d: int, seed: int) -> "ToyPolicy":
        rng = np.random.default_rng([int(seed), 0x70C4])
        logits = 0.1 * rng.standard_normal((vocab_size, vocab_size))
        embedding = rng.standard_normal((vocab_size, d)) / np.sqrt(d)
        return cls(logits, embedding)

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[0]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.logits.copy(), self.embedding.copy())

    def log_prob_table(self) -> np.ndarray:
        z = self.logits
        mx = z.max(axis=1, keepdims=True)
        return z - (mx + np.log(np.exp(z - mx).sum(axis=1, keepdims=True)))

    def response_logp(self, token_ids) -> np.ndarray:
        """Per-token log-probs with the previous token as context."""
        ids = np.asarray(token_ids, dtype=np.int64)
        ctx = np.concatenate(([BOS_CONTEXT], ids[:-1]))
        return self.log_prob_table()[ctx, ids]


def _contexts(token_ids: np.ndarray) -> np.ndarray:
    return np.concatenate(([BOS_CONTEXT], np.asarray(token_ids)[:-1]))


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 64
    d: int = 16
    num_pairs: int = 100
    shared_span_len: int = 6
    length_bias: int = 10
    noise_scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d", "num_pairs", "shared_span_len"):
            if getattr(self, name) < 1:
                raise SchemaError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (self.noise_scale >= 0 and np.isfinite(self.noise_scale)):
            raise SchemaError(f"noise_scale must be finite and >= 0, got {self.noise_scale}")


def reference_policy(cfg: SynthConfig) -> ToyPolicy:
    """The frozen policy whose evaluations fill the generated logp fields."""
    return ToyPolicy.create(cfg.vocab_size, cfg.d, cfg.seed)


def generate(cfg: SynthConfig) -> list[PreferencePair]:
    """Deterministic synthetic corpus of preference pairs.

    Each pair starts with a shared span copied verbatim into both
    responses (identical ids and identical hidden vectors), followed by
    side-specific filler. Response lengths are BASE_LEN plus the length
    bias on the appropriate side plus an integer jitter, floored at the
    shared span length; setting shared_span_len at or above that range
    makes the two responses token-identical. Both logp fields are filled
    by the fixed reference policy, so generated corpora start from a
    policy equal to its reference.
    """
    policy = reference_policy(cfg)
    table = policy.log_prob_table()
    emb = policy.embedding
    pairs = []
    for k in range(cfg.num_pairs):
        rng = np.random.default_rng([int(cfg.seed), 0x5EED, k])
        s = cfg.shared_span_len
        shared_ids = rng.integers(0, cfg.vocab_size, size=s)
        shared_hidden = emb[shared_ids] + cfg.noise_scale * rng.standard_normal((s, cfg.d))

        sides = {}
        for side, bias in (("c", max(cfg.length_bias, 0)), ("r", max(-cfg.length_bias, 0))):
            jitter = int(rng.integers(-LEN_JITTER, LEN_JITTER + 1))
            n = max(s, BASE_LEN + bias + jitter)
            filler_ids = rng.integers(0, cfg.vocab_size, size=n - s)
            filler_hidden = (
                emb[filler_ids]
                + cfg.noise_scale * rng.standard_normal((n - s, cfg.d))
            )
            ids = np.concatenate([shared_ids, filler_ids])
            hidden = np.vstack([shared_hidden, filler_hidden])
            logp = table[_contexts(ids), ids]
            sides[side] = TokenSeq(ids, logp, logp, hidden)
        pairs.append(PreferencePair(f"synth-{k:06d}", sides["c"], sides["r"]))
    return pairs


@dataclass(frozen=True)
class LengthFit:
    """OLS fit of per-response log-prob change against response length."""

    slope: float
    intercept: float
    r: float
    r_defined: bool


def ols_fit(x, y) -> LengthFit:
    """Closed-form least squares of y on x; r is flagged undefined for flat y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.unique(x).size < 2:
        raise SchemaError("regression needs at least 2 distinct x values")
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    sxy = float(((x - xm) * (y - ym)).sum())
    syy = float(((y - ym) ** 2).sum())
    slope = sxy / sxx
    intercept = ym - slope * xm
    if syy == 0.0:
        return LengthFit(slope, intercept, 0.0, False)
    return LengthFit(slope, intercept, sxy / float(np.sqrt(sxx * syy)), True)


def length_diagnostics(policy_before: ToyPolicy, policy_after: ToyPolicy,
                       pairs) -> LengthFit:
    """Regress per-response total logp change (after - before) on length."""
    if len(pairs) == 0:
        raise SchemaError("length_diagnostics requires a nonempty corpus")
    table_b = policy_before.log_prob_table()
    table_a = policy_after.log_prob_table()
    xs, ys = [], []
    for p in pairs:
        for seq in (p.chosen, p.rejected):
            ids = seq.token_ids
            ctx = _contexts(ids)
            xs.append(float(ids.size))
            ys.append(float(table_a[ctx, ids].sum() - table_b[ctx, ids].sum()))
    return ols_fit(xs, ys)


@dataclass(frozen=True)
class TrainReport:
    """Per-step series plus end-of-run diagnostics."""

    loss: np.ndarray
    delta_r: np.ndarray
    grad_norm: np.ndarray
    mean_chosen_len: np.ndarray
    mean_rejected_len: np.ndarray
    length_fit: LengthFit
    reward_margin_mean: float
    reward_margin_std: float


class _FlatCorpus:
    """Token-level view of a corpus for vectorized loss/gradient steps."""

    def __init__(self, pairs, cfg: LossConfig, ref_table: np.ndarray):
        ctx, tok, sign, w, pair_idx = [], [], [], [], []
        for i, pair in enumerate(pairs):
            tw = weights(pair, cfg.scheme)
            for seq, s, wv in ((pair.chosen, 1.0, tw.w_chosen),
                               (pair.rejected, -1.0, tw.w_rejected)):
                ids = seq.token_ids
                ctx.append(_contexts(ids))
                tok.append(ids)
                sign.append(np.full(ids.size, s))
                w.append(wv)
                pair_idx.append(np.full(ids.size, i, dtype=np.int64))
        self.ctx = np.concatenate(ctx)
        self.tok = np.concatenate(tok)
        self.sign = np.concatenate(sign)
        self.w = np.concatenate(w)
        self.pair_idx = np.concatenate(pair_idx)
        self.n_pairs = len(pairs)
        self.ref_logp = ref_table[self.ctx, self.tok]
        self.policy_only = isinstance(cfg.scheme, SimPo)
        self.margin = cfg.simpo_gamma if self.policy_only else 0.0


def _step_stats(flat: _FlatCorpus, cfg: LossConfig, table: np.ndarray):
    cur = table[flat.ctx, flat.tok]
    score = cur if flat.policy_only else cur - flat.ref_logp
    delta = np.bincount(flat.pair_idx, weights=flat.sign * flat.w * score,
                        minlength=flat.n_pairs)
    z = cfg.beta * delta - flat.margin
    losses = np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    with np.errstate(over="ignore"):
        dld = -cfg.beta / (1.0 + np.exp(z))
    return delta, losses, dld


def _logits_grad(flat: _FlatCorpus, table: np.ndarray, dld: np.ndarray,
                 vocab: int) -> np.ndarray:
    """Chain per-token loss gradients through the bigram softmax rows."""
    g_tok = dld[flat.pair_idx] * flat.sign * flat.w / flat.n_pairs
    grad = np.zeros((vocab, vocab))
    np.add.at(grad, (flat.ctx, flat.tok), g_tok)
    row_tot = np.bincount(flat.ctx, weights=g_tok, minlength=vocab)
    grad -= row_tot[:, None] * np.exp(table)
    return grad


def corpus_loss_grad(policy: ToyPolicy, reference: ToyPolicy, pairs,
                     cfg: LossConfig):
    """Mean loss over the corpus and its gradient w.r.t. the policy logits.

    This is exactly one trainer step's objective and analytic gradient,
    exposed so callers can probe arbitrary (policy, reference) points,
    e.g. for finite-difference verification.
    """
    flat = _FlatCorpus(pairs, cfg, reference.log_prob_table())
    table = policy.log_prob_table()
    _, losses, dld = _step_stats(flat, cfg, table)
    return float(losses.mean()), _logits_grad(flat, table, dld, policy.vocab_size)


def train(policy: ToyPolicy, pairs, cfg: LossConfig, steps: int, lr: float) -> TrainReport:
    """Plain gradient descent on the policy logits.

    The reference policy is a frozen copy taken at entry. Per-token
    weights are computed once up front: they depend only on hidden
    states and pair ids, so they are constants throughout training.
    The per-pair gradients with respect to token log-probs are chained
    through the bigram softmax analytically; ``policy.logits`` is
    updated in place.
    """
    if steps < 1:
        raise SchemaError(f"steps must be >= 1, got {steps}")
    if not (lr >= 0 and np.isfinite(lr)):
        raise SchemaError(f"lr must be finite and >= 0, got {lr}")
    if len(pairs) == 0:
        raise SchemaError("train requires a nonempty corpus")

    before = policy.copy()
    flat = _FlatCorpus(pairs, cfg, before.log_prob_table())
    v = policy.vocab_size

    mean_len_c = float(np.mean([len(p.chosen) for p in pairs]))
    mean_len_r = float(np.mean([len(p.rejected) for p in pairs]))

    series = {"loss": [], "delta": [], "gnorm": []}
    for t in range(steps):
        table = policy.log_prob_table()
        delta, losses, dld = _step_stats(flat, cfg, table)
        mean_loss = float(losses.mean())
        if not np.isfinite(mean_loss):
            raise NumericalError(f"non-finite loss at step {t}")

        grad = _logits_grad(flat, table, dld, v)

        series["loss"].append(mean_loss)
        series["delta"].append(float(delta.mean()))
        series["gnorm"].append(float(np.sqrt((grad ** 2).sum())))
        policy.logits -= lr * grad

    final_delta, _, _ = _step_stats(flat, cfg, policy.log_prob_table())
    margins = cfg.beta * final_delta
    return TrainReport(
        loss=np.asarray(series["loss"]),
        delta_r=np.asarray(series["delta"]),
        grad_norm=np.asarray(series["gnorm"]),
        mean_chosen_len=np.full(steps, mean_len_c),
        mean_rejected_len=np.full(steps, mean_len_r),
        length_fit=length_diagnostics(before, policy, pairs),
        reward_margin_mean=float(margins.mean()),
        reward_margin_std=float(margins.std()),
    )
