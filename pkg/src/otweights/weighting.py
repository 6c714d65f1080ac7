"""Per-token weighting schemes for preference pairs.

Every scheme maps a pair to nonnegative weight vectors (w_chosen,
w_rejected), one weight per response token. The transport-based scheme
derives weights from the marginals of an unbalanced OT plan between the
two responses' hidden states and then rescales them to a fixed budget;
the remaining schemes are the closed-form baselines and ablations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .core import PreferencePair, SchemaError
from .ot import NumericalError, TransportPlan, UotConfig, cost_matrix, solve_uot
from .prng import sample_without_replacement


class TauMode(str, enum.Enum):
    """Weight-budget normalization applied to transport-plan marginals."""

    MIN_LEN = "min"
    MEAN_LEN = "mean"
    MAX_LEN = "max"
    PER_LENGTH = "length"
    NONE = "none"


@dataclass(frozen=True)
class Dpo:
    name = "dpo"


@dataclass(frozen=True)
class SimPo:
    name = "simpo"


@dataclass(frozen=True)
class SamPo:
    seed: int = 0
    name = "sampo"


@dataclass(frozen=True)
class LdDpo:
    alpha: float = 0.5
    name = "lddpo"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise SchemaError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class UniformMin:
    name = "uniform"


@dataclass(frozen=True)
class Similarity:
    name = "similarity"


@dataclass(frozen=True)
class Otpo:
    cfg: UotConfig = field(default_factory=UotConfig)
    tau_mode: TauMode = TauMode.MIN_LEN
    name = "otpo"


WeightScheme = Union[Dpo, SimPo, SamPo, LdDpo, UniformMin, Similarity, Otpo]

SCHEME_NAMES = ("dpo", "simpo", "sampo", "lddpo", "uniform", "similarity", "otpo")


@dataclass(frozen=True)
class TokenWeights:
    """Weight vectors for one pair, plus the scale that was applied.

    ``tau`` is the common per-side weight total where the scheme has one
    (the applied budget for the transport scheme, the plan's total mass
    for the "length"/"none" modes) and None for schemes whose two sides
    sum to different totals (dpo, lddpo).
    """

    w_chosen: np.ndarray
    w_rejected: np.ndarray
    tau: float | None
    scheme: WeightScheme | None = None

    def __post_init__(self):
        for name in ("w_chosen", "w_rejected"):
            arr = np.array(getattr(self, name), dtype=np.float64, ndmin=1, copy=True)
            if arr.size == 0:
                raise SchemaError(f"{name} must be nonempty")
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"{name} contains non-finite weights")
            if np.any(arr < 0):
                raise SchemaError(f"{name} contains negative weights")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def weights(pair: PreferencePair, scheme: WeightScheme) -> TokenWeights:
    """Compute per-token weights for a pair under the given scheme."""
    nc, nr = len(pair.chosen), len(pair.rejected)
    m = min(nc, nr)

    if isinstance(scheme, Dpo):
        return TokenWeights(np.ones(nc), np.ones(nr), None, scheme)

    if isinstance(scheme, SimPo):
        return TokenWeights(np.full(nc, 1.0 / nc), np.full(nr, 1.0 / nr), 1.0, scheme)

    if isinstance(scheme, SamPo):
        wc, wr = np.ones(nc), np.ones(nr)
        if nc > m:
            wc = np.zeros(nc)
            wc[sample_without_replacement(nc, m, scheme.seed, pair.pair_id)] = 1.0
        elif nr > m:
            wr = np.zeros(nr)
            wr[sample_without_replacement(nr, m, scheme.seed, pair.pair_id)] = 1.0
        return TokenWeights(wc, wr, float(m), scheme)

    if isinstance(scheme, LdDpo):
        wc, wr = np.ones(nc), np.ones(nr)
        wc[m:] = scheme.alpha
        wr[m:] = scheme.alpha
        return TokenWeights(wc, wr, None, scheme)

    if isinstance(scheme, UniformMin):
        wc = np.ones(nc) if nc == m else np.full(nc, m / nc)
        wr = np.ones(nr) if nr == m else np.full(nr, m / nr)
        return TokenWeights(wc, wr, float(m), scheme)

    if isinstance(scheme, Similarity):
        wc = _similarity_side(pair.chosen.hidden, pair.rejected.hidden, "chosen") * m
        wr = _similarity_side(pair.rejected.hidden, pair.chosen.hidden, "rejected") * m
        return TokenWeights(wc, wr, float(m), scheme)

    if isinstance(scheme, Otpo):
        plan = solve_uot(cost_matrix(pair.chosen.hidden, pair.rejected.hidden), scheme.cfg)
        return normalize(plan, nc, nr, scheme.tau_mode, scheme=scheme)

    raise SchemaError(f"unknown weighting scheme {scheme!r}")


def _similarity_side(own: np.ndarray, other: np.ndarray, side: str) -> np.ndarray:
    """Softmax over cosine similarities to the other response's mean vector."""
    mean_other = other.mean(axis=0)
    mean_norm = float(np.linalg.norm(mean_other))
    if mean_norm == 0.0:
        raise SchemaError(
            f"mean hidden vector opposite the {side} response is zero;"
            " cosine similarity is undefined"
        )
    norms = np.linalg.norm(own, axis=1)
    if np.any(norms == 0.0):
        idx = int(np.flatnonzero(norms == 0.0)[0])
        raise SchemaError(
            f"{side} token {idx} has a zero hidden vector; cosine similarity"
            " is undefined"
        )
    sims = own @ mean_other / (norms * mean_norm)
    shifted = np.exp(sims - sims.max())
    return shifted / shifted.sum()


def normalize(plan: TransportPlan, len_c: int, len_r: int, mode: TauMode,
              scheme: WeightScheme | None = None) -> TokenWeights:
    """Turn plan marginals into token weights under the given budget mode.

    For the min/mean/max modes both sides are scaled by tau/|plan|, so
    both weight vectors sum to tau. "length" rescales each side to its
    own token count; "none" passes the raw marginals through and reports
    the plan's total mass as the scale.
    """
    if plan.gamma.shape != (len_c, len_r):
        raise SchemaError(
            f"plan shape {plan.gamma.shape} does not match lengths ({len_c}, {len_r})"
        )
    mode = TauMode(mode)
    rows, cols = plan.row_marginals, plan.col_marginals
    mass = plan.total_mass
    if mode is TauMode.NONE:
        return TokenWeights(rows, cols, mass, scheme)
    if mass <= 0.0:
        raise NumericalError(
            f"plan has total mass {mass}; cannot rescale to a '{mode.value}' budget"
        )
    if mode is TauMode.PER_LENGTH:
        return TokenWeights(rows * (len_c / mass), cols * (len_r / mass), mass, scheme)
    tau = {
        TauMode.MIN_LEN: float(min(len_c, len_r)),
        TauMode.MEAN_LEN: (len_c + len_r) / 2.0,
        TauMode.MAX_LEN: float(max(len_c, len_r)),
    }[mode]
    return TokenWeights(rows * (tau / mass), cols * (tau / mass), tau, scheme)


def scheme_name(scheme: WeightScheme | None) -> str:
    return scheme.name if scheme is not None else "plan"


def weights_to_record(pair_id: str, tw: TokenWeights) -> dict:
    """JSON-ready per-pair weight record."""
    return {
        "pair_id": pair_id,
        "scheme": scheme_name(tw.scheme),
        "tau": tw.tau,
        "w_chosen": tw.w_chosen.tolist(),
        "w_rejected": tw.w_rejected.tolist(),
    }
