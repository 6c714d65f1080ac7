"""Unbalanced entropic optimal transport between two token sets.

``solve_uot`` minimizes, over nonnegative plans ``G`` of shape (nc, nr),

    <G, M>  +  eps1 * Omega(G)
            +  eps2 * ( KL(G 1 || 1_nc) + KL(G^T 1 || 1_nr) )

with generalized KL(a || b) = sum a*log(a/b) - a + b and all-ones marginal
targets, so the plan's marginals are softly pulled toward uniform unit
token weights. Two entropy conventions are supported:

* ``"shifted"`` (default): Omega(G) = sum G*(log G - 1). This is the
  convention of standard scaling solvers and admits the closed-form fixed
  point u <- (a / Kv)^(eps2/(eps1+eps2)) with kernel K = exp(-M/eps1).
* ``"paper"``: Omega(G) = sum G*log G. Differs from the shifted form by
  the linear term eps1*|G|, which is absorbed exactly by solving the
  shifted problem with costs M + eps1.

All scaling iterations run in the log domain, so kernels with very small
entries never underflow inside the solve. ``uot_oracle`` minimizes the
identical objective by exponentiated gradient descent and exists purely
as an independent cross-check for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import xlogy

from .core import SchemaError

ENTROPY_FORMS = ("shifted", "paper")

ORACLE_CELL_LIMIT = 64


class NumericalError(RuntimeError):
    """Raised when a computation becomes numerically infeasible (NaN/Inf)."""


@dataclass(frozen=True)
class UotConfig:
    """Solver knobs: entropy weight, marginal-KL weight, iteration budget."""

    eps1: float = 1.0
    eps2: float = 0.2
    max_iters: int = 1000
    tol: float = 1e-9
    entropy_form: str = "shifted"

    def __post_init__(self):
        if not (self.eps1 > 0 and np.isfinite(self.eps1)):
            raise SchemaError(f"eps1 must be finite and > 0, got {self.eps1}")
        if not (self.eps2 > 0 and np.isfinite(self.eps2)):
            raise SchemaError(f"eps2 must be finite and > 0, got {self.eps2}")
        if not (self.tol > 0 and np.isfinite(self.tol)):
            raise SchemaError(f"tol must be finite and > 0, got {self.tol}")
        if self.max_iters < 1:
            raise SchemaError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.entropy_form not in ENTROPY_FORMS:
            raise SchemaError(
                f"entropy_form must be one of {ENTROPY_FORMS}, got {self.entropy_form!r}"
            )


@dataclass(frozen=True)
class TransportPlan:
    """A nonnegative coupling with cached marginals and total mass."""

    gamma: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    total_mass: float
    converged: bool
    iterations: int

    @classmethod
    def from_gamma(cls, gamma, converged: bool, iterations: int) -> "TransportPlan":
        gamma = np.array(gamma, dtype=np.float64, copy=True)
        if gamma.ndim != 2 or gamma.size == 0:
            raise SchemaError(f"plan must be a nonempty 2-D matrix, got shape {gamma.shape}")
        if not np.all(np.isfinite(gamma)):
            raise NumericalError("transport plan contains non-finite entries")
        if np.any(gamma < 0):
            raise SchemaError("transport plan entries must be nonnegative")
        gamma.setflags(write=False)
        rows = gamma.sum(axis=1)
        cols = gamma.sum(axis=0)
        rows.setflags(write=False)
        cols.setflags(write=False)
        return cls(gamma, rows, cols, float(gamma.sum()), converged, int(iterations))

    @property
    def shape(self):
        return self.gamma.shape


def cost_matrix(chosen_hidden, rejected_hidden) -> np.ndarray:
    """Pairwise Euclidean distances between chosen and rejected hidden rows."""
    hc = np.atleast_2d(np.asarray(chosen_hidden, dtype=np.float64))
    hr = np.atleast_2d(np.asarray(rejected_hidden, dtype=np.float64))
    if hc.size == 0 or hr.size == 0:
        raise SchemaError("cost_matrix needs at least one vector on each side")
    if hc.shape[1] != hr.shape[1]:
        raise SchemaError(
            f"hidden dimension mismatch: {hc.shape[1]} (chosen) vs {hr.shape[1]} (rejected)"
        )
    return cdist(hc, hr, metric="euclidean")


def _validate_costs(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise SchemaError(f"cost matrix must be a nonempty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SchemaError("cost matrix contains non-finite entries")
    if np.any(m < 0):
        raise SchemaError("cost matrix entries must be nonnegative")
    return m


def _log_kernel(m: np.ndarray, cfg: UotConfig) -> np.ndarray:
    # -inf from overflow is tolerated here; the solve detects the fallout
    with np.errstate(over="ignore"):
        log_k = -m / cfg.eps1
    if cfg.entropy_form == "paper":
        # plain-entropy problem == shifted problem with costs M + eps1
        log_k = log_k - 1.0
    return log_k


def _logsumexp(mat: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(mat, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(mat - safe), axis=axis))
    return out + np.squeeze(safe, axis=axis)


def solve_uot(m, cfg: UotConfig = UotConfig()) -> TransportPlan:
    """Solve the unbalanced entropic problem by log-domain scaling.

    Marginal targets are the all-ones vectors of the two side lengths.
    Iterates u <- (1 / Kv)^fi and v <- (1 / K^T u)^fi with
    fi = eps2/(eps1+eps2), entirely in the log domain. ``converged`` is
    true iff the sup-norm change of the log scaling vectors fell below
    ``cfg.tol`` within ``cfg.max_iters`` sweeps; running out of sweeps is
    not an error. NaN/Inf in the scalings (e.g. eps1 far too small for
    the cost scale) raises :class:`NumericalError`.
    """
    m = _validate_costs(m)
    nc, nr = m.shape
    log_k = _log_kernel(m, cfg)
    fi = cfg.eps2 / (cfg.eps1 + cfg.eps2)

    log_u = np.zeros(nc)
    log_v = np.zeros(nr)
    converged = False
    iterations = cfg.max_iters
    for it in range(1, cfg.max_iters + 1):
        # inf - inf -> nan is possible here; it is detected right below
        with np.errstate(invalid="ignore"):
            new_log_u = -fi * _logsumexp(log_k + log_v[None, :], axis=1)
            new_log_v = -fi * _logsumexp(log_k + new_log_u[:, None], axis=0)
        if not (np.all(np.isfinite(new_log_u)) and np.all(np.isfinite(new_log_v))):
            raise NumericalError(
                "scaling vectors left the finite range; the configuration is"
                f" numerically infeasible (eps1={cfg.eps1}, eps2={cfg.eps2},"
                f" max cost {m.max():g})"
            )
        err = max(
            float(np.max(np.abs(new_log_u - log_u))),
            float(np.max(np.abs(new_log_v - log_v))),
        )
        log_u, log_v = new_log_u, new_log_v
        if err < cfg.tol:
            converged = True
            iterations = it
            break

    gamma = np.exp(log_u[:, None] + log_k + log_v[None, :])
    if not np.all(np.isfinite(gamma)):
        raise NumericalError("transport plan overflowed; configuration is infeasible")
    if gamma.sum() == 0.0:
        raise NumericalError(
            "transport plan underflowed to zero mass; eps1 is far too small"
            " for the cost scale"
        )
    return TransportPlan.from_gamma(gamma, converged, iterations)


def generalized_kl(p, q) -> float:
    """sum p*log(p/q) - p + q with the 0*log(0) = 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(xlogy(p, p) - xlogy(p, q) - p + q))


def uot_objective(gamma, m, cfg: UotConfig) -> float:
    """Objective value of a plan under the configured entropy convention."""
    g = np.asarray(gamma, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    ent = float(np.sum(xlogy(g, g)))
    if cfg.entropy_form == "shifted":
        ent -= float(g.sum())
    rows = g.sum(axis=1)
    cols = g.sum(axis=0)
    kl = generalized_kl(rows, np.ones_like(rows)) + generalized_kl(cols, np.ones_like(cols))
    return float(np.sum(g * m)) + cfg.eps1 * ent + cfg.eps2 * kl


def _oracle_objective_grad(log_g: np.ndarray, m: np.ndarray, cfg: UotConfig):
    g = np.exp(log_g)
    rows = g.sum(axis=1)
    cols = g.sum(axis=0)
    with np.errstate(divide="ignore"):
        log_rows = np.log(rows)
        log_cols = np.log(cols)
    grad = m + cfg.eps1 * log_g + cfg.eps2 * (log_rows[:, None] + log_cols[None, :])
    if cfg.entropy_form == "paper":
        grad = grad + cfg.eps1
    return uot_objective(g, m, cfg), grad


def _eg_descent(log_g0, m, cfg, max_steps, obj_tol):
    """One exponentiated-gradient run: multiplicative updates, diminishing step."""
    log_g = np.clip(log_g0, -700.0, 50.0)
    f, grad = _oracle_objective_grad(log_g, m, cfg)
    eta0 = 0.5 / (cfg.eps1 + 2.0 * cfg.eps2)
    scale = 1.0
    stall = 0
    steps = 0
    for t in range(max_steps):
        steps = t + 1
        eta = scale * eta0 / (1.0 + t / 2000.0)
        cand = np.clip(log_g - eta * grad, -700.0, 50.0)
        fc, gc = _oracle_objective_grad(cand, m, cfg)
        if fc <= f:
            stall = stall + 1 if f - fc < obj_tol * max(1.0, abs(f)) else 0
            log_g, f, grad = cand, fc, gc
            scale = min(scale * 1.05, 8.0)
            if stall >= 25:
                return log_g, f, steps, True
        else:
            scale *= 0.5
            if scale < 1e-13:
                return log_g, f, steps, True
    return log_g, f, steps, False


def uot_oracle(m, cfg: UotConfig = UotConfig(), *, restarts: int = 3,
               max_steps: int = 20000, obj_tol: float = 1e-8) -> TransportPlan:
    """Reference minimizer of the same objective, for small instances only.

    Runs exponentiated gradient descent on the plan in the positive
    orthant from several starting points (uniform, kernel, seeded random)
    and keeps the best run. Deliberately shares no code path with
    :func:`solve_uot` so the two can check each other.
    """
    m = _validate_costs(m)
    if m.size > ORACLE_CELL_LIMIT:
        raise SchemaError(
            f"oracle instances are limited to {ORACLE_CELL_LIMIT} cells, got {m.size}"
        )
    inits = [np.zeros_like(m), -m / cfg.eps1]
    rng = np.random.default_rng(0)
    for _ in range(max(0, restarts - len(inits))):
        inits.append(rng.normal(scale=1.0, size=m.shape))

    best = None
    for log_g0 in inits[:max(restarts, 1)]:
        log_g, f, steps, ok = _eg_descent(log_g0, m, cfg, max_steps, obj_tol)
        if best is None or f < best[1]:
            best = (log_g, f, steps, ok)
    log_g, _, steps, ok = best
    return TransportPlan.from_gamma(np.exp(log_g), ok, steps)


def uniform_unit_plan(n: int) -> TransportPlan:
    """Square plan with all-ones row and column marginals (entries 1/n).

    This is the coupling whose marginals reproduce uniform unit token
    weights on an equal-length pair, i.e. the plain-DPO special case.
    """
    if n < 1:
        raise SchemaError(f"plan size must be >= 1, got {n}")
    return TransportPlan.from_gamma(np.full((n, n), 1.0 / n), True, 0)


def plan_to_json(plan: TransportPlan, threshold: float = 1e-6) -> dict:
    """JSON-ready export listing entries strictly above ``threshold``."""
    keep = np.argwhere(plan.gamma > threshold)
    entries = [[int(i), int(j), float(plan.gamma[i, j])] for i, j in keep]
    return {
        "rows": int(plan.gamma.shape[0]),
        "cols": int(plan.gamma.shape[1]),
        "entries": entries,
        "row_marginals": plan.row_marginals.tolist(),
        "col_marginals": plan.col_marginals.tolist(),
        "total_mass": plan.total_mass,
        "converged": plan.converged,
        "iterations": plan.iterations,
    }
