"""Flat-buffer weight computation for host training loops.

Hosts hand over contiguous float64 (or float32, upcast once at the
boundary) hidden-state buffers plus the two lengths and the dimension;
back come freshly allocated, caller-owned weight buffers. Only the
transport-based weight path is exposed: hosts own differentiation, and
weights are constants in the host graph.

Calls are safe from multiple host threads concurrently: there is no
module-level mutable state, and the heavy kernels run inside numpy/scipy
routines that release the interpreter lock. For float64 inputs the
buffers are wrapped, never copied; float32 inputs cost exactly one
upcast copy.
"""

from __future__ import annotations

import array
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

import otweights
from otweights import (
    NumericalError,
    TauMode,
    UotConfig,
    cost_matrix,
    normalize,
    solve_uot,
)

__version__ = otweights.__version__

__all__ = [
    "FlatPairView",
    "WeightConfig",
    "WeightResult",
    "compute_weights",
    "compute_weights_batch",
    "__version__",
]


@dataclass(frozen=True)
class WeightConfig:
    eps1: float = 1.0
    eps2: float = 0.2
    tau_mode: str = "min"
    entropy_form: str = "shifted"


@dataclass(frozen=True)
class FlatPairView:
    """One pair's hidden states as flat buffers plus their declared shape."""

    hidden_c: object
    hidden_r: object
    len_c: int
    len_r: int
    dim: int
    config: WeightConfig = field(default_factory=WeightConfig)


@dataclass(frozen=True)
class WeightResult:
    """Caller-owned weight buffers plus the applied scale and solver status.

    ``converged`` is False either when the scaling iteration ran out of
    sweeps or when the configuration was numerically infeasible; in the
    latter case the weight buffers are NaN-filled rather than raising.
    """

    w_chosen: np.ndarray
    w_rejected: np.ndarray
    tau: float
    converged: bool


def _as_matrix(buf, rows: int, dim: int, name: str) -> np.ndarray:
    if rows < 1 or dim < 1:
        raise ValueError(f"{name}: declared shape ({rows}, {dim}) must be positive")
    if isinstance(buf, np.ndarray):
        arr = buf
    elif isinstance(buf, (bytes, bytearray, memoryview, array.array)):
        arr = np.frombuffer(buf, dtype=np.float64)
    else:
        arr = np.asarray(buf, dtype=np.float64)
    if arr.dtype == np.float32:
        arr = arr.astype(np.float64)
    elif arr.dtype != np.float64:
        raise ValueError(f"{name}: expected float64 or float32 values, got {arr.dtype}")
    if arr.ndim == 1:
        if arr.size != rows * dim:
            raise ValueError(
                f"{name}: buffer holds {arr.size} values but ({rows}, {dim})"
                f" needs {rows * dim}"
            )
        arr = arr.reshape(rows, dim)
    elif arr.ndim == 2:
        if arr.shape != (rows, dim):
            raise ValueError(f"{name}: buffer shape {arr.shape} != ({rows}, {dim})")
    else:
        raise ValueError(f"{name}: expected a flat or 2-D buffer, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


def compute_weights(view: FlatPairView) -> WeightResult:
    """Transport-based token weights for a single pair of hidden buffers."""
    hc = _as_matrix(view.hidden_c, view.len_c, view.dim, "hidden_c")
    hr = _as_matrix(view.hidden_r, view.len_r, view.dim, "hidden_r")
    cfg = UotConfig(
        eps1=float(view.config.eps1),
        eps2=float(view.config.eps2),
        entropy_form=view.config.entropy_form,
    )
    try:
        plan = solve_uot(cost_matrix(hc, hr), cfg)
        tw = normalize(plan, view.len_c, view.len_r, TauMode(view.config.tau_mode))
    except NumericalError:
        return WeightResult(
            w_chosen=np.full(view.len_c, np.nan),
            w_rejected=np.full(view.len_r, np.nan),
            tau=float("nan"),
            converged=False,
        )
    return WeightResult(
        w_chosen=np.array(tw.w_chosen),
        w_rejected=np.array(tw.w_rejected),
        tau=float(tw.tau),
        converged=plan.converged,
    )


def compute_weights_batch(views, threads: int = 1) -> list[WeightResult]:
    """Order-preserving batch form; result i equals compute_weights(views[i])."""
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")

    def run(indexed):
        i, view = indexed
        try:
            return compute_weights(view)
        except ValueError as e:
            raise ValueError(f"view {i}: {e}") from None

    if threads == 1:
        return [run(x) for x in enumerate(views)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, enumerate(views)))
