"""Single-target posterior inference and (k, m) sensor list construction.

The grid posterior assumes one target, a uniform prior over grid points,
and independent Gaussian readings per sensor; everything runs in the log
domain. The recommended sensor list unions, over the k highest-posterior
hypotheses, the m sensors nearest each hypothesis, so its size is at most
k*m and exactly m when k == 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K
from .errors import InferenceError, ParameterError
from .geometry import (
    DeploymentMap,
    HypothesisGrid,
    MeasurementFrame,
    containment_success,
    floored_distances,
    nearest_order,
    true_top_p,
)
from .propagation import PropagationModel


@dataclass(frozen=True)
class ListParams:
    """k hypotheses to expand, m sensors kept per hypothesis."""

    k: int
    m: int

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ParameterError("list parameters k and m must be >= 1")


@dataclass(frozen=True, eq=False)
class Posterior:
    """Normalized log-probabilities over the points of one hypothesis grid."""

    log_probs: np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.log_probs, dtype=np.float64)
        if lp.ndim != 1 or lp.size == 0:
            raise ParameterError("posterior needs a non-empty 1-D log-prob vector")
        object.__setattr__(self, "log_probs", lp)

    @property
    def n(self) -> int:
        return self.log_probs.size

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class SelectionResult:
    """A recommended sensor set plus how it was assembled."""

    sensors: frozenset[int]
    hypotheses: tuple[int, ...]
    posterior_mass: float
    per_hypothesis_sensors: tuple[tuple[int, ...], ...]

    @property
    def set_size(self) -> int:
        return len(self.sensors)


@dataclass(frozen=True)
class RunResult:
    """Per-frame outcomes of a tracking run."""

    outcomes: np.ndarray
    set_sizes: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.outcomes.size

    @property
    def accuracy(self) -> float:
        return float(self.outcomes.mean())

    @property
    def mean_set_size(self) -> float:
        return float(self.set_sizes.mean())


def top_k_indices(weights: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest weights; equal weights go to lower indices."""
    w = np.asarray(weights, dtype=np.float64)
    if not (1 <= k <= w.size):
        raise ParameterError(f"k must be in [1, {w.size}], got {k}")
    neg = -w
    if k == w.size:
        cand = np.arange(w.size)
    else:
        thr = np.partition(neg, k - 1)[k - 1]
        cand = np.nonzero(neg <= thr)[0]
    order = np.lexsort((cand, neg[cand]))
    return cand[order[:k]]


def _grid_tables(model: PropagationModel, dmap: DeploymentMap, grid: HypothesisGrid):
    d = floored_distances(grid.points_xy(), dmap.sensor_xy())
    return model.mean_table(d), model.variance_table(d)


def _normalize_logw(logw: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logw)):
        raise InferenceError("posterior log-weights are not finite")
    return logw - logsumexp(logw)


def posterior_update(
    model: PropagationModel,
    dmap: DeploymentMap,
    grid: HypothesisGrid,
    frame: MeasurementFrame,
) -> Posterior:
    """Posterior over grid points given one frame, uniform prior."""
    if frame.z.size != dmap.s:
        raise ParameterError(
            f"frame has {frame.z.size} readings for {dmap.s} sensors"
        )
    mean_tab, var_tab = _grid_tables(model, dmap, grid)
    logw = K.loglik_frames(mean_tab, var_tab, frame.z[None, :])[0]
    return Posterior(_normalize_logw(logw))


def construct_list(
    posterior: Posterior,
    dmap: DeploymentMap,
    grid: HypothesisGrid,
    params: ListParams,
) -> SelectionResult:
    """Union of the m nearest sensors of each of the k likeliest hypotheses."""
    if posterior.n != grid.n:
        raise ParameterError("posterior length does not match the grid")
    if params.k > grid.n:
        raise ParameterError(f"k={params.k} exceeds the {grid.n} grid points")
    if params.m > dmap.s:
        raise ParameterError(f"m={params.m} exceeds the {dmap.s} sensors")
    chosen = top_k_indices(posterior.log_probs, params.k)
    order = nearest_order(dmap, grid.points_xy()[chosen])
    per_hyp = tuple(tuple(int(i) for i in order[r, : params.m]) for r in range(len(chosen)))
    union: set[int] = set()
    for row in per_hyp:
        union.update(row)
    mass = float(np.exp(logsumexp(posterior.log_probs[chosen])))
    return SelectionResult(
        sensors=frozenset(union),
        hypotheses=tuple(int(h) for h in chosen),
        posterior_mass=min(mass, 1.0),
        per_hypothesis_sensors=per_hyp,
    )


def run_single_target(
    model: PropagationModel,
    dmap: DeploymentMap,
    grid: HypothesisGrid,
    frames,
    params: ListParams,
    p: int,
) -> RunResult:
    """Score the list construction over a sequence of frames.

    Each frame must carry exactly one ground-truth location; success means
    the frame's true top-p answer set is contained in the recommended list.
    """
    frames = list(frames)
    if not frames:
        raise ParameterError("need at least one frame")
    for f in frames:
        if f.truth is None or len(f.truth) != 1:
            raise ParameterError("every frame needs exactly one ground-truth location")
        if f.z.size != dmap.s:
            raise ParameterError("frame width does not match the deployment")
    if not (1 <= p <= dmap.s):
        raise ParameterError(f"p must be in [1, {dmap.s}]")
    mean_tab, var_tab = _grid_tables(model, dmap, grid)
    Z = np.stack([f.z for f in frames])
    logw = K.loglik_frames(mean_tab, var_tab, Z)
    grid_order = nearest_order(dmap, grid.points_xy())
    outcomes = np.empty(len(frames), dtype=bool)
    sizes = np.empty(len(frames), dtype=np.int64)
    for t, f in enumerate(frames):
        post = Posterior(_normalize_logw(logw[t]))
        chosen = top_k_indices(post.log_probs, params.k)
        union: set[int] = set()
        for h in chosen:
            union.update(int(i) for i in grid_order[h, : params.m])
        truth_set = true_top_p(dmap, f.truth[0], p)
        outcomes[t] = containment_success(truth_set, union)
        sizes[t] = len(union)
    return RunResult(outcomes=outcomes, set_sizes=sizes)
