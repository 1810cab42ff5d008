"""Multi-target inference on synchronized local grids.

Each target owns a square block of the base grid centered on its last
synchronized position. Between synchronizations the block side grows on a
schedule, so the joint hypothesis space (the cross product of the blocks)
tracks growing position uncertainty. Readings mix all targets: mean powers
add in the linear domain, and each sensor's noise variance follows the
target that dominates its power.

The joint posterior is exact enumeration over the product space, capped at
JOINT_CAP points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K
from .bayes_single import ListParams, RunResult, top_k_indices, _normalize_logw
from .errors import CapacityError, ParameterError
from .geometry import (
    DeploymentMap,
    HypothesisGrid,
    Location,
    MeasurementFrame,
    containment_success,
    floored_distances,
    nearest_order,
    true_top_p,
)
from .propagation import PropagationModel

JOINT_CAP = 10**6
DEFAULT_SIDE_SCHEDULE = (3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27)


@dataclass(frozen=True)
class GridSchedule:
    """When to re-center local grids and how fast they grow.

    Re-centering happens at ticks divisible by t_sync. The block side used
    q ticks after a sync is side_schedule[q // t_inc], clamped to the last
    entry. Sides are odd so a block has a center cell.
    """

    t_sync: int
    t_inc: int = 1
    side_schedule: tuple[int, ...] = DEFAULT_SIDE_SCHEDULE

    def __post_init__(self):
        if self.t_sync < 1 or self.t_inc < 1:
            raise ParameterError("t_sync and t_inc must be >= 1")
        ss = tuple(int(v) for v in self.side_schedule)
        if len(ss) == 0:
            raise ParameterError("side schedule cannot be empty")
        for v in ss:
            if v < 1 or v % 2 == 0:
                raise ParameterError(f"block sides must be odd and >= 1, got {v}")
        if any(b < a for a, b in zip(ss, ss[1:])):
            raise ParameterError("side schedule must be non-decreasing")
        object.__setattr__(self, "side_schedule", ss)

    def side_at(self, q: int) -> int:
        if q < 0:
            raise ParameterError("q must be >= 0")
        return self.side_schedule[min(q // self.t_inc, len(self.side_schedule) - 1)]


@dataclass(frozen=True)
class LocalGridState:
    """Per-target sync centers (base-grid indices) and ticks since sync."""

    centers: tuple[int, ...]
    q: int


@dataclass(frozen=True)
class JointHypothesis:
    """One candidate placement of every target."""

    components: tuple[Location, ...]


@dataclass(frozen=True, eq=False)
class JointPosterior:
    """Normalized log-probabilities over the product of local grids.

    Flat index is mixed-radix over per-target block positions with the
    last target varying fastest."""

    log_probs: np.ndarray
    local_grids: tuple[np.ndarray, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.local_grids)

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def decompose(self, flat: int) -> tuple[int, ...]:
        """Per-target base-grid indices of one joint hypothesis."""
        sizes = self.sizes
        digits = []
        for r in range(len(sizes) - 1, -1, -1):
            flat, d = divmod(flat, sizes[r])
            digits.append(int(self.local_grids[r][d]))
        return tuple(reversed(digits))

    def hypothesis(self, flat: int, grid: HypothesisGrid) -> JointHypothesis:
        return JointHypothesis(tuple(grid.point(i) for i in self.decompose(flat)))


def local_grid(
    grid: HypothesisGrid, center: Location | int, side: int
) -> np.ndarray:
    """Base-grid indices of a side x side block around center, row-major.

    The block is clipped at the grid border, so fewer indices come back
    near an edge. A Location center snaps to its nearest grid point."""
    if side < 1 or side % 2 == 0:
        raise ParameterError(f"block side must be odd and >= 1, got {side}")
    c = grid.nearest_index(center) if isinstance(center, Location) else int(center)
    if not (0 <= c < grid.n):
        raise ParameterError(f"center index {c} outside the grid")
    row, col = divmod(c, grid.cols)
    half = side // 2
    rows = np.arange(max(row - half, 0), min(row + half, grid.rows - 1) + 1)
    cols = np.arange(max(col - half, 0), min(col + half, grid.cols - 1) + 1)
    return (rows[:, None] * grid.cols + cols[None, :]).ravel().astype(np.int64)


def joint_posterior(
    model: PropagationModel,
    dmap: DeploymentMap,
    grid: HypothesisGrid,
    local_grids,
    frame: MeasurementFrame,
    cap: int = JOINT_CAP,
) -> JointPosterior:
    """Exact posterior over every combination of per-target block positions."""
    locals_ = tuple(np.asarray(g, dtype=np.int64) for g in local_grids)
    if len(locals_) == 0:
        raise ParameterError("need at least one local grid")
    for r, g in enumerate(locals_):
        if g.size == 0:
            raise ParameterError(f"local grid {r} is empty")
        if np.any(g < 0) or np.any(g >= grid.n):
            raise ParameterError(f"local grid {r} has out-of-range indices")
    if frame.z.size != dmap.s:
        raise ParameterError("frame width does not match the deployment")
    sizes = np.array([g.size for g in locals_], dtype=np.int64)
    n_joint = int(np.prod(sizes))
    if n_joint > cap:
        raise CapacityError(
            f"joint space has {n_joint} hypotheses, cap is {cap}; "
            "shrink the blocks or reduce targets"
        )
    pts = grid.points_xy()
    P_rows = []
    V_rows = []
    for g in locals_:
        d = floored_distances(pts[g], dmap.sensor_xy())
        P_rows.append(model.power_table(d))
        V_rows.append(model.variance_table(d))
    P_tab = np.concatenate(P_rows, axis=0)
    V_tab = np.concatenate(V_rows, axis=0)
    offsets = np.zeros(len(locals_) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    logw = K.joint_loglik(P_tab, V_tab, offsets, sizes, frame.z)
    return JointPosterior(_normalize_logw(logw), locals_)


def run_multi_target(
    model: PropagationModel,
    dmap: DeploymentMap,
    grid: HypothesisGrid,
    frames,
    params: ListParams,
    p: int,
    schedule: GridSchedule,
    cap: int = JOINT_CAP,
) -> RunResult:
    """Track several targets and score the recommended sensor lists.

    Ticks with frame.t divisible by t_sync snap every block center to that
    tick's ground truth (the first frame always synchronizes). The list
    unions the m nearest sensors of every component of the k likeliest
    joint hypotheses; success means all per-target answer sets are inside.
    """
    frames = list(frames)
    if not frames:
        raise ParameterError("need at least one frame")
    n_targets = len(frames[0].truth) if frames[0].truth else 0
    if n_targets == 0:
        raise ParameterError("frames must carry ground-truth locations")
    for f in frames:
        if f.truth is None or len(f.truth) != n_targets:
            raise ParameterError("all frames must carry the same number of targets")
    if not (1 <= p <= dmap.s):
        raise ParameterError(f"p must be in [1, {dmap.s}]")
    if params.m > dmap.s:
        raise ParameterError(f"m={params.m} exceeds the {dmap.s} sensors")
    grid_order = nearest_order(dmap, grid.points_xy())
    outcomes = np.empty(len(frames), dtype=bool)
    sizes_out = np.empty(len(frames), dtype=np.int64)
    state: LocalGridState | None = None
    for idx, f in enumerate(frames):
        if state is None or f.t % schedule.t_sync == 0:
            centers = tuple(grid.nearest_index(loc) for loc in f.truth)
            state = LocalGridState(centers=centers, q=0)
        else:
            state = LocalGridState(centers=state.centers, q=state.q + 1)
        side = schedule.side_at(state.q)
        blocks = [local_grid(grid, c, side) for c in state.centers]
        post = joint_posterior(model, dmap, grid, blocks, f, cap=cap)
        chosen = top_k_indices(post.log_probs, min(params.k, post.log_probs.size))
        union: set[int] = set()
        for flat in chosen:
            for base_idx in post.decompose(int(flat)):
                union.update(int(i) for i in grid_order[base_idx, : params.m])
        truth_sets = [true_top_p(dmap, loc, p) for loc in f.truth]
        outcomes[idx] = containment_success(truth_sets, union)
        sizes_out[idx] = len(union)
    return RunResult(outcomes=outcomes, set_sizes=sizes_out)
