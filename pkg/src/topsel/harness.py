"""Seeded experiment harness: canned sweeps, CSV results, run manifests.

Scenarios:

  accuracy-vs-p            selection accuracy against p for several noise
                           levels, via any error-probability method
  single-target-km-sweep   tracking accuracy and list size for (k, m)
                           choices, against the max-value baseline
  set-size-tradeoff        the same machinery aimed at the accuracy versus
                           mean list size trade-off over a (k, m) grid
  multi-target-sync-sweep  multi-target accuracy against the
                           synchronization interval

Every random quantity derives from the spec's root seed through
child_seed, so a (spec, seed) pair reproduces its result table exactly on
a given compute lane.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import __version__ as _pkg_version
from . import _kernels as K
from .bayes_multi import DEFAULT_SIDE_SCHEDULE, GridSchedule, run_multi_target
from .bayes_single import ListParams, run_single_target
from .errors import ParameterError, TopselError
from .geometry import (
    DeploymentMap,
    Location,
    Rect,
    containment_success,
    grid_covering,
    load_deployment,
    true_top_p,
)
from .maxsel import TopPProblem, error_probability, top_p_select
from .propagation import (
    LogLinearModel,
    PropagationModel,
    SplineModel,
    fit_log_linear,
    normalize,
    sample_measurements,
)

SCENARIOS = (
    "accuracy-vs-p",
    "single-target-km-sweep",
    "set-size-tradeoff",
    "multi-target-sync-sweep",
)


def child_seed(root: int, *labels) -> int:
    """Deterministic child seed for a labeled subtask.

    Labels are crc32-hashed into a SeedSequence spawn key, so any mix of
    strings and integers produces a stable, documented derivation."""
    parts = tuple(zlib.crc32(str(l).encode("utf-8")) for l in labels)
    ss = np.random.SeedSequence(root, spawn_key=parts)
    return int(ss.generate_state(1, np.uint64)[0])


def random_deployment(s: int, area: Rect, seed: int) -> DeploymentMap:
    """s sensors placed independently and uniformly in the area."""
    if s < 1:
        raise ParameterError("need at least one sensor")
    rng = np.random.default_rng(seed)
    xy = rng.uniform((area.xmin, area.ymin), (area.xmax, area.ymax), size=(s, 2))
    return DeploymentMap(tuple(Location(float(x), float(y)) for x, y in xy), area)


@dataclass(frozen=True)
class TrajectorySpec:
    """Piecewise-linear constant-speed path sampled at a fixed tick."""

    waypoints: tuple[Location, ...]
    speed: float = 3.0
    tick: float = 0.2

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ParameterError("trajectory needs at least two waypoints")
        if not (self.speed > 0.0 and np.isfinite(self.speed)):
            raise ParameterError("speed must be positive")
        if not (self.tick > 0.0 and np.isfinite(self.tick)):
            raise ParameterError("tick must be positive")


def waypoint_trajectory(spec: TrajectorySpec) -> list[tuple[int, Location]]:
    """Sample the path every tick; the last sample is within one step of
    the path end."""
    pts = np.array([[w.x, w.y] for w in spec.waypoints])
    seg = np.diff(pts, axis=0)
    seg_len = np.sqrt(np.sum(seg * seg, axis=1))
    total = float(seg_len.sum())
    if total <= 0.0:
        raise ParameterError("trajectory has zero length")
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    step = spec.speed * spec.tick
    out = []
    k = 0
    while k * step <= total:
        d = k * step
        i = int(np.searchsorted(cum, d, side="right") - 1)
        i = min(i, len(seg_len) - 1)
        frac = (d - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
        x = pts[i, 0] + frac * seg[i, 0]
        y = pts[i, 1] + frac * seg[i, 1]
        out.append((k, Location(float(x), float(y))))
        k += 1
    return out


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a scenario run depends on. Unset axes get scenario
    defaults at run time; the manifest records the resolved values."""

    scenario: str
    seed: int = 20240817
    trials: int = 500
    n_sensors: int = 20
    area: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    deployment_file: str | None = None
    grid_rows: int = 20
    grid_cols: int = 20
    p_values: tuple[int, ...] = ()
    sigma_values: tuple[float, ...] = ()
    k_values: tuple[int, ...] = ()
    m_values: tuple[int, ...] = ()
    t_sync_values: tuple[int, ...] = ()
    n_targets: int = 2
    model_family: str = "spline"
    model_bins: int = 8
    speed: float = 3.0
    tick: float = 0.2
    t_inc: int = 2
    side_schedule: tuple[int, ...] = DEFAULT_SIDE_SCHEDULE
    method: str = "quadrature"
    mc_trials: int = 1_000_000

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ParameterError(
                f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}"
            )
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if self.seed < 0:
            raise ParameterError("seed must be >= 0")
        if self.n_sensors < 1:
            raise ParameterError("n_sensors must be >= 1")
        if self.n_targets < 1:
            raise ParameterError("n_targets must be >= 1")
        if self.model_family not in ("spline", "loglinear"):
            raise ParameterError("model_family must be 'spline' or 'loglinear'")
        for name in ("p_values", "k_values", "m_values", "t_sync_values"):
            vals = getattr(self, name)
            object.__setattr__(self, name, tuple(int(v) for v in vals))
            if any(v < 1 for v in getattr(self, name)):
                raise ParameterError(f"{name} entries must be >= 1")
        object.__setattr__(
            self, "sigma_values", tuple(float(v) for v in self.sigma_values)
        )
        object.__setattr__(self, "area", tuple(float(v) for v in self.area))
        object.__setattr__(
            self, "side_schedule", tuple(int(v) for v in self.side_schedule)
        )

    @property
    def rect(self) -> Rect:
        return Rect(*self.area)


_SPEC_KEYS = {
    "scenario": "scenario",
    "seed": "seed",
    "trials": "trials",
    "n_sensors": "n_sensors",
    "area": "area",
    "deployment_file": "deployment_file",
    "grid": None,  # handled specially
    "p": "p_values",
    "sigma_tilde": "sigma_values",
    "k": "k_values",
    "m": "m_values",
    "t_sync": "t_sync_values",
    "n_targets": "n_targets",
    "model_family": "model_family",
    "model_bins": "model_bins",
    "speed": "speed",
    "tick": "tick",
    "t_inc": "t_inc",
    "side_schedule": "side_schedule",
    "method": "method",
    "mc_trials": "mc_trials",
}


def spec_from_doc(doc: dict) -> ExperimentSpec:
    """Build a spec from its JSON document; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ParameterError("experiment spec must be a JSON object")
    unknown = set(doc) - set(_SPEC_KEYS)
    if unknown:
        raise ParameterError(f"unknown spec keys: {sorted(unknown)}")
    if "scenario" not in doc:
        raise ParameterError("spec needs a 'scenario'")
    kwargs = {}
    for key, val in doc.items():
        if key == "grid":
            if (
                not isinstance(val, (list, tuple))
                or len(val) != 2
                or any(int(v) < 1 for v in val)
            ):
                raise ParameterError("'grid' must be [rows, cols] of positive ints")
            kwargs["grid_rows"] = int(val[0])
            kwargs["grid_cols"] = int(val[1])
        else:
            field_name = _SPEC_KEYS[key]
            if field_name in ("p_values", "k_values", "m_values", "t_sync_values",
                              "sigma_values", "side_schedule", "area"):
                val = tuple(val)
            kwargs[field_name] = val
    try:
        return ExperimentSpec(**kwargs)
    except TypeError as exc:
        raise ParameterError(f"bad spec value: {exc}") from exc


def load_spec(path) -> ExperimentSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParameterError(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path} is not valid JSON: {exc}") from exc
    return spec_from_doc(doc)


def spec_to_doc(spec: ExperimentSpec) -> dict:
    """Canonical JSON document of a (resolved) spec, inverse of spec_from_doc."""
    d = asdict(spec)
    doc = {}
    for key, field_name in _SPEC_KEYS.items():
        if key == "grid":
            doc["grid"] = [spec.grid_rows, spec.grid_cols]
        else:
            v = d[field_name]
            doc[key] = list(v) if isinstance(v, tuple) else v
    return doc


def spec_hash(spec: ExperimentSpec) -> str:
    blob = json.dumps(spec_to_doc(spec), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class ResultTable:
    """Column names plus one tuple per sweep point, in sweep order."""

    scenario: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_csv_cell(v) for v in row))
        return "\n".join(lines) + "\n"


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _resolved(spec: ExperimentSpec) -> ExperimentSpec:
    """Fill empty axes with the scenario's defaults."""
    defaults = {
        "accuracy-vs-p": dict(
            p_values=tuple(range(1, 11)), sigma_values=(0.25, 0.5, 1.0)
        ),
        "single-target-km-sweep": dict(
            p_values=(1, 2, 3), k_values=(1,), m_values=tuple(range(1, 8))
        ),
        "set-size-tradeoff": dict(
            p_values=(1, 2, 3), k_values=(1, 2, 3, 4), m_values=(1, 2, 3, 4, 5)
        ),
        "multi-target-sync-sweep": dict(
            p_values=(1, 2, 3), k_values=(3,), m_values=(5,),
            t_sync_values=(4, 8, 16, 32),
        ),
    }[spec.scenario]
    fills = {k: v for k, v in defaults.items() if not getattr(spec, k)}
    return replace(spec, **fills) if fills else spec


def _deployment(spec: ExperimentSpec) -> DeploymentMap:
    if spec.deployment_file is not None:
        return load_deployment(spec.deployment_file)
    return random_deployment(spec.n_sensors, spec.rect, child_seed(spec.seed, "deploy"))


def _loop_waypoints(area: Rect, margin: float = 0.15, reverse: bool = False):
    mx = (area.xmax - area.xmin) * margin
    my = (area.ymax - area.ymin) * margin
    corners = [
        Location(area.xmin + mx, area.ymin + my),
        Location(area.xmax - mx, area.ymin + my),
        Location(area.xmax - mx, area.ymax - my),
        Location(area.xmin + mx, area.ymax - my),
    ]
    if reverse:
        corners = [corners[2], corners[1], corners[0], corners[3]]
    return tuple(corners + [corners[0]])


def _target_positions(spec: ExperimentSpec, which: int) -> list[Location]:
    traj = TrajectorySpec(
        waypoints=_loop_waypoints(spec.rect, reverse=(which % 2 == 1)),
        speed=spec.speed,
        tick=spec.tick,
    )
    return [loc for _, loc in waypoint_trajectory(traj)]


def _random_spline_entry(rng: np.random.Generator, d_lo: float, d_hi: float, bins: int):
    """A continuous piecewise model built from randomized knot values."""
    p0 = rng.uniform(-44.0, -36.0)
    eta = rng.uniform(2.2, 3.8)
    edges = np.power(10.0, np.linspace(np.log10(d_lo), np.log10(d_hi), bins + 1))
    xk = -10.0 * np.log10(edges)
    vals = p0 + eta * xk + np.concatenate(([0.0], np.cumsum(rng.uniform(-1.0, 1.0, bins))))
    slopes = np.diff(vals) / np.diff(xk)
    intercepts = vals[:-1] - slopes * xk[:-1]
    sigma2 = rng.uniform(1.0, 2.0, bins) ** 2
    return SplineModel(tuple(edges), tuple(intercepts), tuple(slopes), tuple(sigma2))


def _truth_model(spec: ExperimentSpec, dmap: DeploymentMap) -> PropagationModel:
    rng = np.random.default_rng(child_seed(spec.seed, "truth-model"))
    diag = float(
        np.hypot(spec.rect.xmax - spec.rect.xmin, spec.rect.ymax - spec.rect.ymin)
    )
    entries = []
    for _ in range(dmap.s):
        if spec.model_family == "spline":
            entries.append(
                _random_spline_entry(rng, 0.5, 1.2 * diag, spec.model_bins)
            )
        else:
            entries.append(
                LogLinearModel(
                    rng.uniform(-44.0, -36.0),
                    rng.uniform(2.2, 3.8),
                    rng.uniform(1.0, 2.0),
                )
            )
    return PropagationModel(tuple(entries))


def _single_target_frames(spec, model, dmap):
    positions = _target_positions(spec, 0)
    frames = []
    for t in range(spec.trials):
        loc = positions[t % len(positions)]
        frames.append(
            sample_measurements(
                model, dmap, loc, seed=child_seed(spec.seed, "frame", t), t=t
            )
        )
    return frames


def _multi_target_frames(spec, model, dmap):
    per_target = [_target_positions(spec, r) for r in range(spec.n_targets)]
    # stagger starting phases so targets do not overlap
    frames = []
    for t in range(spec.trials):
        locs = tuple(
            pos[(t + r * (len(pos) // max(spec.n_targets, 1))) % len(pos)]
            for r, pos in enumerate(per_target)
        )
        frames.append(
            sample_measurements(
                model, dmap, locs, seed=child_seed(spec.seed, "frame", t), t=t
            )
        )
    return frames


def _binom_se(acc: float, n: int) -> float:
    return float(np.sqrt(max(acc * (1.0 - acc), 0.0) / n))


def _with_context(exc: TopselError, label: str):
    raise TopselError(f"sweep point {label}: {exc}") from exc


def _run_accuracy_vs_p(spec: ExperimentSpec) -> ResultTable:
    dmap = _deployment(spec)
    grid = grid_covering(spec.rect, spec.grid_rows, spec.grid_cols)
    rows = []
    for sigma in spec.sigma_values:
        for p in spec.p_values:
            label = f"sigma_tilde={sigma}, p={p}"
            try:
                problem = TopPProblem(dmap, grid, sigma, p, check_separation=False)
                rep = error_probability(
                    problem,
                    method=spec.method,
                    trials=spec.mc_trials,
                    seed=child_seed(spec.seed, "errorprob", sigma, p),
                )
            except TopselError as exc:
                _with_context(exc, label)
            rows.append(
                (p, sigma, 1.0 - rep.p_error, rep.p_error, rep.uncertainty, rep.method)
            )
    return ResultTable(
        scenario=spec.scenario,
        columns=("p", "sigma_tilde", "accuracy", "p_error", "uncertainty", "method"),
        rows=tuple(rows),
    )


def fit_baseline_models(frames, dmap: DeploymentMap) -> list[LogLinearModel]:
    """Per-sensor log-linear fits from a run's own frames, for the
    max-value baseline's normalization."""
    s = dmap.s
    models = []
    for i in range(s):
        pairs = [
            (f.truth[0].distance_to(dmap.sensors[i]), float(f.z[i])) for f in frames
        ]
        models.append(fit_log_linear(pairs))
    return models


def max_value_baseline(frames, dmap: DeploymentMap, m: int, p: int) -> np.ndarray:
    """Per-frame success of selecting the m largest normalized readings."""
    base_models = fit_baseline_models(frames, dmap)
    out = np.empty(len(frames), dtype=bool)
    for t, f in enumerate(frames):
        zt = np.array([normalize(base_models[i], f.z[i]) for i in range(dmap.s)])
        sel = top_p_select(zt, m)
        truth_set = true_top_p(dmap, f.truth[0], p)
        out[t] = containment_success(truth_set, sel.indices)
    return out


def _run_km_sweep(spec: ExperimentSpec) -> ResultTable:
    dmap = _deployment(spec)
    grid = grid_covering(spec.rect, spec.grid_rows, spec.grid_cols)
    model = _truth_model(spec, dmap)
    frames = _single_target_frames(spec, model, dmap)
    baseline_cache = {}
    rows = []
    for k in spec.k_values:
        for m in spec.m_values:
            for p in spec.p_values:
                if p > dmap.s or m > dmap.s:
                    raise ParameterError(
                        f"sweep point k={k}, m={m}, p={p} exceeds s={dmap.s}"
                    )
                label = f"k={k}, m={m}, p={p}"
                try:
                    rr = run_single_target(
                        model, dmap, grid, frames, ListParams(k, m), p
                    )
                    if (m, p) not in baseline_cache:
                        base = max_value_baseline(frames, dmap, m, p)
                        baseline_cache[m, p] = float(base.mean())
                except TopselError as exc:
                    _with_context(exc, label)
                acc = rr.accuracy
                bacc = baseline_cache[m, p]
                rows.append(
                    (
                        k,
                        m,
                        p,
                        acc,
                        _binom_se(acc, rr.n_frames),
                        rr.mean_set_size,
                        bacc,
                        _binom_se(bacc, rr.n_frames),
                    )
                )
    return ResultTable(
        scenario=spec.scenario,
        columns=(
            "k",
            "m",
            "p",
            "accuracy",
            "uncertainty",
            "mean_set_size",
            "baseline_accuracy",
            "baseline_uncertainty",
        ),
        rows=tuple(rows),
    )


def _run_multi_sync(spec: ExperimentSpec) -> ResultTable:
    dmap = _deployment(spec)
    grid = grid_covering(spec.rect, spec.grid_rows, spec.grid_cols)
    model = _truth_model(spec, dmap)
    frames = _multi_target_frames(spec, model, dmap)
    if len(spec.k_values) != 1 or len(spec.m_values) != 1:
        raise ParameterError("multi-target sweep expects exactly one k and one m")
    params = ListParams(spec.k_values[0], spec.m_values[0])
    rows = []
    for t_sync in spec.t_sync_values:
        schedule = GridSchedule(
            t_sync=t_sync, t_inc=spec.t_inc, side_schedule=spec.side_schedule
        )
        for p in spec.p_values:
            label = f"t_sync={t_sync}, p={p}"
            try:
                rr = run_multi_target(
                    model, dmap, grid, frames, params, p, schedule
                )
            except TopselError as exc:
                _with_context(exc, label)
            rows.append(
                (
                    t_sync,
                    p,
                    params.k,
                    params.m,
                    rr.accuracy,
                    _binom_se(rr.accuracy, rr.n_frames),
                    rr.mean_set_size,
                )
            )
    return ResultTable(
        scenario=spec.scenario,
        columns=("t_sync", "p", "k", "m", "accuracy", "uncertainty", "mean_set_size"),
        rows=tuple(rows),
    )


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Dispatch a resolved spec to its scenario runner."""
    spec = _resolved(spec)
    if spec.scenario == "accuracy-vs-p":
        return _run_accuracy_vs_p(spec)
    if spec.scenario in ("single-target-km-sweep", "set-size-tradeoff"):
        return _run_km_sweep(spec)
    return _run_multi_sync(spec)


def write_results(table: ResultTable, spec: ExperimentSpec, out_dir) -> tuple[str, str]:
    """Write {scenario}.csv plus manifest.json; returns both paths."""
    import os

    resolved = _resolved(spec)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{table.scenario}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(table.to_csv())
    versions = {"topsel": _pkg_version, "numpy": np.__version__}
    try:
        import scipy

        versions["scipy"] = scipy.__version__
    except ImportError:
        pass
    if K.HAVE_NUMBA:
        import numba

        versions["numba"] = numba.__version__
    manifest = {
        "scenario": table.scenario,
        "seed": resolved.seed,
        "spec": spec_to_doc(resolved),
        "spec_sha256": spec_hash(resolved),
        "backend": K.BACKEND,
        "versions": versions,
        "columns": list(table.columns),
        "n_rows": len(table.rows),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, manifest_path
