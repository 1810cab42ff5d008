"""Planar geometry: sensor deployments, hypothesis grids, measurement frames.

Distances feed a log-distance path loss model elsewhere, so every distance
used for a mean RSS is floored at D_MIN metres first. Ranking sensors by
proximity uses the raw geometric distance; ties break toward the lowest
sensor index via stable sorting.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

D_MIN = 0.1  # metres; floor applied to distances before taking logs
SEPARATION_TOL = 1e-9  # metres; tied-distance warning threshold


def _require_finite(name, *values):
    for v in values:
        if not np.isfinite(v):
            raise ParameterError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Location:
    """A point in the plane, metres."""

    x: float
    y: float

    def __post_init__(self):
        _require_finite("Location coordinate", self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def distance_to(self, other: "Location") -> float:
        return float(np.hypot(self.x - other.x, self.y - other.y))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by min and max corners."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        _require_finite("Rect corner", self.xmin, self.ymin, self.xmax, self.ymax)
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise ParameterError("Rect must have positive width and height")

    def contains(self, loc: Location, tol: float = 0.0) -> bool:
        return (
            self.xmin - tol <= loc.x <= self.xmax + tol
            and self.ymin - tol <= loc.y <= self.ymax + tol
        )


@dataclass(frozen=True)
class DeploymentMap:
    """Fixed sensor positions inside a surveillance area.

    Sensor index is position in the tuple and is the identity used across
    the whole package (answer sets, traces, fitted models).
    """

    sensors: tuple[Location, ...]
    area: Rect

    def __post_init__(self):
        if len(self.sensors) == 0:
            raise ParameterError("deployment needs at least one sensor")
        for i, s in enumerate(self.sensors):
            if not isinstance(s, Location):
                raise ParameterError(f"sensor {i} is not a Location")
            if not self.area.contains(s, tol=1e-9):
                raise ParameterError(f"sensor {i} at ({s.x}, {s.y}) lies outside the area")

    @property
    def s(self) -> int:
        return len(self.sensors)

    def sensor_xy(self) -> np.ndarray:
        """(s, 2) array of sensor coordinates."""
        return np.array([[p.x, p.y] for p in self.sensors], dtype=np.float64)


@dataclass(frozen=True)
class HypothesisGrid:
    """Uniform square grid of candidate target locations.

    Point index is row-major: index = row * cols + col, row 0 at origin.y.
    """

    origin: Location
    spacing: float
    rows: int
    cols: int

    def __post_init__(self):
        if not (self.spacing > 0.0 and np.isfinite(self.spacing)):
            raise ParameterError("grid spacing must be positive and finite")
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("grid must have at least one row and column")

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def points_xy(self) -> np.ndarray:
        """(rows*cols, 2) coordinates in index order."""
        r = np.arange(self.rows, dtype=np.float64)
        c = np.arange(self.cols, dtype=np.float64)
        yy, xx = np.meshgrid(r, c, indexing="ij")
        out = np.empty((self.n, 2))
        out[:, 0] = self.origin.x + xx.ravel() * self.spacing
        out[:, 1] = self.origin.y + yy.ravel() * self.spacing
        return out

    def point(self, idx: int) -> Location:
        if not (0 <= idx < self.n):
            raise ParameterError(f"grid index {idx} out of range [0, {self.n})")
        row, col = divmod(idx, self.cols)
        return Location(self.origin.x + col * self.spacing, self.origin.y + row * self.spacing)

    def index_of(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ParameterError("row/col outside the grid")
        return row * self.cols + col

    def nearest_index(self, loc: Location) -> int:
        """Grid point closest to loc; exact midpoints snap toward the
        lower row/col index."""
        fr = (loc.y - self.origin.y) / self.spacing
        fc = (loc.x - self.origin.x) / self.spacing
        row = int(np.floor(fr))
        if fr - row > 0.5:
            row += 1
        col = int(np.floor(fc))
        if fc - col > 0.5:
            col += 1
        row = min(max(row, 0), self.rows - 1)
        col = min(max(col, 0), self.cols - 1)
        return self.index_of(row, col)


def grid_covering(area: Rect, rows: int, cols: int) -> HypothesisGrid:
    """Square grid anchored at the area's min corner, spaced to stay inside."""
    w = area.xmax - area.xmin
    h = area.ymax - area.ymin
    sx = w / (cols - 1) if cols > 1 else w
    sy = h / (rows - 1) if rows > 1 else h
    return HypothesisGrid(Location(area.xmin, area.ymin), min(sx, sy), rows, cols)


@dataclass(frozen=True)
class MeasurementFrame:
    """One synchronized vector of RSS readings, dB, one entry per sensor.

    truth, when present, is the tuple of true target locations for the tick.
    """

    t: int
    z: np.ndarray
    truth: tuple[Location, ...] | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ParameterError("frame tick must be >= 0")
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 1 or z.size == 0:
            raise ParameterError("frame measurements must be a non-empty 1-D vector")
        if not np.all(np.isfinite(z)):
            raise ParameterError("frame measurements must be finite")
        object.__setattr__(self, "z", z)
        if self.truth is not None:
            tr = tuple(self.truth) if not isinstance(self.truth, Location) else (self.truth,)
            for loc in tr:
                if not isinstance(loc, Location):
                    raise ParameterError("frame truth entries must be Locations")
            object.__setattr__(self, "truth", tr)


@dataclass(frozen=True)
class TopPSet:
    """An unordered answer set of sensor indices of size p."""

    indices: frozenset[int]
    p: int

    def __post_init__(self):
        idx = frozenset(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if self.p < 1:
            raise ParameterError("p must be >= 1")
        if len(idx) != self.p:
            raise ParameterError(f"answer set has {len(idx)} indices, expected p={self.p}")
        if any(i < 0 for i in idx):
            raise ParameterError("sensor indices must be non-negative")

    def sorted_indices(self) -> tuple[int, ...]:
        return tuple(sorted(self.indices))


def distance_matrix(points_xy: np.ndarray, sensor_xy: np.ndarray) -> np.ndarray:
    """(n, s) Euclidean distances between points and sensors."""
    d = points_xy[:, None, :] - sensor_xy[None, :, :]
    return np.sqrt(np.sum(d * d, axis=2))


def floored_distances(points_xy: np.ndarray, sensor_xy: np.ndarray) -> np.ndarray:
    return np.maximum(distance_matrix(points_xy, sensor_xy), D_MIN)


def nearest_order(dmap: DeploymentMap, points_xy: np.ndarray) -> np.ndarray:
    """(n, s) sensor indices sorted by raw distance, stable on ties."""
    d = distance_matrix(points_xy, dmap.sensor_xy())
    return np.argsort(d, axis=1, kind="stable")


def true_top_p(dmap: DeploymentMap, loc: Location, p: int) -> TopPSet:
    """The p sensors nearest loc; distance ties go to the lower index."""
    if not (1 <= p <= dmap.s):
        raise ParameterError(f"p must be in [1, {dmap.s}], got {p}")
    order = nearest_order(dmap, loc.as_array()[None, :])[0]
    return TopPSet(frozenset(int(i) for i in order[:p]), p)


def check_grid_separation(
    dmap: DeploymentMap, grid: HypothesisGrid, tol: float = SEPARATION_TOL
) -> list[tuple[int, int, int]]:
    """Hypotheses where two sensors sit at (numerically) equal distance.

    Returns (grid_index, sensor_i, sensor_j) triples and issues a warning
    when any exist. Equal distances make the answer set ambiguous there.
    """
    d = distance_matrix(grid.points_xy(), dmap.sensor_xy())
    order = np.argsort(d, axis=1, kind="stable")
    ds = np.take_along_axis(d, order, axis=1)
    bad_rows = np.nonzero(np.min(np.diff(ds, axis=1), axis=1) <= tol)[0]
    out = []
    for h in bad_rows:
        gaps = np.diff(ds[h])
        for k in np.nonzero(gaps <= tol)[0]:
            out.append((int(h), int(order[h, k]), int(order[h, k + 1])))
    if out:
        warnings.warn(
            f"{len(bad_rows)} grid point(s) have sensor pairs at equal distance "
            f"(tol={tol}); answer sets there depend on index order",
            stacklevel=2,
        )
    return out


def containment_success(truth_sets, recommended) -> bool:
    """True when every truth answer set is contained in the recommended set."""
    if isinstance(truth_sets, TopPSet):
        truth_sets = (truth_sets,)
    rec = frozenset(int(i) for i in recommended)
    return all(ts.indices <= rec for ts in truth_sets)


def empirical_accuracy(outcomes) -> float:
    """Fraction of successful trials; rejects an empty outcome list."""
    arr = np.asarray(list(outcomes), dtype=bool)
    if arr.size == 0:
        raise ParameterError("cannot compute accuracy of zero outcomes")
    return float(arr.mean())


# --- JSON serialization ----------------------------------------------------


def save_deployment(dmap: DeploymentMap, path) -> None:
    doc = {
        "area": {
            "min": [dmap.area.xmin, dmap.area.ymin],
            "max": [dmap.area.xmax, dmap.area.ymax],
        },
        "sensors": [[p.x, p.y] for p in dmap.sensors],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_deployment(path) -> DeploymentMap:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        area = Rect(
            float(doc["area"]["min"][0]),
            float(doc["area"]["min"][1]),
            float(doc["area"]["max"][0]),
            float(doc["area"]["max"][1]),
        )
        sensors = tuple(Location(float(x), float(y)) for x, y in doc["sensors"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"malformed deployment file {path}: {exc}") from exc
    return DeploymentMap(sensors, area)


def save_grid(grid: HypothesisGrid, path) -> None:
    doc = {
        "origin": [grid.origin.x, grid.origin.y],
        "spacing": grid.spacing,
        "rows": grid.rows,
        "cols": grid.cols,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_grid(path) -> HypothesisGrid:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return HypothesisGrid(
            Location(float(doc["origin"][0]), float(doc["origin"][1])),
            float(doc["spacing"]),
            int(doc["rows"]),
            int(doc["cols"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"malformed grid file {path}: {exc}") from exc
