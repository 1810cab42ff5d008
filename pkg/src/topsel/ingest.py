"""Trace ingestion: timestamped CSV logs to aligned measurement frames.

Input schemas (UTF-8, comma separated, `.` decimal point, header required):

  readings  timestamp_ms,sensor_id,rss_db
  truth     timestamp_ms,target_id,x_m,y_m

Records land in bucket_ms-wide buckets (bucket = timestamp // bucket_ms).
A frame is emitted for a bucket only when every sensor reported there and
at least one truth record shares the bucket; within a bucket the reading
with the latest timestamp wins (file order breaks exact timestamp ties).
Ticks count buckets from the start of the overlap window of the two logs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ParameterError, ParseError
from .geometry import D_MIN, DeploymentMap, Location, MeasurementFrame

DEFAULT_BUCKET_MS = 200

RSS_HEADER = "timestamp_ms,sensor_id,rss_db"
TRUTH_HEADER = "timestamp_ms,target_id,x_m,y_m"


@dataclass(frozen=True)
class TraceRecord:
    """One RSS reading from one sensor."""

    timestamp_ms: int
    sensor_id: int
    rss_db: float


@dataclass(frozen=True)
class TruthRecord:
    """One ground-truth position report for one target."""

    timestamp_ms: int
    target_id: int
    location: Location


@dataclass(frozen=True)
class DropReport:
    """Accounting for the overlap window: emitted + dropped = total."""

    first_bucket: int
    last_bucket: int
    emitted: int
    dropped_incomplete: int
    dropped_no_truth: int

    @property
    def total_buckets(self) -> int:
        return self.last_bucket - self.first_bucket + 1

    @property
    def dropped(self) -> int:
        return self.dropped_incomplete + self.dropped_no_truth


def _read_rows(path, header, n_fields):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot open {path}: {exc}") from exc
    with fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != header:
        raise ParseError(f"expected header {header!r} in {path}", line_no=1)
    out = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != n_fields:
            raise ParseError(
                f"expected {n_fields} comma-separated fields, got {len(parts)}", line_no=no
            )
        out.append((no, parts))
    return out


def read_trace_records(path, s: int) -> list[TraceRecord]:
    """Parse a readings log; sensor ids must lie in [0, s)."""
    records = []
    for no, parts in _read_rows(path, RSS_HEADER, 3):
        try:
            ts = int(parts[0])
            sid = int(parts[1])
            rss = float(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), line_no=no) from exc
        if not (0 <= sid < s):
            raise ParseError(f"sensor_id {sid} outside [0, {s})", line_no=no)
        if not np.isfinite(rss):
            raise ParseError(f"rss_db must be finite, got {parts[2]}", line_no=no)
        records.append(TraceRecord(ts, sid, rss))
    return records


def read_truth_records(path, area=None) -> list[TruthRecord]:
    """Parse a truth log; positions outside the area only warn."""
    records = []
    outside = 0
    for no, parts in _read_rows(path, TRUTH_HEADER, 4):
        try:
            ts = int(parts[0])
            tid = int(parts[1])
            x = float(parts[2])
            y = float(parts[3])
        except ValueError as exc:
            raise ParseError(str(exc), line_no=no) from exc
        if tid < 0:
            raise ParseError(f"target_id must be >= 0, got {tid}", line_no=no)
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ParseError("coordinates must be finite", line_no=no)
        loc = Location(x, y)
        if area is not None and not area.contains(loc, tol=1e-9):
            outside += 1
        records.append(TruthRecord(ts, tid, loc))
    if outside:
        warnings.warn(f"{outside} truth record(s) fall outside the area", stacklevel=2)
    return records


def parse_traces(
    rss_path,
    truth_path,
    dmap: DeploymentMap,
    bucket_ms: int = DEFAULT_BUCKET_MS,
) -> tuple[list[MeasurementFrame], DropReport]:
    """Align the two logs into complete measurement frames.

    Returns the frames (ticks strictly increasing, renumbered from the
    overlap window start) and the drop accounting."""
    if bucket_ms < 1:
        raise ParameterError("bucket_ms must be >= 1")
    rss = read_trace_records(rss_path, dmap.s)
    truth = read_truth_records(truth_path, dmap.area)
    if not rss:
        raise AlignmentError(f"{rss_path} holds no records")
    if not truth:
        raise AlignmentError(f"{truth_path} holds no records")

    by_bucket: dict[int, dict[int, TraceRecord]] = {}
    for rec in rss:
        b = rec.timestamp_ms // bucket_ms
        slot = by_bucket.setdefault(b, {})
        prev = slot.get(rec.sensor_id)
        if prev is None or rec.timestamp_ms >= prev.timestamp_ms:
            slot[rec.sensor_id] = rec
    truth_by_bucket: dict[int, dict[int, TruthRecord]] = {}
    for rec in truth:
        b = rec.timestamp_ms // bucket_ms
        slot = truth_by_bucket.setdefault(b, {})
        prev = slot.get(rec.target_id)
        if prev is None or rec.timestamp_ms >= prev.timestamp_ms:
            slot[rec.target_id] = rec

    lo = max(min(by_bucket), min(truth_by_bucket))
    hi = min(max(by_bucket), max(truth_by_bucket))
    if hi < lo:
        raise AlignmentError(
            f"logs do not overlap: readings span buckets "
            f"[{min(by_bucket)}, {max(by_bucket)}], truth "
            f"[{min(truth_by_bucket)}, {max(truth_by_bucket)}]"
        )
    frames: list[MeasurementFrame] = []
    n_incomplete = 0
    n_no_truth = 0
    for b in range(lo, hi + 1):
        slot = by_bucket.get(b, {})
        if len(slot) < dmap.s:
            n_incomplete += 1
            continue
        tslot = truth_by_bucket.get(b)
        if not tslot:
            n_no_truth += 1
            continue
        z = np.array([slot[i].rss_db for i in range(dmap.s)])
        locs = tuple(tslot[tid].location for tid in sorted(tslot))
        frames.append(MeasurementFrame(t=b - lo, z=z, truth=locs))
    report = DropReport(
        first_bucket=lo,
        last_bucket=hi,
        emitted=len(frames),
        dropped_incomplete=n_incomplete,
        dropped_no_truth=n_no_truth,
    )
    return frames, report


def write_traces(
    frames,
    rss_path,
    truth_path,
    bucket_ms: int = DEFAULT_BUCKET_MS,
    start_ms: int = 0,
) -> None:
    """Write frames back out in the ingestion schemas.

    Timestamps sit mid-bucket at start_ms + t*bucket_ms + bucket_ms//2;
    target ids are positions in each frame's truth tuple. Frames must
    carry truth, since the truth log is part of the schema."""
    frames = list(frames)
    if not frames:
        raise ParameterError("nothing to write")
    for f in frames:
        if f.truth is None:
            raise ParameterError(f"frame t={f.t} has no truth; cannot write a truth log")
    with open(rss_path, "w", encoding="utf-8") as fh:
        fh.write(RSS_HEADER + "\n")
        for f in frames:
            ts = start_ms + f.t * bucket_ms + bucket_ms // 2
            for i, v in enumerate(f.z):
                fh.write(f"{ts},{i},{float(v)!r}\n")
    with open(truth_path, "w", encoding="utf-8") as fh:
        fh.write(TRUTH_HEADER + "\n")
        for f in frames:
            ts = start_ms + f.t * bucket_ms + bucket_ms // 2
            for r, loc in enumerate(f.truth):
                fh.write(f"{ts},{r},{float(loc.x)!r},{float(loc.y)!r}\n")


def build_fit_dataset(frames, dmap: DeploymentMap, sensor: int) -> np.ndarray:
    """(n, 2) array of (floored distance, rss) pairs for one sensor.

    Only single-target frames are meaningful for fitting; a multi-target
    frame raises because its reading mixes several sources."""
    if not (0 <= sensor < dmap.s):
        raise ParameterError(f"sensor index {sensor} outside [0, {dmap.s})")
    sx = dmap.sensors[sensor]
    rows = []
    for f in frames:
        if f.truth is None or len(f.truth) != 1:
            raise ParameterError(
                f"frame t={f.t} does not carry single-target truth; "
                "fitting needs one target per frame"
            )
        d = max(f.truth[0].distance_to(sx), D_MIN)
        rows.append((d, float(f.z[sensor])))
    return np.array(rows, dtype=np.float64).reshape(-1, 2)
