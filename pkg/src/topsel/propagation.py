"""RSS propagation models: fitting, evaluation, sampling.

Two model families per sensor, both Gaussian in dB:

  log-linear  mean(d) = p0 + eta * x(d)           x(d) = -10*log10(max(d, D_MIN))
  spline      mean(d) = p0_w + eta_w * x(d)       w = bin of d, L bins equal
                                                  width in log10(d), continuous
                                                  at interior knots

The spline is fitted as an equality-constrained least squares problem solved
through its stationarity system (one symmetric solve). Measurement variance
is floored at VARIANCE_FLOOR inside every likelihood so noiseless fits stay
usable for inference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, ParameterError
from .geometry import D_MIN, DeploymentMap, Location, MeasurementFrame

VARIANCE_FLOOR = 1e-6  # dB^2
KNOT_TOL = 1e-9  # dB; max mean mismatch across an interior knot


def _x_of(d):
    """Regressor: negated decibel log-distance, with the distance floor."""
    return -10.0 * np.log10(np.maximum(d, D_MIN))


@dataclass(frozen=True)
class LogLinearModel:
    """Single-sensor log-distance model with homoscedastic noise."""

    p0: float
    eta: float
    sigma: float

    def __post_init__(self):
        for name, v in (("p0", self.p0), ("eta", self.eta), ("sigma", self.sigma)):
            if not np.isfinite(v):
                raise ParameterError(f"{name} must be finite")
        if self.eta <= 0.0:
            raise ParameterError("path loss exponent eta must be > 0")
        if self.sigma < 0.0:
            raise ParameterError("sigma must be >= 0")

    @property
    def sigma_tilde(self) -> float:
        """Noise scale of the normalized measurement (z - p0) / eta."""
        return self.sigma / self.eta

    def mean(self, d) -> np.ndarray | float:
        return self.p0 + self.eta * _x_of(np.asarray(d, dtype=np.float64))

    def variance(self, d) -> np.ndarray | float:
        v = max(self.sigma * self.sigma, VARIANCE_FLOOR)
        return np.full_like(np.asarray(d, dtype=np.float64), v)

    def noise_variance(self, d) -> np.ndarray | float:
        """Generation-time variance: unfloored, so sigma=0 samples exactly
        on the mean curve. The floor only guards likelihood evaluation."""
        return np.full_like(np.asarray(d, dtype=np.float64), self.sigma * self.sigma)


@dataclass(frozen=True)
class NormalizedModel:
    """Measurement scaled to unit path loss: mean is -10*log10(distance)."""

    sigma_tilde: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma_tilde) and self.sigma_tilde >= 0.0):
            raise ParameterError("sigma_tilde must be finite and >= 0")

    @staticmethod
    def mean(d) -> np.ndarray | float:
        return _x_of(np.asarray(d, dtype=np.float64))


@dataclass(frozen=True)
class SplineModel:
    """Piecewise log-linear model, continuous across bin edges.

    edges_m holds the L+1 bin edges in metres; bin w covers
    [edges_m[w], edges_m[w+1]), the last bin closed on the right, and
    distances beyond either end are evaluated with the nearest bin.
    """

    edges_m: tuple[float, ...]
    p0: tuple[float, ...]
    eta: tuple[float, ...]
    sigma2: tuple[float, ...]

    def __post_init__(self):
        e = np.asarray(self.edges_m, dtype=np.float64)
        L = len(self.p0)
        if L < 1 or len(self.eta) != L or len(self.sigma2) != L or e.size != L + 1:
            raise ParameterError("inconsistent spline arrays")
        if not np.all(np.isfinite(e)) or np.any(np.diff(e) <= 0.0) or e[0] <= 0.0:
            raise ParameterError("spline edges must be positive and strictly increasing")
        for arr, name in ((self.p0, "p0"), (self.eta, "eta"), (self.sigma2, "sigma2")):
            if not np.all(np.isfinite(np.asarray(arr))):
                raise ParameterError(f"spline {name} must be finite")
        if any(v < VARIANCE_FLOOR * (1.0 - 1e-12) for v in self.sigma2):
            raise ParameterError(f"spline bin variance below the {VARIANCE_FLOOR} floor")
        # continuity across interior knots
        for w in range(L - 1):
            xk = -10.0 * math.log10(e[w + 1])
            a = self.p0[w] + self.eta[w] * xk
            b = self.p0[w + 1] + self.eta[w + 1] * xk
            if abs(a - b) > KNOT_TOL:
                raise ParameterError(
                    f"spline discontinuous at knot {w + 1}: gap {abs(a - b):.3e} dB"
                )
        object.__setattr__(self, "edges_m", tuple(float(v) for v in e))
        object.__setattr__(self, "p0", tuple(float(v) for v in self.p0))
        object.__setattr__(self, "eta", tuple(float(v) for v in self.eta))
        object.__setattr__(self, "sigma2", tuple(float(v) for v in self.sigma2))

    @property
    def n_bins(self) -> int:
        return len(self.p0)

    def bin_of(self, d) -> np.ndarray:
        """Bin index per distance; keys on the stored metre-domain edges so
        serialization round-trips preserve assignment exactly."""
        dd = np.maximum(np.asarray(d, dtype=np.float64), D_MIN)
        idx = np.searchsorted(np.asarray(self.edges_m), dd, side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def mean(self, d) -> np.ndarray | float:
        dd = np.asarray(d, dtype=np.float64)
        w = self.bin_of(dd)
        p0 = np.asarray(self.p0)[w]
        eta = np.asarray(self.eta)[w]
        return p0 + eta * _x_of(dd)

    def variance(self, d) -> np.ndarray | float:
        w = self.bin_of(d)
        return np.maximum(np.asarray(self.sigma2)[w], VARIANCE_FLOOR)

    def noise_variance(self, d) -> np.ndarray | float:
        return self.variance(d)


SensorModel = LogLinearModel | SplineModel


def fit_log_linear(samples) -> LogLinearModel:
    """Ordinary least squares on (distance, rss) pairs.

    sigma is sqrt(RSS / (n - 2)) for n >= 3 and 0.0 for n == 2. Raises
    FitError on fewer than two distinct distances or a non-positive slope.
    """
    d, z = _as_samples(samples)
    if d.size < 2:
        raise FitError("log-linear fit needs at least two samples")
    x = _x_of(d)
    xm = x.mean()
    zm = z.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0.0:
        raise FitError("log-linear fit needs two distinct distances")
    eta = float(np.sum((x - xm) * (z - zm))) / sxx
    if eta <= 0.0:
        raise FitError(f"fitted path loss exponent is non-positive ({eta:.4g})")
    p0 = zm - eta * xm
    resid = z - (p0 + eta * x)
    n = d.size
    sigma = math.sqrt(float(np.sum(resid**2)) / (n - 2)) if n >= 3 else 0.0
    return LogLinearModel(float(p0), eta, sigma)


def fit_spline(samples, n_bins: int) -> SplineModel:
    """Continuity-constrained piecewise fit over n_bins log-width bins.

    Bin edges are equally spaced in log10(distance) between the floored
    sample extremes. Minimizes the residual sum of squares subject to mean
    continuity at every interior knot; the stationarity conditions and the
    constraints form one symmetric linear system solved directly.
    """
    d, z = _as_samples(samples)
    if n_bins < 1:
        raise ParameterError("n_bins must be >= 1")
    if d.size < 2 * n_bins:
        raise FitError(f"spline fit with {n_bins} bins needs >= {2 * n_bins} samples")
    dd = np.maximum(d, D_MIN)
    lg = np.log10(dd)
    lo, hi = float(lg.min()), float(lg.max())
    if hi - lo <= 0.0:
        raise FitError("spline fit needs a nonzero distance range")
    edges_m = np.power(10.0, np.linspace(lo, hi, n_bins + 1))
    idx = np.clip(np.searchsorted(edges_m, dd, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    for w in range(n_bins):
        if counts[w] == 0:
            raise FitError(
                f"spline bin {w} ([{edges_m[w]:.4g}, {edges_m[w + 1]:.4g}] m) "
                "contains no samples"
            )
    x = _x_of(dd)
    L = n_bins
    # normal-equations blocks, one (intercept, slope) pair per bin
    ata = np.zeros((2 * L, 2 * L))
    atz = np.zeros(2 * L)
    for w in range(L):
        m = idx == w
        xw = x[m]
        zw = z[m]
        ata[2 * w, 2 * w] = xw.size
        ata[2 * w, 2 * w + 1] = ata[2 * w + 1, 2 * w] = xw.sum()
        ata[2 * w + 1, 2 * w + 1] = float(np.sum(xw * xw))
        atz[2 * w] = zw.sum()
        atz[2 * w + 1] = float(np.sum(xw * zw))
    G = np.zeros((L - 1, 2 * L))
    for w in range(L - 1):
        xk = -10.0 * math.log10(edges_m[w + 1])
        G[w, 2 * w] = 1.0
        G[w, 2 * w + 1] = xk
        G[w, 2 * w + 2] = -1.0
        G[w, 2 * w + 3] = -xk
    kkt = np.zeros((3 * L - 1, 3 * L - 1))
    kkt[: 2 * L, : 2 * L] = 2.0 * ata
    kkt[: 2 * L, 2 * L :] = G.T
    kkt[2 * L :, : 2 * L] = G
    rhs = np.concatenate([2.0 * atz, np.zeros(L - 1)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"spline system is singular: {exc}") from exc
    theta = sol[: 2 * L]
    p0 = theta[0::2]
    eta = theta[1::2]
    resid = z - (p0[idx] + eta[idx] * x)
    sigma2 = np.empty(L)
    for w in range(L):
        m = idx == w
        sigma2[w] = max(float(np.mean(resid[m] ** 2)), VARIANCE_FLOOR)
    return SplineModel(tuple(edges_m), tuple(p0), tuple(eta), tuple(sigma2))


def _as_samples(samples):
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ParameterError("samples must be a non-empty sequence of (distance, rss)")
    d = arr[:, 0]
    z = arr[:, 1]
    if np.any(d <= 0.0) or not np.all(np.isfinite(arr)):
        raise ParameterError("distances must be positive and all values finite")
    return d, z


def normalize(model: LogLinearModel, z) -> np.ndarray | float:
    """Map a raw reading to the unit-path-loss scale: (z - p0) / eta."""
    if not isinstance(model, LogLinearModel):
        raise ParameterError("normalization is defined for log-linear models only")
    return (np.asarray(z, dtype=np.float64) - model.p0) / model.eta


def normalized(model: LogLinearModel) -> NormalizedModel:
    return NormalizedModel(model.sigma_tilde)


def log_likelihood(entry: SensorModel, z, d) -> np.ndarray | float:
    """Gaussian log-density of reading z at distance d, variance floored."""
    m = entry.mean(d)
    v = entry.variance(d)
    zz = np.asarray(z, dtype=np.float64)
    return -0.5 * ((zz - m) ** 2 / v + np.log(2.0 * math.pi * v))


def likelihood(entry: SensorModel, z, d) -> np.ndarray | float:
    return np.exp(log_likelihood(entry, z, d))


@dataclass(frozen=True)
class PropagationModel:
    """Per-sensor models for one deployment, indexed like the deployment."""

    entries: tuple[SensorModel, ...]

    def __post_init__(self):
        if len(self.entries) == 0:
            raise ParameterError("propagation model needs at least one sensor entry")
        for i, e in enumerate(self.entries):
            if not isinstance(e, (LogLinearModel, SplineModel)):
                raise ParameterError(f"entry {i} is not a sensor model")

    @property
    def s(self) -> int:
        return len(self.entries)

    def mean_table(self, dists: np.ndarray) -> np.ndarray:
        """(n, s) mean dB for an (n, s) distance matrix."""
        dists = self._check_dists(dists)
        out = np.empty(dists.shape, dtype=np.float64)
        for i, e in enumerate(self.entries):
            out[:, i] = e.mean(dists[:, i])
        return out

    def variance_table(self, dists: np.ndarray) -> np.ndarray:
        dists = self._check_dists(dists)
        out = np.empty(dists.shape, dtype=np.float64)
        for i, e in enumerate(self.entries):
            out[:, i] = e.variance(dists[:, i])
        return out

    def power_table(self, dists: np.ndarray) -> np.ndarray:
        """(n, s) linear-domain mean powers, 10**(mean_dB / 10)."""
        return np.power(10.0, self.mean_table(dists) / 10.0)

    def sigma_tilde(self) -> np.ndarray:
        """Normalized noise scale per sensor; log-linear entries only."""
        bad = [i for i, e in enumerate(self.entries) if not isinstance(e, LogLinearModel)]
        if bad:
            raise ParameterError(f"sensors {bad} are not log-linear; cannot normalize")
        return np.array([e.sigma_tilde for e in self.entries])

    def _check_dists(self, dists):
        dists = np.asarray(dists, dtype=np.float64)
        if dists.ndim != 2 or dists.shape[1] != self.s:
            raise ParameterError(f"distance matrix must be (n, {self.s})")
        return dists


def superposed_mean(model: PropagationModel, dmap: DeploymentMap, components, i: int) -> float:
    """Mean reading of sensor i with several simultaneous targets.

    Individual mean powers add in the linear domain and the sum returns
    to dB. components is the tuple of target locations."""
    if not (0 <= i < model.s):
        raise ParameterError(f"sensor index {i} out of range")
    comps = (components,) if isinstance(components, Location) else tuple(components)
    if len(comps) == 0:
        raise ParameterError("need at least one target location")
    sx, sy = dmap.sensors[i].x, dmap.sensors[i].y
    total = 0.0
    for loc in comps:
        d = math.hypot(loc.x - sx, loc.y - sy)
        total += 10.0 ** (float(model.entries[i].mean(d)) / 10.0)
    return 10.0 * math.log10(total)


def sample_measurements(
    model: PropagationModel,
    dmap: DeploymentMap,
    targets,
    seed: int,
    t: int = 0,
) -> MeasurementFrame:
    """Draw one synchronized frame of noisy readings.

    Multiple targets superpose in the linear power domain; the noise
    variance of each sensor comes from whichever target contributes the
    most power there (ties to the lower target index). Deterministic in
    (model, map, targets, seed)."""
    comps = (targets,) if isinstance(targets, Location) else tuple(targets)
    if len(comps) == 0:
        raise ParameterError("need at least one target")
    if model.s != dmap.s:
        raise ParameterError("model and deployment disagree on sensor count")
    pts = np.array([[c.x, c.y] for c in comps])
    diff = pts[:, None, :] - dmap.sensor_xy()[None, :, :]
    dists = np.sqrt(np.sum(diff * diff, axis=2))  # (N, s)
    P = model.power_table(dists)  # (N, s)
    mean_db = 10.0 * np.log10(P.sum(axis=0))
    dom = np.argmax(P, axis=0)
    var = np.array(
        [float(np.asarray(model.entries[i].noise_variance(dists[dom[i], i])).reshape(()))
         for i in range(dmap.s)]
    )
    rng = np.random.default_rng(seed)
    z = mean_db + np.sqrt(var) * rng.standard_normal(dmap.s)
    return MeasurementFrame(t=t, z=z, truth=comps)


# --- JSON serialization ----------------------------------------------------


def _entry_doc(e: SensorModel) -> dict:
    if isinstance(e, LogLinearModel):
        return {"type": "loglinear", "p0": e.p0, "eta": e.eta, "sigma": e.sigma}
    return {
        "type": "spline",
        "edges": list(e.edges_m),
        "p0": list(e.p0),
        "eta": list(e.eta),
        "sigma2": list(e.sigma2),
    }


def _entry_from_doc(doc: dict, i: int) -> SensorModel:
    try:
        kind = doc["type"]
        if kind == "loglinear":
            return LogLinearModel(float(doc["p0"]), float(doc["eta"]), float(doc["sigma"]))
        if kind == "spline":
            return SplineModel(
                tuple(float(v) for v in doc["edges"]),
                tuple(float(v) for v in doc["p0"]),
                tuple(float(v) for v in doc["eta"]),
                tuple(float(v) for v in doc["sigma2"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"malformed model entry {i}: {exc}") from exc
    raise ParameterError(f"unknown model type {doc.get('type')!r} at entry {i}")


def save_model(model: PropagationModel, path) -> None:
    """Write a model file: a JSON array, one entry per sensor."""
    doc = [_entry_doc(e) for e in model.entries]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_model(path) -> PropagationModel:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ParameterError(f"model file {path} must hold a JSON array of sensor entries")
    return PropagationModel(tuple(_entry_from_doc(d, i) for i, d in enumerate(doc)))
