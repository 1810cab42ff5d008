"""The normalized max-value selection rule and its error probability.

A target at h gives sensor i a normalized reading with mean
-10*log10(max(dist, D_MIN)) and standard deviation sigma_tilde[i]. The rule
reports the p sensors with the largest readings; it is correct when that
set equals the p geometrically nearest sensors. Correctness is equivalent
to the smallest reading inside the answer set exceeding the largest reading
outside it, which the three estimators here exploit:

  error_prob_quadrature   deterministic 1-D integral of the conditional
                          correct probability per hypothesis
  error_prob_orthant_mc   Monte Carlo on the pairwise-difference orthant,
                          with the difference-moment self-check
  empirical_error         end-to-end simulation of the rule

Sensors whose sigma_tilde is at or below DETERMINISTIC_SIGMA are treated as
noise-free inside the quadrature (their reading equals the mean); exact
zeros are floored at SIGMA_TILDE_MIN in the quadrature and orthant paths so
densities stay defined. Those two paths score the strict-separation event,
so exactly tied deterministic readings count as failures there, while
empirical_error simulates the selection rule itself, whose stable index
tie-break can still return the correct set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _kernels as K
from .errors import NumericalError, ParameterError
from .geometry import (
    DeploymentMap,
    HypothesisGrid,
    Location,
    TopPSet,
    check_grid_separation,
    floored_distances,
    nearest_order,
)

SIGMA_TILDE_MIN = 1e-12
DETERMINISTIC_SIGMA = 1e-6
MC_MIN_TRIALS = 10_000
QUAD_UNCERTAINTY_MAX = 1e-8  # reported estimate above this raises


def top_p_select(z_tilde, p: int) -> TopPSet:
    """Indices of the p largest normalized readings, ties to lowest index."""
    z = np.asarray(z_tilde, dtype=np.float64)
    if z.ndim != 1:
        raise ParameterError("z_tilde must be a 1-D vector")
    if not (1 <= p <= z.size):
        raise ParameterError(f"p must be in [1, {z.size}], got {p}")
    order = np.argsort(-z, kind="stable")
    return TopPSet(frozenset(int(i) for i in order[:p]), p)


@dataclass(frozen=True, eq=False)
class TopPProblem:
    """A deployment, a hypothesis grid, per-sensor normalized noise, and p.

    Precomputes the normalized mean table and the correct answer set of
    every hypothesis. Construction warns when some hypothesis has two
    sensors at numerically equal distance (the answer there is ambiguous).
    """

    dmap: DeploymentMap
    grid: HypothesisGrid
    sigma_tilde: np.ndarray
    p: int
    check_separation: bool = True

    def __post_init__(self):
        s = self.dmap.s
        sig = np.asarray(self.sigma_tilde, dtype=np.float64)
        if sig.ndim == 0:
            sig = np.full(s, float(sig))
        if sig.shape != (s,):
            raise ParameterError(f"sigma_tilde must be scalar or shape ({s},)")
        if not np.all(np.isfinite(sig)) or np.any(sig < 0.0):
            raise ParameterError("sigma_tilde must be finite and >= 0")
        if not (1 <= self.p <= s):
            raise ParameterError(f"p must be in [1, {s}], got {self.p}")
        object.__setattr__(self, "sigma_tilde", sig)
        if self.check_separation:
            check_grid_separation(self.dmap, self.grid)
        pts = self.grid.points_xy()
        means = -10.0 * np.log10(floored_distances(pts, self.dmap.sensor_xy()))
        order = nearest_order(self.dmap, pts)
        kmask = np.zeros(means.shape, dtype=np.bool_)
        rows = np.arange(means.shape[0])[:, None]
        kmask[rows, order[:, : self.p]] = True
        object.__setattr__(self, "_means", means)
        object.__setattr__(self, "_kmask", kmask)
        object.__setattr__(self, "_sig_floor", np.maximum(sig, SIGMA_TILDE_MIN))

    @property
    def s(self) -> int:
        return self.dmap.s

    @property
    def n_hypotheses(self) -> int:
        return self.grid.n

    def means(self) -> np.ndarray:
        """(n, s) normalized mean readings per hypothesis."""
        return self._means

    def answer_mask(self) -> np.ndarray:
        """(n, s) bool membership of each sensor in the per-hypothesis answer."""
        return self._kmask

    def row_for(self, loc: Location) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and answer mask for an arbitrary location."""
        xy = loc.as_array()[None, :]
        mu = -10.0 * np.log10(floored_distances(xy, self.dmap.sensor_xy()))[0]
        order = nearest_order(self.dmap, xy)[0]
        km = np.zeros(self.s, dtype=np.bool_)
        km[order[: self.p]] = True
        return mu, km


@dataclass(frozen=True)
class ErrorProbReport:
    """Outcome of one error-probability computation."""

    p_error: float
    method: str
    uncertainty: float
    per_hypothesis: np.ndarray | None = None
    n_trials: int | None = None
    seed: int | None = None


def _prod_cdf(mu, sig, v) -> float:
    return float(np.prod(ndtr((v - mu) / sig))) if mu.size else 1.0


def _prod_sf(mu, sig, v) -> float:
    return float(np.prod(ndtr((mu - v) / sig))) if mu.size else 1.0


def _conditional_one(mu, sig, km) -> tuple[float, float]:
    """Correct probability at one hypothesis, deterministic sensors split out.

    With U the answer-set minimum and V the complement maximum, correctness
    is U > V. Noise-free members pin U from above at u0 and V from below at
    v0; the random remainder contributes a boundary term plus a truncated
    integral over [v0, u0]."""
    s = mu.size
    if int(km.sum()) == s:
        return 1.0, 0.0
    det = sig <= DETERMINISTIC_SIGMA
    if not det.any():
        lo = float(np.min(mu - K.QUAD_WIDE * sig))
        hi = float(np.max(mu + K.QUAD_WIDE * sig))
        return K.correct_prob_interval(mu, sig, km, lo, hi)
    det_k = det & km
    det_c = det & ~km
    u0 = float(mu[det_k].min()) if det_k.any() else np.inf
    v0 = float(mu[det_c].max()) if det_c.any() else -np.inf
    if u0 <= v0:
        return 0.0, 0.0
    r = ~det
    mu_r, sig_r, km_r = mu[r], sig[r], km[r]
    n_k = int(km_r.sum())
    n_c = km_r.size - n_k
    if n_k == 0 and n_c == 0:
        return 1.0, 0.0
    if n_k == 0:
        return _prod_cdf(mu_r[~km_r], sig_r[~km_r], u0), 0.0
    if n_c == 0:
        return _prod_sf(mu_r[km_r], sig_r[km_r], v0), 0.0
    term = 0.0
    if np.isfinite(v0):
        term = _prod_cdf(mu_r[~km_r], sig_r[~km_r], v0) * _prod_sf(
            mu_r[km_r], sig_r[km_r], v0
        )
    glo = float(np.min(mu_r - K.QUAD_WIDE * sig_r))
    ghi = float(np.max(mu_r + K.QUAD_WIDE * sig_r))
    lo = max(glo, v0) if np.isfinite(v0) else glo
    hi = min(ghi, u0) if np.isfinite(u0) else ghi
    val, err = K.correct_prob_interval(mu_r, sig_r, km_r, lo, hi)
    return term + val, err


def conditional_correct_quadrature(problem: TopPProblem, h: Location) -> float:
    """P(rule answers correctly | target at h), by deterministic quadrature."""
    mu, km = problem.row_for(h)
    val, err = _conditional_one(mu, problem._sig_floor, km)
    if err > QUAD_UNCERTAINTY_MAX:
        raise NumericalError(
            f"quadrature error estimate {err:.2e} exceeds {QUAD_UNCERTAINTY_MAX:.0e}"
        )
    return min(max(val, 0.0), 1.0)


def error_prob_quadrature(problem: TopPProblem) -> ErrorProbReport:
    """Exact selection error probability, hypotheses weighted uniformly."""
    sig = problem._sig_floor
    means = problem._means
    kmask = problem._kmask
    if problem.p == problem.s:
        vals = np.ones(problem.n_hypotheses)
        errs = np.zeros(problem.n_hypotheses)
    elif np.any(sig <= DETERMINISTIC_SIGMA):
        vals = np.empty(problem.n_hypotheses)
        errs = np.empty(problem.n_hypotheses)
        for h in range(problem.n_hypotheses):
            vals[h], errs[h] = _conditional_one(means[h], sig, kmask[h])
    else:
        vals, errs = K.correct_prob_batch(means, sig, kmask)
    worst = float(errs.max()) if errs.size else 0.0
    if worst > QUAD_UNCERTAINTY_MAX:
        h = int(np.argmax(errs))
        raise NumericalError(
            f"quadrature failed to converge at hypothesis {h}: "
            f"error estimate {worst:.2e}"
        )
    vals = np.clip(vals, 0.0, 1.0)
    return ErrorProbReport(
        p_error=float(1.0 - vals.mean()),
        method="quadrature",
        uncertainty=float(errs.mean()),
        per_hypothesis=vals,
    )


def difference_moments(
    problem: TopPProblem, h: Location | int
) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]:
    """Mean and covariance of all answer-vs-complement reading differences.

    h is a grid row index or an arbitrary Location. Returns (mean, cov,
    pairs) with pairs[a] = (i, j) naming the difference z_i - z_j on row
    a: i ascends over the answer set (outer), j over the complement
    (inner). The covariance is built twice, from the per-entry indicator
    identity and from the signed incidence factorization, and the two
    must agree to 1e-12."""
    if isinstance(h, (int, np.integer)):
        if not 0 <= h < problem.n_hypotheses:
            raise ParameterError(f"hypothesis index {h} out of range")
        mu, km = problem._means[h], problem._kmask[h]
    else:
        mu, km = problem.row_for(h)
    mean, cov = _difference_moments(mu, problem._sig_floor, km)
    kset = np.flatnonzero(km)
    comp = np.flatnonzero(~km)
    pairs = [(int(i), int(j)) for i in kset for j in comp]
    return mean, cov, pairs


def _difference_moments(mu, sig, km):
    s = mu.size
    ki = np.nonzero(km)[0]
    ci = np.nonzero(~km)[0]
    if ci.size == 0:
        raise ParameterError("difference moments need a non-empty complement")
    pairs = [(int(i), int(j)) for i in ki for j in ci]
    npair = len(pairs)
    m = np.array([mu[i] - mu[j] for i, j in pairs])
    var = sig * sig
    cov = np.empty((npair, npair))
    for a, (i, j) in enumerate(pairs):
        for b, (i2, j2) in enumerate(pairs):
            cov[a, b] = (
                var[i] * (i == i2)
                + var[j] * (j == j2)
                - var[i] * (i == j2)
                - var[j] * (j == i2)
            )
    A = np.zeros((npair, s))
    for a, (i, j) in enumerate(pairs):
        A[a, i] = 1.0
        A[a, j] = -1.0
    cov2 = (A * var[None, :]) @ A.T
    gap = float(np.max(np.abs(cov - cov2)))
    if gap > 1e-12:
        raise NumericalError(
            f"difference covariance constructions disagree by {gap:.2e}"
        )
    return m, cov


def error_prob_orthant_mc(
    problem: TopPProblem, trials: int, seed: int
) -> ErrorProbReport:
    """Error probability via the positive-orthant form, estimated per
    hypothesis by Monte Carlo on the underlying readings.

    Every hypothesis gets its own counter stream and `trials` draws; the
    difference-moment double construction is verified for each hypothesis
    before sampling."""
    _check_trials(trials)
    sig = problem._sig_floor
    nh = problem.n_hypotheses
    correct = np.empty(nh)
    for h in range(nh):
        if problem.p < problem.s:
            _difference_moments(problem._means[h], sig, problem._kmask[h])
        key = K.stream_key(seed, h + 1)
        c = K.success_count_fixed(
            problem._means[h], sig, problem._kmask[h], trials, key
        )
        correct[h] = c / trials
    se = float(np.sqrt(np.sum(correct * (1.0 - correct) / trials)) / nh)
    return ErrorProbReport(
        p_error=float(1.0 - correct.mean()),
        method="orthant-mc",
        uncertainty=se,
        per_hypothesis=correct,
        n_trials=trials,
        seed=seed,
    )


def empirical_error(problem: TopPProblem, trials: int, seed: int) -> ErrorProbReport:
    """Simulate the rule end to end: draw a hypothesis uniformly, draw
    readings, select, compare against the true answer set."""
    _check_trials(trials)
    key = K.stream_key(seed, 0)
    # Raw sigma here: deterministic sensors read exactly their mean, and
    # the kernel resolves the resulting ties by ascending sensor index,
    # matching top_p_select.
    c = K.success_count_mixed(
        problem._means, np.asarray(problem.sigma_tilde), problem._kmask, trials, key
    )
    p_hat = c / trials
    se = float(np.sqrt(p_hat * (1.0 - p_hat) / trials))
    return ErrorProbReport(
        p_error=float(1.0 - p_hat),
        method="empirical-mc",
        uncertainty=se,
        n_trials=trials,
        seed=seed,
    )


def error_probability(
    problem: TopPProblem,
    method: str = "quadrature",
    trials: int = 1_000_000,
    seed: int = 0,
) -> ErrorProbReport:
    """Dispatch by method tag: quadrature, orthant-mc, or empirical-mc."""
    if method == "quadrature":
        return error_prob_quadrature(problem)
    if method == "orthant-mc":
        return error_prob_orthant_mc(problem, trials, seed)
    if method == "empirical-mc":
        return empirical_error(problem, trials, seed)
    raise ParameterError(f"unknown method {method!r}")


def _check_trials(trials: int) -> None:
    if trials < MC_MIN_TRIALS:
        raise ParameterError(f"Monte Carlo needs >= {MC_MIN_TRIALS} trials, got {trials}")
