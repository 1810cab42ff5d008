"""Numerical kernels with two interchangeable lanes.

The hot loops (Monte Carlo selection trials, conditional-correct quadrature,
posterior scoring over hypothesis grids and joint product grids) exist twice:
an @njit lane compiled by numba and a vectorized pure-numpy lane. The active
lane is chosen once at import:

  * numba importable and TOPSEL_NO_NUMBA unset -> numba lane
  * otherwise                                  -> numpy lane

Both lanes consume an identical counter-based random stream (splitmix64
finalizer over a Weyl sequence, Box-Muller for normals), so results agree to
floating-point rounding; they are not guaranteed bit-identical because libm
and numpy transcendentals can differ in the last ulp.

Stream layout, by kernel:
  success_count_mixed  trial t owns counters [t*(2s+2), (t+1)*(2s+2));
                       slot 0 draws the hypothesis, slots 2+2i, 3+2i the
                       Gaussian pair for sensor i.
  success_count_fixed  trial t owns [t*2s, (t+1)*2s); slots 2i, 2i+1 per sensor.
"""

import math
import os

import numpy as np
from scipy.special import ndtr

HAVE_NUMBA = False
if os.environ.get("TOPSEL_NO_NUMBA", "") != "1":
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"

_MASK64 = (1 << 64) - 1
_GOLDEN_INT = 0x9E3779B97F4A7C15
GOLDEN = np.uint64(_GOLDEN_INT)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53
INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
TWO_PI = 2.0 * math.pi

# Quadrature controls. Panels are seeded at mean + c*sigma for these offsets;
# a sensor whose standardized coordinate stays beyond PRUNE_T over a panel
# contributes a constant factor (0 or 1) to within ~1e-22 and is pruned.
QUAD_OFFSETS = (-12.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0, 12.0)
QUAD_WIDE = 12.0
PANEL_TOL = 1e-10
TOTAL_TOL = 5e-9
PRUNE_T = 10.0
N_MAX = 1 << 14


def _mix64_int(x: int) -> int:
    """splitmix64 finalizer on python ints (reference implementation)."""
    z = x & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def stream_key(seed: int, salt: int = 0) -> np.uint64:
    """Derive an independent 64-bit stream key from a seed and a salt."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    k = _mix64_int(_mix64_int(seed) + (salt & _MASK64) * _GOLDEN_INT)
    return np.uint64(k)


def uniform_at(key: int, idx: int) -> float:
    """Uniform in [0,1) at counter idx of the stream (reference path)."""
    z = _mix64_int((int(key) + (idx * _GOLDEN_INT)) & _MASK64)
    return (z >> 11) * _U53


def normal_at(key: int, k: int) -> float:
    """k-th standard normal of the stream (reference path, Box-Muller)."""
    z1 = _mix64_int((int(key) + (2 * k * _GOLDEN_INT)) & _MASK64)
    z2 = _mix64_int((int(key) + ((2 * k + 1) * _GOLDEN_INT)) & _MASK64)
    u1 = ((z1 >> 11) + 1) * _U53
    u2 = (z2 >> 11) * _U53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


# ---------------------------------------------------------------------------
# numpy lane
# ---------------------------------------------------------------------------

_MC_CHUNK = 1 << 15


def _mix64_np(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    z = z ^ (z >> np.uint64(31))
    return z


def _normals_np(key, counter_idx):
    """Standard normals whose Gaussian pair sits at uniform counters
    (counter_idx, counter_idx + 1)."""
    with np.errstate(over="ignore"):
        z1 = _mix64_np(key + counter_idx * GOLDEN)
        z2 = _mix64_np(key + (counter_idx + np.uint64(1)) * GOLDEN)
    u1 = ((z1 >> np.uint64(11)) + np.uint64(1)) * _U53
    u2 = (z2 >> np.uint64(11)) * _U53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


def _tie_successes_np(zt, km, lo, hi):
    """Count tied rows (lo == hi, both finite) that the stable selection
    rule still resolves correctly: every answer sensor at the boundary
    value must carry a lower index than every complement sensor there."""
    rows = np.nonzero(lo == hi)[0]
    if rows.size == 0:
        return 0
    s = zt.shape[1]
    idx = np.arange(s)
    n = 0
    for r in rows:
        at = zt[r] == lo[r]
        k_at = at & km[r]
        c_at = at & ~km[r]
        if idx[k_at].max() < idx[c_at].min():
            n += 1
    return n


def success_count_mixed_numpy(means, sig, kmask, trials, key):
    """Selection successes with the hypothesis drawn uniformly per trial.

    means: (nh, s) noise-free normalized means per hypothesis.
    kmask: (nh, s) membership of each sensor in the correct answer set.
    Success means the p highest sampled values sit exactly on the answer
    set, with equal values ranked by ascending sensor index. Ties only
    occur when some sensors are exactly deterministic.
    """
    nh, s = means.shape
    stride = np.uint64(2 * s + 2)
    sensor_off = np.uint64(2) + np.uint64(2) * np.arange(s, dtype=np.uint64)
    count = 0
    for start in range(0, trials, _MC_CHUNK):
        n_t = min(_MC_CHUNK, trials - start)
        t_idx = np.arange(start, start + n_t, dtype=np.uint64)
        with np.errstate(over="ignore"):
            base = t_idx * stride
            hz = _mix64_np(key + base * GOLDEN)
        hu = (hz >> np.uint64(11)) * _U53
        h = np.minimum((hu * nh).astype(np.int64), nh - 1)
        with np.errstate(over="ignore"):
            cidx = base[:, None] + sensor_off[None, :]
        g = _normals_np(key, cidx)
        zt = means[h, :] + sig[None, :] * g
        km = kmask[h, :]
        lo = np.min(np.where(km, zt, np.inf), axis=1)
        hi = np.max(np.where(km, -np.inf, zt), axis=1)
        count += int(np.count_nonzero(lo > hi))
        count += _tie_successes_np(zt, km, lo, hi)
    return count


def success_count_fixed_numpy(mu, sig, kmask, trials, key):
    """Selection successes at one fixed hypothesis. mu, sig, kmask: (s,)."""
    s = mu.shape[0]
    stride = np.uint64(2 * s)
    sensor_off = np.uint64(2) * np.arange(s, dtype=np.uint64)
    count = 0
    for start in range(0, trials, _MC_CHUNK):
        n_t = min(_MC_CHUNK, trials - start)
        t_idx = np.arange(start, start + n_t, dtype=np.uint64)
        with np.errstate(over="ignore"):
            cidx = (t_idx * stride)[:, None] + sensor_off[None, :]
        g = _normals_np(key, cidx)
        zt = mu[None, :] + sig[None, :] * g
        lo = np.min(np.where(kmask[None, :], zt, np.inf), axis=1)
        hi = np.max(np.where(kmask[None, :], -np.inf, zt), axis=1)
        count += int(np.count_nonzero(lo > hi))
    return count


def _integrand_np(v, mu, sig, kmask):
    """Density of the complement max times survival of the answer-set min,
    evaluated at every point of v. All sensors participate."""
    t = (v[:, None] - mu[None, :]) / sig[None, :]
    sf = ndtr(-t)
    cdf = ndtr(t)
    surv = np.prod(np.where(kmask[None, :], sf, 1.0), axis=1)
    prod_c = np.prod(np.where(kmask[None, :], 1.0, cdf), axis=1)
    with np.errstate(under="ignore"):
        pdf = np.exp(-0.5 * t * t) * (INV_SQRT_2PI / sig[None, :])
    ratio = np.zeros_like(t)
    ok = (~kmask[None, :]) & (cdf > 0.0)
    ratio[ok] = pdf[ok] / cdf[ok]
    return surv * prod_c * np.sum(ratio, axis=1)


def _simpson_np(mu, sig, kmask, x0, x1, n):
    v = np.linspace(x0, x1, n + 1)
    f = _integrand_np(v, mu, sig, kmask)
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[n] = 1.0
    return float(np.dot(w, f)) * (x1 - x0) / (3.0 * n)


def _panel_edges(mu, sig, lo, hi):
    pts = (mu[:, None] + np.multiply.outer(sig, np.asarray(QUAD_OFFSETS))).ravel()
    pts = pts[(pts > lo) & (pts < hi)]
    edges = np.concatenate(([lo], np.sort(pts), [hi]))
    keep = np.concatenate(([True], np.diff(edges) > (hi - lo) * 1e-15))
    return edges[keep]


def correct_prob_interval_numpy(mu, sig, kmask, lo, hi):
    """Integral of the conditional-correct integrand over [lo, hi].

    Composite Simpson per panel with resolution doubling and Richardson
    extrapolation; panels are refined further until the summed error
    estimate drops under TOTAL_TOL. Returns (value, error_estimate)."""
    if hi <= lo:
        return 0.0, 0.0
    edges = _panel_edges(mu, sig, lo, hi)
    n_pan = len(edges) - 1
    val = np.empty(n_pan)
    raw = np.empty(n_pan)
    err = np.empty(n_pan)
    nres = np.empty(n_pan, dtype=np.int64)
    for k in range(n_pan):
        a, b = edges[k], edges[k + 1]
        s_prev = _simpson_np(mu, sig, kmask, a, b, 2)
        n = 4
        while True:
            s_cur = _simpson_np(mu, sig, kmask, a, b, n)
            e = abs(s_cur - s_prev)
            if e < PANEL_TOL or n >= N_MAX:
                break
            s_prev = s_cur
            n *= 2
        val[k] = s_cur + (s_cur - s_prev) / 15.0
        raw[k] = s_cur
        err[k] = e / 15.0
        nres[k] = n
    guard = 4 * n_pan
    while err.sum() > TOTAL_TOL and guard > 0:
        k = int(np.argmax(err))
        if nres[k] >= N_MAX:
            break
        n = nres[k] * 2
        s_cur = _simpson_np(mu, sig, kmask, edges[k], edges[k + 1], n)
        err[k] = abs(s_cur - raw[k]) / 15.0
        val[k] = s_cur + (s_cur - raw[k]) / 15.0
        raw[k] = s_cur
        nres[k] = n
        guard -= 1
    return float(val.sum()), float(err.sum())


def correct_prob_batch_numpy(means, sig, kmask):
    """Per-hypothesis conditional-correct probabilities for a whole grid.

    means, kmask: (nh, s); sig: (s,). Returns (values, error_estimates)."""
    nh = means.shape[0]
    vals = np.empty(nh)
    errs = np.empty(nh)
    for h in range(nh):
        mu = means[h]
        lo = float(np.min(mu - QUAD_WIDE * sig))
        hi = float(np.max(mu + QUAD_WIDE * sig))
        vals[h], errs[h] = correct_prob_interval_numpy(mu, sig, kmask[h], lo, hi)
    return vals, errs


def loglik_frames_numpy(mean_tab, var_tab, Z):
    """Gaussian log-likelihood of each frame under each hypothesis.

    mean_tab, var_tab: (n, s); Z: (T, s). Returns (T, n)."""
    c0 = -0.5 * np.sum(np.log(2.0 * math.pi * var_tab), axis=1)
    T = Z.shape[0]
    out = np.empty((T, mean_tab.shape[0]))
    step = 128
    for t0 in range(0, T, step):
        t1 = min(t0 + step, T)
        d = Z[t0:t1, None, :] - mean_tab[None, :, :]
        out[t0:t1] = c0[None, :] - 0.5 * np.sum(d * d / var_tab[None, :, :], axis=2)
    return out


def joint_loglik_numpy(P_tab, V_tab, offsets, sizes, z):
    """Log-likelihood over the product of per-target local grids.

    P_tab: (sum n_r, s) linear-domain mean powers of each candidate location
    of each target; V_tab matching variances. offsets[r]..offsets[r+1] is
    target r's block. Joint index is mixed-radix with the last target
    fastest. Returns (prod(sizes),) log-likelihoods."""
    N = len(sizes)
    n_joint = int(np.prod(sizes))
    s = z.shape[0]
    out = np.empty(n_joint)
    radix = np.ones(N, dtype=np.int64)
    for r in range(N - 2, -1, -1):
        radix[r] = radix[r + 1] * sizes[r + 1]
    step = 4096
    for j0 in range(0, n_joint, step):
        j1 = min(j0 + step, n_joint)
        jj = np.arange(j0, j1)
        digits = (jj[:, None] // radix[None, :]) % sizes[None, :]
        rows = digits + offsets[:-1][None, :]
        P = P_tab[rows, :]
        V = V_tab[rows, :]
        power = P.sum(axis=1)
        dom = np.argmax(P, axis=1)  # (chunk, s), first max wins ties
        var = np.take_along_axis(V, dom[:, None, :], axis=1)[:, 0, :]
        mean_db = 10.0 * np.log10(power)
        d = z[None, :] - mean_db
        out[j0:j1] = -0.5 * np.sum(
            d * d / var + np.log(2.0 * math.pi * var), axis=1
        )
    return out


# ---------------------------------------------------------------------------
# numba lane
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _mix64_nb(x):
        z = x
        z ^= z >> np.uint64(30)
        z = z * np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z = z * np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
        return z

    @njit(cache=True)
    def _normal_nb(key, cidx):
        z1 = _mix64_nb(key + cidx * GOLDEN)
        z2 = _mix64_nb(key + (cidx + np.uint64(1)) * GOLDEN)
        u1 = np.float64((z1 >> np.uint64(11)) + np.uint64(1)) * _U53
        u2 = np.float64(z2 >> np.uint64(11)) * _U53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)

    @njit(cache=True)
    def success_count_numba_mixed(means, sig, kmask, trials, key):
        nh, s = means.shape
        stride = np.uint64(2 * s + 2)
        count = 0
        for t in range(trials):
            base = np.uint64(t) * stride
            hz = _mix64_nb(key + base * GOLDEN)
            hu = np.float64(hz >> np.uint64(11)) * _U53
            h = int(hu * nh)
            if h > nh - 1:
                h = nh - 1
            lo = np.inf
            hi = -np.inf
            lo_idx = -1  # highest answer index attaining lo
            hi_idx = -1  # lowest complement index attaining hi
            for i in range(s):
                g = _normal_nb(key, base + np.uint64(2 + 2 * i))
                v = means[h, i] + sig[i] * g
                if kmask[h, i]:
                    if v <= lo:
                        lo = v
                        lo_idx = i
                else:
                    if v > hi:
                        hi = v
                        hi_idx = i
            # Equal boundary values rank by ascending sensor index, the
            # same rule that breaks distance ties in the answer set.
            if lo > hi or (lo == hi and lo_idx < hi_idx):
                count += 1
        return count

    @njit(cache=True)
    def success_count_numba_fixed(mu, sig, kmask, trials, key):
        s = mu.shape[0]
        stride = np.uint64(2 * s)
        count = 0
        for t in range(trials):
            base = np.uint64(t) * stride
            lo = np.inf
            hi = -np.inf
            for i in range(s):
                g = _normal_nb(key, base + np.uint64(2 * i))
                v = mu[i] + sig[i] * g
                if kmask[i]:
                    if v < lo:
                        lo = v
                else:
                    if v > hi:
                        hi = v
            if lo > hi:
                count += 1
        return count

    @njit(cache=True)
    def _phi_cdf_nb(t):
        return 0.5 * math.erfc(-t * INV_SQRT2)

    @njit(cache=True)
    def _simpson_nb(mu, sig, kmask, x0, x1, n):
        # Prune sensors whose factor is constant over the panel.
        s = mu.shape[0]
        act = np.empty(s, dtype=np.int64)
        na = 0
        for r in range(s):
            t0 = (x0 - mu[r]) / sig[r]
            t1 = (x1 - mu[r]) / sig[r]
            if kmask[r]:
                if t0 >= PRUNE_T:
                    return 0.0  # survival factor vanishes on the panel
                if t1 <= -PRUNE_T:
                    continue  # survival factor is 1 to ~1e-22
            else:
                if t1 <= -PRUNE_T:
                    return 0.0  # complement max cannot be this low
                if t0 >= PRUNE_T:
                    continue  # cdf factor 1, density term negligible
            act[na] = r
            na += 1
        h = (x1 - x0) / n
        total = 0.0
        for q in range(n + 1):
            v = x0 + h * q
            surv = 1.0
            prod_c = 1.0
            ssum = 0.0
            for a in range(na):
                r = act[a]
                t = (v - mu[r]) / sig[r]
                if kmask[r]:
                    surv *= 0.5 * math.erfc(t * INV_SQRT2)
                    if surv == 0.0:
                        break
                else:
                    F = _phi_cdf_nb(t)
                    if F == 0.0:
                        prod_c = 0.0
                        break
                    prod_c *= F
                    ssum += math.exp(-0.5 * t * t) * (INV_SQRT_2PI / sig[r]) / F
            f = surv * prod_c * ssum
            if q == 0 or q == n:
                total += f
            elif q % 2 == 1:
                total += 4.0 * f
            else:
                total += 2.0 * f
        return total * h / 3.0

    @njit(cache=True)
    def correct_prob_interval_numba(mu, sig, kmask, lo, hi):
        if hi <= lo:
            return 0.0, 0.0
        s = mu.shape[0]
        n_off = len(QUAD_OFFSETS)
        bp = np.empty(s * n_off + 2)
        m = 0
        for r in range(s):
            for c in QUAD_OFFSETS:
                b = mu[r] + c * sig[r]
                if lo < b < hi:
                    bp[m] = b
                    m += 1
        bp[m] = lo
        bp[m + 1] = hi
        m += 2
        pts = np.sort(bp[:m])
        edges = np.empty(m)
        edges[0] = pts[0]
        ne = 1
        gap = (hi - lo) * 1e-15
        for q in range(1, m):
            if pts[q] - edges[ne - 1] > gap:
                edges[ne] = pts[q]
                ne += 1
        n_pan = ne - 1
        val = np.empty(n_pan)
        raw = np.empty(n_pan)
        err = np.empty(n_pan)
        nres = np.empty(n_pan, dtype=np.int64)
        for k in range(n_pan):
            a = edges[k]
            b = edges[k + 1]
            s_prev = _simpson_nb(mu, sig, kmask, a, b, 2)
            n = 4
            while True:
                s_cur = _simpson_nb(mu, sig, kmask, a, b, n)
                e = abs(s_cur - s_prev)
                if e < PANEL_TOL or n >= N_MAX:
                    break
                s_prev = s_cur
                n *= 2
            val[k] = s_cur + (s_cur - s_prev) / 15.0
            raw[k] = s_cur
            err[k] = e / 15.0
            nres[k] = n
        guard = 4 * n_pan
        while guard > 0:
            tot = 0.0
            worst = 0
            for k in range(n_pan):
                tot += err[k]
                if err[k] > err[worst]:
                    worst = k
            if tot <= TOTAL_TOL or nres[worst] >= N_MAX:
                break
            n = nres[worst] * 2
            s_cur = _simpson_nb(mu, sig, kmask, edges[worst], edges[worst + 1], n)
            err[worst] = abs(s_cur - raw[worst]) / 15.0
            val[worst] = s_cur + (s_cur - raw[worst]) / 15.0
            raw[worst] = s_cur
            nres[worst] = n
            guard -= 1
        return val.sum(), err.sum()

    @njit(cache=True)
    def correct_prob_batch_numba(means, sig, kmask):
        nh, s = means.shape
        vals = np.empty(nh)
        errs = np.empty(nh)
        for h in range(nh):
            lo = np.inf
            hi = -np.inf
            for r in range(s):
                a = means[h, r] - QUAD_WIDE * sig[r]
                b = means[h, r] + QUAD_WIDE * sig[r]
                if a < lo:
                    lo = a
                if b > hi:
                    hi = b
            vals[h], errs[h] = correct_prob_interval_numba(
                means[h], sig, kmask[h], lo, hi
            )
        return vals, errs

    @njit(cache=True)
    def loglik_frames_numba(mean_tab, var_tab, Z):
        n, s = mean_tab.shape
        T = Z.shape[0]
        out = np.empty((T, n))
        c0 = np.empty(n)
        for j in range(n):
            acc = 0.0
            for i in range(s):
                acc += math.log(2.0 * math.pi * var_tab[j, i])
            c0[j] = -0.5 * acc
        for t in range(T):
            for j in range(n):
                acc = 0.0
                for i in range(s):
                    d = Z[t, i] - mean_tab[j, i]
                    acc += d * d / var_tab[j, i]
                out[t, j] = c0[j] - 0.5 * acc
        return out

    @njit(cache=True)
    def joint_loglik_numba(P_tab, V_tab, offsets, sizes, z):
        N = sizes.shape[0]
        s = z.shape[0]
        n_joint = 1
        for r in range(N):
            n_joint *= sizes[r]
        out = np.empty(n_joint)
        digit = np.zeros(N, dtype=np.int64)
        for j in range(n_joint):
            acc = 0.0
            for i in range(s):
                power = 0.0
                best = -1.0
                vdom = 1.0
                for r in range(N):
                    row = offsets[r] + digit[r]
                    pw = P_tab[row, i]
                    power += pw
                    if pw > best:
                        best = pw
                        vdom = V_tab[row, i]
                mean_db = 10.0 * math.log10(power)
                d = z[i] - mean_db
                acc += d * d / vdom + math.log(2.0 * math.pi * vdom)
            out[j] = -0.5 * acc
            # odometer increment, last target fastest
            for r in range(N - 1, -1, -1):
                digit[r] += 1
                if digit[r] < sizes[r]:
                    break
                digit[r] = 0
        return out


if HAVE_NUMBA:
    success_count_mixed = success_count_numba_mixed
    success_count_fixed = success_count_numba_fixed
    correct_prob_interval = correct_prob_interval_numba
    correct_prob_batch = correct_prob_batch_numba
    loglik_frames = loglik_frames_numba
    joint_loglik = joint_loglik_numba
else:
    success_count_mixed = success_count_mixed_numpy
    success_count_fixed = success_count_fixed_numpy
    correct_prob_interval = correct_prob_interval_numpy
    correct_prob_batch = correct_prob_batch_numpy
    loglik_frames = loglik_frames_numpy
    joint_loglik = joint_loglik_numpy


def set_thread_cap(n: int) -> None:
    """Cap numba's thread pool; a no-op on the numpy lane."""
    if n < 1:
        raise ValueError("thread cap must be >= 1")
    if HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
