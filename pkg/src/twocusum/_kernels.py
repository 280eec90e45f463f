"""Compiled Monte Carlo kernels.

Every random number is a pure function of ``(seed, path_index, counter)``
through a SplitMix64 hash, so a path's trajectory does not depend on how
paths are partitioned across threads or calls.
"""

import math
import warnings

import numba as nb
import numpy as np

# numba falls back to another threading layer when the system TBB is too
# old; the notice is noise for every caller
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

SIDE_NONE = 0
SIDE_POSITIVE = 1
SIDE_NEGATIVE = 2
SIDE_TIE = 3

RACE_MINUS = 0
RACE_PLUS = 1
RACE_NEITHER = 2
RACE_UNDECIDED = 3

# skip bridge work when the crossing probability is below exp(-2 * 18)
_FAR = 18.0


@nb.njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def path_key(seed, index):
    """Per-path stream key: hash of (seed, path index)."""
    return _mix64(_mix64(np.uint64(seed) + _GOLDEN) ^ (np.uint64(index) * _M2 + _GOLDEN))


@nb.njit(inline="always")
def _uniform(key, counter):
    # open interval (0, 1); safe for log()
    x = _mix64(key + counter * _GOLDEN)
    return (float(x >> np.uint64(11)) + 0.5) * _INV53


@nb.njit(inline="always")
def _normal_pair(key, k):
    # Box-Muller pair for steps k and k + 1 (k even), from the uniforms at
    # counters 4k and 4k + 1
    base = np.uint64(k) * np.uint64(4)
    r = math.sqrt(-2.0 * math.log(_uniform(key, base)))
    theta = 2.0 * math.pi * _uniform(key, base + np.uint64(1))
    return r * math.cos(theta), r * math.sin(theta)


@nb.njit(inline="always")
def _base_normal(key, j):
    # j-th normal of the pair scheme above, computed on its own
    if j & 1:
        return _normal_pair(key, j - 1)[1]
    return _normal_pair(key, j)[0]


@nb.njit(cache=True)
def gaussian_increments(seed, index, n_steps, dt, drift, tau):
    """Observation increments of one path, as the kernels generate them."""
    key = path_key(seed, index)
    out = np.empty(n_steps)
    z_odd = 0.0
    t = 0.0
    for k in range(n_steps):
        if k & 1:
            z = z_odd
        else:
            z, z_odd = _normal_pair(key, k)
        # same time bookkeeping as the fixed-step path of stopping_times
        shift = drift if t >= tau - 1e-12 else 0.0
        out[k] = shift * dt + math.sqrt(dt) * z
        t += dt
    return out


@nb.njit(inline="always")
def _hits_above(x0, x1, level, dt, key, ctr):
    # whether the bridge from x0 to x1 reaches level; the uniform at ctr is
    # only drawn when the crossing probability is non-negligible
    if x1 >= level:
        return True
    d0 = level - x0
    d1 = level - x1
    if d0 * d1 > _FAR * dt:
        return False
    return _uniform(key, ctr) < math.exp(-2.0 * d0 * d1 / dt)


@nb.njit(inline="always")
def _bridge_low(x0, x1, floor, dt, key, ctr):
    # minimum of the bridge from x0 to x1, or +inf when it cannot go below floor
    d0 = x0 - floor
    d1 = x1 - floor
    if d0 * d1 > _FAR * dt:
        return math.inf
    du = x1 - x0
    v = _uniform(key, ctr)
    return x0 + 0.5 * (du - math.sqrt(du * du - 2.0 * dt * math.log(v)))


@nb.njit(cache=True, parallel=True)
def stopping_times(seed, first_index, n_paths, mu1, mu2, drift, tau, dt,
                   max_step, t_max, nu1, nu2, y0_plus, y0_minus, bridge, refine):
    """Alarm times of the 2-CUSUM rule on simulated paths.

    Each step draws one Gaussian increment of xi and, with ``bridge`` on,
    up to two uniforms that decide the extrema of the Brownian bridge
    joining the step's end points: one shared by the maximum of u+ and the
    minimum of u- (both are driven by the same bridge excursion, up to a
    tilt of order h), the other by the minimum of u+ and the maximum of
    u-. Maxima catch threshold crossings between grid points; minima lower
    the running minima the reflected statistics are measured from.

    The step is ``dt`` near a threshold and grows up to ``max_step`` while
    both statistics stay at least ``8 sqrt(h)`` below their thresholds.
    With ``bridge`` off steps are fixed at ``dt`` and the recursion is the
    plain discrete one. ``y0_plus``/``y0_minus`` set the initial reflected
    statistics.

    Returns ``(times, sides, censored)``; censored paths report ``t_max``.
    """
    times = np.empty(n_paths)
    sides = np.zeros(n_paths, dtype=np.int8)
    censored = np.zeros(n_paths, dtype=np.bool_)
    adaptive = bridge and max_step > dt
    for p in nb.prange(n_paths):
        key = path_key(seed, first_index + p)
        up = 0.0
        um = 0.0
        minp = -y0_plus
        minm = -y0_minus
        t = 0.0
        k = 0
        z_odd = 0.0
        fire_p = False
        fire_m = False
        while t < t_max - 1e-12:
            post = t >= tau - 1e-12
            shift = drift if post else 0.0
            h = dt
            if adaptive:
                gap = min(nu1 - (up - minp), nu2 - (um - minm))
                h = (gap / 8.0) ** 2
                if h < dt:
                    h = dt
                elif h > max_step:
                    h = max_step
                if not post and t + h > tau:
                    h = max(tau - t, dt)
            if t + h > t_max:
                h = t_max - t
            if adaptive:
                base = np.uint64(k) * np.uint64(4)
                r = math.sqrt(-2.0 * math.log(_uniform(key, base)))
                z = r * math.cos(2.0 * math.pi * _uniform(key, base + np.uint64(1)))
            elif refine > 1:
                z = 0.0
                for i in range(refine):
                    z += _base_normal(key, k * refine + i)
                z /= math.sqrt(refine)
            elif k & 1:
                z = z_odd
            else:
                z, z_odd = _normal_pair(key, k)
            dxi = shift * h + math.sqrt(h) * z
            up1 = up + (dxi - mu1 * h / 2.0)
            um1 = um + (-dxi - mu2 * h / 2.0)
            if bridge:
                c1 = np.uint64(k * refine) * np.uint64(4) + np.uint64(2)
                c2 = c1 + np.uint64(1)
                fire_p = _hits_above(up, up1, minp + nu1, h, key, c1)
                fire_m = _hits_above(um, um1, minm + nu2, h, key, c2)
                lo = _bridge_low(up, up1, minp, h, key, c2)
                if lo < minp:
                    minp = lo
                lo = _bridge_low(um, um1, minm, h, key, c1)
                if lo < minm:
                    minm = lo
            if up1 < minp:
                minp = up1
            if um1 < minm:
                minm = um1
            up = up1
            um = um1
            t += h
            k += 1
            fire_p = fire_p or up - minp >= nu1
            fire_m = fire_m or um - minm >= nu2
            if fire_p or fire_m:
                break
        if fire_p or fire_m:
            times[p] = t
            if fire_p and fire_m:
                sides[p] = SIDE_TIE
            elif fire_p:
                sides[p] = SIDE_POSITIVE
            else:
                sides[p] = SIDE_NEGATIVE
        else:
            times[p] = t_max
            censored[p] = True
    return times, sides, censored


@nb.njit(cache=True, parallel=True)
def race_outcomes(seed, first_index, n_paths, mu1, mu2, drift, tau, dt,
                  t_max, a, b, bridge):
    """Outcome of the race between u+ reaching ``a`` and u- reaching ``b``.

    Returns an int8 array with one of the RACE_* codes per path. Steps
    grow beyond ``dt`` while both processes are far from their levels
    (increments are exact Gaussians and per-step crossing probabilities
    are exact, so step size only matters near a level). A settled
    "neither" is declared once both drifts are negative and each chance
    of ever reaching its level is below 1e-12.
    """
    out = np.empty(n_paths, dtype=np.int8)
    log_eps = math.log(1e-12)
    h_max = 1.0 if 1.0 > dt else dt
    for p in nb.prange(n_paths):
        key = path_key(seed, first_index + p)
        up = 0.0
        um = 0.0
        t = 0.0
        res = RACE_UNDECIDED
        k = 0
        while t < t_max - 1e-12:
            post = t >= tau - 1e-12
            shift = drift if post else 0.0
            gap = min(a - up, b - um) if bridge else 0.0
            h = (gap / 8.0) ** 2
            if h < dt:
                h = dt
            elif h > h_max:
                h = h_max
            if not post and t + h > tau:
                h = max(tau - t, dt)
            if t + h > t_max:
                h = t_max - t
            base = np.uint64(k) * np.uint64(4)
            r = math.sqrt(-2.0 * math.log(_uniform(key, base)))
            z = r * math.cos(2.0 * math.pi * _uniform(key, base + np.uint64(1)))
            dxi = shift * h + math.sqrt(h) * z
            up1 = up - 0.5 * mu1 * h + dxi
            um1 = um - 0.5 * mu2 * h - dxi
            if bridge:
                hit_p = _hits_above(up, up1, a, h, key, base + np.uint64(2))
                hit_m = _hits_above(um, um1, b, h, key, base + np.uint64(3))
            else:
                hit_p = up1 >= a
                hit_m = um1 >= b
            up = up1
            um = um1
            t += h
            k += 1
            if hit_p and hit_m:
                # same step: order unresolved, fair coin
                if _uniform(key ^ _M1, np.uint64(k)) < 0.5:
                    res = RACE_PLUS
                else:
                    res = RACE_MINUS
                break
            if hit_p:
                res = RACE_PLUS
                break
            if hit_m:
                res = RACE_MINUS
                break
            if post:
                d_p = shift - 0.5 * mu1
                d_m = -shift - 0.5 * mu2
                if (d_p < 0.0 and d_m < 0.0
                        and 2.0 * d_p * (a - up) < log_eps
                        and 2.0 * d_m * (b - um) < log_eps):
                    res = RACE_NEITHER
                    break
        out[p] = res
    return out
