"""Overflow-exponent bounds by numerical optimization.

Lower-bound side: for a user set S and twisted mean rates phi, the unique
sampling frequencies c equalizing all queue drifts to a common w > 0 give
a cost-per-unit-drift f_S(phi) = sum_i c_i L*_i(phi_i) / w; the singleton
exponent J* is the minimum of f_S over user sets and feasible twists.

Upper-bound side: for any twisted means phi with the arrival vector
outside their scaled-simplex hull, every sampling-frequency vector c on
the simplex certifies sum_i c_i L*_i(phi_i) / max_i (lambda_i - c_i
phi_i) as an overflow-cost bound; the sup over c is computed exactly by
enumerating drift-equalizing support sets plus the breakpoints where the
active set changes, and the best (smallest) bound is minimized over phi.
A subset-structured variant replaces Cramér costs by relative-entropy
costs of sub-state distributions and per-user rates by the winner-map
vertices of each subset's service region.

For matched singleton systems the two optimizations agree; the report
carries both values, the minimizing twists, and the grid resolutions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar

from .channels import JointChannelDistribution, SubsetSystem
from .ratefn import (
    ScalarRateFunction,
    SubsetRateRegion,
    region_vertices,
    sanov_rate,
    stability_check,
)

_TINY = 1e-15
_FEAS_TOL = 1e-12
# finite infeasibility penalty: keeps Nelder-Mead and golden-section arithmetic
# clean where an infinite value would poison them
_PENALTY = 1e18


class UnstableArrivalsError(ValueError):
    """The arrival vector is not strictly inside the throughput region."""


# ---------------------------------------------------------------------------
# drift system


@dataclass(frozen=True)
class DriftSolution:
    """Sampling frequencies equalizing all queue growth rates on a user set.

    ``c`` sums to 1 over the set and ``lambda_i - c_i * phi_i == w`` for
    every member; feasibility requires w > 0 and c >= 0.
    """

    subset: tuple[int, ...]
    phi: tuple[float, ...]
    c: tuple[float, ...]
    w: float


def drift_solve(
    subset: Sequence[int], phi: Sequence[float], lams: Sequence[float]
) -> DriftSolution | None:
    """Closed-form drift-equalizing frequencies; None when infeasible.

    From sum_j (lambda_j - w) / phi_j = 1:
    w = (sum_j lambda_j/phi_j - 1) / (sum_j 1/phi_j), c_j = (lambda_j - w)/phi_j.
    Infeasible when any phi_j <= 0, w <= 0, or some c_j < 0.
    """
    members = tuple(int(i) for i in subset)
    if not members:
        raise ValueError("empty user set")
    ph = [float(phi[pos]) for pos in range(len(members))]
    lm = [float(lams[i]) for i in members]
    if any(p <= _TINY for p in ph):
        return None
    inv = [1.0 / p for p in ph]
    w = (sum(l * v for l, v in zip(lm, inv)) - 1.0) / sum(inv)
    if w <= _TINY:
        return None
    c = [(l - w) * v for l, v in zip(lm, inv)]
    if any(ci < -_FEAS_TOL for ci in c):
        return None
    return DriftSolution(
        subset=members,
        phi=tuple(ph),
        c=tuple(max(0.0, ci) for ci in c),
        w=w,
    )


def cost_per_drift(
    subset: Sequence[int],
    phi: Sequence[float],
    lams: Sequence[float],
    rate_functions: Sequence[ScalarRateFunction],
) -> float:
    """f_S(phi): large-deviations cost per unit drift of the equalized system.

    Raises on an infeasible drift system; returns ``inf`` when any
    member's rate function is infinite at its twist.
    """
    sol = drift_solve(subset, phi, lams)
    if sol is None:
        raise ValueError(f"infeasible drift system for users {tuple(subset)} at phi {tuple(phi)}")
    total = 0.0
    for pos, user in enumerate(sol.subset):
        cost = rate_functions[user].rate(sol.phi[pos])
        if math.isinf(cost):
            return math.inf
        total += sol.c[pos] * cost
    return total / sol.w


# ---------------------------------------------------------------------------
# fast interpolated rate-function tables (optimizer internals only; every
# reported value is re-evaluated with the exact bisection-based dual)


class _CramerTable:
    def __init__(self, rf: ScalarRateFunction):
        self.rf = rf
        if rf.degenerate:
            self.xs = np.array([rf.r_min])
            self.vals = np.array([0.0])
            return
        # parametrize the dual by the tilt: x(eta) = L'(eta), value = eta x - L(eta);
        # one vectorized pass gives the whole curve, monotone in x by convexity.
        # Dense tilts near zero pin the smooth center to ~1e-7; sparse wide
        # tails carry the curve toward the support endpoints.
        etas = np.unique(np.concatenate([
            np.linspace(-10.0, 10.0, 20001),
            np.linspace(-60.0, 60.0, 1201),
        ]))
        z = etas[:, None] * rf.values[None, :] + np.log(rf.probs)[None, :]
        zmax = z.max(axis=1)
        w = np.exp(z - zmax[:, None])
        sw = w.sum(axis=1)
        xs = (w @ rf.values) / sw
        log_mgf = zmax + np.log(sw)
        vals = np.maximum(etas * xs - log_mgf, 0.0)
        self.xs = np.concatenate([[rf.r_min], xs, [rf.r_max]])
        self.vals = np.concatenate([[rf.rate(rf.r_min)], vals, [rf.rate(rf.r_max)]])

    def __call__(self, x: np.ndarray | float) -> np.ndarray | float:
        arr = np.asarray(x, dtype=float)
        out = np.interp(arr, self.xs, self.vals)
        out = np.where((arr < self.rf.r_min - 1e-12) | (arr > self.rf.r_max + 1e-12), np.inf, out)
        return float(out) if np.ndim(x) == 0 else out


def _as_rate_functions(
    marginals: Sequence[Mapping[int, float] | ScalarRateFunction],
) -> list[ScalarRateFunction]:
    return [
        m if isinstance(m, ScalarRateFunction) else ScalarRateFunction(m) for m in marginals
    ]


def _check_singleton_stable(lams: Sequence[float], rfs: Sequence[ScalarRateFunction]) -> float:
    load = 0.0
    for lam, rf in zip(lams, rfs):
        if lam <= 0:
            continue
        if rf.mean <= 0:
            raise UnstableArrivalsError(f"arrival rate {lam} on a zero-mean channel")
        load += lam / rf.mean
    if load >= 1.0 - 1e-12:
        raise UnstableArrivalsError(
            f"unstable arrival vector: load {load:.6f} >= 1 under per-user sampling"
        )
    return load


# ---------------------------------------------------------------------------
# J* for singleton observable subsets


@dataclass(frozen=True)
class JstarResult:
    value: float
    subset: tuple[int, ...]
    phi: tuple[float, ...]
    per_subset: dict[tuple[int, ...], float]
    resolution: float


def _minimize_f_on_subset(
    members: tuple[int, ...],
    lams: np.ndarray,
    tables: Sequence[_CramerTable],
    rfs: Sequence[ScalarRateFunction],
    grid_res: float,
    multistarts: int,
    rng: np.random.Generator,
    extra_starts: Sequence[Sequence[float]] = (),
) -> tuple[float, tuple[float, ...]]:
    d = len(members)
    lam_s = np.array([lams[i] for i in members])
    lo = np.array([rfs[i].r_min for i in members])
    hi = np.array([rfs[i].mean for i in members])

    def f_vec(mesh_cols: list[np.ndarray], lstar_cols: list[np.ndarray]) -> np.ndarray:
        phi = np.stack(mesh_cols, axis=-1).reshape(-1, d)
        lst = np.stack(lstar_cols, axis=-1).reshape(-1, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(phi > _TINY, 1.0 / np.maximum(phi, _TINY), np.inf)
            w = ((lam_s * inv).sum(axis=1) - 1.0) / inv.sum(axis=1)
            c = (lam_s - w[:, None]) * inv
            feas = (
                (phi > _TINY).all(axis=1)
                & (w > _TINY)
                & (c >= -_FEAS_TOL).all(axis=1)
                & np.isfinite(lst).all(axis=1)
            )
            val = np.where(feas, (np.maximum(c, 0.0) * lst).sum(axis=1) / np.where(w > 0, w, 1.0), np.inf)
        return val

    def f_scalar(phi: np.ndarray) -> float:
        if np.any(phi < lo - 1e-12) or np.any(phi > hi + 1e-12):
            return _PENALTY
        sol = drift_solve(members, phi, lams)
        if sol is None:
            return _PENALTY
        total = 0.0
        for pos in range(d):
            cost = tables[members[pos]](sol.phi[pos])
            if not math.isfinite(cost):
                return _PENALTY
            total += sol.c[pos] * cost
        return total / sol.w

    best_val = math.inf
    best_phi = tuple(hi)

    # dense grid cross-check (exact rate-function values on the grid axes)
    if d <= 3:
        axes = []
        lstar_axes = []
        for pos, user in enumerate(members):
            if hi[pos] - lo[pos] < 1e-12:
                ax = np.array([hi[pos]])
            else:
                ax = np.arange(lo[pos], hi[pos] + grid_res / 2, grid_res)
                if ax[-1] < hi[pos] - 1e-12:
                    ax = np.append(ax, hi[pos])
            axes.append(ax)
            lstar_axes.append(np.array([rfs[user].rate(x) for x in ax]))
        mesh = np.meshgrid(*axes, indexing="ij")
        lmesh = np.meshgrid(*lstar_axes, indexing="ij")
        vals = f_vec(list(mesh), list(lmesh))
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            best_phi = tuple(float(m.reshape(-1)[idx]) for m in mesh)

    # multistart projected coordinate descent on the box, interpolated costs
    starts = [np.array(best_phi)] if math.isfinite(best_val) else []
    starts.extend(np.asarray([s[i] for i in members], dtype=float) for s in extra_starts)
    for _ in range(multistarts):
        starts.append(lo + rng.random(d) * (hi - lo))
    for start in starts:
        phi = np.clip(start, lo, hi).astype(float)
        val = f_scalar(phi)
        for _ in range(30):
            improved = False
            for pos in range(d):
                if hi[pos] - lo[pos] < 1e-12:
                    continue

                def f1(x: float, pos: int = pos) -> float:
                    trial = phi.copy()
                    trial[pos] = x
                    return f_scalar(trial)

                res = minimize_scalar(
                    f1, bounds=(float(lo[pos]), float(hi[pos])), method="bounded",
                    options={"xatol": 1e-10},
                )
                if res.fun < min(val - 1e-12, _PENALTY / 2):
                    val = float(res.fun)
                    phi[pos] = float(res.x)
                    improved = True
            if not improved:
                break
        if val < best_val and val < _PENALTY / 2:
            best_val = val
            best_phi = tuple(float(x) for x in phi)

    # exact re-evaluation of the winner
    sol = drift_solve(members, best_phi, lams)
    if sol is not None:
        exact = cost_per_drift(members, best_phi, lams, rfs)
        if math.isfinite(exact):
            best_val = exact
    return best_val, best_phi


def jstar_singleton(
    lams: Sequence[float],
    marginals: Sequence[Mapping[int, float] | ScalarRateFunction],
    grid_res: float = 0.01,
    multistarts: int = 64,
    seed: int = 0,
    max_users: int = 12,
    extra_starts: Sequence[Sequence[float]] = (),
) -> JstarResult:
    """Exponent lower bound min_S inf_phi f_S(phi) for per-user sampling.

    Enumerates every nonempty user set; per set, a dense grid at
    ``grid_res`` (sets of size <= 3) cross-checks multistart projected
    coordinate descent over the box [r_min_i, mean_i].  Requires a
    strictly stable arrival vector.
    """
    rfs = _as_rate_functions(marginals)
    lam = np.asarray([float(v) for v in lams])
    n = len(rfs)
    if len(lam) != n:
        raise ValueError("arrival vector and marginals length mismatch")
    if n > max_users:
        raise ValueError(f"{n} users exceeds the subset-enumeration cap {max_users}")
    _check_singleton_stable(lam, rfs)
    tables = [_CramerTable(rf) for rf in rfs]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5EED])))
    best: tuple[float, tuple[int, ...], tuple[float, ...]] | None = None
    per_subset: dict[tuple[int, ...], float] = {}
    for size in range(1, n + 1):
        for members in itertools.combinations(range(n), size):
            val, phi = _minimize_f_on_subset(
                members, lam, tables, rfs, grid_res, multistarts, rng,
                extra_starts=extra_starts,
            )
            per_subset[members] = val
            if best is None or val < best[0] - 1e-15:
                best = (val, members, phi)
    assert best is not None
    return JstarResult(
        value=best[0],
        subset=best[1],
        phi=best[2],
        per_subset=per_subset,
        resolution=grid_res,
    )


# ---------------------------------------------------------------------------
# universal upper bound, per-user twists


def _hull_contains(lams: np.ndarray, phis: np.ndarray) -> bool:
    """Membership of the arrival vector in the scaled-simplex hull.

    The hull spanned by the origin and the per-user points phi_i e_i is
    {x >= 0 : sum_i x_i / phi_i <= 1}; coordinates with phi_i = 0 must be 0.
    """
    total = 0.0
    for lam, phi in zip(lams, phis):
        if lam <= _TINY:
            continue
        if phi <= _TINY:
            return False
        total += lam / phi
    return total <= 1.0 + 1e-12


def _inner_sup_users(
    lam: np.ndarray,
    phi: np.ndarray,
    lstar: np.ndarray,
    with_subset_candidates: bool = True,
) -> float:
    """sup over the c-simplex of sum c_i lstar_i / max_i (lambda_i - c_i phi_i).

    Assumes the hull check already excluded the arrival vector, so every
    c has a strictly positive denominator.  The sup equals the best of a
    finite candidate family: for each denominator target w (the
    drift-equalizing root plus each arrival rate acting as an active-set
    breakpoint), allocate the minimum frequencies keeping all drifts <= w
    and give the leftover mass to the costliest user; every candidate is
    evaluated honestly, so the result is a certified lower estimate that
    the piecewise-linear-fractional structure makes exact.
    """
    n = len(lam)
    pos_idx = [i for i in range(n) if phi[i] > _TINY]
    zero_idx = [i for i in range(n) if phi[i] <= _TINY]
    w_floor = max((lam[i] for i in zero_idx if lam[i] > _TINY), default=0.0)
    lam_max = float(np.max(lam)) if n else 0.0
    if lam_max <= _TINY:
        return 0.0

    # exact root of sum_i max(0, (lam_i - w)/phi_i) = 1: on the piece where the
    # active set is fixed the equation is the drift-equalizing formula
    root = None
    order = sorted((i for i in pos_idx if lam[i] > _TINY), key=lambda i: -lam[i])
    sum_lam_over_phi = 0.0
    sum_inv_phi = 0.0
    for pos, i in enumerate(order):
        sum_lam_over_phi += lam[i] / phi[i]
        sum_inv_phi += 1.0 / phi[i]
        w = (sum_lam_over_phi - 1.0) / sum_inv_phi
        nxt = lam[order[pos + 1]] if pos + 1 < len(order) else -math.inf
        if w > _TINY and w <= lam[i] + 1e-12 and w >= nxt - 1e-12:
            root = w
            break
    w_lo = max(w_floor, root if root is not None else 0.0)
    if w_lo <= _TINY:
        w_lo = 1e-14

    candidates = {w_lo}
    candidates.update(float(lam[i]) for i in range(n) if lam[i] >= w_lo - 1e-12 and lam[i] > 0)
    j_slack = int(np.argmax(lstar))
    best = 0.0

    def eval_allocation(c: np.ndarray) -> float:
        den = float(np.max(lam - c * phi))
        if den <= _TINY:
            return -math.inf
        return float(np.dot(c, lstar)) / den

    for w in sorted(candidates):
        if any(lam[i] > w + 1e-12 for i in zero_idx):
            continue
        c = np.zeros(n)
        for i in pos_idx:
            c[i] = max(0.0, (lam[i] - w) / phi[i])
        s = float(c.sum())
        if s > 1.0 + 1e-9:
            continue
        c[j_slack] += max(0.0, 1.0 - s)
        best = max(best, eval_allocation(c))

    if with_subset_candidates and len(pos_idx) <= 12:
        for size in range(1, len(pos_idx) + 1):
            for members in itertools.combinations(pos_idx, size):
                sol = drift_solve(members, [phi[i] for i in members], lam)
                if sol is None:
                    continue
                c = np.zeros(n)
                for p, i in enumerate(members):
                    c[i] = sol.c[p]
                best = max(best, eval_allocation(c))
    return best


def _simplex_grid(n: int, resolution: float) -> np.ndarray:
    steps = int(round(1.0 / resolution))
    if n == 1:
        return np.array([[1.0]])
    if n == 2:
        c0 = np.linspace(0.0, 1.0, steps + 1)
        return np.stack([c0, 1.0 - c0], axis=1)
    if n == 3:
        pts = []
        grid = np.linspace(0.0, 1.0, steps + 1)
        for a in grid:
            for b in grid:
                if a + b <= 1.0 + 1e-12:
                    pts.append((a, b, 1.0 - a - b))
        return np.asarray(pts)
    raise ValueError("simplex grid only implemented for n <= 3")


def upper_bound_eval(
    lams: Sequence[float],
    phis: Sequence[float],
    marginals: Sequence[Mapping[int, float] | ScalarRateFunction],
    simplex_resolution: float = 1e-3,
) -> float:
    """Universal overflow-cost bound for one choice of twisted means.

    ``inf`` when the arrival vector lies in the twisted hull or any twist
    leaves its rate function's effective domain (the bound is vacuous
    there).  The inner sup over sampling frequencies combines the exact
    candidate family with a simplex-grid refinement for <= 3 users.
    """
    rfs = _as_rate_functions(marginals)
    lam = np.asarray([float(v) for v in lams])
    phi = np.asarray([float(v) for v in phis])
    lstar = np.array([rf.rate(p) for rf, p in zip(rfs, phi)])
    if not np.all(np.isfinite(lstar)):
        return math.inf
    if _hull_contains(lam, phi):
        return math.inf
    best = _inner_sup_users(lam, phi, lstar)
    if len(lam) <= 3:
        grid = _simplex_grid(len(lam), simplex_resolution)
        den = lam[None, :] - grid * phi[None, :]
        den = den.max(axis=1)
        num = grid @ lstar
        ok = den > _TINY
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / den[ok])))
    return best


def upper_bound_min(
    lams: Sequence[float],
    marginals: Sequence[Mapping[int, float] | ScalarRateFunction],
    grid_res: float = 0.01,
    multistarts: int = 64,
    seed: int = 0,
    starts: Sequence[Sequence[float]] = (),
) -> tuple[float, tuple[float, ...], dict]:
    """Best universal bound: minimize upper_bound_eval over twisted means.

    Multistart Nelder-Mead over the box [r_min_i, mean_i] cross-checked by
    a dense grid (<= 2 users at ``grid_res``, 3 users coarsened 2x); the
    winner is re-evaluated with exact rate functions and the full inner
    sup.  Requires a strictly stable arrival vector.
    """
    rfs = _as_rate_functions(marginals)
    lam = np.asarray([float(v) for v in lams])
    n = len(lam)
    _check_singleton_stable(lam, rfs)
    tables = [_CramerTable(rf) for rf in rfs]
    lo = np.array([rf.r_min for rf in rfs])
    hi = np.array([rf.mean for rf in rfs])

    def objective(phi: np.ndarray) -> float:
        phi = np.clip(phi, lo, hi)
        lstar = np.array([t(p) for t, p in zip(tables, phi)])
        if not np.all(np.isfinite(lstar)):
            return _PENALTY
        if _hull_contains(lam, phi):
            return _PENALTY
        return _inner_sup_users(lam, phi, lstar, with_subset_candidates=(n <= 6))

    best_val = math.inf
    best_phi = hi.copy()
    used_grid = None
    if n <= 3:
        used_grid = grid_res if n <= 2 else 2 * grid_res
        axes = [
            np.arange(lo[i], hi[i] + used_grid / 2, used_grid) if hi[i] - lo[i] > 1e-12
            else np.array([hi[i]])
            for i in range(n)
        ]
        for combo in itertools.product(*axes):
            phi = np.asarray(combo)
            val = objective(phi)
            if val < best_val and val < _PENALTY / 2:
                best_val = val
                best_phi = phi

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x0B])))
    start_list = [np.clip(np.asarray(s, dtype=float), lo, hi) for s in starts]
    if best_val < _PENALTY / 2:
        start_list.append(best_phi.copy())
    for _ in range(multistarts):
        start_list.append(lo + rng.random(n) * (hi - lo))
    for x0 in start_list:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 400 * n},
        )
        if res.fun < best_val and res.fun < _PENALTY / 2:
            best_val = float(res.fun)
            best_phi = np.clip(res.x, lo, hi)

    exact = upper_bound_eval(lam, best_phi, rfs)
    if math.isfinite(exact):
        best_val = exact
    diagnostics = {"phi_grid": used_grid, "multistarts": multistarts}
    return best_val, tuple(float(x) for x in best_phi), diagnostics


def overflow_time_window(
    lams: Sequence[float], phis: Sequence[float]
) -> tuple[float, float]:
    """Earliest and latest fluid overflow times under twisted mean rates.

    For fluid inputs at the arrival rates drained by any rate vector in the
    twisted hull: the longest queue reaches level 1 no sooner than
    ``1 / max_i lambda_i`` and, when the arrivals lie outside the hull, no
    later than ``1 / min_{mu in hull} max_i (lambda_i - mu_i)`` (the inner
    LP is over the scaled simplex).  Diagnostic companion to the universal
    upper bound.
    """
    lam = np.asarray([float(v) for v in lams])
    phi = np.asarray([float(v) for v in phis])
    lam_max = float(np.max(lam))
    if lam_max <= 0:
        return math.inf, math.inf
    t_min = 1.0 / lam_max
    if _hull_contains(lam, phi):
        return t_min, math.inf
    n = len(lam)
    # variables [t, mu]: min t s.t. lambda_i - mu_i <= t, sum mu_i/phi_i <= 1
    c = np.zeros(n + 1)
    c[0] = 1.0
    a_ub = np.zeros((n + 1, n + 1))
    a_ub[:n, 0] = -1.0
    a_ub[:n, 1:] = -np.eye(n)
    b_ub = np.concatenate([-lam, [1.0]])
    with np.errstate(divide="ignore"):
        a_ub[n, 1:] = np.where(phi > _TINY, 1.0 / np.maximum(phi, _TINY), 0.0)
    bounds_list = [(None, None)] + [
        (0.0, 0.0 if phi[i] <= _TINY else None) for i in range(n)
    ]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds_list, method="highs")
    if not res.success or res.fun <= _TINY:
        return t_min, math.inf
    return t_min, 1.0 / float(res.fun)


# ---------------------------------------------------------------------------
# subset-structured upper bound (general disjoint observable subsets)


def _region_lambda_out_of_hull(
    lam: np.ndarray, regions: Sequence[SubsetRateRegion], num_users: int
) -> bool:
    """True when no time-shared combination of region points dominates lambda.

    Membership LP: beta >= 0 on the combined vertex list, sum beta = 1,
    (beta V)_i >= lambda_i for all i.  Dominated arrivals make the bound
    vacuous (they are inside the induced throughput region).
    """
    vertices = np.vstack([r.embedded_vertices(num_users) for r in regions])
    m = vertices.shape[0]
    res = linprog(
        np.zeros(m),
        A_ub=np.vstack([-vertices.T, np.ones((1, m))]),
        b_ub=np.concatenate([-lam, [1.0]]),
        bounds=[(0.0, None)] * m,
        method="highs",
    )
    return not res.success


def subset_upper_bound(
    lams: Sequence[float],
    dist: JointChannelDistribution,
    subsets: SubsetSystem,
    phis: Sequence[Sequence[float]],
    simplex_resolution: float = 1e-3,
) -> tuple[float, dict]:
    """Universal bound for fixed per-subset sub-state distributions.

    Numerator: per-subset relative-entropy costs weighted by subset
    sampling frequencies.  Denominator, taken verbatim: the worst queue
    growth over all winner-map vertices of every subset region, which for
    multi-user subsets admits vertices giving a user zero service; the
    ``lambda_max_dominated`` diagnostic flags when that verbatim reading
    pins the denominator at the raw arrival maximum.  Returns ``inf``
    when the arrival vector is dominated by the time-shared regions.
    """
    if not subsets.disjoint:
        raise ValueError("subset upper bound requires disjoint observable subsets")
    lam = np.asarray([float(v) for v in lams])
    n_sub = len(subsets.subsets)
    if len(phis) != n_sub:
        raise ValueError("need one sub-state distribution per subset")
    sub_dists = [dist.substate_marginal(a) for a in subsets.subsets]
    costs = np.array([sanov_rate(sd, ph) for sd, ph in zip(sub_dists, phis)])
    if not np.all(np.isfinite(costs)):
        return math.inf, {"reason": "sub-state distribution off the support"}
    regions = [region_vertices(sd, ph) for sd, ph in zip(sub_dists, phis)]
    if not _region_lambda_out_of_hull(lam, regions, dist.num_users):
        return math.inf, {"reason": "arrivals inside the induced throughput region"}

    # per-subset data: (lambda_i, min vertex coordinate) pairs
    data: list[list[tuple[float, float]]] = []
    for region, alpha in zip(regions, subsets.subsets):
        data.append(
            [(float(lam[user]), region.min_coordinate(pos)) for pos, user in enumerate(alpha)]
        )

    def den_of(c: np.ndarray) -> float:
        worst = -math.inf
        for a in range(n_sub):
            ca = c[a]
            for li, mi in data[a]:
                worst = max(worst, li - ca * mi)
        return worst

    w_floor = 0.0
    for rows in data:
        for li, mi in rows:
            if mi <= _TINY and li > _TINY:
                w_floor = max(w_floor, li)

    def req(a: int, w: float) -> float:
        out = 0.0
        for li, mi in data[a]:
            if mi > _TINY:
                out = max(out, (li - w) / mi)
        return max(0.0, out)

    def req_sum(w: float) -> float:
        return sum(req(a, w) for a in range(n_sub))

    lam_max = float(np.max(lam))
    w_lo = max(w_floor, 1e-14)
    if req_sum(w_lo) > 1.0:
        lo, hi = w_lo, max(lam_max, w_lo + 1.0)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if req_sum(mid) > 1.0:
                lo = mid
            else:
                hi = mid
        w_lo = max(hi, w_floor)
    candidates = {w_lo}
    candidates.update(float(v) for v in lam if v >= w_lo - 1e-12 and v > 0)
    j_slack = int(np.argmax(costs))

    best = -math.inf
    best_c = None
    for w in sorted(candidates):
        if w_floor > w + 1e-12:
            continue
        c = np.array([req(a, w) for a in range(n_sub)])
        s = float(c.sum())
        if s > 1.0 + 1e-9:
            continue
        c[j_slack] += max(0.0, 1.0 - s)
        den = den_of(c)
        if den <= _TINY:
            continue
        val = float(np.dot(c, costs)) / den
        if val > best:
            best, best_c = val, c
    if n_sub <= 3:
        for c in _simplex_grid(n_sub, simplex_resolution):
            den = den_of(c)
            if den <= _TINY:
                continue
            val = float(np.dot(c, costs)) / den
            if val > best:
                best, best_c = val, c
    if best_c is None:
        # only non-positive drifts found; formula value is vacuous
        return 0.0, {"reason": "no positive-drift sampling frequencies"}
    multi = any(len(a) >= 2 for a in subsets.subsets)
    dominated = multi and abs(den_of(best_c) - lam_max) <= 1e-12
    return best, {
        "c": tuple(float(v) for v in best_c),
        "lambda_max_dominated": bool(dominated),
    }


def minimize_subset_upper_bound(
    lams: Sequence[float],
    dist: JointChannelDistribution,
    subsets: SubsetSystem,
    multistarts: int = 32,
    seed: int = 0,
) -> tuple[float, tuple[tuple[float, ...], ...], dict]:
    """Best subset-structured bound over per-subset sub-state twists.

    Sub-state distributions are parametrized by softmax logits restricted
    to each subset's support; Nelder-Mead multistarts seed from
    service-suppressing tilts of the natural laws (the natural laws
    themselves are inside the vacuous-hull region for stable arrivals).
    """
    if not subsets.disjoint:
        raise ValueError("requires disjoint observable subsets")
    lam = [float(v) for v in lams]
    sub_dists = [dist.substate_marginal(a) for a in subsets.subsets]
    dims = [len(sd.substates) for sd in sub_dists]
    log_nat = [np.log(np.maximum(np.asarray(sd.probs), 1e-300)) for sd in sub_dists]
    total_rate = [np.array([sum(r) for r in sd.substates], dtype=float) for sd in sub_dists]

    def unpack(z: np.ndarray) -> list[np.ndarray]:
        out = []
        at = 0
        for d in dims:
            seg = z[at : at + d]
            seg = seg - np.max(seg)
            p = np.exp(seg)
            out.append(p / p.sum())
            at += d
        return out

    def objective(z: np.ndarray) -> float:
        val, _ = subset_upper_bound(lam, dist, subsets, unpack(z), simplex_resolution=1e-2)
        return val

    starts = []
    for t in (0.5, 1.0, 2.0, 4.0):
        starts.append(np.concatenate([ln - t * tr for ln, tr in zip(log_nat, total_rate)]))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5B])))
    for _ in range(multistarts):
        starts.append(
            np.concatenate([ln for ln in log_nat]) + rng.normal(0.0, 1.5, size=sum(dims))
        )
    best_val = math.inf
    best_z = starts[0]
    for z0 in starts:
        if not math.isfinite(objective(z0)):
            continue
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            options={"xatol": 1e-7, "fatol": 1e-11, "maxiter": 300 * sum(dims)},
        )
        if math.isfinite(res.fun) and res.fun < best_val:
            best_val = float(res.fun)
            best_z = res.x
    phis = unpack(best_z)
    final, diag = subset_upper_bound(lam, dist, subsets, phis, simplex_resolution=1e-3)
    if math.isfinite(final):
        best_val = final
    return best_val, tuple(tuple(float(v) for v in p) for p in phis), diag


# ---------------------------------------------------------------------------
# matching report


@dataclass
class ExponentReport:
    """Computed exponent bounds plus the data needed to reproduce them."""

    jstar: float
    ub_min: float
    gap: float
    phi_hat: tuple
    method: str
    resolution: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "jstar": self.jstar,
            "ub_min": self.ub_min,
            "gap": self.gap,
            "phi_hat": self.phi_hat,
            "method": self.method,
            "resolution": self.resolution,
            "diagnostics": self.diagnostics,
        }


def verify_matching(
    lams: Sequence[float],
    dist: JointChannelDistribution,
    subsets: SubsetSystem,
    grid_res: float = 0.01,
    multistarts: int = 64,
    seed: int = 0,
) -> ExponentReport:
    """Compute both exponent bounds and their gap for one instance.

    Singleton systems compute J* and the minimized universal upper bound
    independently (matched bounds predict gap ~ 0).  General disjoint
    systems report the minimized subset-structured bound as the predicted
    exponent (the matching policy attains it); simulation is the
    cross-check there.  Positivity of the exponent is asserted for every
    stable instance.
    """
    stab = stability_check(lams, dist, subsets)
    if stab.status != "stable_interior":
        raise UnstableArrivalsError(
            f"arrival vector is {stab.status} (margin {stab.margin:.4g}); "
            "exponent bounds need a strictly stable instance"
        )
    lam = [float(v) for v in lams]
    if subsets.all_singletons:
        users = sorted(a[0] for a in subsets.subsets)
        lam_cov = [lam[i] for i in users]
        margs = [dist.user_marginal(i) for i in users]
        jr = jstar_singleton(
            lam_cov, margs, grid_res=grid_res, multistarts=multistarts, seed=seed
        )
        # theory predicts the minimizing twists extend J*'s by the means off S
        rfs = _as_rate_functions(margs)
        ext = [rf.mean for rf in rfs]
        for pos, user_pos in enumerate(jr.subset):
            ext[user_pos] = jr.phi[pos]
        ub, phi_hat, diag = upper_bound_min(
            lam_cov, margs, grid_res=grid_res, multistarts=multistarts, seed=seed,
            starts=[ext],
        )
        t_window = overflow_time_window(lam_cov, phi_hat)
        if math.isfinite(ub) and ub < jr.value * (1 - 1e-9):
            # the bound minimizer found a cheaper twist: reseed the
            # cost-per-drift search from it (the two problems share optima)
            jr2 = jstar_singleton(
                lam_cov, margs, grid_res=grid_res, multistarts=multistarts, seed=seed,
                extra_starts=[phi_hat],
            )
            if jr2.value < jr.value:
                jr = jr2
        if not jr.value > 0:
            raise RuntimeError("exponent lower bound is not positive on a stable instance")
        if math.isinf(jr.value) and math.isinf(ub):
            gap = 0.0
        else:
            gap = abs(jr.value - ub) / max(jr.value, 1e-12)
        return ExponentReport(
            jstar=jr.value,
            ub_min=ub,
            gap=gap,
            phi_hat=phi_hat,
            method="singleton_matching",
            resolution={
                "phi_grid": grid_res,
                "inner": "exact candidate family + 1e-3 simplex grid",
                "value_tol": 1e-6,
            },
            diagnostics={
                "jstar_subset": jr.subset,
                "jstar_phi": jr.phi,
                "per_subset": {",".join(map(str, k)): v for k, v in jr.per_subset.items()},
                "covered_users": users,
                "stability_margin": stab.margin,
                "overflow_time_window": t_window,
                **diag,
            },
        )
    value, phis, diag = minimize_subset_upper_bound(
        lam, dist, subsets, multistarts=max(8, multistarts // 2), seed=seed
    )
    if not value > 0:
        raise RuntimeError("subset-structured bound is not positive on a stable instance")
    return ExponentReport(
        jstar=value,
        ub_min=value,
        gap=0.0,
        phi_hat=phis,
        method="subset_upper_bound",
        resolution={"simplex_grid": 1e-3, "value_tol": 1e-6},
        diagnostics={
            "note": "predicted exponent equals the minimized subset-structured bound; "
            "validate against simulation",
            "stability_margin": stab.margin,
            **diag,
        },
    )
