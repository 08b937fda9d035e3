"""Position estimation from quantized measurements: damped Gauss-Newton
solvers for time-difference, round-trip-range, arrival-angle and
departure-angle inputs, plus geometric dilution diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_MEASUREMENTS = {"tdoa": 3, "rtt": 3, "aoa": 2, "aod": 2}


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    tolerance_m: float = 1e-4
    # 2D solve with known terminal height by default; None solves full 3D
    fix_height: float | None = 1.5
    nlos_rejection: str = "off"  # or "residual_trim"
    trim_rounds: int = 2
    trim_ratio: float = 3.0
    area: tuple[float, float, float, float] | None = None  # x0, y0, x1, y1

    def __post_init__(self):
        if self.tolerance_m <= 0:
            raise SolverError("tolerance must be positive")
        if self.nlos_rejection not in ("off", "residual_trim"):
            raise SolverError(f"unknown rejection mode {self.nlos_rejection!r}")


@dataclass
class PositionFix:
    position: np.ndarray
    residual_rms: float
    iterations: int
    converged: bool
    method: str
    objective: float = 0.0
    gradient_norm: float = 0.0
    used_indices: tuple[int, ...] = ()
    trimmed_indices: tuple[int, ...] = ()
    residual_history: tuple[float, ...] = ()
    low_confidence: bool = False


def wrap_deg(angle):
    """Wrap to (-180, 180]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(wrapped == -180.0, 180.0, wrapped)


def init_guess(anchors, rsrp_dbm=None, fix_height: float | None = None) -> np.ndarray:
    """Power-weighted anchor centroid (plain centroid without powers)."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if len(anchors) == 0:
        raise SolverError("need at least one anchor")
    if rsrp_dbm is not None and len(rsrp_dbm) == len(anchors):
        w = 10.0 ** (np.asarray(rsrp_dbm, dtype=float) / 10.0)
        if w.sum() > 0:
            w = w / w.sum()
        else:
            w = np.full(len(anchors), 1.0 / len(anchors))
    else:
        w = np.full(len(anchors), 1.0 / len(anchors))
    guess = (anchors * w[:, None]).sum(axis=0)
    if fix_height is not None:
        guess[2] = fix_height
    else:
        guess[2] = anchors[:, 2].mean() - 1.5
    return guess


def _expand(x2, fix_height):
    if fix_height is None:
        return np.asarray(x2, dtype=float)
    return np.array([x2[0], x2[1], fix_height])


class _Problem:
    """Residuals and Jacobians for one measurement geometry."""

    def __init__(self, method, anchors, fix_height):
        self.method = method
        self.anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        self.fix_height = fix_height

    def residuals(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def objective_grid(self, pts: np.ndarray, z: float) -> np.ndarray:
        """Sum of squared residuals at many xy points (coarse scan)."""
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            r = self.residuals(np.array([p[0], p[1], z]))
            out[i] = float(np.dot(r, r))
        return out


class _TdoaProblem(_Problem):
    def __init__(self, anchors, ref_anchor, measured_m, fix_height):
        super().__init__("tdoa", anchors, fix_height)
        self.ref = np.asarray(ref_anchor, dtype=float)
        self.measured = np.asarray(measured_m, dtype=float)

    def residuals(self, x):
        d = np.linalg.norm(self.anchors - x, axis=1)
        d_ref = np.linalg.norm(self.ref - x)
        return (d - d_ref) - self.measured

    def jacobian(self, x):
        diff = x - self.anchors
        d = np.linalg.norm(diff, axis=1, keepdims=True)
        diff_ref = x - self.ref
        d_ref = np.linalg.norm(diff_ref)
        rows = diff / d - diff_ref / d_ref
        return rows if self.fix_height is None else rows[:, :2]

    def objective_grid(self, pts, z):
        p3 = np.column_stack([pts, np.full(len(pts), z)])
        d = np.linalg.norm(p3[:, None, :] - self.anchors[None, :, :], axis=2)
        d_ref = np.linalg.norm(p3 - self.ref[None, :], axis=1)
        res = (d - d_ref[:, None]) - self.measured[None, :]
        return (res**2).sum(axis=1)


class _RangeProblem(_Problem):
    def __init__(self, anchors, ranges_m, fix_height):
        super().__init__("rtt", anchors, fix_height)
        self.measured = np.asarray(ranges_m, dtype=float)

    def residuals(self, x):
        return np.linalg.norm(self.anchors - x, axis=1) - self.measured

    def jacobian(self, x):
        diff = x - self.anchors
        d = np.linalg.norm(diff, axis=1, keepdims=True)
        rows = diff / d
        return rows if self.fix_height is None else rows[:, :2]

    def objective_grid(self, pts, z):
        p3 = np.column_stack([pts, np.full(len(pts), z)])
        d = np.linalg.norm(p3[:, None, :] - self.anchors[None, :, :], axis=2)
        res = d - self.measured[None, :]
        return (res**2).sum(axis=1)


class _AngleProblem(_Problem):
    """Azimuth (and optional zenith) bearings, residuals in degrees."""

    def __init__(self, anchors, azimuth_deg, zenith_deg, fix_height):
        super().__init__("aoa", anchors, fix_height)
        self.az = np.asarray(azimuth_deg, dtype=float)
        self.zen = None if zenith_deg is None else np.asarray(zenith_deg, dtype=float)

    def residuals(self, x):
        diff = x - self.anchors
        az = np.degrees(np.arctan2(diff[:, 1], diff[:, 0]))
        res = [wrap_deg(az - self.az)]
        if self.zen is not None:
            rho = np.linalg.norm(diff[:, :2], axis=1)
            zen = np.degrees(np.arctan2(rho, diff[:, 2]))
            res.append(zen - self.zen)
        return np.concatenate(res)

    def jacobian(self, x):
        diff = x - self.anchors
        rho2 = diff[:, 0] ** 2 + diff[:, 1] ** 2
        rho = np.sqrt(rho2)
        deg = 180.0 / np.pi
        j_az = np.zeros((len(self.anchors), 3))
        j_az[:, 0] = -diff[:, 1] / rho2 * deg
        j_az[:, 1] = diff[:, 0] / rho2 * deg
        rows = [j_az]
        if self.zen is not None:
            d2 = rho2 + diff[:, 2] ** 2
            j_zen = np.zeros((len(self.anchors), 3))
            j_zen[:, 0] = diff[:, 2] * diff[:, 0] / (d2 * rho) * deg
            j_zen[:, 1] = diff[:, 2] * diff[:, 1] / (d2 * rho) * deg
            j_zen[:, 2] = -rho / d2 * deg
            rows.append(j_zen)
        j = np.vstack(rows)
        return j if self.fix_height is None else j[:, :2]

    def objective_grid(self, pts, z):
        diff_x = pts[:, 0:1] - self.anchors[None, :, 0]
        diff_y = pts[:, 1:2] - self.anchors[None, :, 1]
        az = np.degrees(np.arctan2(diff_y, diff_x))
        res = wrap_deg(az - self.az[None, :])
        total = (res**2).sum(axis=1)
        if self.zen is not None:
            rho = np.hypot(diff_x, diff_y)
            zen = np.degrees(np.arctan2(rho, z - self.anchors[None, :, 2]))
            total = total + ((zen - self.zen[None, :]) ** 2).sum(axis=1)
        return total


def _gauss_newton(problem: _Problem, x0: np.ndarray, options: SolverOptions) -> PositionFix:
    """Damped Gauss-Newton: halve the step while the residual RMS grows."""
    fix_h = options.fix_height
    x = np.asarray(x0, dtype=float).copy()
    if fix_h is not None:
        x[2] = fix_h
    var = x[:2].copy() if fix_h is not None else x.copy()

    def rms(v):
        r = problem.residuals(_expand(v, fix_h))
        return float(np.sqrt(np.mean(r**2)))

    history = [rms(var)]
    converged = False
    iterations = 0
    for iterations in range(1, options.max_iterations + 1):
        xf = _expand(var, fix_h)
        r = problem.residuals(xf)
        j = problem.jacobian(xf)
        try:
            step, *_ = np.linalg.lstsq(j, r, rcond=None)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        scale = 1.0
        best = history[-1]
        accepted = None
        for _ in range(25):
            cand = var - scale * step
            cand_rms = rms(cand)
            if cand_rms <= best:
                accepted = (cand, cand_rms, scale)
                break
            scale *= 0.5
        if accepted is None:
            break
        var, new_rms, scale = accepted
        history.append(new_rms)
        if float(np.linalg.norm(scale * step)) < options.tolerance_m:
            converged = True
            break

    xf = _expand(var, fix_h)
    r = problem.residuals(xf)
    j = problem.jacobian(xf)
    grad = 2.0 * j.T @ r / max(len(r), 1)
    return PositionFix(
        position=xf,
        residual_rms=float(np.sqrt(np.mean(r**2))),
        iterations=iterations,
        converged=converged,
        method=problem.method,
        objective=float(np.sum(r**2)),
        gradient_norm=float(np.linalg.norm(grad)),
        residual_history=tuple(history),
    )


_GRID_POINTS = 32
_REGION_GROWTH = 1.5


def _scan_points(problem, lo, hi, z, n):
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return pts, problem.objective_grid(pts, z)


def _coarse_starts(problem: _Problem, options: SolverOptions,
                   n_starts: int = 3) -> list[np.ndarray]:
    """Candidate starts from a coarse objective scan with local zoom.

    The scan covers options.area when given, otherwise the anchor bounding
    box grown well past its span per side (terminals can sit far outside
    the anchor hull). The best few well-separated cells are zoomed twice
    so each start sits deep inside its basin and the refinement cannot
    jump out of it.
    """
    if options.area is not None:
        lo = np.array(options.area[:2], dtype=float)
        hi = np.array(options.area[2:], dtype=float)
    else:
        a_lo = problem.anchors[:, :2].min(axis=0)
        a_hi = problem.anchors[:, :2].max(axis=0)
        span = np.maximum(a_hi - a_lo, 10.0)
        lo = a_lo - _REGION_GROWTH * span
        hi = a_hi + _REGION_GROWTH * span
    z = options.fix_height
    if z is None:
        z = float(problem.anchors[:, 2].mean()) - 1.5
    pts, vals = _scan_points(problem, lo, hi, z, _GRID_POINTS)
    cell = (hi - lo) / (_GRID_POINTS - 1)
    min_sep = 2.0 * float(np.linalg.norm(cell))

    seeds: list[np.ndarray] = []
    for idx in np.argsort(vals):
        p = pts[idx]
        if all(np.linalg.norm(p - s) > min_sep for s in seeds):
            seeds.append(p)
        if len(seeds) == n_starts:
            break

    starts = []
    for seed in seeds:
        best, best_val, c = seed, math.inf, cell
        for _ in range(2):
            zpts, zvals = _scan_points(problem, best - 1.5 * c, best + 1.5 * c, z, 9)
            k = int(np.argmin(zvals))
            best, best_val = zpts[k], float(zvals[k])
            c = c / 2.5
        starts.append(np.array([best[0], best[1], z]))
    return starts


def _solve_multistart(problem: _Problem, x0, options: SolverOptions) -> PositionFix:
    """Damped Gauss-Newton from the caller's start and from the zoomed
    minima of a coarse objective scan; the lowest-objective fix wins."""
    best = _gauss_newton(problem, x0, options)
    for start in _coarse_starts(problem, options):
        if np.linalg.norm(start[:2] - best.position[:2]) <= max(options.tolerance_m, 1e-6):
            continue
        alt = _gauss_newton(problem, start, options)
        if alt.objective < best.objective:
            best = alt
    return best


def _solve_with_trim(build_problem, n_meas: int, x0, options: SolverOptions,
                     min_needed: int, method: str) -> PositionFix:
    """Solve, then optionally drop gross-outlier measurements and re-solve."""
    active = list(range(n_meas))
    trimmed: list[int] = []
    fix = _solve_multistart(build_problem(active), x0, options)
    if options.nlos_rejection == "residual_trim":
        for _ in range(options.trim_rounds):
            if len(active) <= min_needed:
                break
            r = np.abs(build_problem(active).residuals(fix.position))
            med = float(np.median(r))
            worst = int(np.argmax(r))
            if med <= 0 or r[worst] <= options.trim_ratio * med:
                break
            trimmed.append(active.pop(worst))
            fix = _solve_multistart(build_problem(active), fix.position, options)
    fix.method = method
    fix.used_indices = tuple(active)
    fix.trimmed_indices = tuple(trimmed)
    return fix


def _check_geometry(anchors, n_meas, method, options, check_collinear=True):
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    need = MIN_MEASUREMENTS[method] + (1 if options.fix_height is None else 0)
    if n_meas < need:
        raise SolverError(f"{method} needs >= {need} measurements, got {n_meas}")
    if check_collinear:
        spread = anchors[:, :2] - anchors[:, :2].mean(axis=0)
        if np.linalg.matrix_rank(spread, tol=1e-9) < 2:
            raise SolverError("anchors are collinear (degenerate geometry)")
    return anchors


def tdoa_solve(anchors, rstd_m, options: SolverOptions | None = None,
               x0=None) -> PositionFix:
    """Hyperbolic solve from range differences.

    rstd_m is a list of (anchor_index, ref_anchor_index, meters); all rows
    must share one reference.
    """
    options = options or SolverOptions()
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if not rstd_m:
        raise SolverError("no measurements")
    refs = {ref for _, ref, _ in rstd_m}
    if len(refs) != 1:
        raise SolverError("all range differences must share one reference anchor")
    ref_idx = refs.pop()
    idx = [i for i, _, _ in rstd_m]
    meas = np.array([m for _, _, m in rstd_m], dtype=float)
    _check_geometry(anchors[idx + [ref_idx]], len(meas), "tdoa", options)
    if x0 is None:
        x0 = init_guess(anchors, fix_height=options.fix_height)

    def build(active):
        rows = [idx[a] for a in active]
        return _TdoaProblem(anchors[rows], anchors[ref_idx], meas[list(active)],
                            options.fix_height)

    return _solve_with_trim(build, len(meas), x0, options,
                            MIN_MEASUREMENTS["tdoa"], "tdoa")


def rtt_solve(anchors, ranges_m, options: SolverOptions | None = None,
              x0=None) -> PositionFix:
    """Multilateration from round-trip ranges: (anchor_index, meters) pairs."""
    options = options or SolverOptions()
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if not ranges_m:
        raise SolverError("no measurements")
    idx = [i for i, _ in ranges_m]
    meas = np.array([m for _, m in ranges_m], dtype=float)
    _check_geometry(anchors[idx], len(meas), "rtt", options)
    if x0 is None:
        x0 = init_guess(anchors[idx], fix_height=options.fix_height)

    def build(active):
        rows = [idx[a] for a in active]
        return _RangeProblem(anchors[rows], meas[list(active)], options.fix_height)

    # the coarse-scan restart inside the solve resolves the trilateration
    # mirror ambiguity toward the better-fitting (in-area) solution
    return _solve_with_trim(build, len(meas), x0, options,
                            MIN_MEASUREMENTS["rtt"], "rtt")


def aoa_solve(anchors, angles, options: SolverOptions | None = None,
              x0=None) -> PositionFix:
    """Bearing-intersection solve.

    angles is a list of (anchor_index, azimuth_deg, zenith_deg_or_None);
    residuals are wrapped angle differences in degrees.
    """
    options = options or SolverOptions()
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if not angles:
        raise SolverError("no measurements")
    idx = [i for i, _, _ in angles]
    az = np.array([a for _, a, _ in angles], dtype=float)
    zen_vals = [z for _, _, z in angles]
    use_zen = all(z is not None for z in zen_vals)
    zen = np.array(zen_vals, dtype=float) if use_zen else None
    # collinear anchors are fine for bearings; parallel bearings are not
    _check_geometry(anchors[idx], len(az), "aoa", options, check_collinear=False)
    if np.all(np.abs(wrap_deg((az - az[0]) * 2.0)) < 1e-9):
        raise SolverError("parallel bearings have no unique intersection")
    if x0 is None:
        x0 = init_guess(anchors[idx], fix_height=options.fix_height)

    def build(active):
        rows = [idx[a] for a in active]
        z = zen[list(active)] if use_zen else None
        return _AngleProblem(anchors[rows], az[list(active)], z, options.fix_height)

    return _solve_with_trim(build, len(az), x0, options,
                            MIN_MEASUREMENTS["aoa"], "aoa")


def beam_bearing(beams, top_n: int = 3) -> tuple[float, float, bool]:
    """Departure bearing from per-beam powers.

    beams is a list of (azimuth_deg, zenith_deg, rsrp_dbm). The bearing is
    the power-weighted circular mean of the top-`top_n` beams. Returns
    (azimuth, zenith, low_confidence); confidence drops when the top beams
    are indistinguishable, which carries no direction information.
    """
    if not beams:
        raise SolverError("no beams")
    ordered = sorted(beams, key=lambda b: b[2], reverse=True)[:top_n]
    powers = np.array([10.0 ** (b[2] / 10.0) for b in ordered])
    az = np.deg2rad([b[0] for b in ordered])
    zen = np.array([b[1] for b in ordered])
    w = powers / powers.sum()
    vec = np.array([np.sum(w * np.cos(az)), np.sum(w * np.sin(az))])
    az_mean = math.degrees(math.atan2(vec[1], vec[0]))
    zen_mean = float(np.sum(w * zen))
    spread = (powers.max() - powers.min()) / powers.max() if len(powers) > 1 else 1.0
    low_confidence = len(beams) < 2 or spread < 1e-3
    return az_mean, zen_mean, low_confidence


def aod_solve(anchors, beam_rsrp, options: SolverOptions | None = None,
              x0=None) -> PositionFix:
    """Departure-angle solve from per-TRP beam power reports.

    beam_rsrp maps anchor_index -> list of (beam azimuth, beam zenith,
    rsrp_dbm). Single-beam or flat-response TRPs carry no usable bearing
    and are dropped (reported via low_confidence when any were).
    """
    options = options or SolverOptions()
    angles = []
    dropped = False
    for anchor_idx, beams in beam_rsrp.items():
        if len(beams) < 2:
            dropped = True
            continue
        az, zen, low_conf = beam_bearing(beams)
        if low_conf:
            dropped = True
            continue
        # a sweep with one common zenith carries no elevation information
        zen_spread = max(b[1] for b in beams) - min(b[1] for b in beams)
        angles.append((anchor_idx, az, zen if zen_spread > 1e-6 else None))
    if len(angles) < MIN_MEASUREMENTS["aod"]:
        raise SolverError("not enough TRPs with usable beam reports")
    fix = aoa_solve(anchors, angles, options, x0=x0)
    fix.method = "aod"
    fix.low_confidence = dropped
    return fix


def gdop(anchors, position, method: str, ref_index: int | None = None,
         fix_height: float | None = 1.5) -> float:
    """sqrt(trace((J^T J)^-1)) of the method's measurement Jacobian.

    Returns +inf for singular geometry.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    position = np.asarray(position, dtype=float)
    if method == "tdoa":
        if ref_index is None:
            ref_index = 0
        rows = [i for i in range(len(anchors)) if i != ref_index]
        problem = _TdoaProblem(anchors[rows], anchors[ref_index],
                               np.zeros(len(rows)), fix_height)
    elif method == "rtt":
        problem = _RangeProblem(anchors, np.zeros(len(anchors)), fix_height)
    elif method in ("aoa", "aod"):
        problem = _AngleProblem(anchors, np.zeros(len(anchors)),
                                np.zeros(len(anchors)), fix_height)
    else:
        raise SolverError(f"unknown method {method!r}")
    j = problem.jacobian(position)
    jtj = j.T @ j
    try:
        inv = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return math.inf
    if np.linalg.cond(jtj) > 1e12:
        return math.inf
    return float(np.sqrt(np.trace(inv)))
