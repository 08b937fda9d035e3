import math

import numpy as np
import pytest

from nrpos.solvers import (
    PositionFix,
    SolverError,
    SolverOptions,
    aoa_solve,
    aod_solve,
    beam_bearing,
    gdop,
    init_guess,
    rtt_solve,
    tdoa_solve,
    wrap_deg,
)

OPT2D = SolverOptions(fix_height=1.5)


def square_anchors(side=100.0, z=10.0):
    h = side / 2
    return np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])


def random_anchors(rng, n=6, z=3.0):
    """Non-degenerate anchor sets: jittered ring with a minimum spread."""
    while True:
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        radii = rng.uniform(30, 120, n)
        pts = np.column_stack([
            radii * np.cos(angles), radii * np.sin(angles), np.full(n, z)
        ])
        spread = pts[:, :2] - pts[:, :2].mean(axis=0)
        if min(np.linalg.svd(spread, compute_uv=False)) > 20.0:
            return pts


def exact_rstd(anchors, ref, ue):
    d = np.linalg.norm(anchors - ue, axis=1)
    d_ref = np.linalg.norm(anchors[ref] - ue)
    return [(i, ref, d[i] - d_ref) for i in range(len(anchors)) if i != ref]


def exact_ranges(anchors, ue):
    d = np.linalg.norm(anchors - ue, axis=1)
    return [(i, d[i]) for i in range(len(anchors))]


def exact_angles(anchors, ue):
    out = []
    for i, a in enumerate(anchors):
        v = ue - a
        az = math.degrees(math.atan2(v[1], v[0]))
        zen = math.degrees(math.acos(v[2] / np.linalg.norm(v)))
        out.append((i, az, zen))
    return out


def symmetric_beam_rsrp(anchors, ue, spacing_deg=10.0):
    """Beam reports whose weighted bearing is exactly the true departure."""
    reports = {}
    for i, a in enumerate(anchors):
        v = ue - a
        az = math.degrees(math.atan2(v[1], v[0]))
        zen = math.degrees(math.acos(v[2] / np.linalg.norm(v)))
        reports[i] = [
            (az - spacing_deg, zen, -90.0),
            (az, zen, -80.0),
            (az + spacing_deg, zen, -90.0),
        ]
    return reports


class TestNoiselessRecovery:
    def test_square_center_symmetry(self):
        anchors = square_anchors()
        ue = np.array([0.0, 0.0, 1.5])
        fix = tdoa_solve(anchors, exact_rstd(anchors, 0, ue), OPT2D)
        assert fix.converged
        assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-6

    def test_three_anchor_trilateration(self):
        anchors = np.array([[0, 0, 3], [100, 0, 3], [0, 100, 3]], dtype=float)
        ue = np.array([30.0, 40.0, 1.5])
        fix = rtt_solve(anchors, exact_ranges(anchors, ue), OPT2D)
        assert fix.converged
        assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-9

    def test_two_bearing_intersection(self):
        anchors = np.array([[0, 0, 1.5], [100, 0, 1.5]], dtype=float)
        ue = np.array([50.0, 50.0, 1.5])  # bearings 45 and 135 degrees
        angles = [(0, 45.0, None), (1, 135.0, None)]
        fix = aoa_solve(anchors, angles, OPT2D)
        assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-6

    def test_aoa_four_anchors(self):
        anchors = np.array([[10, 15, 3], [110, 15, 3], [10, 35, 3], [110, 35, 3]],
                           dtype=float)
        ue = np.array([42.0, 27.0, 1.5])
        fix = aoa_solve(anchors, exact_angles(anchors, ue), OPT2D)
        assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-6

    def test_aod_symmetric_beams(self):
        anchors = np.array([[0, 0, 3], [100, 0, 3], [50, 80, 3]], dtype=float)
        ue = np.array([40.0, 30.0, 1.5])
        fix = aod_solve(anchors, symmetric_beam_rsrp(anchors, ue), OPT2D)
        assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-6

    @pytest.mark.parametrize("method", ["tdoa", "rtt", "aoa", "aod"])
    def test_random_instances(self, method):
        rng = np.random.default_rng(sum(map(ord, method)))
        for _ in range(60):
            anchors = random_anchors(rng)
            ue = np.array([rng.uniform(-60, 60), rng.uniform(-60, 60), 1.5])
            if method == "tdoa":
                fix = tdoa_solve(anchors, exact_rstd(anchors, 0, ue), OPT2D)
            elif method == "rtt":
                fix = rtt_solve(anchors, exact_ranges(anchors, ue), OPT2D)
            elif method == "aoa":
                fix = aoa_solve(anchors, exact_angles(anchors, ue), OPT2D)
            else:
                fix = aod_solve(anchors, symmetric_beam_rsrp(anchors, ue), OPT2D)
            assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-6
            assert fix.converged


class TestSolverContracts:
    def test_insufficient_measurements(self):
        anchors = square_anchors()
        with pytest.raises(SolverError):
            tdoa_solve(anchors, exact_rstd(anchors, 0, np.array([0, 0, 1.5]))[:2], OPT2D)
        with pytest.raises(SolverError):
            rtt_solve(anchors[:2], [(0, 10.0), (1, 20.0)], OPT2D)
        with pytest.raises(SolverError):
            aoa_solve(anchors, [(0, 10.0, None)], OPT2D)

    def test_collinear_anchors_rejected(self):
        anchors = np.array([[0, 0, 3], [50, 0, 3], [100, 0, 3], [150, 0, 3]],
                           dtype=float)
        ue = np.array([50.0, 40.0, 1.5])
        with pytest.raises(SolverError):
            rtt_solve(anchors, exact_ranges(anchors, ue), OPT2D)

    def test_mixed_references_rejected(self):
        anchors = square_anchors()
        with pytest.raises(SolverError):
            tdoa_solve(anchors, [(1, 0, 5.0), (2, 0, 3.0), (3, 1, 1.0)], OPT2D)

    def test_divergence_returns_unconverged(self):
        anchors = np.array([[0, 0, 3], [100, 0, 3], [0, 100, 3]], dtype=float)
        options = SolverOptions(fix_height=1.5, max_iterations=1)
        fix = rtt_solve(anchors, [(0, 80.0), (1, 90.0), (2, 95.0)], options,
                        x0=np.array([500.0, 500.0, 1.5]))
        assert isinstance(fix, PositionFix)

    def test_monotone_damping(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            anchors = random_anchors(rng)
            ue = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), 1.5])
            meas = [(i, d + rng.normal(0, 2.0)) for i, d in exact_ranges(anchors, ue)]
            fix = rtt_solve(anchors, meas, OPT2D)
            hist = fix.residual_history
            assert all(a >= b - 1e-12 for a, b in zip(hist, hist[1:]))

    def test_translation_equivariance(self):
        rng = np.random.default_rng(10)
        anchors = random_anchors(rng)
        ue = np.array([20.0, -10.0, 1.5])
        noisy = [(i, d + 0.5 * np.sin(i)) for i, d in exact_ranges(anchors, ue)]
        fix_a = rtt_solve(anchors, noisy, OPT2D)
        shift = np.array([1000.0, -500.0, 0.0])
        fix_b = rtt_solve(anchors + shift, noisy, OPT2D,
                          x0=init_guess(anchors + shift, fix_height=1.5))
        assert np.allclose(fix_a.position + shift, fix_b.position, atol=1e-6)

    def test_converged_gradient_small(self):
        rng = np.random.default_rng(11)
        anchors = random_anchors(rng)
        ue = np.array([10.0, 5.0, 1.5])
        fix = rtt_solve(anchors, exact_ranges(anchors, ue), OPT2D)
        assert fix.converged
        assert fix.gradient_norm < 1e-6

    def test_wrap_deg(self):
        assert wrap_deg(190.0) == -170.0
        assert wrap_deg(-190.0) == 170.0
        assert wrap_deg(180.0) == 180.0
        assert wrap_deg(540.0) == 180.0


class TestResidualTrim:
    def test_single_outlier_removed(self):
        rng = np.random.default_rng(3)
        anchors = random_anchors(rng, n=8)
        ue = np.array([10.0, 20.0, 1.5])
        meas = exact_ranges(anchors, ue)
        meas[4] = (4, meas[4][1] + 25.0)
        options = SolverOptions(fix_height=1.5, nlos_rejection="residual_trim")
        fix = rtt_solve(anchors, meas, options)
        assert 4 in fix.trimmed_indices
        assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-4

    def test_common_bias_not_trimmed(self):
        # all ranges inflated: consistent, so nothing to trim; fix is biased
        rng = np.random.default_rng(4)
        anchors = random_anchors(rng, n=6)
        ue = np.array([0.0, 0.0, 1.5])
        meas = [(i, d + 1.0) for i, d in exact_ranges(anchors, ue)]
        options = SolverOptions(fix_height=1.5, nlos_rejection="residual_trim")
        fix = rtt_solve(anchors, meas, options)
        assert fix.trimmed_indices == ()
        assert fix.converged
        err = np.linalg.norm(fix.position[:2] - ue[:2])
        assert 1e-3 < err < 3.0

    def test_off_by_default(self):
        assert SolverOptions().nlos_rejection == "off"


class TestAngleNoisePropagation:
    def test_one_degree_noise_scale(self):
        # 1 degree of bearing noise at ~100 m range: cross-range scale ~1.7 m
        rng = np.random.default_rng(5)
        anchors = np.array([[-100, 0, 1.5], [100, 0, 1.5], [0, 100, 1.5],
                            [0, -100, 1.5]], dtype=float)
        errs = []
        for _ in range(300):
            ue = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20), 1.5])
            angles = [
                (i, az + rng.normal(0, 1.0), None)
                for i, az, _ in exact_angles(anchors, ue)
            ]
            fix = aoa_solve(anchors, angles, OPT2D)
            errs.append(np.linalg.norm(fix.position[:2] - ue[:2]))
        rms = float(np.sqrt(np.mean(np.square(errs))))
        scale = math.radians(1.0) * 100.0  # ~1.75 m
        assert 0.3 * scale < rms < 1.5 * scale


class TestBeamBearing:
    def test_boresight_symmetry(self):
        az, zen, low = beam_bearing([(-10, 95, -90.0), (0, 95, -80.0), (10, 95, -90.0)])
        assert az == pytest.approx(0.0, abs=1e-9)
        assert zen == pytest.approx(95.0)
        assert not low

    def test_flat_rsrp_flagged(self):
        _, _, low = beam_bearing([(-10, 95, -80.0), (0, 95, -80.0), (10, 95, -80.0)])
        assert low

    def test_wraparound(self):
        az, _, _ = beam_bearing([(170, 95, -90.0), (180, 95, -80.0), (-170, 95, -90.0)])
        assert wrap_deg(az - 180.0) == pytest.approx(0.0, abs=1e-9)

    def test_single_beam_trp_dropped(self):
        anchors = np.array([[0, 0, 3], [100, 0, 3], [50, 80, 3]], dtype=float)
        ue = np.array([40.0, 30.0, 1.5])
        reports = symmetric_beam_rsrp(anchors, ue)
        reports[2] = reports[2][:1]  # single beam: coarse info only
        fix = aod_solve(anchors, reports, OPT2D)
        assert fix.low_confidence
        assert np.linalg.norm(fix.position[:2] - ue[:2]) < 1e-6

    def test_not_enough_usable_trps(self):
        anchors = np.array([[0, 0, 3], [100, 0, 3]], dtype=float)
        with pytest.raises(SolverError):
            aod_solve(anchors, {0: [(0.0, 95.0, -80.0)], 1: [(10.0, 95.0, -80.0)]}, OPT2D)


class TestGdop:
    def test_square_center_is_minimum(self):
        anchors = square_anchors(z=1.5)
        center = gdop(anchors, [0.0, 0.0, 1.5], "rtt")
        for p in [[30, 0], [0, 30], [40, 40], [-45, 10]]:
            assert center <= gdop(anchors, [p[0], p[1], 1.5], "rtt")

    def test_collinear_is_infinite(self):
        anchors = np.array([[0, 0, 3], [50, 0, 3], [100, 0, 3]], dtype=float)
        assert gdop(anchors, [50.0, 0.0, 1.5], "rtt") == math.inf

    def test_grid_oracle_confirms_center_minimum(self):
        anchors = square_anchors(z=1.5)
        xs = np.linspace(-40, 40, 17)
        values = np.array([
            [gdop(anchors, [x, y, 1.5], "rtt") for x in xs] for y in xs
        ])
        i, j = np.unravel_index(np.argmin(values), values.shape)
        assert abs(xs[j]) < 6 and abs(xs[i]) < 6

    def test_tdoa_and_angle_variants(self):
        anchors = square_anchors(z=1.5)
        assert gdop(anchors, [10.0, 5.0, 1.5], "tdoa", ref_index=0) > 0
        assert gdop(anchors, [10.0, 5.0, 1.5], "aoa") > 0
        with pytest.raises(SolverError):
            gdop(anchors, [0, 0, 1.5], "fingerprint")


class TestInitGuess:
    def test_plain_centroid(self):
        anchors = square_anchors()
        guess = init_guess(anchors, fix_height=1.5)
        assert np.allclose(guess[:2], [0.0, 0.0])
        assert guess[2] == 1.5

    def test_single_anchor(self):
        guess = init_guess(np.array([[10.0, 20.0, 3.0]]), fix_height=1.5)
        assert np.allclose(guess[:2], [10.0, 20.0])

    def test_rsrp_weighting_pulls_guess(self):
        anchors = np.array([[0, 0, 3], [100, 0, 3]], dtype=float)
        guess = init_guess(anchors, rsrp_dbm=[-60.0, -90.0], fix_height=1.5)
        assert guess[0] < 10.0  # pulled toward the strong anchor

    def test_height_fallback(self):
        anchors = square_anchors(z=10.0)
        guess = init_guess(anchors, fix_height=None)
        assert guess[2] == pytest.approx(8.5)


class TestGridOracle:
    """Solver residual never exceeds the best exhaustive grid point."""

    @staticmethod
    def objective_tdoa(anchors, _ref, meas, pts, ref_anchor):
        d = np.linalg.norm(pts[:, None, :] - anchors[None, :, :2], axis=2)
        d_ref = np.linalg.norm(pts - ref_anchor[:2], axis=1)
        res = (d - d_ref[:, None]) - meas[None, :]
        return (res**2).sum(axis=1)

    def test_tdoa_oracle_small(self):
        rng = np.random.default_rng(12)
        anchors = random_anchors(rng, n=5, z=1.5)
        ue = np.array([5.0, -8.0, 1.5])
        meas = exact_rstd(anchors, 0, ue)
        noisy = [(i, r, m + rng.normal(0, 1.0)) for i, r, m in meas]
        fix = tdoa_solve(anchors, noisy, OPT2D)
        xs = np.arange(-30, 30.01, 0.1)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        used = anchors[[i for i, _, _ in noisy]]
        vals = self.objective_tdoa(
            used, slice(None), np.array([m for _, _, m in noisy]), pts, anchors[0]
        )
        assert fix.objective <= vals.min() + 1e-9
