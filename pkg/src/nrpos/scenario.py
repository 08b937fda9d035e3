"""Evaluation deployments: urban macro / urban micro hexagonal grids and the
indoor open-office hall, UE drops, comb-offset assignment and the anchor
convex hull.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import substream

UE_HEIGHT_M = 1.5

# Per-scenario defaults: (isd_m, n_trps, tx_power_dbm, trp_height_m,
# area side(s) m, carrier_hz).
SCENARIO_DEFAULTS = {
    "uma": dict(isd=500.0, n_trps=21, tx_power_dbm=49.0, area=(1600.0, 1600.0), carrier_hz=2e9),
    "umi": dict(isd=200.0, n_trps=21, tx_power_dbm=42.0, area=(500.0, 500.0), carrier_hz=2e9),
    "ioo": dict(isd=20.0, n_trps=12, tx_power_dbm=23.0, area=(120.0, 50.0), carrier_hz=2e9),
}

TRP_HEIGHTS = {"uma": (20.0, 50.0), "umi": (10.0, 10.0), "ioo": (3.0, 3.0)}

SECTOR_AZIMUTHS_DEG = (0.0, 120.0, 240.0)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class AntennaArray:
    """Uniform rectangular array in the horizontal plane."""

    rows: int = 1
    cols: int = 1
    spacing_wavelengths: float = 0.5
    boresight_azimuth_deg: float = 0.0
    boresight_zenith_deg: float = 90.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise GeometryError("array needs rows, cols >= 1")

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Trp:
    """One transmission/reception point."""

    trp_id: int
    position: tuple[float, float, float]
    sector_azimuth_deg: float = 0.0
    tx_power_dbm: float = 23.0
    array: AntennaArray = field(default_factory=AntennaArray)
    comb_offset: int = 0

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.position[:2])


@dataclass(frozen=True)
class Deployment:
    scenario: str
    trps: tuple[Trp, ...]
    area: tuple[float, float]
    isd: float
    carrier_hz: float

    def trp_positions(self) -> np.ndarray:
        return np.array([t.position for t in self.trps])

    def with_trps(self, trps) -> "Deployment":
        return Deployment(self.scenario, tuple(trps), self.area, self.isd, self.carrier_hz)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "area": list(self.area),
            "isd": self.isd,
            "carrier_hz": self.carrier_hz,
            "trps": [
                {
                    "trp_id": t.trp_id,
                    "position": list(t.position),
                    "sector_azimuth_deg": t.sector_azimuth_deg,
                    "tx_power_dbm": t.tx_power_dbm,
                    "array": {
                        "rows": t.array.rows,
                        "cols": t.array.cols,
                        "spacing_wavelengths": t.array.spacing_wavelengths,
                    },
                    "comb_offset": t.comb_offset,
                }
                for t in self.trps
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Deployment":
        trps = tuple(
            Trp(
                trp_id=td["trp_id"],
                position=tuple(td["position"]),
                sector_azimuth_deg=td.get("sector_azimuth_deg", 0.0),
                tx_power_dbm=td.get("tx_power_dbm", 23.0),
                array=AntennaArray(**td.get("array", {})),
                comb_offset=td.get("comb_offset", 0),
            )
            for td in doc["trps"]
        )
        return cls(
            scenario=doc["scenario"],
            trps=trps,
            area=tuple(doc["area"]),
            isd=doc["isd"],
            carrier_hz=doc["carrier_hz"],
        )


def hex_site_centers(isd: float) -> np.ndarray:
    """Center site plus the six first-ring neighbors at distance isd."""
    centers = [(0.0, 0.0)]
    for i in range(6):
        ang = math.radians(60.0 * i)
        centers.append((isd * math.cos(ang), isd * math.sin(ang)))
    return np.array(centers)


def hex_layout(
    isd: float,
    sectors_per_site: int = 3,
    tx_power_dbm: float = 49.0,
    height_range: tuple[float, float] = (25.0, 25.0),
    seed: int = 0,
) -> list[Trp]:
    """Seven-site hexagonal deployment with co-located sector TRPs.

    Site heights are drawn uniformly from height_range, one draw per site
    shared by its sectors.
    """
    if isd <= 0:
        raise GeometryError("isd must be positive")
    rng = substream(seed, "deploy")
    trps = []
    for site_idx, (x, y) in enumerate(hex_site_centers(isd)):
        h = float(rng.uniform(*height_range)) if height_range[0] < height_range[1] else height_range[0]
        for s in range(sectors_per_site):
            trps.append(
                Trp(
                    trp_id=site_idx * sectors_per_site + s,
                    position=(float(x), float(y), h),
                    sector_azimuth_deg=SECTOR_AZIMUTHS_DEG[s % 3],
                    tx_power_dbm=tx_power_dbm,
                )
            )
    return trps


def ioo_layout(tx_power_dbm: float = 23.0) -> list[Trp]:
    """Twelve ceiling anchors on a 6x2 grid in the 120 m x 50 m hall."""
    trps = []
    xs = [10.0, 30.0, 50.0, 70.0, 90.0, 110.0]
    ys = [15.0, 35.0]
    trp_id = 0
    for y in ys:
        for x in xs:
            trps.append(
                Trp(trp_id=trp_id, position=(x, y, 3.0), tx_power_dbm=tx_power_dbm)
            )
            trp_id += 1
    return trps


def build_deployment(
    scenario: str,
    seed: int = 0,
    tx_power_dbm: float | None = None,
    carrier_hz: float | None = None,
    array: AntennaArray | None = None,
) -> Deployment:
    """Deployment with the agreed per-scenario constants."""
    scenario = scenario.lower()
    if scenario not in SCENARIO_DEFAULTS:
        raise GeometryError(f"unknown scenario {scenario!r}")
    defaults = SCENARIO_DEFAULTS[scenario]
    power = defaults["tx_power_dbm"] if tx_power_dbm is None else tx_power_dbm
    if scenario == "ioo":
        trps = ioo_layout(tx_power_dbm=power)
    else:
        trps = hex_layout(
            defaults["isd"],
            tx_power_dbm=power,
            height_range=TRP_HEIGHTS[scenario],
            seed=seed,
        )
    if array is not None:
        trps = [
            Trp(t.trp_id, t.position, t.sector_azimuth_deg, t.tx_power_dbm, array, t.comb_offset)
            for t in trps
        ]
    return Deployment(
        scenario=scenario,
        trps=tuple(trps),
        area=defaults["area"],
        isd=defaults["isd"],
        carrier_hz=defaults["carrier_hz"] if carrier_hz is None else carrier_hz,
    )


def _in_hexagon(p: np.ndarray, center: np.ndarray, circumradius: float) -> bool:
    # pointy-top regular hexagon membership
    q = np.abs(p - center) / circumradius
    return q[1] <= math.sqrt(3) / 2 and q[1] <= math.sqrt(3) * (1 - q[0])


def in_coverage(p, deployment: Deployment) -> bool:
    """True if p lies in the hexagonal coverage of a 7-site layout (or the
    full rectangle for the indoor hall)."""
    p = np.asarray(p, dtype=float)[:2]
    if deployment.scenario == "ioo":
        w, h = deployment.area
        return 0 <= p[0] <= w and 0 <= p[1] <= h
    r = deployment.isd / math.sqrt(3)
    sites = np.unique(np.round(deployment.trp_positions()[:, :2], 6), axis=0)
    return any(_in_hexagon(p, c, r) for c in sites)


def drop_ues(
    n: int, deployment: Deployment, rng_seed: int, full_area: bool = False
) -> np.ndarray:
    """n uniform UE positions at 1.5 m height, deterministic in the seed.

    Hex scenarios sample inside the hexagonal coverage by default to avoid
    edge artifacts; full_area=True samples the whole stated rectangle.
    The indoor hall always uses its full rectangle.
    """
    if n < 1:
        raise GeometryError("need n >= 1")
    rng = substream(rng_seed, "drop")
    w, h = deployment.area
    if deployment.scenario == "ioo":
        xy = rng.uniform([0.0, 0.0], [w, h], size=(n, 2))
    else:
        # area rectangle centered on the layout origin
        lo, hi = np.array([-w / 2, -h / 2]), np.array([w / 2, h / 2])
        if full_area:
            xy = rng.uniform(lo, hi, size=(n, 2))
        else:
            pts = []
            while len(pts) < n:
                cand = rng.uniform(lo, hi, size=(4 * (n - len(pts)), 2))
                for p in cand:
                    if in_coverage(p, deployment):
                        pts.append(p)
                        if len(pts) == n:
                            break
            xy = np.array(pts)
    return np.column_stack([xy, np.full(n, UE_HEIGHT_M)])


def convex_hull(points) -> np.ndarray:
    """Planar convex hull by the monotone chain, counter-clockwise."""
    pts = np.unique(np.asarray(points, dtype=float)[:, :2], axis=0)
    if len(pts) < 3:
        raise GeometryError("hull needs >= 3 distinct points")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise GeometryError("degenerate (collinear) input")
    return hull


def point_in_hull(p, hull: np.ndarray, tol: float = 1e-9) -> bool:
    """True for interior and boundary points of a CCW hull polygon."""
    p = np.asarray(p, dtype=float)[:2]
    n = len(hull)
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross < -tol:
            return False
    return True


def assign_comb_offsets(deployment: Deployment, comb_size: int) -> Deployment:
    """Give TRP i comb offset i mod comb_size.

    With 12 anchors and comb-12 every offset is distinct; with 21 TRPs nine
    offsets end up shared by two TRPs, which is where downlink interference
    comes from.
    """
    if comb_size not in (2, 4, 6, 12):
        raise GeometryError(f"comb size {comb_size} not in {{2,4,6,12}}")
    trps = [
        Trp(
            t.trp_id,
            t.position,
            t.sector_azimuth_deg,
            t.tx_power_dbm,
            t.array,
            t.trp_id % comb_size,
        )
        for t in deployment.trps
    ]
    return deployment.with_trps(trps)
