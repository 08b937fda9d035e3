"""Standardized positioning measurements from received grids: first-path
arrival times, time differences, Rx-Tx intervals, received powers and
arrival angles, plus the integer reporting quantization applied to all
timing and power values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .numerology import Numerology, ResourceGrid, TC_SECONDS
from .scenario import AntennaArray

TIMING_RANGE_TC = 985024
POWER_RANGE_DBM = (-156, -31)
K_RANGE = {"fr1": (2, 5), "fr2": (0, 5)}
MAX_SAMPLES = 4

# first-path picker defaults: earliest local peak within this many dB of
# the strongest one and above the noise multiple
FIRST_PATH_REL_DB = 13.0
NOISE_SIGMA_MULT = 6.0


class MeasurementFailed(RuntimeError):
    """Raised when a measurement could not be formed (as opposed to being bad)."""


@dataclass(frozen=True)
class TimingReport:
    """Quantized timing value: an integer number of basic time units."""

    value_tc: int
    k: int
    fr: str = "fr1"
    clamped: bool = False

    def __post_init__(self):
        lo, hi = K_RANGE[self.fr]
        if not lo <= self.k <= hi:
            raise ValueError(f"k={self.k} illegal for {self.fr} (range {lo}..{hi})")
        if abs(self.value_tc) > TIMING_RANGE_TC:
            raise ValueError("timing value outside reporting range")
        if self.value_tc % (1 << self.k) != 0:
            raise ValueError("timing value not aligned to the 2^k step")

    @property
    def seconds(self) -> float:
        return self.value_tc * TC_SECONDS


@dataclass(frozen=True)
class PowerReport:
    value_dbm: int
    clamped: bool = False

    def __post_init__(self):
        if not POWER_RANGE_DBM[0] <= self.value_dbm <= POWER_RANGE_DBM[1]:
            raise ValueError("power value outside reporting range")


def quantize_timing(t_seconds: float, k: int, fr: str = "fr1") -> TimingReport:
    """Round to the 2^k * Tc grid and clamp to the reporting range."""
    lo, hi = K_RANGE[fr]
    if not lo <= k <= hi:
        raise ValueError(f"k={k} illegal for {fr} (range {lo}..{hi})")
    step = (1 << k) * TC_SECONDS
    steps = int(round(t_seconds / step))
    value = steps * (1 << k)
    clamped = False
    if value > TIMING_RANGE_TC:
        value, clamped = TIMING_RANGE_TC, True
    elif value < -TIMING_RANGE_TC:
        value, clamped = -TIMING_RANGE_TC, True
    return TimingReport(value_tc=value, k=k, fr=fr, clamped=clamped)


def dequantize_timing(report: TimingReport) -> float:
    return report.seconds


def quantize_power(p_dbm: float) -> PowerReport:
    value = int(np.round(p_dbm))
    clamped = False
    if value < POWER_RANGE_DBM[0]:
        value, clamped = POWER_RANGE_DBM[0], True
    elif value > POWER_RANGE_DBM[1]:
        value, clamped = POWER_RANGE_DBM[1], True
    return PowerReport(value_dbm=value, clamped=clamped)


def aggregate_samples(samples) -> float:
    """Mean of at most four measurement samples."""
    if not 1 <= len(samples) <= MAX_SAMPLES:
        raise ValueError(f"need 1..{MAX_SAMPLES} samples, got {len(samples)}")
    return float(np.mean(samples))


def despread(rx_grid: ResourceGrid, reference) -> np.ndarray:
    """Per-subcarrier channel estimate from the reference's REs.

    `reference` is a list of (subcarrier indices, symbol, values). REs
    sounded in several symbols are combined coherently (the channel is
    static within a slot).
    """
    acc = np.zeros(rx_grid.subcarriers, dtype=complex)
    for k_idx, sym, values in reference:
        acc[k_idx] += rx_grid.cells[k_idx, sym] * np.conj(values)
    return acc


def _refine_peak(mag: np.ndarray, idx: int) -> float:
    """3-point parabolic vertex around mag[idx] (circular), in bins."""
    n = len(mag)
    a, b, c = mag[(idx - 1) % n], mag[idx], mag[(idx + 1) % n]
    denom = a - 2 * b + c
    if denom == 0:
        return float(idx)
    return idx + 0.5 * (a - c) / denom


def _polish_peak(despread_vec: np.ndarray, scs_hz: float, tau0: float, span: float) -> float:
    """Newton maximization of |sum_k D_k e^{2j pi k f tau}|^2 near tau0.

    Stays within +-span of the parabolic estimate; returns tau0 unchanged
    if the local curvature does not look like a maximum.
    """
    k = np.arange(len(despread_vec))
    omega = 2j * np.pi * k * scs_hz
    tau = tau0
    for _ in range(4):
        e = np.exp(omega * tau)
        c0 = np.dot(despread_vec, e)
        c1 = np.dot(despread_vec, omega * e)
        c2 = np.dot(despread_vec, omega**2 * e)
        g = 2.0 * np.real(c1 * np.conj(c0))
        h = 2.0 * np.real(c2 * np.conj(c0)) + 2.0 * np.abs(c1) ** 2
        if h >= 0:
            return tau0
        step = -g / h
        if not np.isfinite(step) or abs(tau + step - tau0) > span:
            return tau0 if abs(tau - tau0) > span else tau
        tau += step
        if abs(step) < 1e-16:
            break
    return float(tau)


def estimate_toa(
    rx_grid: ResourceGrid,
    reference,
    numerology: Numerology,
    search_window_s: tuple[float, float],
    pad_factor: int = 8,
    first_path_rel_db: float = FIRST_PATH_REL_DB,
    noise_sigma_mult: float = NOISE_SIGMA_MULT,
    polish: bool = True,
    taper: bool = True,
) -> float:
    """First-significant-path delay of the reference signal, in seconds.

    Matched filter in the frequency domain: despread the reference REs,
    inverse-transform to the delay domain, pick the earliest local peak
    within `first_path_rel_db` of the strongest one and above the noise
    floor, then refine with a 3-point parabola (plus a short local
    maximization of the continuous correlation when polish is set).

    The despread spectrum is tapered by default so that correlation
    sidelobes (-13.3 dB untapered, right at the first-path cut) cannot be
    mistaken for early paths; tapering a symmetric spectrum does not move
    the peak of an isolated path.

    Raises MeasurementFailed when nothing rises above the noise floor.
    """
    vec = despread(rx_grid, reference)
    return estimate_toa_from_vector(
        vec, numerology, search_window_s, pad_factor=pad_factor,
        first_path_rel_db=first_path_rel_db, noise_sigma_mult=noise_sigma_mult,
        polish=polish, taper=taper,
    )


def taper_vector(vec: np.ndarray) -> np.ndarray:
    n = len(vec)
    k = np.arange(n)
    return vec * (0.54 - 0.46 * np.cos(2 * np.pi * k / (n - 1)))


def delay_spectrum_size(n_sc: int, pad_factor: int) -> int:
    m = 1
    while m < n_sc:
        m *= 2
    return m * pad_factor


def first_path_from_magnitude(
    mag: np.ndarray,
    m: int,
    scs_hz: float,
    search_window_s: tuple[float, float],
    first_path_rel_db: float = FIRST_PATH_REL_DB,
    noise_sigma_mult: float = NOISE_SIGMA_MULT,
) -> tuple[float, float]:
    """Coarse first-path delay from a delay-domain magnitude.

    Returns (tau_seconds, bin_seconds). Raises MeasurementFailed when no
    bin in the window rises above the noise floor.
    """
    bin_s = 1.0 / (m * scs_hz)
    lo_bin = int(np.floor(search_window_s[0] / bin_s))
    hi_bin = int(np.ceil(search_window_s[1] / bin_s))
    if hi_bin <= lo_bin:
        raise ValueError("empty search window")
    idx = np.arange(lo_bin, hi_bin + 1)
    wmag = mag[idx % m]

    peak_val = float(wmag.max())
    # Rayleigh-magnitude noise floor from the window median; the signal
    # occupies a tiny fraction of the bins so the median is noise-dominated
    noise_rms = float(np.median(wmag)) / 0.8326
    threshold = max(
        peak_val * 10 ** (-first_path_rel_db / 20.0),
        noise_sigma_mult * noise_rms,
    )
    if peak_val < noise_sigma_mult * noise_rms or peak_val == 0.0:
        raise MeasurementFailed("no peak above the noise floor")

    left = np.roll(wmag, 1)
    right = np.roll(wmag, -1)
    local_max = (wmag >= left) & (wmag >= right)
    local_max[0] = local_max[-1] = False
    candidates = np.nonzero(local_max & (wmag >= threshold))[0]
    first = int(candidates[0]) if len(candidates) else int(np.argmax(wmag))

    frac_bin = _refine_peak(wmag, first)
    return (lo_bin + frac_bin) * bin_s, bin_s


def estimate_toa_from_vector(
    vec: np.ndarray,
    numerology: Numerology,
    search_window_s: tuple[float, float],
    pad_factor: int = 8,
    first_path_rel_db: float = FIRST_PATH_REL_DB,
    noise_sigma_mult: float = NOISE_SIGMA_MULT,
    polish: bool = True,
    taper: bool = True,
) -> float:
    """estimate_toa on an already-despread per-subcarrier vector."""
    if taper:
        vec = taper_vector(vec)
    m = delay_spectrum_size(len(vec), pad_factor)
    scs_hz = numerology.scs_khz * 1e3
    mag = np.abs(np.fft.ifft(vec, m))
    tau, bin_s = first_path_from_magnitude(
        mag, m, scs_hz, search_window_s,
        first_path_rel_db=first_path_rel_db, noise_sigma_mult=noise_sigma_mult,
    )
    if polish:
        tau = _polish_peak(vec, scs_hz, tau, span=bin_s)
    return float(tau)


def rstd(toa_target_s: float, toa_reference_s: float) -> float:
    """Time difference of arrival; the common receiver clock term cancels."""
    return toa_target_s - toa_reference_s


def rx_tx_difference(rx_toa_s: float, tx_time_s: float) -> float:
    """Interval between a received and a transmitted event, one local clock."""
    return rx_toa_s - tx_time_s


def rtt(ue_rxtx_s: float, gnb_rxtx_s: float) -> tuple[float, bool]:
    """Round-trip time from the two one-sided intervals.

    Inter-node clock offsets cancel in the sum. Noise can push the sum
    negative; it is clamped to zero with a flag.
    """
    total = ue_rxtx_s + gnb_rxtx_s
    if total < 0:
        return 0.0, True
    return total, False


def rsrp(rx_grid: ResourceGrid, reference) -> float:
    """Mean per-RE received power over the reference REs, in dBm."""
    total, count = 0.0, 0
    for k_idx, sym, _values in reference:
        total += float(np.sum(np.abs(rx_grid.cells[k_idx, sym]) ** 2))
        count += len(k_idx)
    if count == 0:
        raise MeasurementFailed("empty RE set")
    return 10.0 * math.log10(total / count)


# --- angle of arrival -------------------------------------------------------


def array_element_positions(array: AntennaArray) -> np.ndarray:
    """Element xy offsets in wavelengths, centered on the array phase center."""
    r = np.arange(array.rows) - (array.rows - 1) / 2
    c = np.arange(array.cols) - (array.cols - 1) / 2
    xx, yy = np.meshgrid(c, r)
    return np.column_stack([xx.ravel(), yy.ravel()]) * array.spacing_wavelengths


def steering_vector(array: AntennaArray, azimuth_deg, zenith_deg) -> np.ndarray:
    """Plane-wave phase per element for arrival from (azimuth, zenith)."""
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=float))
    zen = np.deg2rad(np.asarray(zenith_deg, dtype=float))
    u = np.sin(zen) * np.cos(az)
    v = np.sin(zen) * np.sin(az)
    pos = array_element_positions(array)
    phase = 2 * np.pi * (np.outer(pos[:, 0], np.atleast_1d(u)) + np.outer(pos[:, 1], np.atleast_1d(v)))
    sv = np.exp(1j * phase)
    return sv[:, 0] if np.isscalar(azimuth_deg) and np.isscalar(zenith_deg) else sv


class BeamformerGrid:
    """Precomputed steering grid for conventional beamforming on one array.

    A horizontal array cannot distinguish a zenith angle from its mirror
    about the horizon, so the scan covers only the lower half-space where
    terminals live.
    """

    def __init__(self, array: AntennaArray, az_step_deg: float = 1.0,
                 zen_range_deg: tuple[float, float] = (90.0, 150.0),
                 zen_step_deg: float = 1.0):
        self.array = array
        self.az_grid = np.arange(-180.0, 180.0, az_step_deg)
        self.zen_grid = np.arange(zen_range_deg[0], zen_range_deg[1] + 1e-9, zen_step_deg)
        azs, zens = np.meshgrid(self.az_grid, self.zen_grid, indexing="ij")
        self._steering = steering_vector(self.array, azs.ravel(), zens.ravel())
        self._shape = azs.shape

    def spectrum(self, snapshots: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(snapshots.T).T  # (elements, snapshots)
        proj = self._steering.conj().T @ x
        return (np.abs(proj) ** 2).sum(axis=1).reshape(self._shape)


def _quad_refine(values: np.ndarray, i: int, grid: np.ndarray, circular: bool) -> float:
    n = len(grid)
    if not circular and (i == 0 or i == n - 1):
        return float(grid[i])
    a, b, c = values[(i - 1) % n], values[i], values[(i + 1) % n]
    denom = a - 2 * b + c
    step = grid[1] - grid[0]
    if denom == 0:
        return float(grid[i])
    return float(grid[i] + 0.5 * (a - c) / denom * step)


def estimate_aoa(snapshots: np.ndarray, array: AntennaArray,
                 grid: BeamformerGrid | None = None) -> tuple[float, float]:
    """Conventional-beamforming arrival angles (azimuth, zenith) in degrees.

    Scans a 1-degree steering grid, takes the peak and refines both axes
    with a local quadratic fit.
    """
    snapshots = np.asarray(snapshots)
    if snapshots.ndim == 1:
        snapshots = snapshots[:, None]
    if snapshots.shape[0] != array.n_elements:
        raise ValueError("snapshot rows must equal the element count")
    if array.n_elements < 2:
        raise ValueError("need at least 2 elements")
    if not np.any(np.abs(snapshots) > 0):
        raise MeasurementFailed("rank-deficient (all-zero) snapshots")
    if grid is None:
        grid = BeamformerGrid(array)
    spec = grid.spectrum(snapshots)
    i, j = np.unravel_index(int(np.argmax(spec)), spec.shape)
    az = _quad_refine(spec[:, j], int(i), grid.az_grid, circular=True)
    zen = _quad_refine(spec[i, :], int(j), grid.zen_grid, circular=False)
    az = (az + 180.0) % 360.0 - 180.0
    return float(az), float(zen)


# --- measurement records ----------------------------------------------------

RECORD_KINDS = ("RSTD", "UE_RXTX", "GNB_RXTX", "UL_RTOA", "PRS_RSRP", "SRS_RSRP", "AOA")

_BEAM_KINDS = ("RSTD", "PRS_RSRP")


@dataclass(frozen=True)
class MeasurementRecord:
    """One reported measurement with its quantized and raw payloads."""

    kind: str
    trp_id: int
    payload: dict
    resource_id: int | None = None
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        if self.kind in _BEAM_KINDS and self.resource_id is None:
            raise ValueError(f"{self.kind} reports need a resource (beam) id")

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "trp_id": self.trp_id,
            "resource_id": self.resource_id,
            "payload": self.payload,
            "raw": self.raw,
        }
        return json.dumps(doc, sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "MeasurementRecord":
        doc = json.loads(line)
        return cls(
            kind=doc["kind"],
            trp_id=doc["trp_id"],
            payload=doc["payload"],
            resource_id=doc.get("resource_id"),
            raw=doc.get("raw", {}),
        )


def write_records(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path) -> list[MeasurementRecord]:
    with open(path) as fh:
        return [MeasurementRecord.from_json(line) for line in fh if line.strip()]


def timing_record(kind: str, trp_id: int, t_seconds: float, k: int, fr: str,
                  resource_id: int | None = None, extra: dict | None = None) -> MeasurementRecord:
    report = quantize_timing(t_seconds, k, fr)
    payload = {"value_tc": report.value_tc, "k": report.k, "fr": report.fr,
               "clamped": report.clamped}
    if extra:
        payload.update(extra)
    return MeasurementRecord(kind=kind, trp_id=trp_id, resource_id=resource_id,
                             payload=payload, raw={"seconds": t_seconds})


def record_seconds(record: MeasurementRecord) -> float:
    """Dequantized timing value of a timing record."""
    p = record.payload
    return TimingReport(value_tc=p["value_tc"], k=p["k"], fr=p["fr"]).seconds
