"""Per-link propagation: LOS state, log-distance path loss with shadow
fading, a short exponential tap profile, and comb-aware accumulation of
transmitted grids into one received grid.

Power bookkeeping: a TRP's configured power is the total per-symbol
transmit power, split evenly over the occupied subcarriers of a symbol.
Grid amplitudes are in sqrt(mW), so 10*log10(|cell|^2) is a dBm value.

The parameter defaults follow the usual urban-macro / urban-micro / indoor
open-office curve shapes but are plain numbers here; this is explicitly a
simplified stand-in for a full stochastic geometry channel, not a
reimplementation of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .numerology import Numerology, ResourceGrid, GridError, SPEED_OF_LIGHT


@dataclass(frozen=True)
class PathLossLaw:
    """intercept + slope*log10(d_3d_m) + freq_coeff*log10(f_GHz), sigma in dB."""

    intercept_db: float
    slope_db: float
    freq_coeff_db: float
    shadow_sigma_db: float

    def at(self, d3d_m: float, carrier_hz: float) -> float:
        return (
            self.intercept_db
            + self.slope_db * math.log10(max(d3d_m, 1.0))
            + self.freq_coeff_db * math.log10(carrier_hz / 1e9)
        )


@dataclass(frozen=True)
class ChannelParams:
    """Scenario channel knobs. All values are plain configuration numbers."""

    los: PathLossLaw
    nlos: PathLossLaw
    # LOS probability curve: "outdoor" uses min(1, d0/d) + exp(-d/d1)*(1-d0/d);
    # "indoor" is 1 up to los_d0, exp(-(d-los_d0)/los_d1) up to los_d2, then
    # los_scale*exp(-(d-los_d2)/los_d3).
    los_model: str = "outdoor"
    los_d0: float = 18.0
    los_d1: float = 63.0
    los_d2: float = 0.0
    los_d3: float = 1.0
    los_scale: float = 1.0
    # fast fading: n_taps spaced one sample apart, powers decaying as
    # exp(-i*Ts/tap_decay_s); LOS puts a fixed-amplitude component of
    # los_k_db (Rician K) on the first tap
    n_taps: int = 6
    tap_decay_s: float = 30e-9
    los_k_db: float = 13.0
    # NLOS first-path excess delay, exponential with this mean
    nlos_excess_mean_s: float = 100e-9
    # sector antenna: parabolic azimuth pattern, half-power beamwidth and
    # front-to-back floor; omni disables it
    sector_max_gain_db: float = 8.0
    sector_hpbw_deg: float = 65.0
    sector_front_back_db: float = 30.0
    omni: bool = False
    # overrides used by controlled experiments
    force_los: bool = False
    ideal: bool = False  # LOS, single tap, no shadow fading

    def overridden(self, **kwargs) -> "ChannelParams":
        return replace(self, **kwargs)


CHANNEL_DEFAULTS = {
    "uma": ChannelParams(
        los=PathLossLaw(28.0, 22.0, 20.0, 4.0),
        nlos=PathLossLaw(13.54, 39.08, 20.0, 6.0),
        los_model="outdoor",
        los_d0=18.0,
        los_d1=63.0,
        nlos_excess_mean_s=100e-9,
        omni=False,
    ),
    "umi": ChannelParams(
        los=PathLossLaw(32.4, 21.0, 20.0, 4.0),
        nlos=PathLossLaw(22.4, 35.3, 21.3, 7.82),
        los_model="outdoor",
        los_d0=18.0,
        los_d1=36.0,
        nlos_excess_mean_s=100e-9,
        omni=False,
    ),
    "ioo": ChannelParams(
        los=PathLossLaw(32.4, 17.3, 20.0, 3.0),
        nlos=PathLossLaw(17.3, 38.3, 24.9, 8.03),
        los_model="indoor",
        los_d0=5.0,
        los_d1=70.8,
        los_d2=49.0,
        los_d3=211.7,
        los_scale=0.54,
        nlos_excess_mean_s=30e-9,
        tap_decay_s=10e-9,
        omni=True,
        sector_max_gain_db=0.0,
    ),
}


@dataclass(frozen=True)
class NoiseModel:
    """Thermal noise floor for a receiver: -174 dBm/Hz + noise figure."""

    noise_figure_db: float
    bandwidth_hz: float

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def thermal_dbm(self) -> float:
        return -174.0 + 10.0 * math.log10(self.bandwidth_hz) + self.noise_figure_db

    def power_dbm(self, bandwidth_hz: float) -> float:
        if bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        return -174.0 + 10.0 * math.log10(bandwidth_hz) + self.noise_figure_db


@dataclass(frozen=True)
class LinkRealization:
    """One TRP-UE propagation draw."""

    los: bool
    path_loss_db: float
    shadow_db: float
    taps: tuple[tuple[float, complex], ...]  # (delay_s, gain), sorted
    first_path_excess_s: float
    aoa_true: tuple[float, float]  # azimuth, zenith at the TRP, degrees
    aod_true: tuple[float, float]
    antenna_gain_db: float = 0.0
    distance_m: float = 0.0

    @property
    def first_path_delay_s(self) -> float:
        return self.taps[0][0]


def los_probability(params: ChannelParams, d2d_m: float) -> float:
    if params.force_los or params.ideal:
        return 1.0
    if params.los_model == "outdoor":
        if d2d_m <= params.los_d0:
            return 1.0
        frac = params.los_d0 / d2d_m
        return frac + math.exp(-d2d_m / params.los_d1) * (1.0 - frac)
    if params.los_model == "indoor":
        if d2d_m <= params.los_d0:
            return 1.0
        if d2d_m <= params.los_d2:
            return math.exp(-(d2d_m - params.los_d0) / params.los_d1)
        return params.los_scale * math.exp(-(d2d_m - params.los_d2) / params.los_d3)
    raise ValueError(f"unknown LOS model {params.los_model!r}")


def sector_gain_db(params: ChannelParams, delta_azimuth_deg: float) -> float:
    """Parabolic azimuth pattern with a front-to-back floor."""
    if params.omni:
        return 0.0
    d = (delta_azimuth_deg + 180.0) % 360.0 - 180.0
    atten = min(12.0 * (d / params.sector_hpbw_deg) ** 2, params.sector_front_back_db)
    return params.sector_max_gain_db - atten


def _angles_from_to(src: np.ndarray, dst: np.ndarray) -> tuple[float, float]:
    v = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    az = math.degrees(math.atan2(v[1], v[0]))
    d3 = float(np.linalg.norm(v))
    zen = math.degrees(math.acos(np.clip(v[2] / d3, -1.0, 1.0)))
    return az, zen


def realize_link(rng: np.random.Generator, params: ChannelParams, trp, ue_pos,
                 sample_period_s: float) -> LinkRealization:
    """Draw LOS state, path loss, shadow and taps for one TRP-UE link.

    `sample_period_s` sets the tap spacing (one receiver sample).
    """
    trp_pos = np.asarray(trp.position, dtype=float)
    ue = np.asarray(ue_pos, dtype=float)
    d3 = float(np.linalg.norm(ue - trp_pos))
    if d3 <= 0:
        raise ValueError("zero TRP-UE distance")
    d2 = float(np.linalg.norm((ue - trp_pos)[:2]))

    los = bool(rng.uniform() < los_probability(params, d2))

    # angles at the TRP (arrival of uplink == departure of downlink here)
    az, zen = _angles_from_to(trp_pos, ue)
    if not los and not params.ideal:
        az += float(rng.normal(0.0, 15.0))
        zen += float(rng.normal(0.0, 3.0))
    tau0 = d3 / SPEED_OF_LIGHT
    excess = 0.0
    if not los and not params.ideal:
        excess = float(rng.exponential(params.nlos_excess_mean_s))

    n_taps = 1 if params.ideal else params.n_taps
    powers = np.exp(-np.arange(n_taps) * sample_period_s / params.tap_decay_s)
    powers /= powers.sum()
    if params.ideal:
        gains = np.array([1.0 + 0j])
    elif los:
        k_lin = 10 ** (params.los_k_db / 10.0)
        scatter = powers / (k_lin + 1.0)
        gains = (rng.normal(size=n_taps) + 1j * rng.normal(size=n_taps)) * np.sqrt(scatter / 2.0)
        gains[0] += np.sqrt(k_lin / (k_lin + 1.0)) * np.exp(2j * np.pi * rng.uniform())
    else:
        gains = (rng.normal(size=n_taps) + 1j * rng.normal(size=n_taps)) * np.sqrt(powers / 2.0)

    delays = tau0 + excess + np.arange(n_taps) * sample_period_s
    shadow = 0.0
    law = params.los if los else params.nlos
    if not params.ideal:
        shadow = float(rng.normal(0.0, law.shadow_sigma_db))
    return LinkRealization(
        los=los,
        path_loss_db=0.0,  # filled by link_budget with the carrier frequency
        shadow_db=shadow,
        taps=tuple((float(d), complex(g)) for d, g in zip(delays, gains)),
        first_path_excess_s=0.0 if los else excess,
        aoa_true=(az, zen),
        aod_true=(az, zen),
        distance_m=d3,
    )


def with_budget(link: LinkRealization, params: ChannelParams, trp, ue_pos,
                carrier_hz: float) -> LinkRealization:
    """Fill in path loss (at the carrier) and the sector gain toward the UE."""
    law = params.los if link.los else params.nlos
    pl = law.at(link.distance_m, carrier_hz)
    if not link.los:
        pl = max(pl, params.los.at(link.distance_m, carrier_hz))
    az_dep, _ = _angles_from_to(np.asarray(trp.position), np.asarray(ue_pos))
    gain = sector_gain_db(params, az_dep - trp.sector_azimuth_deg)
    return replace(link, path_loss_db=pl, antenna_gain_db=gain)


def realize_budget_link(rng, params: ChannelParams, trp, ue_pos, carrier_hz: float,
                        sample_period_s: float) -> LinkRealization:
    link = realize_link(rng, params, trp, ue_pos, sample_period_s)
    return with_budget(link, params, trp, ue_pos, carrier_hz)


def link_amplitude(link: LinkRealization, tx_power_dbm: float, n_occupied_per_symbol: int) -> float:
    """Per-RE received amplitude in sqrt(mW) for unit grid cells."""
    epre_dbm = (
        tx_power_dbm
        - 10.0 * math.log10(max(n_occupied_per_symbol, 1))
        + link.antenna_gain_db
        - link.path_loss_db
        - link.shadow_db
    )
    return 10.0 ** (epre_dbm / 20.0)


def frequency_response(link: LinkRealization, freqs_hz: np.ndarray,
                       extra_delay_s: float = 0.0) -> np.ndarray:
    """Channel response over the given subcarrier frequencies.

    Applying taps in the frequency domain is exact for delays shorter than
    the cyclic prefix, which holds for every scenario here.
    """
    delays = np.array([t[0] for t in link.taps]) + extra_delay_s
    gains = np.array([t[1] for t in link.taps])
    return (gains[None, :] * np.exp(-2j * np.pi * freqs_hz[:, None] * delays[None, :])).sum(axis=1)


def noise_amplitude(noise: NoiseModel, scs_hz: float) -> float:
    """Per-RE complex noise RMS in sqrt(mW)."""
    return 10.0 ** (noise.power_dbm(scs_hz) / 20.0)


def draw_noise(rng: np.random.Generator, shape, noise: NoiseModel, scs_hz: float) -> np.ndarray:
    sigma = noise_amplitude(noise, scs_hz)
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) * (sigma / np.sqrt(2.0))


def received_grid(tx_grids, noise: NoiseModel | None, numerology: Numerology,
                  rng: np.random.Generator | None = None,
                  noise_grid: np.ndarray | None = None,
                  extra_delays_s=None) -> ResourceGrid:
    """Sum link-filtered transmit grids and add thermal noise.

    tx_grids is a list of (grid, LinkRealization, tx_power_dbm). Each
    contribution is the grid scaled by its link budget and filtered by the
    link frequency response; interference arises exactly where occupied
    REs collide. A pre-drawn noise_grid keeps noise identical across runs
    that differ only in which TRPs transmit.
    """
    if not tx_grids:
        raise ValueError("need at least one transmit grid")
    shape = tx_grids[0][0].cells.shape
    for g, _, _ in tx_grids:
        if g.cells.shape != shape:
            raise GridError("transmit grids must share dimensions")
    freqs = numerology.subcarrier_frequencies_hz(shape[0])
    acc = np.zeros(shape, dtype=complex)
    if extra_delays_s is None:
        extra_delays_s = [0.0] * len(tx_grids)
    for (grid, link, tx_power), extra in zip(tx_grids, extra_delays_s):
        occupied = np.count_nonzero(grid.cells, axis=0)
        n_occ = int(occupied.max())
        if n_occ == 0:
            continue
        amp = link_amplitude(link, tx_power, n_occ)
        h = frequency_response(link, freqs, extra_delay_s=extra)
        acc += grid.cells * (amp * h)[:, None]
    if noise_grid is not None:
        acc += noise_grid
    elif noise is not None:
        if rng is None:
            raise ValueError("rng required to draw noise")
        acc += draw_noise(rng, shape, noise, numerology.scs_khz * 1e3)
    out = ResourceGrid(*shape)
    out.cells[:] = acc
    return out


def snr_at_re(tx_power_dbm: float, antenna_gain_db: float, path_loss_db: float,
              shadow_db: float, noise_figure_db: float, bandwidth_hz: float,
              n_occupied_per_symbol: int = 1) -> float:
    """Per-RE link budget SNR in dB. Bandwidth is the per-RE bandwidth."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    signal = (
        tx_power_dbm
        - 10.0 * math.log10(max(n_occupied_per_symbol, 1))
        + antenna_gain_db
        - path_loss_db
        - shadow_db
    )
    thermal = -174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db
    return signal - thermal
