"""Per-drop simulation pipeline: generate the configured downlink/uplink
signals for a deployment, push them through link realizations onto
received grids, form quantized measurement reports, and solve.

Interference is comb-exact: transmitters sharing a comb offset occupy the
same resource elements and superpose there; distinct offsets never
interact. Receiver noise for a drop is drawn once per stage from a
substream keyed by (master_seed, drop), so runs that differ only in which
transmitters are summed see identical noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    CHANNEL_DEFAULTS,
    ChannelParams,
    NoiseModel,
    link_amplitude,
    noise_amplitude,
    realize_budget_link,
)
from .config import ExperimentConfig
from .measurements import (
    MAX_SAMPLES,
    BeamformerGrid,
    MeasurementFailed,
    MeasurementRecord,
    TC_SECONDS,
    _polish_peak,
    delay_spectrum_size,
    estimate_aoa,
    first_path_from_magnitude,
    quantize_power,
    quantize_timing,
    steering_vector,
    taper_vector,
)
from .numerology import SPEED_OF_LIGHT, Numerology
from .prs import DlPrsResource, SrsPosResource, dl_prs_reference, srs_reference
from .rng import substream
from .scenario import (
    AntennaArray,
    Deployment,
    assign_comb_offsets,
    build_deployment,
    convex_hull,
    drop_ues,
    point_in_hull,
)
from .solvers import (
    SolverError,
    SolverOptions,
    aod_solve,
    aoa_solve,
    gdop,
    init_guess,
    rtt_solve,
    tdoa_solve,
)

UL_METHODS = ("ul-tdoa", "multi-rtt", "ul-aoa")
DL_METHODS = ("dl-tdoa", "multi-rtt", "dl-aod")


@dataclass
class DropOutcome:
    drop_idx: int
    truth: np.ndarray
    fix: object | None
    records: list[MeasurementRecord]
    in_hull: bool | None = None
    gdop: float | None = None
    failure: str | None = None

    @property
    def converged(self) -> bool:
        return self.fix is not None and self.fix.converged

    @property
    def horizontal_error_m(self) -> float:
        if self.fix is None:
            return math.nan
        return float(np.linalg.norm(self.fix.position[:2] - self.truth[:2]))

    @property
    def vertical_error_m(self) -> float:
        if self.fix is None:
            return math.nan
        return float(abs(self.fix.position[2] - self.truth[2]))


def _channel_for(config: ExperimentConfig) -> ChannelParams:
    params = CHANNEL_DEFAULTS[config.scenario]
    overrides = {
        k: v for k, v in config.channel.model_dump().items() if v is not None
    }
    if config.ideal:
        overrides["ideal"] = True
    return params.overridden(**overrides)


class Simulator:
    """Everything reusable across the drops of one experiment run."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.numerology = Numerology(scs_khz=config.scs_khz, n_prb=config.n_prb)
        self.channel = _channel_for(config)
        array = AntennaArray(rows=config.array_rows, cols=config.array_cols)
        deployment = build_deployment(
            config.scenario,
            seed=config.master_seed,
            carrier_hz=config.carrier_hz,
            array=array,
        )
        self.deployment: Deployment = assign_comb_offsets(deployment, config.dl_comb_size)
        self.trps = self.deployment.trps
        self.anchors = self.deployment.trp_positions()
        self.hull = convex_hull(self.anchors)
        self.ues = drop_ues(config.n_drops, self.deployment, config.master_seed,
                            full_area=config.full_area)

        # downlink signal per TRP (one resource each, offset from the TRP)
        self.dl_resources = {
            t.trp_id: DlPrsResource(
                resource_id=t.trp_id,
                seq_id=t.trp_id,
                comb_size=config.dl_comb_size,
                re_offset=t.comb_offset,
                n_symbols=config.dl_n_symbols,
                n_prb=config.n_prb,
            )
            for t in self.trps
        }
        self._dl_ref = {}
        for trp_id, res in self.dl_resources.items():
            triples = dl_prs_reference(res, slot=0)
            k_all = np.concatenate([k for k, _, _ in triples])
            s_all = np.concatenate([np.full(len(k), s) for k, s, _ in triples])
            v_all = np.concatenate([v for _, _, v in triples])
            self._dl_ref[trp_id] = (k_all, s_all, v_all)
        self.dl_occupied_per_symbol = config.n_prb * 12 // config.dl_comb_size

        # uplink sounding signal (single terminal per drop)
        self.srs = SrsPosResource(
            comb_size=config.ul_comb_size,
            comb_offset=0,
            n_symbols=config.ul_n_symbols,
            n_prb=config.n_prb,
        )
        triples = srs_reference(self.srs)
        self._ul_ref = (
            np.concatenate([k for k, _, _ in triples]),
            np.concatenate([np.full(len(k), s) for k, s, _ in triples]),
            np.concatenate([v for _, _, v in triples]),
        )
        self.ul_occupied_per_symbol = config.n_prb * 12 // config.ul_comb_size

        self.dl_noise = NoiseModel(config.dl_noise_figure_db, self.scs_hz)
        self.ul_noise = NoiseModel(config.ul_noise_figure_db, self.scs_hz)
        self._dl_sigma = 0.0 if config.ideal else noise_amplitude(self.dl_noise, self.scs_hz)
        self._ul_sigma = 0.0 if config.ideal else noise_amplitude(self.ul_noise, self.scs_hz)

        self.freqs = self.numerology.subcarrier_frequencies_hz()
        self.sample_period_s = 1.0 / self.numerology.sample_rate_hz
        diag = math.hypot(*self.deployment.area) + self.deployment.isd
        guard = 1e-6 + 6.0 * config.sync_sigma_ns * 1e-9
        self.search_window = (-guard, diag / SPEED_OF_LIGHT + guard)

        # taps sit at fixed one-sample offsets from the first arrival, so the
        # per-link response is one phase ramp times a tap-weighted sum of
        # precomputed ramps
        n_taps = 1 if self.channel.ideal else self.channel.n_taps
        self._tap_ramps = np.exp(
            -2j * np.pi
            * (np.arange(n_taps)[:, None] * self.sample_period_s)
            * self.freqs[None, :]
        )
        self._pad = 4
        self._m = delay_spectrum_size(self.numerology.n_subcarriers, self._pad)
        self._window = taper_vector(np.ones(self.numerology.n_subcarriers))

        w, hgt = self.deployment.area
        area = (0.0, 0.0, w, hgt) if config.scenario == "ioo" else \
            (-w / 2, -hgt / 2, w / 2, hgt / 2)
        self.options = SolverOptions(
            max_iterations=config.solver.max_iterations,
            tolerance_m=config.solver.tolerance_m,
            fix_height=config.solver.fix_height,
            nlos_rejection=config.solver.nlos_rejection,
            area=area,
        )
        self._beamformer: BeamformerGrid | None = None
        self._beam_azimuths = self._make_beam_azimuths()

        # comb-offset interference groups (same offset -> same REs)
        groups: dict[int, list[int]] = {}
        for t in self.trps:
            groups.setdefault(t.comb_offset, []).append(t.trp_id)
        self._offset_group = {
            t.trp_id: groups[t.comb_offset] for t in self.trps
        }

    # -- helpers ----------------------------------------------------------

    @property
    def scs_hz(self) -> float:
        return self.config.scs_khz * 1e3

    def _make_beam_azimuths(self) -> dict[int, np.ndarray]:
        n = self.config.n_beams
        out = {}
        for t in self.trps:
            if self.channel.omni:
                az = t.sector_azimuth_deg + np.arange(n) * (360.0 / n)
            else:
                az = t.sector_azimuth_deg + np.linspace(-52.5, 52.5, n)
            out[t.trp_id] = az
        return out

    def beamformer(self) -> BeamformerGrid:
        if self._beamformer is None:
            self._beamformer = BeamformerGrid(self.trps[0].array)
        return self._beamformer

    def _links(self, drop_idx: int, ue_pos):
        rng = substream(self.config.master_seed, "link", drop_idx)
        return [
            realize_budget_link(rng, self.channel, t, ue_pos,
                                self.deployment.carrier_hz, self.sample_period_s)
            for t in self.trps
        ]

    def _sync_offsets(self, drop_idx: int) -> tuple[np.ndarray, float]:
        """Per-TRP clock offsets plus the terminal clock offset, seconds."""
        sigma = self.config.sync_sigma_ns * 1e-9
        if sigma == 0.0:
            return np.zeros(len(self.trps)), 0.0
        rng = substream(self.config.master_seed, "sync", drop_idx)
        offsets = rng.normal(0.0, sigma, size=len(self.trps))
        ue_offset = float(rng.normal(0.0, sigma))
        return offsets, ue_offset

    def _channel_matrix(self, links, extra_s=None) -> np.ndarray:
        """Frequency response of every link over all subcarriers.

        extra_s shifts each link by an additional delay (clock terms).
        """
        first = np.array([l.taps[0][0] for l in links])
        if extra_s is not None:
            first = first + extra_s
        gains = np.array([[t[1] for t in l.taps] for l in links])
        ramp = np.exp(-2j * np.pi * first[:, None] * self.freqs[None, :])
        return ramp * (gains @ self._tap_ramps)

    def _batched_toa(self, vec_matrix: np.ndarray) -> list[float | None]:
        """First-path delays for a stack of despread vectors (None = failed)."""
        tapered = vec_matrix * self._window[None, :]
        mags = np.abs(np.fft.ifft(tapered, self._m, axis=1))
        out: list[float | None] = []
        for row in range(vec_matrix.shape[0]):
            try:
                tau, bin_s = first_path_from_magnitude(
                    mags[row], self._m, self.scs_hz, self.search_window)
            except MeasurementFailed:
                out.append(None)
                continue
            out.append(float(_polish_peak(tapered[row], self.scs_hz, tau, span=bin_s)))
        return out

    def _timing_payload(self, seconds: float) -> dict:
        cfg = self.config
        if cfg.quantize:
            rep = quantize_timing(seconds, cfg.effective_timing_k, cfg.fr)
            return {"value_tc": rep.value_tc, "k": rep.k, "fr": rep.fr,
                    "clamped": rep.clamped}
        return {"value_tc": seconds / TC_SECONDS, "k": cfg.effective_timing_k,
                "fr": cfg.fr, "clamped": False}

    @staticmethod
    def _payload_seconds(payload: dict) -> float:
        return payload["value_tc"] * TC_SECONDS

    # -- downlink stage ----------------------------------------------------

    def _dl_stage(self, links, trp_clock_s, ue_clock_s, drop_idx):
        """First-path arrival and received power of every TRP's signal.

        Returns ({trp_id: toa_seconds_or_None}, {trp_id: rsrp_dbm}).
        Arrival times are in the terminal clock: propagation + terminal
        offset - transmitter offset.
        """
        cfg = self.config
        position = {t.trp_id: i for i, t in enumerate(self.trps)}
        amps = np.array([
            link_amplitude(l, t.tx_power_dbm, self.dl_occupied_per_symbol)
            for l, t in zip(links, self.trps)
        ])
        h = self._channel_matrix(links, extra_s=ue_clock_s - trp_clock_s)

        n_sc = self.numerology.n_subcarriers
        toas: dict[int, list[float]] = {t.trp_id: [] for t in self.trps}
        rsrp: dict[int, float] = {}
        for sample in range(cfg.n_samples):
            rng = substream(cfg.master_seed, "noise", drop_idx, 0, sample)
            if self._dl_sigma > 0:
                noise = (rng.normal(size=(n_sc, cfg.dl_n_symbols))
                         + 1j * rng.normal(size=(n_sc, cfg.dl_n_symbols)))
                noise *= self._dl_sigma / np.sqrt(2.0)
            else:
                noise = np.zeros((n_sc, cfg.dl_n_symbols), dtype=complex)
            vecs = np.zeros((len(self.trps), n_sc), dtype=complex)
            for i, t in enumerate(self.trps):
                k_idx, s_idx, vals = self._dl_ref[t.trp_id]
                rx = noise[k_idx, s_idx].copy()
                sources = self._offset_group[t.trp_id] if cfg.interference else [t.trp_id]
                for src in sources:
                    _, _, src_vals = self._dl_ref[src]
                    rx += amps[position[src]] * h[position[src], k_idx] * src_vals
                if sample == 0:
                    power = float(np.mean(np.abs(rx) ** 2))
                    rsrp[t.trp_id] = 10.0 * math.log10(power) if power > 0 else -300.0
                # every subcarrier is sounded at least once over the comb sweep
                np.add.at(vecs[i], k_idx, rx * np.conj(vals))
            for i, tau in enumerate(self._batched_toa(vecs)):
                if tau is not None:
                    toas[self.trps[i].trp_id].append(tau)
        toa_out = {
            trp_id: (float(np.mean(vals[:MAX_SAMPLES])) if vals else None)
            for trp_id, vals in toas.items()
        }
        return toa_out, rsrp

    # -- uplink stage ------------------------------------------------------

    def _ul_stage(self, links, trp_clock_s, ue_clock_s, drop_idx):
        """Sounding-signal arrival time and received power at every TRP."""
        cfg = self.config
        k_idx, s_idx, vals = self._ul_ref
        conj_vals = np.conj(vals)
        amps = np.array([
            link_amplitude(l, cfg.ue_tx_power_dbm, self.ul_occupied_per_symbol)
            for l in links
        ])
        h = self._channel_matrix(links, extra_s=trp_clock_s - ue_clock_s)

        rng = substream(cfg.master_seed, "noise", drop_idx, 1)
        n_sc = self.numerology.n_subcarriers
        rsrp: dict[int, float] = {}
        vecs = np.zeros((len(self.trps), n_sc), dtype=complex)
        for i, t in enumerate(self.trps):
            if self._ul_sigma > 0:
                noise = (rng.normal(size=len(k_idx)) + 1j * rng.normal(size=len(k_idx)))
                noise *= self._ul_sigma / np.sqrt(2.0)
            else:
                noise = np.zeros(len(k_idx), dtype=complex)
            rx = amps[i] * h[i, k_idx] * vals + noise
            power = float(np.mean(np.abs(rx) ** 2))
            rsrp[t.trp_id] = 10.0 * math.log10(power) if power > 0 else -300.0
            np.add.at(vecs[i], k_idx, rx * conj_vals)
        taus = self._batched_toa(vecs)
        toa = {t.trp_id: taus[i] for i, t in enumerate(self.trps)}
        return toa, rsrp

    # -- arrival angles ----------------------------------------------------

    def _aoa_stage(self, links, ul_toa, drop_idx):
        """Beamformed arrival angles at each TRP from the sounding signal."""
        cfg = self.config
        rng = substream(cfg.master_seed, "aoa", drop_idx)
        array = self.trps[0].array
        grid = self.beamformer()
        k_idx, _, vals = self._ul_ref
        n_re = len(k_idx)
        angles: dict[int, tuple[float, float] | None] = {}
        for i, t in enumerate(self.trps):
            link = links[i]
            sv = steering_vector(array, link.aoa_true[0], link.aoa_true[1])
            if cfg.fixed_snr_db is not None:
                signal = 1.0 + 0j
                noise_var = 10 ** (-cfg.fixed_snr_db / 10.0)
            else:
                if ul_toa.get(t.trp_id) is None:
                    angles[t.trp_id] = None
                    continue
                amp = link_amplitude(link, cfg.ue_tx_power_dbm, self.ul_occupied_per_symbol)
                # matched-filter output: coherent sum across the sounded band
                signal = amp * n_re
                noise_var = n_re * self._ul_sigma**2
            x = sv * signal
            if noise_var > 0:
                x = x + (rng.normal(size=len(sv)) + 1j * rng.normal(size=len(sv))) * math.sqrt(noise_var / 2.0)
            try:
                angles[t.trp_id] = estimate_aoa(x, array, grid)
            except MeasurementFailed:
                angles[t.trp_id] = None
        return angles

    # -- departure beams ---------------------------------------------------

    def _beam_gain_db(self, beam_az: float, toward_az: float) -> float:
        d = (toward_az - beam_az + 180.0) % 360.0 - 180.0
        return -min(12.0 * (d / self.config.beam_hpbw_deg) ** 2, 30.0)

    def _aod_stage(self, links, drop_idx):
        """Per-beam received powers at the terminal, beams time-multiplexed.

        Sweeps are slot-aligned across TRPs: beam b of every TRP transmits
        in the same occasion, so same-offset TRPs interfere beam by beam.
        """
        cfg = self.config
        rng = substream(cfg.master_seed, "rsrp", drop_idx)
        position = {t.trp_id: i for i, t in enumerate(self.trps)}
        h = self._channel_matrix(links)
        reports: dict[int, list[tuple[float, float, float]]] = {}
        for b in range(cfg.n_beams):
            if self._dl_sigma > 0:
                noise_full = (rng.normal(size=(self.numerology.n_subcarriers, cfg.dl_n_symbols))
                              + 1j * rng.normal(size=(self.numerology.n_subcarriers, cfg.dl_n_symbols)))
                noise_full *= self._dl_sigma / np.sqrt(2.0)
            else:
                noise_full = np.zeros((self.numerology.n_subcarriers, cfg.dl_n_symbols), dtype=complex)
            for t in self.trps:
                k_idx, s_idx, _vals = self._dl_ref[t.trp_id]
                rx = noise_full[k_idx, s_idx].copy()
                sources = self._offset_group[t.trp_id] if cfg.interference else [t.trp_id]
                for src in sources:
                    src_i = position[src]
                    src_link = links[src_i]
                    gain = self._beam_gain_db(self._beam_azimuths[src][b],
                                              src_link.aod_true[0])
                    amp = link_amplitude(
                        src_link, self.trps[src_i].tx_power_dbm + gain,
                        self.dl_occupied_per_symbol,
                    )
                    _, _, src_vals = self._dl_ref[src]
                    rx += amp * h[src_i, k_idx] * src_vals
                power = float(np.mean(np.abs(rx) ** 2))
                rsrp_dbm = 10.0 * math.log10(power) if power > 0 else -300.0
                if cfg.quantize:
                    rsrp_dbm = float(quantize_power(rsrp_dbm).value_dbm)
                beam_az = self._beam_azimuths[t.trp_id][b]
                reports.setdefault(t.trp_id, []).append((beam_az, 95.0, rsrp_dbm))
        return reports

    # -- record assembly and solving ---------------------------------------

    def _select_trps(self, rsrp: dict[int, float]) -> list[int]:
        """Strongest cells first, gated by the relative-power window.

        Weak cells are rarely worth measuring (and are disproportionately
        obstructed ones), but at least min_trps strongest are always kept
        so the solve stays determined.
        """
        cfg = self.config
        ranked = sorted(rsrp, key=lambda t: rsrp[t], reverse=True)
        best = rsrp[ranked[0]]
        kept = [t for t in ranked if best - rsrp[t] <= cfg.rsrp_window_db]
        if len(kept) < cfg.min_trps:
            kept = ranked[: cfg.min_trps]
        return kept[: cfg.n_best_trps]

    def run_drop(self, drop_idx: int) -> DropOutcome:
        cfg = self.config
        ue = self.ues[drop_idx]
        links = self._links(drop_idx, ue)
        trp_clock, ue_clock = self._sync_offsets(drop_idx)

        records: list[MeasurementRecord] = []
        fix = None
        failure = None
        try:
            if cfg.method == "dl-tdoa":
                records, fix = self._run_dl_tdoa(links, trp_clock, ue_clock, drop_idx)
            elif cfg.method == "ul-tdoa":
                records, fix = self._run_ul_tdoa(links, trp_clock, ue_clock, drop_idx)
            elif cfg.method == "multi-rtt":
                records, fix = self._run_multi_rtt(links, trp_clock, ue_clock, drop_idx)
            elif cfg.method == "ul-aoa":
                records, fix = self._run_ul_aoa(links, trp_clock, ue_clock, drop_idx)
            elif cfg.method == "dl-aod":
                records, fix = self._run_dl_aod(links, drop_idx)
            else:
                raise ValueError(f"unknown method {cfg.method}")
        except SolverError as exc:
            failure = str(exc)

        outcome = DropOutcome(
            drop_idx=drop_idx,
            truth=ue,
            fix=fix,
            records=records,
            failure=failure,
        )
        if cfg.hull_split:
            outcome.in_hull = point_in_hull(ue, self.hull)
        outcome.gdop = self._gdop_at(ue, cfg.method)
        return outcome

    def _gdop_at(self, position, method) -> float:
        kind = {"dl-tdoa": "tdoa", "ul-tdoa": "tdoa", "multi-rtt": "rtt",
                "ul-aoa": "aoa", "dl-aod": "aod"}[method]
        try:
            return gdop(self.anchors, position, kind, ref_index=0,
                        fix_height=self.options.fix_height)
        except SolverError:
            return math.inf

    def _run_dl_tdoa(self, links, trp_clock, ue_clock, drop_idx):
        toa, rsrp = self._dl_stage(links, trp_clock, ue_clock, drop_idx)
        selected = [t for t in self._select_trps(rsrp) if toa[t] is not None]
        records = [
            MeasurementRecord(
                kind="PRS_RSRP", trp_id=t, resource_id=t,
                payload={"value_dbm": quantize_power(rsrp[t]).value_dbm
                         if self.config.quantize else rsrp[t]},
                raw={"dbm": rsrp[t]},
            )
            for t in selected
        ]
        if len(selected) < 4:
            raise SolverError("not enough usable downlink arrivals")
        ref = selected[0]  # strongest received power
        for t in selected:
            if t == ref:
                continue
            payload = self._timing_payload(toa[t] - toa[ref])
            payload["ref_trp_id"] = ref
            records.append(MeasurementRecord(
                kind="RSTD", trp_id=t, resource_id=t, payload=payload,
                raw={"seconds": toa[t] - toa[ref]},
            ))
        fix = solve_records(records, self.deployment, "dl-tdoa", self.options)
        return records, fix

    def _run_ul_tdoa(self, links, trp_clock, ue_clock, drop_idx):
        toa, rsrp = self._ul_stage(links, trp_clock, ue_clock, drop_idx)
        selected = [t for t in self._select_trps(rsrp) if toa[t] is not None]
        if len(selected) < 4:
            raise SolverError("not enough usable uplink arrivals")
        records = [
            MeasurementRecord(
                kind="SRS_RSRP", trp_id=t,
                payload={"value_dbm": quantize_power(rsrp[t]).value_dbm
                         if self.config.quantize else rsrp[t]},
                raw={"dbm": rsrp[t]},
            )
            for t in selected
        ]
        for t in selected:
            records.append(MeasurementRecord(
                kind="UL_RTOA", trp_id=t, payload=self._timing_payload(toa[t]),
                raw={"seconds": toa[t]},
            ))
        fix = solve_records(records, self.deployment, "ul-tdoa", self.options)
        return records, fix

    def _run_multi_rtt(self, links, trp_clock, ue_clock, drop_idx):
        dl_toa, rsrp = self._dl_stage(links, trp_clock, ue_clock, drop_idx)
        ul_toa, _ = self._ul_stage(links, trp_clock, ue_clock, drop_idx)
        selected = [
            t for t in self._select_trps(rsrp)
            if dl_toa[t] is not None and ul_toa[t] is not None
        ]
        if len(selected) < 3:
            raise SolverError("not enough usable round-trip pairs")
        records = []
        for t in selected:
            records.append(MeasurementRecord(
                kind="UE_RXTX", trp_id=t, payload=self._timing_payload(dl_toa[t]),
                raw={"seconds": dl_toa[t]},
            ))
            records.append(MeasurementRecord(
                kind="GNB_RXTX", trp_id=t, payload=self._timing_payload(ul_toa[t]),
                raw={"seconds": ul_toa[t]},
            ))
        fix = solve_records(records, self.deployment, "multi-rtt", self.options)
        return records, fix

    def _run_ul_aoa(self, links, trp_clock, ue_clock, drop_idx):
        if self.config.fixed_snr_db is None:
            ul_toa, rsrp = self._ul_stage(links, trp_clock, ue_clock, drop_idx)
        else:
            ul_toa = {t.trp_id: 0.0 for t in self.trps}
            rsrp = {t.trp_id: 0.0 for t in self.trps}
        angles = self._aoa_stage(links, ul_toa, drop_idx)
        selected = [t for t in self._select_trps(rsrp) if angles.get(t) is not None]
        if len(selected) < 2:
            raise SolverError("not enough usable arrival angles")
        records = [
            MeasurementRecord(
                kind="AOA", trp_id=t,
                payload={"azimuth_deg": angles[t][0], "zenith_deg": angles[t][1]},
            )
            for t in selected
        ]
        fix = solve_records(records, self.deployment, "ul-aoa", self.options)
        return records, fix

    def _run_dl_aod(self, links, drop_idx):
        reports = self._aod_stage(links, drop_idx)
        strongest = {t: max(r[2] for r in rep) for t, rep in reports.items()}
        selected = self._select_trps(strongest)
        records = []
        for t in selected:
            for b, (az, zen, rsrp_dbm) in enumerate(reports[t]):
                records.append(MeasurementRecord(
                    kind="PRS_RSRP", trp_id=t, resource_id=b,
                    payload={"value_dbm": rsrp_dbm, "beam_azimuth_deg": az,
                             "beam_zenith_deg": zen},
                ))
        fix = solve_records(records, self.deployment, "dl-aod", self.options)
        return records, fix


def solve_records(records, deployment: Deployment, method: str,
                  options: SolverOptions):
    """Position solve from measurement records (live pipeline and offline
    re-solve share this path)."""
    trp_ids = [t.trp_id for t in deployment.trps]
    index = {t: i for i, t in enumerate(trp_ids)}
    anchors = deployment.trp_positions()

    def seconds(rec):
        return rec.payload["value_tc"] * TC_SECONDS

    rsrp_by_trp = {
        r.trp_id: r.payload["value_dbm"] for r in records
        if r.kind in ("PRS_RSRP", "SRS_RSRP") and "beam_azimuth_deg" not in r.payload
    }

    if method == "dl-tdoa" or method == "ul-tdoa":
        if method == "dl-tdoa":
            rows = [
                (index[r.trp_id], index[r.payload["ref_trp_id"]],
                 seconds(r) * SPEED_OF_LIGHT)
                for r in records if r.kind == "RSTD"
            ]
        else:
            rtoa = {r.trp_id: seconds(r) for r in records if r.kind == "UL_RTOA"}
            if len(rtoa) < 2:
                raise SolverError("need at least two uplink arrivals")
            ref = min(rtoa, key=lambda t: rtoa[t])
            rows = [
                (index[t], index[ref], (v - rtoa[ref]) * SPEED_OF_LIGHT)
                for t, v in rtoa.items() if t != ref
            ]
        if not rows:
            raise SolverError("no time-difference measurements")
        used = sorted({i for i, _, _ in rows} | {rows[0][1]})
        weights = [rsrp_by_trp[trp_ids[i]] for i in used] \
            if all(trp_ids[i] in rsrp_by_trp for i in used) else None
        x0 = init_guess(anchors[used], rsrp_dbm=weights,
                        fix_height=options.fix_height)
        return tdoa_solve(anchors, rows, options, x0=x0)

    if method == "multi-rtt":
        ue_rxtx = {r.trp_id: seconds(r) for r in records if r.kind == "UE_RXTX"}
        gnb_rxtx = {r.trp_id: seconds(r) for r in records if r.kind == "GNB_RXTX"}
        ranges = []
        for t in sorted(ue_rxtx):
            if t in gnb_rxtx:
                total = ue_rxtx[t] + gnb_rxtx[t]
                ranges.append((index[t], max(total, 0.0) * SPEED_OF_LIGHT / 2.0))
        return rtt_solve(anchors, ranges, options)

    if method == "ul-aoa":
        angles = [
            (index[r.trp_id], r.payload["azimuth_deg"], r.payload["zenith_deg"])
            for r in records if r.kind == "AOA"
        ]
        return aoa_solve(anchors, angles, options)

    if method == "dl-aod":
        beams: dict[int, list] = {}
        for r in records:
            if r.kind == "PRS_RSRP" and "beam_azimuth_deg" in r.payload:
                beams.setdefault(index[r.trp_id], []).append(
                    (r.payload["beam_azimuth_deg"], r.payload["beam_zenith_deg"],
                     r.payload["value_dbm"])
                )
        return aod_solve(anchors, beams, options)

    raise SolverError(f"unknown method {method!r}")
