"""Downlink and uplink positioning signal configuration: comb patterns on
the resource grid, the frequency-layer/TRP/set/resource hierarchy, and
repetition/muting scheduling of resource sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerology import ResourceGrid, GridError
from .sequences import prs_symbol_sequence, zc_base_for_width

# Per-symbol subcarrier offsets relative to the configured RE offset. Each
# table is a permutation of 0..N-1, so N consecutive symbols sound every
# subcarrier of the allocation.
DL_COMB_STAGGER = {
    2: (0, 1),
    4: (0, 2, 1, 3),
    6: (0, 3, 1, 4, 2, 5),
    12: (0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11),
}

# Downlink symbol counts allowed per comb size (multiples of the comb that
# fit in a slot).
DL_VALID_SYMBOLS = {
    2: (2, 4, 6, 12),
    4: (4, 12),
    6: (6, 12),
    12: (12,),
}

UL_COMB_STAGGER = {
    2: (0, 1),
    4: (0, 2, 1, 3),
    8: (0, 4, 2, 6, 1, 5, 3, 7),
}

UL_VALID_SYMBOLS = (1, 2, 4, 8, 12)

# Hierarchy caps: layers per config, TRPs per layer, sets per TRP per
# layer, resources per set.
MAX_LAYERS = 4
MAX_TRPS_PER_LAYER = 64
MAX_SETS_PER_TRP = 2
MAX_RESOURCES_PER_SET = 64

CYCLIC_SHIFT_MAX = 12

CONFIG_FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid signal configuration."""


@dataclass(frozen=True)
class DlPrsResource:
    """One downlink positioning beam: sequence, comb placement, direction."""

    resource_id: int
    seq_id: int
    comb_size: int
    re_offset: int
    first_symbol: int = 0
    n_symbols: int = 12
    start_prb: int = 0
    n_prb: int = 272
    beam_azimuth_deg: float = 0.0
    beam_zenith_deg: float = 90.0

    def __post_init__(self):
        if self.comb_size not in DL_COMB_STAGGER:
            raise ConfigError(f"comb size {self.comb_size} not in {{2,4,6,12}}")
        if not 0 <= self.re_offset < self.comb_size:
            raise ConfigError("re_offset must be in [0, comb_size)")
        if not 0 <= self.seq_id <= 4095:
            raise ConfigError("seq_id must be in 0..4095")
        if self.n_symbols not in DL_VALID_SYMBOLS[self.comb_size]:
            raise ConfigError(
                f"{self.n_symbols} symbols invalid for comb-{self.comb_size}"
            )
        if not 0 <= self.first_symbol or self.first_symbol + self.n_symbols > 14:
            raise ConfigError("symbols do not fit in a 14-symbol slot")
        if not (24 <= self.n_prb <= 276) or (self.n_prb - 24) % 4 != 0:
            raise ConfigError("n_prb must be 24..276 in steps of 4")


@dataclass(frozen=True)
class DlPrsResourceSet:
    """Beams of one TRP on one frequency plus their repetition schedule."""

    set_id: int
    resources: tuple[DlPrsResource, ...]
    period_ms: float = 4.0
    gap_slots: int = 1
    repetitions: int = 1
    muting_repetition: tuple[int, ...] = ()
    muting_occasion: tuple[int, ...] = ()
    order: str = "repeat_before_sweep"

    def __post_init__(self):
        if not self.resources:
            raise ConfigError("resource set needs at least one resource")
        if len(self.resources) > MAX_RESOURCES_PER_SET:
            raise ConfigError(f"more than {MAX_RESOURCES_PER_SET} resources in a set")
        ids = [r.resource_id for r in self.resources]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate resource_id within a set")
        if not 1 <= self.repetitions <= 32:
            raise ConfigError("repetitions must be 1..32")
        if not 4.0 <= self.period_ms <= 10240.0:
            raise ConfigError("period must be 4..10240 ms")
        if self.gap_slots < 1:
            raise ConfigError("gap_slots must be >= 1")
        if self.order not in ("repeat_before_sweep", "sweep_before_repeat"):
            raise ConfigError(f"unknown order {self.order!r}")
        if self.muting_repetition and len(self.muting_repetition) != self.repetitions:
            raise ConfigError("muting_repetition length must equal repetitions")


@dataclass(frozen=True)
class FrequencyLayer:
    """TRPs sharing one positioning frequency layer."""

    layer_id: int
    trps: tuple[tuple[int, tuple[DlPrsResourceSet, ...]], ...]

    def __post_init__(self):
        if len(self.trps) > MAX_TRPS_PER_LAYER:
            raise ConfigError(f"more than {MAX_TRPS_PER_LAYER} TRPs in a layer")
        for trp_id, sets in self.trps:
            if len(sets) > MAX_SETS_PER_TRP:
                raise ConfigError(
                    f"TRP {trp_id}: more than {MAX_SETS_PER_TRP} sets per layer"
                )
            set_ids = [s.set_id for s in sets]
            if len(set(set_ids)) != len(set_ids):
                raise ConfigError(f"TRP {trp_id}: duplicate set_id")


@dataclass(frozen=True)
class PrsConfigTree:
    """Full downlink configuration hierarchy: layers -> TRPs -> sets -> beams."""

    layers: tuple[FrequencyLayer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("config tree needs at least one layer")
        if len(self.layers) > MAX_LAYERS:
            raise ConfigError(f"more than {MAX_LAYERS} frequency layers")

    def total_resources(self) -> int:
        return sum(
            len(s.resources)
            for layer in self.layers
            for _, sets in layer.trps
            for s in sets
        )

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_FORMAT_VERSION,
            "layers": [
                {
                    "layer_id": layer.layer_id,
                    "trps": [
                        {
                            "trp_id": trp_id,
                            "resource_sets": [_set_to_dict(s) for s in sets],
                        }
                        for trp_id, sets in layer.trps
                    ],
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PrsConfigTree":
        if doc.get("version") != CONFIG_FORMAT_VERSION:
            raise ConfigError(f"unsupported config version {doc.get('version')!r}")
        layers = []
        for ld in doc["layers"]:
            trps = tuple(
                (
                    td["trp_id"],
                    tuple(_set_from_dict(sd) for sd in td["resource_sets"]),
                )
                for td in ld["trps"]
            )
            layers.append(FrequencyLayer(layer_id=ld["layer_id"], trps=trps))
        return cls(layers=tuple(layers))


def _set_to_dict(s: DlPrsResourceSet) -> dict:
    return {
        "set_id": s.set_id,
        "period_ms": s.period_ms,
        "gap_slots": s.gap_slots,
        "repetitions": s.repetitions,
        "muting_repetition": list(s.muting_repetition),
        "muting_occasion": list(s.muting_occasion),
        "order": s.order,
        "resources": [
            {
                "resource_id": r.resource_id,
                "seq_id": r.seq_id,
                "comb_size": r.comb_size,
                "re_offset": r.re_offset,
                "first_symbol": r.first_symbol,
                "n_symbols": r.n_symbols,
                "start_prb": r.start_prb,
                "n_prb": r.n_prb,
                "beam_azimuth_deg": r.beam_azimuth_deg,
                "beam_zenith_deg": r.beam_zenith_deg,
            }
            for r in s.resources
        ],
    }


def _set_from_dict(d: dict) -> DlPrsResourceSet:
    resources = tuple(DlPrsResource(**rd) for rd in d["resources"])
    return DlPrsResourceSet(
        set_id=d["set_id"],
        resources=resources,
        period_ms=d.get("period_ms", 4.0),
        gap_slots=d.get("gap_slots", 1),
        repetitions=d.get("repetitions", 1),
        muting_repetition=tuple(d.get("muting_repetition", ())),
        muting_occasion=tuple(d.get("muting_occasion", ())),
        order=d.get("order", "repeat_before_sweep"),
    )


@dataclass(frozen=True)
class SrsPosResource:
    """One uplink sounding resource: comb placement, shift and base sequence."""

    comb_size: int
    comb_offset: int
    cyclic_shift: int = 0
    n_symbols: int = 2
    first_symbol: int = 0
    zc_root: int = 1
    n_prb: int = 272
    start_prb: int = 0

    def __post_init__(self):
        if self.comb_size not in UL_COMB_STAGGER:
            raise ConfigError(f"uplink comb size {self.comb_size} not in {{2,4,8}}")
        if not 0 <= self.comb_offset < self.comb_size:
            raise ConfigError("comb_offset must be in [0, comb_size)")
        if self.n_symbols not in UL_VALID_SYMBOLS:
            raise ConfigError(f"n_symbols must be one of {UL_VALID_SYMBOLS}")
        if not 0 <= self.first_symbol or self.first_symbol + self.n_symbols > 14:
            raise ConfigError("symbols do not fit in a 14-symbol slot")
        if not 0 <= self.cyclic_shift < CYCLIC_SHIFT_MAX:
            raise ConfigError(f"cyclic_shift must be in [0, {CYCLIC_SHIFT_MAX})")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_FORMAT_VERSION,
            "comb_size": self.comb_size,
            "comb_offset": self.comb_offset,
            "cyclic_shift": self.cyclic_shift,
            "n_symbols": self.n_symbols,
            "first_symbol": self.first_symbol,
            "zc_root": self.zc_root,
            "n_prb": self.n_prb,
            "start_prb": self.start_prb,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SrsPosResource":
        if doc.get("version") != CONFIG_FORMAT_VERSION:
            raise ConfigError(f"unsupported config version {doc.get('version')!r}")
        fields = {k: v for k, v in doc.items() if k != "version"}
        return cls(**fields)


def comb_pattern(comb_size: int, n_symbols: int, re_offset: int) -> list[int]:
    """Subcarrier residue (mod comb_size) occupied in each downlink symbol."""
    if comb_size not in DL_COMB_STAGGER:
        raise ConfigError(f"comb size {comb_size} not in {{2,4,6,12}}")
    if n_symbols not in DL_VALID_SYMBOLS[comb_size]:
        raise ConfigError(f"{n_symbols} symbols invalid for comb-{comb_size}")
    if not 0 <= re_offset < comb_size:
        raise ConfigError("re_offset must be in [0, comb_size)")
    stagger = DL_COMB_STAGGER[comb_size]
    return [(re_offset + stagger[s % comb_size]) % comb_size for s in range(n_symbols)]


def srs_comb_pattern(comb_size: int, n_symbols: int, comb_offset: int) -> list[int]:
    """Per-symbol subcarrier residues for the uplink staggered comb."""
    if comb_size not in UL_COMB_STAGGER:
        raise ConfigError(f"uplink comb size {comb_size} not in {{2,4,8}}")
    if n_symbols not in UL_VALID_SYMBOLS:
        raise ConfigError(f"n_symbols must be one of {UL_VALID_SYMBOLS}")
    if not 0 <= comb_offset < comb_size:
        raise ConfigError("comb_offset must be in [0, comb_size)")
    stagger = UL_COMB_STAGGER[comb_size]
    return [(comb_offset + stagger[s % comb_size]) % comb_size for s in range(n_symbols)]


def resource_re_indices(resource: DlPrsResource) -> list[tuple[np.ndarray, int]]:
    """(subcarrier indices, symbol) pairs occupied by a downlink resource."""
    residues = comb_pattern(resource.comb_size, resource.n_symbols, resource.re_offset)
    lo = 12 * resource.start_prb
    hi = lo + 12 * resource.n_prb
    out = []
    for s, residue in enumerate(residues):
        first = lo + residue
        out.append((np.arange(first, hi, resource.comb_size), resource.first_symbol + s))
    return out


def srs_re_indices(resource: SrsPosResource) -> list[tuple[np.ndarray, int]]:
    residues = srs_comb_pattern(resource.comb_size, resource.n_symbols, resource.comb_offset)
    lo = 12 * resource.start_prb
    hi = lo + 12 * resource.n_prb
    out = []
    for s, residue in enumerate(residues):
        first = lo + residue
        out.append((np.arange(first, hi, resource.comb_size), resource.first_symbol + s))
    return out


def dl_prs_reference(resource: DlPrsResource, slot: int = 0) -> list[tuple[np.ndarray, int, np.ndarray]]:
    """(subcarriers, symbol, values) triples carried by a downlink resource.

    Each symbol carries a fresh scrambling sequence.
    """
    out = []
    for k_idx, sym in resource_re_indices(resource):
        seq = prs_symbol_sequence(resource.seq_id, slot, sym, len(k_idx))
        out.append((k_idx, sym, seq))
    return out


def map_dl_prs(grid: ResourceGrid, resource: DlPrsResource, slot: int = 0) -> ResourceGrid:
    """Write the QPSK sequence of `resource` onto its comb of the grid.

    Touching an RE the grid already occupies is a configuration error:
    interference between co-channel signals is modeled at the receiver,
    never inside one transmit grid.
    """
    top = 12 * (resource.start_prb + resource.n_prb)
    if top > grid.subcarriers or resource.first_symbol + resource.n_symbols > grid.symbols:
        raise GridError("resource does not fit the grid")
    for k_idx, sym, seq in dl_prs_reference(resource, slot):
        if np.any(grid.cells[k_idx, sym] != 0):
            raise GridError(
                f"resource {resource.resource_id} collides with occupied REs in symbol {sym}"
            )
        grid.cells[k_idx, sym] = seq
    return grid


def srs_symbol_values(resource: SrsPosResource, n_values: int) -> np.ndarray:
    """Base sequence of one sounding symbol with the cyclic-shift ramp.

    The shift is a per-subcarrier linear phase ramp
    exp(2j*pi*cs*k/CYCLIC_SHIFT_MAX), separable at the correlator.
    """
    base = zc_base_for_width(resource.zc_root, n_values)
    k = np.arange(n_values)
    ramp = np.exp(2j * np.pi * resource.cyclic_shift * k / CYCLIC_SHIFT_MAX)
    return base * ramp


def srs_reference(resource: SrsPosResource) -> list[tuple[np.ndarray, int, np.ndarray]]:
    """(subcarriers, symbol, values) triples carried by a sounding resource."""
    return [
        (k_idx, sym, srs_symbol_values(resource, len(k_idx)))
        for k_idx, sym in srs_re_indices(resource)
    ]


def map_srs(grid: ResourceGrid, resource: SrsPosResource) -> ResourceGrid:
    """Write the shifted sounding sequence onto the uplink comb."""
    top = 12 * (resource.start_prb + resource.n_prb)
    if top > grid.subcarriers or resource.first_symbol + resource.n_symbols > grid.symbols:
        raise GridError("resource does not fit the grid")
    for k_idx, sym, values in srs_reference(resource):
        if np.any(grid.cells[k_idx, sym] != 0):
            raise GridError(f"sounding resource collides with occupied REs in symbol {sym}")
        grid.cells[k_idx, sym] = values
    return grid


def schedule_occasions(
    prs_set: DlPrsResourceSet, horizon_slots: int, slots_per_ms: int = 1
) -> list[tuple[int, int, bool]]:
    """(slot, resource_id, transmitted) schedule over `horizon_slots`.

    repeat_before_sweep sends each resource `repetitions` times (spaced
    gap_slots apart) before moving to the next one; sweep_before_repeat
    sends one full sweep and repeats it with period gap_slots. Repetition-
    level muting clears individual repetitions inside every occasion;
    occasion-level muting clears whole periods (bitmap applied cyclically).
    """
    period_slots = int(round(prs_set.period_ms * slots_per_ms))
    if horizon_slots < period_slots:
        raise ConfigError("horizon must cover at least one period")
    n_res = len(prs_set.resources)
    if prs_set.order == "sweep_before_repeat" and prs_set.gap_slots < n_res:
        raise ConfigError("sweep_before_repeat needs gap_slots >= number of resources")

    occasion: list[tuple[int, int, bool]] = []
    for r_pos, res in enumerate(prs_set.resources):
        for rep in range(prs_set.repetitions):
            if prs_set.order == "repeat_before_sweep":
                slot = r_pos * prs_set.repetitions * prs_set.gap_slots + rep * prs_set.gap_slots
            else:
                slot = rep * prs_set.gap_slots + r_pos
            tx = True
            if prs_set.muting_repetition:
                tx = bool(prs_set.muting_repetition[rep])
            occasion.append((slot, res.resource_id, tx))
    occasion.sort()
    if occasion and occasion[-1][0] >= period_slots:
        raise ConfigError("occasion does not fit inside the set period")

    out = []
    for period in range(horizon_slots // period_slots):
        period_tx = True
        if prs_set.muting_occasion:
            period_tx = bool(
                prs_set.muting_occasion[period % len(prs_set.muting_occasion)]
            )
        for slot, rid, tx in occasion:
            abs_slot = period * period_slots + slot
            if abs_slot < horizon_slots:
                out.append((abs_slot, rid, tx and period_tx))
    return out
