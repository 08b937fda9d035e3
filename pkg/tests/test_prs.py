import itertools

import numpy as np
import pytest

from nrpos.numerology import GridError, ResourceGrid
from nrpos.prs import (
    DL_VALID_SYMBOLS,
    UL_COMB_STAGGER,
    UL_VALID_SYMBOLS,
    ConfigError,
    DlPrsResource,
    DlPrsResourceSet,
    FrequencyLayer,
    PrsConfigTree,
    SrsPosResource,
    comb_pattern,
    map_dl_prs,
    map_srs,
    resource_re_indices,
    schedule_occasions,
    srs_comb_pattern,
    srs_re_indices,
)


def make_resource(**kwargs):
    defaults = dict(resource_id=0, seq_id=1, comb_size=12, re_offset=0,
                    first_symbol=0, n_symbols=12, n_prb=272)
    defaults.update(kwargs)
    return DlPrsResource(**defaults)


def make_set(n_resources=1, **kwargs):
    resources = tuple(
        make_resource(resource_id=i, comb_size=2, n_symbols=2) for i in range(n_resources)
    )
    defaults = dict(set_id=0, resources=resources)
    defaults.update(kwargs)
    return DlPrsResourceSet(**defaults)


class TestCombPattern:
    def test_comb6_staggering(self):
        assert comb_pattern(6, 6, 0) == [0, 3, 1, 4, 2, 5]

    def test_comb2_offset1(self):
        assert comb_pattern(2, 2, 1) == [1, 0]

    def test_comb12_is_permutation(self):
        assert sorted(comb_pattern(12, 12, 0)) == list(range(12))
        assert comb_pattern(12, 12, 0) == [0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11]

    @pytest.mark.parametrize("comb", [2, 4, 6, 12])
    def test_coverage_over_any_window(self, comb):
        # any N consecutive symbols cover every residue, for every offset
        for n_symbols in DL_VALID_SYMBOLS[comb]:
            if n_symbols < comb:
                continue
            for offset in range(comb):
                residues = comb_pattern(comb, n_symbols, offset)
                for start in range(n_symbols - comb + 1):
                    window = residues[start:start + comb]
                    assert sorted(window) == list(range(comb))

    @pytest.mark.parametrize("comb", [2, 4, 8])
    def test_srs_coverage(self, comb):
        for n_symbols in UL_VALID_SYMBOLS:
            if n_symbols < comb:
                continue
            for offset in range(comb):
                residues = srs_comb_pattern(comb, n_symbols, offset)
                assert sorted(residues[:comb]) == list(range(comb))

    def test_invalid_combinations_rejected(self):
        with pytest.raises(ConfigError):
            comb_pattern(12, 6, 0)
        with pytest.raises(ConfigError):
            comb_pattern(4, 6, 0)
        with pytest.raises(ConfigError):
            comb_pattern(6, 6, 6)
        with pytest.raises(ConfigError):
            srs_comb_pattern(8, 3, 0)


class TestOrthogonality:
    @pytest.mark.parametrize("comb", [2, 4, 6, 12])
    def test_distinct_offsets_are_disjoint(self, comb):
        n_symbols = max(DL_VALID_SYMBOLS[comb])
        re_sets = []
        for offset in range(comb):
            res = make_resource(comb_size=comb, re_offset=offset,
                                n_symbols=n_symbols, n_prb=24)
            occupied = {
                (k, s) for k_idx, s in resource_re_indices(res) for k in k_idx
            }
            re_sets.append(occupied)
        for a, b in itertools.combinations(re_sets, 2):
            assert not (a & b)

    def test_union_covers_grid(self):
        comb, n_symbols = 6, 6
        union = set()
        for offset in range(comb):
            res = make_resource(comb_size=comb, re_offset=offset,
                                n_symbols=n_symbols, n_prb=24)
            union |= {(k, s) for k_idx, s in resource_re_indices(res) for k in k_idx}
        assert len(union) == 24 * 12 * n_symbols


class TestMapping:
    def test_occupied_re_count(self):
        grid = ResourceGrid(12 * 272, 14)
        res = make_resource(comb_size=12, n_symbols=12, n_prb=272)
        map_dl_prs(grid, res)
        assert np.count_nonzero(grid.cells) == 12 * 272
        assert np.allclose(np.abs(grid.cells[grid.cells != 0]), 1.0)

    def test_three_trp_comb6_multiplexing(self):
        # interleaved disjoint columns, as in the three-cell example
        grid = ResourceGrid(12 * 24, 14)
        for offset in range(3):
            res = make_resource(resource_id=offset, seq_id=offset, comb_size=6,
                                re_offset=offset, n_symbols=6, n_prb=24)
            map_dl_prs(grid, res)
        assert np.count_nonzero(grid.cells) == 3 * 6 * (12 * 24 // 6)

    def test_same_grid_collision_is_error(self):
        grid = ResourceGrid(12 * 24, 14)
        res = make_resource(n_prb=24)
        map_dl_prs(grid, res)
        with pytest.raises(GridError):
            map_dl_prs(grid, make_resource(seq_id=5, n_prb=24))

    def test_resource_must_fit(self):
        grid = ResourceGrid(12 * 24, 14)
        with pytest.raises(GridError):
            map_dl_prs(grid, make_resource(n_prb=272))

    def test_fresh_sequence_per_symbol(self):
        grid = ResourceGrid(12 * 24, 14)
        res = make_resource(comb_size=2, n_symbols=2, n_prb=24)
        map_dl_prs(grid, res)
        (k0, s0), (k1, s1) = resource_re_indices(res)
        assert not np.allclose(grid.cells[k0, s0], grid.cells[k1, s1])


class TestSrs:
    def test_comb4_stagger_over_12_symbols(self):
        residues = srs_comb_pattern(4, 12, 0)
        assert residues == [0, 2, 1, 3] * 3

    def test_cyclic_shift_zero_is_base(self):
        grid = ResourceGrid(12 * 24, 14)
        res = SrsPosResource(comb_size=4, comb_offset=0, cyclic_shift=0,
                             n_symbols=4, n_prb=24)
        map_srs(grid, res)
        k_idx, sym = srs_re_indices(res)[0]
        from nrpos.sequences import zc_base_for_width
        assert np.allclose(grid.cells[k_idx, sym], zc_base_for_width(1, len(k_idx)))

    def test_cyclic_shift_is_phase_ramp(self):
        values = []
        for cs in (0, 3):
            grid = ResourceGrid(12 * 24, 14)
            res = SrsPosResource(comb_size=4, comb_offset=0, cyclic_shift=cs,
                                 n_symbols=4, n_prb=24)
            map_srs(grid, res)
            k_idx, sym = srs_re_indices(res)[0]
            values.append(grid.cells[k_idx, sym])
        ratio = values[1] / values[0]
        k = np.arange(len(ratio))
        assert np.allclose(ratio, np.exp(2j * np.pi * 3 * k / 12))

    def test_two_ues_distinct_offsets_disjoint(self):
        sets = []
        for offset in (0, 1):
            res = SrsPosResource(comb_size=2, comb_offset=offset, n_symbols=2, n_prb=24)
            sets.append({(k, s) for k_idx, s in srs_re_indices(res) for k in k_idx})
        assert not (sets[0] & sets[1])

    def test_validation(self):
        with pytest.raises(ConfigError):
            SrsPosResource(comb_size=3, comb_offset=0)
        with pytest.raises(ConfigError):
            SrsPosResource(comb_size=4, comb_offset=4)
        with pytest.raises(ConfigError):
            SrsPosResource(comb_size=4, comb_offset=0, n_symbols=3)

    def test_serialization_round_trip(self):
        res = SrsPosResource(comb_size=8, comb_offset=5, cyclic_shift=2,
                             n_symbols=8, zc_root=3, n_prb=48)
        assert SrsPosResource.from_dict(res.to_dict()) == res


class TestScheduling:
    def test_repeat_before_sweep(self):
        s = make_set(n_resources=3, gap_slots=1, repetitions=2)
        occ = schedule_occasions(s, horizon_slots=8, slots_per_ms=2)
        order = [rid for _, rid, _ in occ]
        assert order == [0, 0, 1, 1, 2, 2]
        assert [slot for slot, _, _ in occ] == [0, 1, 2, 3, 4, 5]

    def test_sweep_before_repeat(self):
        s = make_set(n_resources=3, gap_slots=4, repetitions=2,
                     order="sweep_before_repeat")
        occ = schedule_occasions(s, horizon_slots=8, slots_per_ms=2)
        order = [rid for _, rid, _ in occ]
        assert order == [0, 1, 2, 0, 1, 2]
        assert [slot for slot, _, _ in occ] == [0, 1, 2, 4, 5, 6]

    def test_occasion_muting(self):
        s = make_set(n_resources=2, repetitions=1, muting_occasion=(1, 0))
        occ = schedule_occasions(s, horizon_slots=16, slots_per_ms=2)
        first = [tx for slot, _, tx in occ if slot < 8]
        second = [tx for slot, _, tx in occ if slot >= 8]
        assert all(first) and not any(second)

    def test_repetition_muting(self):
        s = make_set(n_resources=2, repetitions=2, muting_repetition=(1, 0))
        occ = schedule_occasions(s, horizon_slots=8, slots_per_ms=2)
        # second repetition of each resource is muted
        by_resource = {}
        for slot, rid, tx in occ:
            by_resource.setdefault(rid, []).append(tx)
        assert by_resource[0] == [True, False]
        assert by_resource[1] == [True, False]

    def test_periodicity(self):
        s = make_set(n_resources=3, repetitions=2, muting_occasion=(1, 1))
        period_slots = int(s.period_ms * 2)
        one = schedule_occasions(s, horizon_slots=period_slots, slots_per_ms=2)
        two = schedule_occasions(s, horizon_slots=2 * period_slots, slots_per_ms=2)
        shifted = [(slot + period_slots, rid, tx) for slot, rid, tx in one]
        assert two == one + shifted

    def test_muting_length_mismatch(self):
        with pytest.raises(ConfigError):
            make_set(n_resources=1, repetitions=4, muting_repetition=(1, 0))

    def test_horizon_too_short(self):
        s = make_set()
        with pytest.raises(ConfigError):
            schedule_occasions(s, horizon_slots=3, slots_per_ms=2)


class TestHierarchy:
    def test_caps_at_exact_limits(self):
        sets = tuple(
            DlPrsResourceSet(
                set_id=i,
                resources=tuple(
                    make_resource(resource_id=r, comb_size=12) for r in range(64)
                ),
            )
            for i in range(2)
        )
        layer = FrequencyLayer(layer_id=0, trps=tuple((t, sets) for t in range(64)))
        tree = PrsConfigTree(layers=tuple(
            FrequencyLayer(layer_id=i, trps=layer.trps) for i in range(4)
        ))
        assert tree.total_resources() == 4 * 64 * 2 * 64

    def test_too_many_layers(self):
        layer = FrequencyLayer(layer_id=0, trps=((0, (make_set(),)),))
        with pytest.raises(ConfigError):
            PrsConfigTree(layers=tuple(
                FrequencyLayer(layer_id=i, trps=layer.trps) for i in range(5)
            ))

    def test_too_many_trps(self):
        with pytest.raises(ConfigError):
            FrequencyLayer(layer_id=0, trps=tuple(
                (t, (make_set(),)) for t in range(65)
            ))

    def test_too_many_sets_per_trp(self):
        sets = tuple(make_set(set_id=i) for i in range(3))
        with pytest.raises(ConfigError):
            FrequencyLayer(layer_id=0, trps=((0, sets),))

    def test_too_many_resources_per_set(self):
        with pytest.raises(ConfigError):
            DlPrsResourceSet(set_id=0, resources=tuple(
                make_resource(resource_id=i, comb_size=2, n_symbols=2)
                for i in range(65)
            ))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ConfigError):
            DlPrsResourceSet(set_id=0, resources=(
                make_resource(resource_id=1), make_resource(resource_id=1, seq_id=2),
            ))

    def test_tree_serialization_round_trip(self):
        sets = (make_set(n_resources=2, repetitions=2, muting_repetition=(1, 0)),)
        tree = PrsConfigTree(layers=(
            FrequencyLayer(layer_id=0, trps=((0, sets), (1, sets))),
        ))
        assert PrsConfigTree.from_dict(tree.to_dict()) == tree


class TestResourceValidation:
    def test_bad_comb(self):
        with pytest.raises(ConfigError):
            make_resource(comb_size=5)

    def test_bad_offset(self):
        with pytest.raises(ConfigError):
            make_resource(comb_size=4, re_offset=4, n_symbols=4)

    def test_bad_seq_id(self):
        with pytest.raises(ConfigError):
            make_resource(seq_id=4096)

    def test_symbols_fit_slot(self):
        with pytest.raises(ConfigError):
            make_resource(first_symbol=3, n_symbols=12)

    def test_comb_symbol_minimum(self):
        with pytest.raises(ConfigError):
            make_resource(comb_size=12, n_symbols=6)

    def test_period_bounds(self):
        with pytest.raises(ConfigError):
            make_set(period_ms=2.0)
        with pytest.raises(ConfigError):
            make_set(period_ms=20000.0)
        with pytest.raises(ConfigError):
            make_set(repetitions=33)
