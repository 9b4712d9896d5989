"""Tests for the mutation operators, mutation logs and the mutation-count schedule."""
import dataclasses
import itertools
import json
from collections import deque

import numpy as np
import pytest

from src.errors import MutationError, MutationExhaustedError
from src.mutation import (
    STEM,
    MutationKind,
    MutationRecord,
    apply_random_mutations,
    get_layer,
    layer_type_targets,
    mutate_layer_type,
    mutate_repeat_count,
    mutate_stream_count,
    mutate_temporal_size,
    mutation_count_schedule,
    replace_layer,
    replace_module,
    replay_mutation_log,
    temporal_size_targets,
)
from src.search_space.codec import serialize_genome
from src.search_space.sampler import sample_random_genome
from src.search_space.space import (
    STREAM_SLOTS,
    LayerKind,
    LayerSpec,
    MetaKind,
    SearchConstraints,
    StreamSpec,
    resplit_streams,
)
from src.search_space.validation import validate


class TestSchedule:
    @pytest.mark.parametrize(
        "round_i,expected",
        [(0, 7), (1, 7), (99, 7), (100, 6), (101, 6), (199, 6), (200, 5), (600, 1), (650, 1), (10_000, 1)],
    )
    def test_annealed_count(self, round_i, expected):
        assert mutation_count_schedule(round_i, 7, 100) == expected

    def test_never_below_one_and_non_increasing(self):
        counts = [mutation_count_schedule(i, 5, 3) for i in range(40)]
        assert min(counts) == 1
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            mutation_count_schedule(0, 0, 100)
        with pytest.raises(ValueError):
            mutation_count_schedule(-1, 7, 100)


class TestOperators:
    def test_layer_type_keeps_length_and_channels(self, genome, rng):
        path = (1, 0, 1)
        before = get_layer(genome, path)
        child, record = mutate_layer_type(genome, path, rng)
        after = get_layer(child, path)
        assert after.kind != before.kind
        assert (after.temporal_len, after.out_channels) == (before.temporal_len, before.out_channels)
        assert record == MutationRecord(MutationKind.CHANGE_LAYER_TYPE, path, before.kind.value, after.kind.value)
        assert validate(child).ok

    def test_layer_type_rejects_stem_and_non_conv(self, genome, rng):
        with pytest.raises(MutationError):
            mutate_layer_type(genome, (STEM, 0), rng)
        with pytest.raises(MutationError):
            mutate_layer_type(genome, (0, 0, 0), rng)

    def test_layer_type_without_alternative(self, genome, rng):
        only = SearchConstraints(conv_kinds=frozenset({LayerKind.CONV3D}))
        with pytest.raises(MutationError, match="no alternative kind"):
            mutate_layer_type(genome, (0, 0, 1), rng, only)

    def test_targets(self, genome):
        assert layer_type_targets(genome) == [(0, 0, 1), (1, 0, 1), (1, 0, 2)]
        assert temporal_size_targets(genome) == [(STEM, 0), (0, 0, 1), (0, 1, 0), (1, 0, 1), (1, 0, 2)]

    @pytest.mark.parametrize("path", [(STEM, 0), (0, 1, 0), (1, 0, 2)])
    def test_temporal_size_changes_length(self, genome, rng, path):
        before = get_layer(genome, path)
        child, record = mutate_temporal_size(genome, path, rng)
        after = get_layer(child, path)
        assert after.temporal_len != before.temporal_len
        assert after.temporal_len in (1, 3, 5, 7, 9, 11)
        assert after.kind == before.kind
        assert (record.before, record.after) == (before.temporal_len, after.temporal_len)

    def test_temporal_size_rejects_1x1(self, genome, rng):
        with pytest.raises(MutationError):
            mutate_temporal_size(genome, (1, 1, 0), rng)

    def test_stream_count_keeps_module_width(self, genome, rng):
        for _ in range(10):
            child, record = mutate_stream_count(genome, 1, rng)
            module = child.modules[1]
            assert abs(len(module.streams) - 2) == 1
            assert module.total_out_channels == 256
            assert sum(s.layers[-1].out_channels for s in module.streams) == 256
            assert validate(child).ok
            assert (record.before is None) != (record.after is None)

    def test_stream_count_bounds_force_direction(self, genome, rng):
        single = SearchConstraints(max_streams=1)
        one_stream = replace_module(
            genome, 0, dataclasses.replace(genome.modules[0], streams=resplit_streams(genome.modules[0].streams[:1], 128))
        )
        with pytest.raises(MutationError):
            mutate_stream_count(one_stream, 0, rng, single)

        two = SearchConstraints(max_streams=2)
        child, record = mutate_stream_count(genome, 0, rng, two)
        assert len(child.modules[0].streams) == 1
        assert record.after is None

    def test_repeat_count(self, genome, rng):
        child, record = mutate_repeat_count(genome, 0, rng)
        assert child.modules[0].repeats != 1
        assert 1 <= child.modules[0].repeats <= 6
        assert (record.before, record.after) == (1, child.modules[0].repeats)

    def test_repeat_count_fixed_for_inception(self, rng, constraints):
        genome = sample_random_genome(MetaKind.INCEPTION, constraints, 2)
        with pytest.raises(MutationError, match="repeats fixed"):
            mutate_repeat_count(genome, 0, rng)

    def test_parent_is_not_modified(self, genome, rng):
        text = serialize_genome(genome)
        apply_random_mutations(genome, 7, SearchConstraints(), rng)
        assert serialize_genome(genome) == text


class TestRandomMutations:
    @pytest.mark.parametrize("meta", list(MetaKind))
    def test_children_stay_valid(self, meta):
        constraints = SearchConstraints()
        for seed in range(30):
            rng = np.random.default_rng(seed)
            parent = sample_random_genome(meta, constraints, rng)
            child, log = apply_random_mutations(parent, int(rng.integers(1, 8)), constraints, rng)
            assert validate(child, constraints).ok
            assert 1 <= len(log) <= 7

    @pytest.mark.parametrize("kind", list(MutationKind))
    def test_each_kind_alone_stays_valid(self, kind, genome):
        constraints = SearchConstraints()
        rng = np.random.default_rng(11)
        child, log = apply_random_mutations(genome, 5, constraints, rng, kinds=[kind])
        assert validate(child, constraints).ok
        assert {r.kind for r in log} == {kind}

    def test_restricted_constraints_are_respected(self):
        constraints = SearchConstraints(
            allowed_temporal_lens=frozenset({1, 3}), max_streams=2, max_repeats=2,
            conv_kinds=frozenset({LayerKind.CONV3D, LayerKind.ITGM}),
        )
        rng = np.random.default_rng(3)
        genome = sample_random_genome(MetaKind.TOY, constraints, rng)
        for _ in range(100):
            genome, _ = apply_random_mutations(genome, 3, constraints, rng)
            assert validate(genome, constraints).ok

    def test_same_rng_same_child(self, genome):
        a, log_a = apply_random_mutations(genome, 6, SearchConstraints(), np.random.default_rng(5))
        b, log_b = apply_random_mutations(genome, 6, SearchConstraints(), np.random.default_rng(5))
        assert a == b and log_a == log_b

    def test_exhaustion(self, rng, constraints):
        genome = sample_random_genome(MetaKind.INCEPTION, constraints, 0)
        with pytest.raises(MutationExhaustedError):
            apply_random_mutations(genome, 1, constraints, rng, kinds=[MutationKind.CHANGE_REPEAT_COUNT])

    def test_count_must_be_positive(self, genome, rng, constraints):
        with pytest.raises(ValueError):
            apply_random_mutations(genome, 0, constraints, rng)

    @pytest.mark.slow
    def test_ten_thousand_children_stay_valid(self):
        constraints = SearchConstraints()
        metas = list(MetaKind)
        rng = np.random.default_rng(10_000)
        for i in range(10_000):
            parent = sample_random_genome(metas[i % len(metas)], constraints, rng)
            child, _ = apply_random_mutations(parent, int(rng.integers(1, 8)), constraints, rng)
            report = validate(child, constraints)
            assert report.ok, (i, report.violations)


class TestReplay:
    @pytest.mark.parametrize("meta", list(MetaKind))
    def test_replay_reproduces_child(self, meta):
        constraints = SearchConstraints()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            parent = sample_random_genome(meta, constraints, rng)
            child, log = apply_random_mutations(parent, 7, constraints, rng)
            stored = [MutationRecord.from_dict(json.loads(json.dumps(r.to_dict()))) for r in log]
            assert replay_mutation_log(parent, stored, constraints) == child

    def test_mismatched_log_is_rejected(self, genome, rng):
        child, record = mutate_temporal_size(genome, (STEM, 0), rng)
        tampered = dataclasses.replace(record, before=record.before + 2)
        with pytest.raises(MutationError, match="replay mismatch"):
            replay_mutation_log(genome, [tampered])


def _all_streams(constraints):
    """Every stream the constraints allow, with placeholder channels."""
    options = {
        "1x1": [(LayerKind.CONV1X1X1, 1)],
        "st": list(itertools.product(constraints.conv_choices(), constraints.temporal_choices())),
        "pool": list(itertools.product(constraints.pool_choices(), constraints.temporal_choices())),
    }
    streams = []
    for stream_type, slots in STREAM_SLOTS.items():
        for layers in itertools.product(*(options[slot] for slot in slots)):
            streams.append(StreamSpec(stream_type, tuple(LayerSpec(k, t, 1) for k, t in layers)))
    return streams


def _neighbours(genome, constraints, all_streams):
    """Every genome one operator application away."""
    for path in layer_type_targets(genome):
        layer = get_layer(genome, path)
        for kind in constraints.conv_choices():
            if kind != layer.kind:
                yield replace_layer(genome, path, dataclasses.replace(layer, kind=kind))
    for path in temporal_size_targets(genome):
        layer = get_layer(genome, path)
        for t in constraints.temporal_choices():
            if t != layer.temporal_len:
                yield replace_layer(genome, path, dataclasses.replace(layer, temporal_len=t))
    for m, module in enumerate(genome.modules):
        variants = []
        if len(module.streams) > 1:
            variants += [module.streams[:s] + module.streams[s + 1 :] for s in range(len(module.streams))]
        if len(module.streams) < constraints.max_streams:
            variants += [module.streams + (s,) for s in all_streams]
        for streams in variants:
            resplit = resplit_streams(streams, module.total_out_channels)
            yield replace_module(genome, m, dataclasses.replace(module, streams=resplit))
        for r in range(1, constraints.max_repeats + 1):
            if r != module.repeats:
                yield replace_module(genome, m, dataclasses.replace(module, repeats=r))


class TestReachability:
    """Exhaustive search over small constrained spaces: any valid genome reaches any other."""

    @pytest.mark.parametrize(
        "constraints",
        [
            SearchConstraints(
                allowed_temporal_lens=frozenset({3}), max_streams=2, max_repeats=1,
                conv_kinds=frozenset({LayerKind.CONV3D, LayerKind.ITGM}),
            ),
            SearchConstraints(
                allowed_temporal_lens=frozenset({1, 3}), max_streams=2, max_repeats=1,
                conv_kinds=frozenset({LayerKind.ITGM}),
            ),
        ],
    )
    def test_sampled_genomes_reach_each_other(self, constraints):
        all_streams = _all_streams(constraints)
        start = sample_random_genome(MetaKind.TOY, constraints, 0)
        goals = {sample_random_genome(MetaKind.TOY, constraints, seed) for seed in range(1, 6)}

        seen = {start}
        queue = deque([start])
        while queue and not goals <= seen:
            current = queue.popleft()
            for neighbour in _neighbours(current, constraints, all_streams):
                if neighbour not in seen:
                    assert validate(neighbour, constraints).ok
                    seen.add(neighbour)
                    queue.append(neighbour)
        assert goals <= seen
