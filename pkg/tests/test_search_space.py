"""Tests for genome types, validation, sampling, JSON parsing and counting."""
import dataclasses
import json
import math

import pytest

from src.errors import ConfigError, GenomeParseError, InvalidGenomeError
from src.search_space.codec import genome_digest, genome_to_dict, parse_genome, serialize_genome
from src.search_space.counting import (
    count_genome_parameters,
    layer_option_count,
    layer_statistics,
    search_space_log10_size,
)
from src.search_space.sampler import sample_random_genome
from src.search_space.space import (
    META_LAYOUTS,
    LayerKind,
    LayerSpec,
    MetaKind,
    ModuleSpec,
    SearchConstraints,
    StreamType,
    effective_channels,
    module_stream_channels,
    resplit_streams,
    split_channels,
)
from src.search_space.validation import validate
from src.trainer.network import build_network
from tests.helpers import stream, toy_genome


def _replace_module(genome, index, **changes):
    modules = list(genome.modules)
    modules[index] = dataclasses.replace(modules[index], **changes)
    return dataclasses.replace(genome, modules=tuple(modules))


class TestChannels:
    def test_effective_channels_rounds_and_floors_at_one(self):
        assert effective_channels(64, 0.0625) == 4
        assert effective_channels(256, 1.0) == 256
        assert effective_channels(10, 0.01) == 1

    def test_split_gives_remainder_to_first_stream(self):
        assert split_channels(256, 3) == [86, 85, 85]
        assert split_channels(128, 2) == [64, 64]
        assert sum(split_channels(833, 6)) == 833

    def test_module_keeps_one_channel_per_stream(self):
        module = ModuleSpec(
            resplit_streams(tuple(stream(StreamType.T1_ONLY_1X1, (LayerKind.CONV1X1X1, 1)) for _ in range(5)), 128),
            1,
            128,
        )
        assert module_stream_channels(module, 0.01) == [1, 1, 1, 1, 1]


class TestValidation:
    def test_hand_built_genome_is_valid(self, genome):
        report = validate(genome)
        assert report.ok, report.violations

    def test_too_many_streams(self, genome):
        streams = tuple(stream(StreamType.T1_ONLY_1X1, (LayerKind.CONV1X1X1, 1)) for _ in range(7))
        bad = _replace_module(genome, 1, streams=resplit_streams(streams, 256))
        report = validate(bad)
        assert not report.ok
        assert "modules[1]: streams > 6" in report.violations

    def test_stream_count_bound_follows_constraints(self, genome):
        report = validate(genome, SearchConstraints(max_streams=1))
        assert "modules[0]: streams > 1" in report.violations

    def test_inception_repeats_are_fixed(self):
        genome = sample_random_genome(MetaKind.INCEPTION, SearchConstraints(), seed=5)
        bad = _replace_module(genome, 0, repeats=2)
        report = validate(bad)
        assert any("repeats fixed to 1" in v for v in report.violations)

    def test_repeats_outside_range(self, genome):
        report = validate(_replace_module(genome, 0, repeats=7))
        assert any(v.startswith("modules[0]: repeats 7 outside") for v in report.violations)

    def test_disallowed_temporal_length(self, genome):
        bad = dataclasses.replace(genome, stem=(LayerSpec(LayerKind.CONV3D, 4, 64),))
        report = validate(bad)
        assert report.violations == ["stem[0]: temporal_len not in allowed set (4)"]

    def test_wrong_stem_kind(self, genome):
        bad = dataclasses.replace(genome, stem=(LayerSpec(LayerKind.ITGM, 3, 64),))
        assert any("fixed stem kind conv3d" in v for v in validate(bad).violations)

    def test_layers_must_match_stream_type(self, genome):
        wrong = stream(StreamType.T4_POOL_THEN_1X1, (LayerKind.CONV3D, 3), (LayerKind.CONV1X1X1, 1))
        streams = resplit_streams((genome.modules[0].streams[0], wrong), 128)
        report = validate(_replace_module(genome, 0, streams=streams))
        assert any(v.startswith("modules[0].streams[1]: layers") for v in report.violations)

    def test_excluded_conv_kind_is_rejected(self, genome):
        constraints = SearchConstraints(conv_kinds=frozenset({LayerKind.CONV3D, LayerKind.CONV2PLUS1D}))
        report = validate(genome, constraints)
        assert any("modules[1].streams[0]" in v for v in report.violations)

    def test_excluded_pool_kind_is_rejected(self, genome):
        averaging = stream(StreamType.T4_POOL_THEN_1X1, (LayerKind.AVGPOOL, 3), (LayerKind.CONV1X1X1, 1))
        streams = resplit_streams((genome.modules[0].streams[0], averaging), 128)
        changed = _replace_module(genome, 0, streams=streams)
        report = validate(changed)
        assert any(v.startswith("modules[0].streams[1]: layers") for v in report.violations)
        both = SearchConstraints(pool_kinds=frozenset({LayerKind.MAXPOOL, LayerKind.AVGPOOL}))
        assert validate(changed, both).ok

    def test_stream_channels_must_match_share(self, genome):
        streams = genome.modules[0].streams
        lopsided = (streams[0], resplit_streams((streams[1],), 32)[0])
        report = validate(_replace_module(genome, 0, streams=lopsided))
        assert any("!= stream share 64" in v for v in report.violations)

    def test_bad_constraints_raise_config_error(self):
        with pytest.raises(ConfigError):
            SearchConstraints(allowed_temporal_lens=frozenset({2}))
        with pytest.raises(ConfigError):
            SearchConstraints(max_streams=0)


class TestSampler:
    @pytest.mark.parametrize("meta", list(MetaKind))
    def test_samples_are_valid(self, meta, constraints):
        for seed in range(25):
            genome = sample_random_genome(meta, constraints, seed)
            report = validate(genome, constraints)
            assert report.ok, report.violations
            assert len(genome.modules) == META_LAYOUTS[meta].num_modules

    @pytest.mark.slow
    @pytest.mark.parametrize("meta", list(MetaKind))
    def test_thousand_samples_are_valid_and_round_trip(self, meta, constraints):
        for seed in range(1000):
            genome = sample_random_genome(meta, constraints, seed)
            assert validate(genome, constraints).ok, seed
            assert parse_genome(serialize_genome(genome)) == genome

    def test_same_seed_same_genome(self, constraints):
        a = sample_random_genome(MetaKind.RESNET, constraints, 42)
        b = sample_random_genome(MetaKind.RESNET, constraints, 42)
        assert serialize_genome(a) == serialize_genome(b)

    def test_respects_restricted_constraints(self):
        constraints = SearchConstraints(
            allowed_temporal_lens=frozenset({3}),
            max_streams=2,
            max_repeats=1,
            conv_kinds=frozenset({LayerKind.ITGM}),
        )
        for seed in range(20):
            genome = sample_random_genome(MetaKind.TOY, constraints, seed)
            assert validate(genome, constraints).ok
            for module in genome.modules:
                assert 1 <= len(module.streams) <= 2
                assert module.repeats == 1
                for s in module.streams:
                    for layer in s.layers:
                        assert layer.kind in (LayerKind.CONV1X1X1, LayerKind.ITGM, LayerKind.MAXPOOL)
                        assert layer.temporal_len in (1, 3)

    def test_channel_scale_override(self, constraints):
        genome = sample_random_genome(MetaKind.TOY, constraints, 0, channel_scale=0.125)
        assert genome.channel_scale == 0.125
        assert sample_random_genome(MetaKind.TOY, constraints, 0).channel_scale == 0.0625


class TestCodec:
    def test_example_file_parses(self, example_genome_path):
        genome = parse_genome(example_genome_path.read_text(encoding="utf-8"))
        assert genome.meta == MetaKind.TOY
        assert [len(m.streams) for m in genome.modules] == [2, 3]

    def test_serialized_sample_parses_back(self, constraints):
        genome = sample_random_genome(MetaKind.INCEPTION, constraints, 9)
        text = serialize_genome(genome)
        assert text.endswith("\n")
        assert parse_genome(text) == genome
        assert genome_digest(parse_genome(text)) == genome_digest(genome)

    def test_malformed_json_reports_line_and_column(self):
        with pytest.raises(GenomeParseError) as excinfo:
            parse_genome('{"meta": "toy",\n  "stem": [}')
        assert excinfo.value.line == 2
        assert excinfo.value.column is not None
        assert str(excinfo.value).startswith("line 2, column")

    def test_unknown_stream_type_names_path(self, genome):
        doc = genome_to_dict(genome)
        doc["modules"][1]["streams"][0]["type"] = "t9"
        with pytest.raises(GenomeParseError) as excinfo:
            parse_genome(json.dumps(doc))
        assert excinfo.value.path == "modules[1].streams[0].type"

    def test_missing_and_unknown_fields(self, genome):
        doc = genome_to_dict(genome)
        del doc["modules"][0]["repeats"]
        with pytest.raises(GenomeParseError) as excinfo:
            parse_genome(json.dumps(doc))
        assert excinfo.value.path == "modules[0].repeats"
        assert excinfo.value.reason == "missing required field"

        doc = genome_to_dict(genome)
        doc["stem"][0]["stride"] = 2
        with pytest.raises(GenomeParseError) as excinfo:
            parse_genome(json.dumps(doc))
        assert excinfo.value.path == "stem[0].stride"

    def test_non_integer_temporal_length(self, genome):
        doc = genome_to_dict(genome)
        doc["stem"][0]["t"] = 3.0
        with pytest.raises(GenomeParseError) as excinfo:
            parse_genome(json.dumps(doc))
        assert excinfo.value.path == "stem[0].t"

    def test_invariant_violation_is_a_parse_error(self, genome):
        doc = genome_to_dict(genome)
        doc["modules"][0]["repeats"] = 9
        with pytest.raises(GenomeParseError) as excinfo:
            parse_genome(json.dumps(doc))
        assert excinfo.value.path == "modules[0]"
        assert "repeats 9" in excinfo.value.reason

    def test_constraints_apply_while_parsing(self, example_genome_path):
        text = example_genome_path.read_text(encoding="utf-8")
        with pytest.raises(GenomeParseError):
            parse_genome(text, SearchConstraints(conv_kinds=frozenset({LayerKind.CONV3D})))


class TestCounting:
    def test_parameter_count_by_hand(self, genome):
        # stem 324, module 0 496 (incl. 4->8 projection), module 1 1630 (incl. 8->16 projection)
        assert count_genome_parameters(genome) == 2450

    def test_repeats_count_once_per_repeat(self):
        assert count_genome_parameters(toy_genome(repeats=(1, 2))) == 2450 + 1630

    def test_matches_built_network(self, genome):
        network = build_network(genome, num_classes=8, init_seed=0, in_channels=3)
        head = network.parameters()["head.weight"].size
        assert count_genome_parameters(genome) == network.parameter_count() - network.bias_count() - head

    def test_invalid_genome_is_rejected(self, genome):
        with pytest.raises(InvalidGenomeError):
            count_genome_parameters(_replace_module(genome, 0, repeats=0))

    def test_option_counts(self, constraints):
        assert layer_option_count(constraints) == (19, 7)
        narrow = SearchConstraints(allowed_temporal_lens=frozenset({1, 3}))
        assert layer_option_count(narrow) == (7, 3)

    def test_log10_size_matches_exact_integer(self, constraints):
        for b, d in ((1, 1), (2, 1), (3, 2)):
            n = META_LAYOUTS[MetaKind.INCEPTION].num_modules
            exact = math.log10(19 ** (5 + b * n) + 7 ** (d * n))
            assert search_space_log10_size(constraints, MetaKind.INCEPTION, b, d) == pytest.approx(exact, rel=1e-12)

    def test_log10_size_rejects_empty_budget(self, constraints):
        with pytest.raises(ValueError):
            search_space_log10_size(constraints, MetaKind.TOY, 0, 1)

    def test_layer_statistics(self, genome):
        stats = layer_statistics(genome)
        assert stats["conv3d_count"] == 2
        assert stats["conv3d_mean_t"] == 3.0
        assert stats["conv21d_count"] == 1
        assert stats["itgm_count"] == 1
        assert stats["space_time_layers"] == 4
