"""End-to-end tests of the evanet_cli.py subcommands."""
import json

import numpy as np
import pytest

from evanet_cli import main
from src.commands import EXIT_CONFIG, EXIT_IO, EXIT_OK, resolve_workers
from src.errors import ConfigError
from src.evolution.archive import RunArchive
from src.evolution.population import Individual
from src.logging import read_activity
from src.search_space.codec import parse_genome
from src.search_space.sampler import sample_random_genome
from src.search_space.space import MetaKind, SearchConstraints
from src.trainer.fitness import Fitness
from src.utils.config_loader import parse_run_config, resolved_document

TINY_TRAIN = {
    "train": {"iterations": 2, "batch_size": 4, "eval_every": 1, "dtype": "float64"},
    "data": {"frames": 4, "height": 8, "width": 8, "train_samples": 16, "val_samples": 8, "test_samples": 8},
}
ITGM_LAYER = "modules.0.repeat.0.stream.0.layer.1"


def _write_json(path, document):
    path.write_text(json.dumps(document), encoding="utf-8")
    return str(path)


@pytest.fixture
def evolve_config(tmp_path):
    return _write_json(
        tmp_path / "evolve.json",
        {"evolution": {"population_size": 4, "tournament_size": 2, "rounds": 5, "r": 2}},
    )


@pytest.fixture
def train_config(tmp_path):
    return _write_json(tmp_path / "train.json", TINY_TRAIN)


@pytest.fixture
def checkpoint(tmp_path, train_config, example_genome_path):
    out = tmp_path / "model"
    assert main(["train", "--genome", str(example_genome_path), "--config", train_config, "--out", str(out)]) == EXIT_OK
    return out


class TestSearchCommands:
    def test_evolve_writes_archive(self, tmp_path, evolve_config, capsys):
        out = tmp_path / "evo"
        assert main(["evolve", "--config", evolve_config, "--out", str(out)]) == EXIT_OK
        assert "Best fitness" in capsys.readouterr().out
        assert len(RunArchive(out).read_individuals()) == 9
        assert len((out / "trace.csv").read_text().splitlines()) == 6
        events = [e["event_type"] for e in read_activity(out / "activity.jsonl")]
        assert events[0] == "EVOLUTION_START" and events[-1] == "EVOLUTION_END"
        assert events.count("EVOLUTION_ROUND") == 5
        stored = json.loads((out / "config.json").read_text())
        assert stored["evolution"]["population_size"] == 4

    def test_rerun_with_other_config_is_refused(self, tmp_path, evolve_config):
        out = str(tmp_path / "evo")
        assert main(["evolve", "--config", evolve_config, "--out", out]) == EXIT_OK
        assert main(["evolve", "--config", evolve_config, "--out", out, "--seed", "5"]) == EXIT_IO

    def test_random_search_rejects_mutation_keys(self, tmp_path, evolve_config, capsys):
        code = main(["random-search", "--config", evolve_config, "--out", str(tmp_path / "rand")])
        assert code == EXIT_CONFIG
        assert "'r'" in capsys.readouterr().out

    def test_random_search(self, tmp_path):
        config = _write_json(tmp_path / "rand.json", {"evolution": {"population_size": 4, "rounds": 3}})
        assert main(["random-search", "--config", config, "--out", str(tmp_path / "rand")]) == EXIT_OK

    def test_malformed_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "evolution": {"rounds": 3,}\n}', encoding="utf-8")
        assert main(["evolve", "--config", str(path), "--out", str(tmp_path / "evo")]) == EXIT_CONFIG
        assert "line 2, column" in capsys.readouterr().out

    def test_missing_config_file(self, tmp_path):
        assert main(["evolve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_IO

    def test_usage_errors(self):
        assert main(["transmogrify"]) == 2
        assert main(["evolve"]) == 2

    def test_invalid_worker_count_from_environment(self, tmp_path, evolve_config, monkeypatch):
        monkeypatch.setenv("EVANET_WORKERS", "0")
        assert main(["evolve", "--config", evolve_config, "--out", str(tmp_path / "evo")]) == EXIT_CONFIG

    def test_internal_errors_during_search_are_not_config_errors(self, tmp_path, evolve_config, monkeypatch):
        def broken(*args, **kwargs):
            raise ValueError("tournament size must be in (1, 0]")

        monkeypatch.setattr("src.commands.run_evolution", broken)
        with pytest.raises(ValueError):
            main(["evolve", "--config", evolve_config, "--out", str(tmp_path / "evo")])


class TestResolveWorkers:
    def test_environment_wins(self, monkeypatch):
        monkeypatch.setenv("EVANET_WORKERS", "3")
        assert resolve_workers(8) == 3

    def test_flag_and_default(self, monkeypatch):
        monkeypatch.delenv("EVANET_WORKERS", raising=False)
        assert resolve_workers(None) == 1
        assert resolve_workers(4) == 4

    def test_rejects_garbage(self, monkeypatch):
        monkeypatch.setenv("EVANET_WORKERS", "many")
        with pytest.raises(ConfigError):
            resolve_workers(None)


class TestReport:
    @pytest.fixture
    def archive_dir(self, tmp_path):
        """Population 2, three rounds with fitnesses 0.2, 0.5, 0.4 after an initial 0.1 and 0.3."""
        directory = tmp_path / "run"
        archive = RunArchive(directory)
        archive.write_config(
            resolved_document(parse_run_config({"evolution": {"population_size": 2, "tournament_size": 2}}))
        )
        constraints = SearchConstraints()
        for i, value in enumerate([0.1, 0.3, 0.2, 0.5, 0.4]):
            genome = sample_random_genome(MetaKind.TOY, constraints, 100 + i)
            archive.append(Individual(i, genome, Fitness(value), None if i < 2 else 0, max(0, i - 1)))
        return directory

    def test_trace_and_top_models(self, tmp_path, archive_dir):
        out = tmp_path / "report" / "report.csv"
        assert main(["report", "--archive", str(archive_dir), "--out", str(out)]) == EXIT_OK
        assert out.read_text().splitlines() == [
            "round,best_fitness,mean_fitness,evaluations",
            "1,0.300000,0.250000,3",
            "2,0.500000,0.400000,4",
            "3,0.500000,0.450000,5",
        ]
        top = (out.parent / "report_top_models.csv").read_text().splitlines()
        assert top[0].startswith("rank,id,fitness,conv21d_count,conv3d_count,itgm_count,space_time_layers")
        assert [row.split(",")[:3] for row in top[1:]] == [
            ["1", "3", "0.500000"],
            ["2", "4", "0.400000"],
            ["3", "1", "0.300000"],
        ]
        best = parse_genome((out.parent / "report_top1.json").read_text())
        assert best == sample_random_genome(MetaKind.TOY, SearchConstraints(), 103)

    def test_too_few_distinct_genomes(self, tmp_path, archive_dir, capsys):
        out = tmp_path / "report.csv"
        assert main(["report", "--archive", str(archive_dir), "--out", str(out), "--top", "9"]) == EXIT_OK
        assert "Only 5 distinct genomes" in capsys.readouterr().out
        assert (tmp_path / "report_top5.json").exists()

    def test_missing_archive(self, tmp_path):
        assert main(["report", "--archive", str(tmp_path / "none"), "--out", str(tmp_path / "r.csv")]) == EXIT_IO


class TestTrainAndEnsemble:
    def test_train_writes_checkpoint_and_history(self, checkpoint, capsys):
        assert (checkpoint / "manifest.json").exists()
        assert (checkpoint / "history.csv").read_text().splitlines()[0] == "iteration,loss,val_acc"
        assert len((checkpoint / "history.csv").read_text().splitlines()) == 3
        manifest = json.loads((checkpoint / "manifest.json").read_text())
        assert "test_acc" in manifest["metrics"]

    def test_train_rejects_invalid_genome(self, tmp_path, train_config, example_genome_path):
        document = json.loads(example_genome_path.read_text())
        document["modules"][0]["repeats"] = 0
        genome_path = _write_json(tmp_path / "bad_genome.json", document)
        assert main(["train", "--genome", genome_path, "--config", train_config, "--out", str(tmp_path / "m")]) == EXIT_CONFIG

    def test_ensemble(self, tmp_path, checkpoint, train_config, example_genome_path, capsys):
        second_config = _write_json(tmp_path / "train2.json", {**TINY_TRAIN, "train": {**TINY_TRAIN["train"], "seed": 1}})
        second = tmp_path / "model2"
        assert main(["train", "--genome", str(example_genome_path), "--config", second_config, "--out", str(second)]) == 0
        capsys.readouterr()

        assert main(["ensemble", "--models", str(checkpoint), str(second), "--data-config", train_config]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("model 1: test accuracy ")
        assert lines[1].startswith("model 2: test accuracy ")
        assert lines[2].startswith("ensemble of 2: test accuracy ")

        assert main(["ensemble", "--models", str(checkpoint), str(second), "--data-config", train_config, "--top", "1"]) == 0
        assert capsys.readouterr().out.splitlines()[-1].startswith("ensemble of 1:")

    def test_ensemble_missing_checkpoint(self, tmp_path, train_config):
        assert main(["ensemble", "--models", str(tmp_path), "--data-config", train_config]) == EXIT_IO


class TestKernelInspect:
    def _blocks(self, text):
        return [block.splitlines() for block in text.strip("\n").split("\n\n")]

    def test_original_kernel(self, checkpoint, capsys):
        capsys.readouterr()
        assert main(["kernel-inspect", "--checkpoint", str(checkpoint), "--layer", ITGM_LAYER]) == EXIT_OK
        (block,) = self._blocks(capsys.readouterr().out)
        assert block[0] == "kernel,channel,t0,t1,t2,t3,t4"
        rows = [row.split(",") for row in block[1:]]
        assert len(rows) == 4
        for channel, row in enumerate(rows):
            assert row[:2] == ["original", str(channel)]
            assert sum(float(v) for v in row[2:]) == pytest.approx(1.0)

    def test_stretched_kernel(self, checkpoint, capsys):
        capsys.readouterr()
        args = ["kernel-inspect", "--checkpoint", str(checkpoint / "manifest.json"), "--layer", ITGM_LAYER, "--stretch", "9"]
        assert main(args) == EXIT_OK
        original, stretched = self._blocks(capsys.readouterr().out)
        assert stretched[0] == "kernel,channel," + ",".join(f"t{l}" for l in range(9))
        values = np.array([[float(v) for v in row.split(",")[2:]] for row in stretched[1:]])
        assert all(row.startswith("stretched,") for row in stretched[1:])
        np.testing.assert_allclose(values.sum(axis=1), np.ones(len(values)))

    @pytest.mark.parametrize(
        "layer,stretch", [("stem.0", None), ("modules.9.repeat.0.stream.0.layer.0", None), (ITGM_LAYER, 3)]
    )
    def test_rejections(self, checkpoint, layer, stretch):
        args = ["kernel-inspect", "--checkpoint", str(checkpoint), "--layer", layer]
        if stretch is not None:
            args += ["--stretch", str(stretch)]
        assert main(args) == EXIT_CONFIG


class TestCalibrate:
    def test_schedule_sweep_files(self, tmp_path, capsys):
        config = _write_json(
            tmp_path / "cal.json",
            {"evolution": {"population_size": 4, "tournament_size": 2, "rounds": 60, "d": 3, "r": 10}},
        )
        out = tmp_path / "cal"
        args = ["calibrate", "--kind", "schedules", "--config", config, "--out", str(out), "--seeds", "2"]
        assert main(args) == EXIT_OK
        assert len((out / "schedules_sweep.csv").read_text().splitlines()) == 1 + 3 * 2 * 2
        summary = (out / "schedules_summary.csv").read_text().splitlines()
        assert summary[0] == "variant,round,mean,median,runs"
        assert len(summary) == 1 + 3 * 2
        assert "variant=annealed, round=50" in capsys.readouterr().out

    def test_training_sweep_needs_genome(self, tmp_path, train_config):
        args = ["calibrate", "--kind", "training", "--config", train_config, "--out", str(tmp_path / "cal")]
        assert main(args) == EXIT_CONFIG

    def test_training_sweep(self, tmp_path, train_config, example_genome_path):
        out = tmp_path / "cal"
        args = [
            "calibrate", "--kind", "training", "--config", train_config, "--out", str(out),
            "--genome", str(example_genome_path), "--seeds", "1", "--learning-rates", "0.0", "0.01",
        ]
        assert main(args) == EXIT_OK
        rows = (out / "training_sweep.csv").read_text().splitlines()
        assert rows[0] == "learning_rate,seed,val_acc,final_loss,diverged"
        assert [row.split(",")[:2] for row in rows[1:]] == [["0.0", "0"], ["0.01", "0"]]
