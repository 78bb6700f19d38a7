import numpy as np
import pytest

from stlstm import cli, network, training
from stlstm.data import load_dataset

SYNTH_SPEC = """
joints = 16
class_count = 2
frames = 8
train_per_class = 3
test_per_class = 2
noise_sigma = 0.01
seed = 5
"""

TRAIN_CONFIG = """
[model]
architecture = st_lstm
traversal = tree
trust_gate = true
layers = 1
d = 3
lambda = 0.5
frames = 4
class_count = 2

[train]
epochs = 2
batch_size = 3
seed = 1
learning_rate = 0.002
clip_gradients = true

[data]
dataset = {dataset}

[output]
model = {model}
metrics = {metrics}
"""


@pytest.fixture()
def synth_dataset(tmp_path):
    spec = tmp_path / "spec.cfg"
    spec.write_text(SYNTH_SPEC)
    out = tmp_path / "data.jsonl"
    assert cli.main(["synth", str(spec), str(out)]) == 0
    return out


def write_train_config(tmp_path, dataset, **extra):
    model = tmp_path / "model.stl"
    metrics = tmp_path / "metrics.tsv"
    text = TRAIN_CONFIG.format(dataset=dataset, model=model, metrics=metrics)
    for line in extra.pop("extra_lines", []):
        text += line + "\n"
    path = tmp_path / "train.cfg"
    path.write_text(text)
    return path, model, metrics


class TestSynth:
    def test_deterministic_output(self, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text(SYNTH_SPEC)
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        assert cli.main(["synth", str(spec), str(a)]) == 0
        assert cli.main(["synth", str(spec), str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_samples_gives_empty_file(self, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("joints = 16\nclass_count = 2\ntrain_per_class = 0\n"
                        "test_per_class = 0\nframes = 4\nseed = 0\n")
        out = tmp_path / "empty.jsonl"
        assert cli.main(["synth", str(spec), str(out)]) == 0
        assert out.read_text() == ""
        assert load_dataset(out).sequences == []

    def test_generated_passes_validation(self, synth_dataset):
        dataset = load_dataset(synth_dataset)
        assert len(dataset.sequences) == 10
        assert dataset.class_count == 2

    def test_unknown_key_exits_2(self, tmp_path):
        spec = tmp_path / "spec.cfg"
        spec.write_text("joints = 16\nwiggle = 3\n")
        assert cli.main(["synth", str(spec), str(tmp_path / "x.jsonl")]) == 2


class TestTrain:
    def test_smoke_run_writes_model_and_metrics(self, tmp_path, synth_dataset, capsys):
        cfg, model_path, metrics_path = write_train_config(tmp_path, synth_dataset)
        assert cli.main(["train", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "final train_accuracy=" in out
        model = network.load_model(model_path)
        assert model.config.trust_gate
        lines = metrics_path.read_text().splitlines()
        assert lines[0].startswith("# epoch")
        assert len(lines) == 3  # header + 2 epochs

    def test_fixed_seed_metrics_identical(self, tmp_path, synth_dataset):
        cfg, model_path, metrics_path = write_train_config(tmp_path, synth_dataset)
        assert cli.main(["train", "--config", str(cfg)]) == 0
        first = metrics_path.read_bytes()
        first_model = model_path.read_bytes()
        assert cli.main(["train", "--config", str(cfg)]) == 0
        assert metrics_path.read_bytes() == first
        assert model_path.read_bytes() == first_model

    def test_missing_dataset_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("[model]\nd = 3\n")
        assert cli.main(["train", "--config", str(cfg)]) == 2
        assert "dataset" in capsys.readouterr().err

    def test_unknown_config_key_exits_2_without_output(self, tmp_path, synth_dataset):
        cfg, model_path, metrics_path = write_train_config(
            tmp_path, synth_dataset, extra_lines=["[train]", "bogus = 1"])
        assert cli.main(["train", "--config", str(cfg)]) == 2
        assert not model_path.exists()
        assert not metrics_path.exists()

    def test_set_override(self, tmp_path, synth_dataset, capsys):
        cfg, model_path, _ = write_train_config(tmp_path, synth_dataset)
        assert cli.main(["train", "--config", str(cfg),
                         "--set", "train.epochs=1"]) == 0
        assert cli.main(["train", "--config", str(cfg),
                         "--set", "nope.epochs=1"]) == 2


@pytest.fixture()
def trained(tmp_path, synth_dataset):
    cfg, model_path, metrics = write_train_config(tmp_path, synth_dataset)
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return model_path, synth_dataset


class TestEval:
    def test_reports_each_p_ascending(self, trained, capsys):
        model_path, dataset = trained
        assert cli.main(["eval", str(model_path), str(dataset),
                         "--early-stop-p", "1.0,0.5"]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("p=")]
        assert lines[0].startswith("p=0.50")
        assert lines[1].startswith("p=1.00")

    def test_p_one_equals_plain(self, trained, capsys):
        model_path, dataset = trained
        assert cli.main(["eval", str(model_path), str(dataset)]) == 0
        plain = capsys.readouterr().out
        assert cli.main(["eval", str(model_path), str(dataset),
                         "--early-stop-p", "1.0"]) == 0
        assert capsys.readouterr().out == plain

    def test_per_class_weighted_average_matches_overall(self, trained):
        model_path, dataset_path = trained
        model = network.load_model(model_path)
        dataset = load_dataset(dataset_path)
        from stlstm.skeleton import default_graph, tree_traversal
        order = tree_traversal(default_graph(16)).steps
        seqs = dataset.subset("test")
        accuracy, per_class, _ = training.evaluate(model, seqs, order)
        counts = {cls: sum(1 for s in seqs if s.label == cls) for cls in per_class}
        weighted = sum(per_class[c] * counts[c] for c in per_class) / len(seqs)
        assert abs(weighted - accuracy) < 1e-9

    def test_class_count_mismatch_exits_3(self, tmp_path, trained):
        model_path, dataset_path = trained
        text = dataset_path.read_text().replace('"label":2', '"label":9')
        bad = tmp_path / "bad.jsonl"
        bad.write_text(text)
        assert cli.main(["eval", str(model_path), str(bad)]) == 3

    def test_bad_p_exits_2(self, trained):
        model_path, dataset = trained
        assert cli.main(["eval", str(model_path), str(dataset),
                         "--early-stop-p", "0.0"]) == 2

    def test_missing_model_exits_2(self, trained):
        _, dataset = trained
        assert cli.main(["eval", "/does/not/exist.stl", str(dataset)]) == 2


class TestGates:
    def test_zero_magnitude_zero_difference(self, trained, capsys):
        model_path, dataset = trained
        assert cli.main(["gates", str(model_path), str(dataset),
                         "--joint", "5", "--magnitude", "0"]) == 0
        out = capsys.readouterr().out
        assert "mean_difference=0.000000" in out

    def test_one_entry_per_affected_step(self, trained, capsys):
        model_path, dataset = trained
        assert cli.main(["gates", str(model_path), str(dataset),
                         "--joint", "5"]) == 0
        out = capsys.readouterr().out
        rows = [l for l in out.splitlines()
                if l and not l.startswith("#") and not l.startswith("mean")]
        # joint 5 appears twice in the tree traversal of the 16-joint figure,
        # and the trained model uses frames=4
        assert len(rows) == 2 * 4

    def test_trustless_model_exits_4(self, tmp_path, synth_dataset, capsys):
        cfg, model_path, _ = write_train_config(tmp_path, synth_dataset)
        assert cli.main(["train", "--config", str(cfg),
                         "--set", "model.trust_gate=false"]) == 0
        assert cli.main(["gates", str(model_path), str(synth_dataset),
                         "--joint", "3"]) == 4
        assert "trust gate" in capsys.readouterr().err

    def test_joint_out_of_range_exits_2(self, trained):
        model_path, dataset = trained
        assert cli.main(["gates", str(model_path), str(dataset),
                         "--joint", "40"]) == 2


class TestGradcheck:
    def test_passes_and_corrupt_fails(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "GRADCHECK_VARIANTS", ("st_lstm",))
        assert cli.main(["gradcheck", "--seed", "0"]) == 0
        assert "ok" in capsys.readouterr().out
        assert cli.main(["gradcheck", "--seed", "0", "--corrupt"]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestAblate:
    def test_single_variant_rows_and_determinism(self, tmp_path, synth_dataset, capsys):
        cfg, _, _ = write_train_config(tmp_path, synth_dataset)
        table = tmp_path / "table.tsv"
        args = ["ablate", "--config", str(cfg), "--variants", "chain,chain",
                "--seeds", "3", "--out", str(table)]
        assert cli.main(args) == 0
        capsys.readouterr()
        lines = table.read_text().splitlines()
        assert lines[0].startswith("# variant")
        rows = lines[1:]
        assert len(rows) == 2
        assert rows[0] == rows[1]  # identical variant + seed => identical row

    def test_baseline_variants(self, tmp_path, synth_dataset, capsys):
        cfg, _, _ = write_train_config(tmp_path, synth_dataset)
        table = tmp_path / "table.tsv"
        args = ["ablate", "--config", str(cfg),
                "--variants", "temporal_average,lstm+trust,tree+trust-nolink",
                "--seeds", "1,2", "--out", str(table)]
        assert cli.main(args) == 0
        rows = [l for l in table.read_text().splitlines()[1:] if l]
        assert len(rows) == 6
        out = capsys.readouterr().out
        assert "# summary" in out

    def test_unknown_variant_exits_2(self, tmp_path, synth_dataset):
        cfg, _, _ = write_train_config(tmp_path, synth_dataset)
        assert cli.main(["ablate", "--config", str(cfg),
                         "--variants", "pyramid"]) == 2


class TestGraphFileFlow:
    def test_eval_with_explicit_graph_file(self, tmp_path, trained, capsys):
        from stlstm.skeleton import default_16_joint_graph, format_graph_file
        model_path, dataset = trained
        graph_path = tmp_path / "graph.txt"
        graph_path.write_text(format_graph_file(default_16_joint_graph()))
        assert cli.main(["eval", str(model_path), str(dataset),
                         "--graph", str(graph_path)]) == 0

    def test_wrong_joint_count_graph_exits_3(self, tmp_path, trained):
        from stlstm.skeleton import default_graph, format_graph_file
        model_path, dataset = trained
        graph_path = tmp_path / "graph.txt"
        graph_path.write_text(format_graph_file(default_graph(5)))
        assert cli.main(["eval", str(model_path), str(dataset),
                         "--graph", str(graph_path)]) == 3
