import json
import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from engine.cli import cli
from engine.data import load_dataset
from engine.pointcloud import load_cloud
from engine.runner import load_model

SMALL_MODEL = ["--layer-dims", "4,4,4,1", "--z", "10"]


def invoke(*args):
    result = CliRunner().invoke(cli, [str(a) for a in args])
    return result


@pytest.fixture
def corpus(tmp_path):
    result = invoke("synth", "clouds", tmp_path / "corpus", "-n", 2, "--seed", 3)
    assert result.exit_code == 0, result.output
    return tmp_path / "corpus"


@pytest.fixture
def graphs(tmp_path):
    path = tmp_path / "families.semgraph"
    result = invoke("synth", "graphs", path, "-n", 10)
    assert result.exit_code == 0, result.output
    return path


class TestHelp:
    def test_lists_commands(self):
        result = invoke("--help")
        assert result.exit_code == 0
        for command in ("annotate", "extract", "train", "eval", "xval", "ablate", "synth", "info"):
            assert command in result.output

    def test_version(self):
        result = invoke("--version")
        assert result.exit_code == 0
        assert "SemGraph" in result.output


class TestAnnotateExtract:
    def test_labels_match_generator_truth(self, corpus, tmp_path):
        run_dir = tmp_path / "annotated"
        result = invoke("annotate", "--source", corpus / "sources", "--templates", corpus / "templates", "--out", run_dir)
        assert result.exit_code == 0, result.output

        matched = total = 0
        for truth_path in sorted((corpus / "truth").glob("*/*.xyz")):
            truth = load_cloud(truth_path)
            labeled = load_cloud(run_dir / "labeled" / truth_path.parent.name / truth_path.name)
            matched += int((truth.labels == labeled.labels).sum())
            total += len(truth)
        assert total > 0
        assert matched / total >= 0.99

        report = pd.read_csv(run_dir / "annotate_report.csv")
        assert len(report) == 6
        assert set(report["template_used"]) == {"lamp/lamp", "stool/stool", "table/table"}
        assert (run_dir / "metadata.json").exists()
        assert (run_dir / "run_log.txt").exists()

    def test_source_identical_to_template(self, corpus, tmp_path):
        template = corpus / "templates" / "stool" / "stool.xyz"
        sources = tmp_path / "same" / "stool"
        sources.mkdir(parents=True)
        (sources / "copy.xyz").write_text("\n".join(" ".join(l.split()[:3]) for l in template.read_text().splitlines()) + "\n")
        result = invoke("annotate", "--source", tmp_path / "same", "--templates", corpus / "templates", "--out", tmp_path / "run")
        assert result.exit_code == 0, result.output
        labeled = load_cloud(tmp_path / "run" / "labeled" / "stool" / "copy.xyz")
        np.testing.assert_array_equal(labeled.labels, load_cloud(template).labels)
        assert pd.read_csv(tmp_path / "run" / "annotate_report.csv")["final_error"].iloc[0] < 1e-12

    def test_extract_with_split_file(self, corpus, tmp_path):
        split = tmp_path / "test_ids.txt"
        split.write_text("table_000.xyz\nlamp_001\n")
        output = tmp_path / "graphs" / "parts.semgraph"
        result = invoke("extract", corpus / "truth", "-o", output, "--split-file", split, "--out", tmp_path / "ext")
        assert result.exit_code == 0, result.output

        ds = load_dataset(output)
        assert len(ds) == 6
        assert ds.class_names == ["lamp", "stool", "table"]
        nodes = {s.name: s.num_nodes for s in ds.samples}
        assert nodes["table_000"] == 5
        assert nodes["stool_000"] == 4
        assert nodes["lamp_000"] == 3

        assert len(load_dataset(output.with_name("parts_test.semgraph"))) == 2
        assert len(load_dataset(output.with_name("parts_train.semgraph"))) == 4
        hist = pd.read_csv(tmp_path / "ext" / "node_histogram.csv")
        assert hist["graphs"].sum() == 6

    def test_empty_template_dir_fails(self, corpus, tmp_path):
        empty = tmp_path / "no_templates"
        empty.mkdir()
        result = invoke("annotate", "--source", corpus / "sources", "--templates", empty, "--out", tmp_path / "run")
        assert result.exit_code != 0
        assert "No labeled templates" in result.output

    def test_loose_source_file_is_an_error(self, corpus, tmp_path):
        (corpus / "sources" / "stray.xyz").write_text("0 0 0\n1 1 1\n2 2 2\n")
        result = invoke("annotate", "--source", corpus / "sources", "--templates", corpus / "templates", "--out", tmp_path / "run")
        assert result.exit_code == 1
        assert "not inside a category folder" in result.output
        assert (tmp_path / "run" / "labeled" / "table" / "table_000.xyz").exists()

    def test_missing_config(self, corpus, tmp_path):
        result = invoke("annotate", "--source", corpus / "sources", "--templates", corpus / "templates", "-c", tmp_path / "absent.yaml")
        assert result.exit_code != 0
        assert "Run config not found" in result.output

    def test_source_and_templates_are_required_options(self, corpus, tmp_path):
        positional = invoke("annotate", corpus / "sources", corpus / "templates", "--out", tmp_path / "run")
        assert positional.exit_code == 2
        missing = invoke("annotate", "--source", corpus / "sources", "--out", tmp_path / "run")
        assert missing.exit_code == 2
        assert "--templates" in missing.output

    def test_tau_is_not_an_annotate_option(self, corpus, tmp_path):
        result = invoke("annotate", "--source", corpus / "sources", "--templates", corpus / "templates", "--tau", 0.3)
        assert result.exit_code == 2
        assert "No such option" in result.output


class TestTrainEval:
    def test_train_then_eval(self, graphs, tmp_path):
        run_dir = tmp_path / "train"
        result = invoke("train", graphs, *SMALL_MODEL, "--epochs", 3, "--batch", 5, "--out", run_dir)
        assert result.exit_code == 0, result.output
        epochs = pd.read_csv(run_dir / "epochs.csv")
        assert epochs["epoch"].tolist() == [1, 2, 3]
        assert (run_dir / "confusion.csv").exists()

        result = invoke("eval", graphs, run_dir / "checkpoint.npz", "--out", tmp_path / "eval")
        assert result.exit_code == 0, result.output
        assert "Overall accuracy:" in result.output
        scores = pd.read_csv(tmp_path / "eval" / "eval.csv")
        assert scores["graphs"].tolist() == [20]

    def test_runs_are_byte_identical(self, graphs, tmp_path):
        for name in ("a", "b"):
            result = invoke("train", graphs, *SMALL_MODEL, "--epochs", 2, "--seed", 9, "--out", tmp_path / name)
            assert result.exit_code == 0, result.output
        for csv in ("epochs.csv", "confusion.csv"):
            assert (tmp_path / "a" / csv).read_bytes() == (tmp_path / "b" / csv).read_bytes()

    def test_warm_start_shape_mismatch(self, graphs, tmp_path):
        invoke("train", graphs, *SMALL_MODEL, "--epochs", 1, "--out", tmp_path / "first")
        result = invoke(
            "train", graphs, "--layer-dims", "8,8,8,1", "--z", "10", "--epochs", 1,
            "--init", tmp_path / "first" / "checkpoint.npz", "--out", tmp_path / "second",
        )
        assert result.exit_code != 0
        assert "expected shape" in result.output
        assert not (tmp_path / "second").exists()

    def test_test_set_rows(self, graphs, tmp_path):
        result = invoke("train", graphs, *SMALL_MODEL, "--epochs", 2, "--test", graphs, "--out", tmp_path / "run")
        assert result.exit_code == 0, result.output
        epochs = pd.read_csv(tmp_path / "run" / "epochs.csv")
        assert epochs["split"].tolist() == ["train", "test", "train", "test"]

    def test_bad_layer_dims(self, graphs):
        result = invoke("train", graphs, "--layer-dims", "4,x")
        assert result.exit_code != 0


    def test_train_on_tu_fixture_records_input_scheme(self, tmp_path):
        write_tu_fixture(tmp_path)
        result = invoke("train", tmp_path, "--tu", "TOY20", *SMALL_MODEL, "--epochs", 1, "--out", tmp_path / "tr")
        assert result.exit_code == 0, result.output
        params, meta, _ = load_model(tmp_path / "tr" / "checkpoint.npz")
        assert meta["feature_kind"] == "one_hot"
        assert params.config.first_edge_scheme == "default_one"
        assert params.config.edge_scheme == "exp_l2"
    @pytest.mark.slow
    def test_separable_families_default_model(self, tmp_path):
        train_path, test_path = tmp_path / "train.semgraph", tmp_path / "test.semgraph"
        assert invoke("synth", "graphs", train_path, "-n", 100, "--seed", 0).exit_code == 0
        assert invoke("synth", "graphs", test_path, "-n", 50, "--seed", 1).exit_code == 0
        result = invoke("train", train_path, "--test", test_path, "--epochs", 40, "--out", tmp_path / "run")
        assert result.exit_code == 0, result.output
        result = invoke("eval", test_path, tmp_path / "run" / "checkpoint.npz", "--out", tmp_path / "eval")
        accuracy = pd.read_csv(tmp_path / "eval" / "eval.csv")["accuracy"].iloc[0]
        assert accuracy >= 0.95


def write_tu_fixture(directory, name="TOY20"):
    """20 graphs: odd ids are 3-node paths (label 1), even ids 5-node cycles (label 2)."""
    indicator, node_labels, edges, graph_labels = [], [], [], []
    next_node = 1
    for g in range(1, 21):
        n = 3 if g % 2 else 5
        ids = list(range(next_node, next_node + n))
        next_node += n
        indicator += [g] * n
        node_labels += [i % 3 for i in range(n)]
        pairs = list(zip(ids, ids[1:])) + ([(ids[-1], ids[0])] if n == 5 else [])
        edges += pairs + [(b, a) for a, b in pairs]
        graph_labels.append(1 if g % 2 else 2)
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(map(str, indicator)) + "\n")
    (directory / f"{name}_node_labels.txt").write_text("\n".join(map(str, node_labels)) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text("\n".join(map(str, graph_labels)) + "\n")
    (directory / f"{name}_A.txt").write_text("".join(f"{a}, {b}\n" for a, b in edges))
    return directory


class TestXvalAblate:
    def test_xval_rows_and_summary(self, tmp_path):
        data = tmp_path / "hundred.semgraph"
        assert invoke("synth", "graphs", data, "-n", 50).exit_code == 0
        result = invoke("xval", data, "-k", 10, *SMALL_MODEL, "--epochs", 1, "--out", tmp_path / "xv")
        assert result.exit_code == 0, result.output
        df = pd.read_csv(tmp_path / "xv" / "xval.csv")
        assert df["fold"].tolist() == [str(i) for i in range(10)] + ["mean"]
        assert df["test_size"].iloc[:10].sum() == 100
        assert 0.0 <= df["accuracy"].iloc[-1] <= 1.0

    def test_xval_on_tu_fixture(self, tmp_path):
        write_tu_fixture(tmp_path)
        result = invoke(
            "xval", tmp_path, "--tu", "TOY20", "-k", 5, "--stratified", *SMALL_MODEL,
            "--epochs", 2, "--out", tmp_path / "xv",
        )
        assert result.exit_code == 0, result.output
        assert "default_one at the input layer, exp_l2 after" in result.output
        model = json.loads((tmp_path / "xv" / "metadata.json").read_text())["model"]
        assert model["input_edge_scheme"] == "default_one"
        assert model["edge_scheme"] == "exp_l2"
        assert model["addon_enabled"] is True
        df = pd.read_csv(tmp_path / "xv" / "xval.csv")
        folds = df.iloc[:5]
        assert folds["test_size"].tolist() == [4] * 5
        assert (folds["train_size"] + folds["test_size"]).tolist() == [20] * 5
        assert df["accuracy"].between(0.0, 1.0).all()

    @pytest.mark.slow
    def test_xval_on_local_proteins(self, tmp_path):
        tu_dir = os.environ.get("SEMGRAPH_TU_DIR")
        if not tu_dir or not (Path(tu_dir) / "PROTEINS_A.txt").exists():
            pytest.skip("PROTEINS not available; set SEMGRAPH_TU_DIR to run")
        result = invoke("xval", tu_dir, "--tu", "PROTEINS", "-k", 10, "--epochs", 5, "--out", tmp_path / "xv")
        assert result.exit_code == 0, result.output
        df = pd.read_csv(tmp_path / "xv" / "xval.csv")
        assert len(df) == 11
        assert 0.0 <= df["accuracy"].iloc[-1] <= 1.0

    def test_ablate_full_grid(self, graphs, tmp_path):
        result = invoke("ablate", graphs, "--grid", "both", "-k", 2, *SMALL_MODEL, "--epochs", 1, "--out", tmp_path / "ab")
        assert result.exit_code == 0, result.output
        df = pd.read_csv(tmp_path / "ab" / "ablation.csv")
        assert len(df) == 20
        assert df["folds"].unique().tolist() == [2]
        assert len(set(zip(df["edge_scheme"], df["normalization"]))) == 20

    def test_ablate_variants_on_holdout(self, graphs, tmp_path):
        result = invoke("ablate", graphs, "--grid", "variants", "--test", graphs, *SMALL_MODEL, "--epochs", 1,
                        "--out", tmp_path / "ab")
        assert result.exit_code == 0, result.output
        df = pd.read_csv(tmp_path / "ab" / "ablation.csv")
        assert df["variant"].tolist() == ["BM", "BM+EFS", "BM+EFS+AoL"]
        assert df["addon_enabled"].tolist() == [False, False, True]
        assert set(df["folds"]) == {"holdout"}


class TestInfo:
    def test_summary_printed(self, graphs):
        result = invoke("info", graphs)
        assert result.exit_code == 0, result.output
        assert "Graphs: 20" in result.output
        assert "compact: 10" in result.output

    def test_missing_dataset(self, tmp_path):
        result = invoke("info", tmp_path / "absent.semgraph")
        assert result.exit_code != 0


def test_run_directory_defaults_under_home(graphs, semgraph_home):
    result = invoke("train", graphs, *SMALL_MODEL, "--epochs", 1, "--run-name", "nightly")
    assert result.exit_code == 0, result.output
    assert (Path(semgraph_home) / "runs" / "train" / "nightly" / "checkpoint.npz").exists()
    assert np.isfinite(pd.read_csv(Path(semgraph_home) / "runs" / "train" / "nightly" / "epochs.csv")["loss"]).all()
