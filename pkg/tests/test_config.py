from pathlib import Path

import numpy as np
import pytest

from engine.config_loader import DEFAULTS, RunConfig, worker_threads
from engine.data import GraphDataset
from engine.errors import ConfigError
from engine.gnn import GraphSample
from engine.partition import complete_adjacency
from engine.runner import model_config_for

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def write_yaml(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return path


class TestRunConfig:
    def test_defaults_without_file(self):
        cfg = RunConfig()
        assert cfg.tau == pytest.approx(0.283)
        assert cfg.max_iters == 50
        assert cfg.epochs == 200
        assert cfg.batch == 20
        assert cfg.folds == 10
        assert not cfg.stratified
        assert cfg.cloud_format is None

    def test_shipped_default_matches_built_in(self):
        cfg = RunConfig(CONFIG_DIR / "default.yaml")
        assert cfg.to_dict() == RunConfig().to_dict()

    def test_template_is_loadable(self):
        RunConfig(CONFIG_DIR / "config_template.yaml")

    def test_flat_and_sectioned_keys(self, tmp_path):
        path = write_yaml(tmp_path, "tau: 0.3\ntraining:\n  epochs: 7\nmodel:\n  edge_scheme: gauss_kernel\n")
        cfg = RunConfig(path)
        assert cfg.tau == pytest.approx(0.3)
        assert cfg.epochs == 7
        assert cfg.model_config().edge_scheme == "gauss_kernel"

    def test_overrides_beat_file(self, tmp_path):
        path = write_yaml(tmp_path, "epochs: 7\nlr: 0.01\n")
        cfg = RunConfig(path, overrides={"epochs": 3, "lr": None})
        assert cfg.epochs == 3
        assert cfg.lr == pytest.approx(0.01)

    def test_run_name(self, tmp_path):
        cfg = RunConfig(write_yaml(tmp_path, "run_name: trial\n"))
        assert cfg.run_name == "trial"
        assert cfg.to_dict()["run_name"] == "trial"

    def test_seed_flows_into_model(self):
        cfg = RunConfig(overrides={"seed": 11})
        assert cfg.model_config().seed == 11
        assert cfg.model_config(z=12).z == 12

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig(write_yaml(tmp_path, "temperature: 3\n"))

    def test_unknown_key_in_section(self, tmp_path):
        with pytest.raises(ConfigError, match="section 'icp'"):
            RunConfig(write_yaml(tmp_path, "icp:\n  iterations: 3\n"))

    def test_section_must_be_mapping(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig(write_yaml(tmp_path, "icp: 3\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="Run config not found"):
            RunConfig(tmp_path / "absent.yaml")

    def test_empty_file_means_defaults(self, tmp_path):
        assert RunConfig(write_yaml(tmp_path, "")).to_dict() == RunConfig().to_dict()

    @pytest.mark.parametrize(
        "key,value,attr",
        [("tau", 0, "tau"), ("tol", -1, "tol"), ("max_iters", 0, "max_iters"), ("folds", 1, "folds"),
         ("lr", 0, "lr"), ("batch", "many", "batch")],
    )
    def test_invalid_values(self, key, value, attr):
        cfg = RunConfig(overrides={key: value})
        with pytest.raises(ConfigError):
            getattr(cfg, attr)

    def test_invalid_model_value(self):
        with pytest.raises(ConfigError):
            RunConfig(overrides={"normalization": "laplacian"}).model_config()

    def test_defaults_not_shared_between_instances(self):
        RunConfig(overrides={"tau": 0.5})
        assert DEFAULTS["partition"]["tau"] == pytest.approx(0.283)
        assert RunConfig().tau == pytest.approx(0.283)


class TestWorkerThreads:
    def test_default_is_one(self):
        assert worker_threads() == 1

    def test_reads_environment(self, monkeypatch):
        monkeypatch.setenv("SEMGRAPH_THREADS", "4")
        assert worker_threads() == 4

    @pytest.mark.parametrize("raw", ["zero", "0", "-2"])
    def test_rejects_bad_values(self, monkeypatch, raw):
        monkeypatch.setenv("SEMGRAPH_THREADS", raw)
        with pytest.raises(ConfigError):
            worker_threads()


def one_node_dataset(features, kind):
    return GraphDataset([GraphSample(features, complete_adjacency(1), 0)], ["a"], feature_kind=kind)


class TestModelConfigFor:
    def test_one_hot_inputs_use_unit_edges_at_input_layer(self):
        config = model_config_for(RunConfig(), one_node_dataset(np.eye(1, 4), "one_hot"))
        assert config.first_edge_scheme == "default_one"
        assert config.edge_scheme == "exp_l2"
        assert config.addon_enabled

    def test_positions_keep_configured_scheme(self):
        config = model_config_for(RunConfig(), one_node_dataset(np.zeros((1, 3)), "position3d"))
        assert config.input_edge_scheme is None
        assert config.first_edge_scheme == "exp_l2"

    def test_explicit_input_scheme_wins(self):
        cfg = RunConfig(overrides={"input_edge_scheme": "gauss_kernel"})
        config = model_config_for(cfg, one_node_dataset(np.eye(1, 4), "one_hot"))
        assert config.first_edge_scheme == "gauss_kernel"
