"""Config tree loading, overrides, validation, and hashing."""

import pytest

from tdmfcc.config import (ENV_PREFIX, RunConfig, config_from_tree,
                           load_config)
from tdmfcc.errors import ConfigError


class TestDefaults:
    def test_empty_config_gives_documented_defaults(self):
        cfg = load_config(None, env={})
        assert cfg.schema_version == 1
        assert cfg.esn1.n_nodes == 35 and cfg.esn1.leak_rate == 1.0
        assert cfg.esn2.n_nodes == 400 and cfg.esn2.leak_rate == 0.3
        assert cfg.filterbank.n_filters == 25 and cfg.filterbank.n_coeffs == 14
        assert cfg.td.n_channels == 10 and cfg.td.signal_len == 200
        assert cfg.experiment.protocol == "holdout"
        assert cfg.experiment.n_folds == 5 and cfg.experiment.n_seeds == 10
        fc = cfg.frame_config()
        assert fc.frame_len_ms == 25.0 and fc.hop_ms == 10.0
        assert fc.n_fft == 1024 and fc.pre_emphasis == 0.97

    def test_mel_filterbank_builder(self):
        cfg = load_config(None, env={})
        fb = cfg.mel_filterbank()
        assert fb.n_filters == 25
        fb10 = cfg.mel_filterbank(n_filters=10)
        assert fb10.n_filters == 10


class TestFileLoading:
    def test_yaml_tree_parsed(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("""
dataset: {root: /data, scheme: fsdd}
experiment: {experiment: exp2, tasks: [digit, speaker], n_seeds: 3}
esn2: {n_nodes: 128}
global_seed: 42
""")
        cfg = load_config(p, env={})
        assert cfg.dataset.root == "/data"
        assert cfg.experiment.experiment == "exp2"
        assert cfg.experiment.tasks == ["digit", "speaker"]
        assert cfg.esn2.n_nodes == 128
        assert cfg.esn2.leak_rate == 0.3  # section default survives
        assert cfg.global_seed == 42

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml", env={})

    def test_non_mapping_root(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(p, env={})

    def test_empty_file_is_defaults(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("")
        cfg = load_config(p, env={})
        assert cfg.esn2.n_nodes == 400


class TestValidation:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            config_from_tree({"datasets": {}})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError, match="unknown keys in 'td'"):
            config_from_tree({"td": {"nchannels": 5}})

    def test_unknown_frame_key(self):
        with pytest.raises(ConfigError, match="unknown frame keys"):
            config_from_tree({"frame": {"hop_msec": 5}})

    def test_schema_version_mismatch(self):
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_tree({"schema_version": 2})

    @pytest.mark.parametrize("tree", [
        {"dataset": {"scheme": "timit"}},
        {"experiment": {"n_folds": 1}},
        {"experiment": {"tasks": ["phone"]}},
        {"experiment": {"tasks": []}},
        {"experiment": {"tasks": ["digit", "digit"]}},
        {"experiment": {"protocol": "loocv"}},
        {"td": {"holdback_fraction": 0.0}},
        {"td": {"signal_len": 1}},
        {"esn1": {"washout": -1}},
        {"esn2": {"ridge_lambda": -1.0}},
        {"filterbank": {"n_coeffs": 30}},
    ])
    def test_section_invariants(self, tree):
        with pytest.raises(ConfigError):
            config_from_tree(tree)

    def test_bad_mel_band_surfaces_at_build(self):
        cfg = config_from_tree({"filterbank": {"fmax_hz": 9000.0}})
        with pytest.raises(ConfigError, match="Nyquist"):
            cfg.mel_filterbank()


class TestOverrides:
    def test_set_overrides_are_typed(self):
        cfg = load_config(None, env={}, set_overrides=[
            "experiment.n_seeds=3",
            "td.post_log=true",
            "td.pairs_csv=null",
            "dataset.speakers=[anna, boris]",
            "esn2.ridge_lambda=1e-4",
        ])
        assert cfg.experiment.n_seeds == 3
        assert cfg.td.post_log is True
        assert cfg.td.pairs_csv is None
        assert cfg.dataset.speakers == ["anna", "boris"]
        assert cfg.esn2.ridge_lambda == 1e-4

    def test_set_beats_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("global_seed: 1\n")
        cfg = load_config(p, env={}, set_overrides=["global_seed=5"])
        assert cfg.global_seed == 5

    def test_malformed_set(self):
        with pytest.raises(ConfigError, match="dotted.path=value"):
            load_config(None, env={}, set_overrides=["global_seed"])

    def test_set_typo_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            load_config(None, env={}, set_overrides=["experiment.nseeds=3"])

    def test_env_overrides(self):
        env = {ENV_PREFIX + "GLOBAL_SEED": "9",
               ENV_PREFIX + "EXPERIMENT__PROTOCOL": "paper"}
        cfg = load_config(None, env=env)
        assert cfg.global_seed == 9
        assert cfg.experiment.protocol == "paper"

    def test_flags_beat_env(self):
        env = {ENV_PREFIX + "GLOBAL_SEED": "9"}
        cfg = load_config(None, env=env, set_overrides=["global_seed=3"])
        assert cfg.global_seed == 3


class TestHash:
    def test_stable_across_reload(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("global_seed: 4\nesn2: {n_nodes: 64}\n")
        h1 = load_config(p, env={}).config_hash()
        h2 = load_config(p, env={}).config_hash()
        assert h1 == h2
        assert len(h1) == 12

    def test_key_order_irrelevant(self, tmp_path):
        a, b = tmp_path / "a.yaml", tmp_path / "b.yaml"
        a.write_text("global_seed: 4\noutput_dir: x\n")
        b.write_text("output_dir: x\nglobal_seed: 4\n")
        assert load_config(a, env={}).config_hash() \
            == load_config(b, env={}).config_hash()

    def test_leaf_change_changes_hash(self):
        base = load_config(None, env={}).config_hash()
        other = load_config(None, env={},
                            set_overrides=["esn2.leak_rate=0.31"]).config_hash()
        assert base != other

    def test_tree_round_trip(self):
        cfg = load_config(None, env={},
                          set_overrides=["experiment.tasks=[speaker]"])
        again = config_from_tree(cfg.to_tree())
        assert again.config_hash() == cfg.config_hash()
