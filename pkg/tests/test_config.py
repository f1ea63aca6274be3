import pytest

from fedsim.config import ConfigError, build_experiment_data, parse_config

MINIMAL = """
out_dir: {out}
seeds: [1]
model: {{d_in: 6, classes: 4}}
algo: {{kind: univarfl}}
data: {{per_class: 20}}
fed: {{clients: 2, rounds: 1, local_epochs: 1, batch_size: 8}}
"""


def _minimal(out="runs/x"):
    return MINIMAL.format(out=out)


class TestParse:
    def test_defaults_match_reference_protocol(self):
        cfg = parse_config(_minimal())
        assert cfg.fed.lr == 0.01
        assert cfg.fed.momentum == 0.9
        assert cfg.fed.weight_decay == 1e-5
        assert cfg.raw["fed"]["local_epochs"] == 1  # explicit wins
        assert cfg.algorithm.mu == 0.5
        assert cfg.algorithm.lam == 1.0  # classes / 4
        assert cfg.algorithm.he_eps == 1e-4
        assert cfg.raw["algo"]["mu_prox"] == 0.01

    def test_default_local_epochs_is_ten(self):
        cfg = parse_config(
            "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 4}\n"
            "algo: {kind: fedavg}\nfed: {clients: 2}\n")
        assert cfg.fed.local_epochs == 10
        assert cfg.fed.rounds == 100

    def test_lambda_defaults_to_quarter_of_classes(self):
        cfg = parse_config(
            "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 100}\n"
            "algo: {kind: univarfl}\nfed: {clients: 2}\n")
        assert cfg.algorithm.lam == 25.0

    def test_explicit_lambda_respected(self):
        cfg = parse_config(
            "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 100}\n"
            "algo: {kind: univarfl, lambda: 3.5}\nfed: {clients: 2}\n")
        assert cfg.algorithm.lam == 3.5

    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ConfigError, match="fed.rh0"):
            parse_config(
                "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 4}\n"
                "algo: {kind: fedavg}\nfed: {clients: 2, rh0: 0.5}\n")

    def test_rho_out_of_range_rejected(self):
        with pytest.raises(ConfigError, match="participation out of range"):
            parse_config(
                "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 4}\n"
                "algo: {kind: fedavg}\nfed: {clients: 2, rho: 1.5}\n")

    def test_type_error_names_key(self):
        with pytest.raises(ConfigError, match="fed.clients"):
            parse_config(
                "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 4}\n"
                "algo: {kind: fedavg}\nfed: {clients: two}\n")

    def test_missing_required_key_named(self):
        with pytest.raises(ConfigError, match="model.classes"):
            parse_config(
                "out_dir: x\nseeds: [1]\nmodel: {d_in: 6}\n"
                "algo: {kind: fedavg}\nfed: {clients: 2}\n")
        with pytest.raises(ConfigError, match="seeds"):
            parse_config(
                "out_dir: x\nmodel: {d_in: 6, classes: 4}\n"
                "algo: {kind: fedavg}\nfed: {clients: 2}\n")

    def test_unknown_algorithm_rejected(self):
        with pytest.raises(ConfigError, match="algo.kind"):
            parse_config(
                "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 4}\n"
                "algo: {kind: moon}\nfed: {clients: 2}\n")

    def test_freeze_kind_freezes_classifier(self):
        cfg = parse_config(
            "out_dir: x\nseeds: [1]\nmodel: {d_in: 6, classes: 4}\n"
            "algo: {kind: freeze}\nfed: {clients: 2}\n")
        assert cfg.model.classifier_frozen

    def test_file_path_source(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text(_minimal())
        cfg = parse_config(str(p))
        assert cfg.fed.clients == 2

    def test_garbage_source_rejected(self):
        with pytest.raises(ConfigError, match="neither an existing file"):
            parse_config("definitely/not/a/file.yaml")

    def test_digest_changes_with_any_field(self):
        a = parse_config(_minimal())
        b = parse_config(_minimal())
        assert a.digest() == b.digest()
        c = parse_config(_minimal().replace("rounds: 1", "rounds: 2"))
        assert c.digest() != a.digest()


class TestBuildData:
    def test_synthetic_pipeline_shapes(self):
        cfg = parse_config(_minimal())
        data = build_experiment_data(cfg, seed=1)
        assert len(data.clients) == 2
        assert sum(len(c) for c in data.clients) == len(data.train)
        assert len(data.train) + len(data.val) == 80
        assert len(data.test) == 80  # test_per_class defaults to per_class
        assert all(len(c) >= 1 for c in data.clients)

    def test_same_seed_same_data(self):
        import numpy as np

        cfg = parse_config(_minimal())
        a = build_experiment_data(cfg, seed=3)
        b = build_experiment_data(cfg, seed=3)
        assert np.array_equal(a.test.x, b.test.x)
        assert all(np.array_equal(x.x, y.x) for x, y in zip(a.clients, b.clients))

    def test_partition_independent_of_rounds(self):
        import numpy as np

        cfg_a = parse_config(_minimal())
        cfg_b = parse_config(_minimal().replace("rounds: 1", "rounds: 7"))
        a = build_experiment_data(cfg_a, seed=5)
        b = build_experiment_data(cfg_b, seed=5)
        assert all(np.array_equal(x.x, y.x) for x, y in zip(a.clients, b.clients))

    def test_feature_shift_pipeline(self):
        text = _minimal().replace(
            "data: {per_class: 20}",
            "data: {per_class: 20, partition: feature_shift, bias_scale: 0.2}")
        cfg = parse_config(text)
        data = build_experiment_data(cfg, seed=1)
        assert len(data.clients) == 2

    def test_idx_missing_path_rejected(self):
        text = _minimal().replace(
            "data: {per_class: 20}", "data: {kind: idx, images: /nope.idx, labels: /nope.idx}")
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(text)
