"""Trainer: config validation, determinism, checkpoint round trips."""

import json

import numpy as np
import pytest

import importlib

train_mod = importlib.import_module("motionseg.train")

from motionseg.tensor import NumericError
from motionseg.train import (
    Adam,
    ConfigError,
    TrainConfig,
    build_models,
    load_checkpoint,
    load_config,
    merged_params,
    save_checkpoint,
    train,
    train_split,
)


def fast_config(**overrides) -> TrainConfig:
    base = dict(variant="full", k_parts=2, batch_size=2, iterations=6,
                scales=(64, 32), extractor_channels=(4,), checkpoint_every=0,
                seed=3, train_fraction=0.67)
    base.update(overrides)
    return TrainConfig(**base).validate()


def read_loss_rows(path, skip_wall=True):
    rows = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        for line in f:
            cells = line.strip().split(",")
            rows.append(cells[:-1] if skip_wall else cells)
    return header, rows


class TestConfig:
    def test_defaults_valid(self):
        TrainConfig().validate()
        TrainConfig.paper_scale().validate()

    def test_paper_scale_values(self):
        cfg = TrainConfig.paper_scale()
        assert cfg.k_parts == 10
        assert cfg.lr == 2e-4
        assert cfg.batch_size == 20
        assert cfg.iterations == 10000
        assert cfg.scales == (256, 128, 64, 32)

    @pytest.mark.parametrize("field,value,msg", [
        ("variant", "nope", "variant"),
        ("k_parts", 0, "k_parts"),
        ("batch_size", 0, "batch_size"),
        ("lr", 0.0, "lr"),
        ("scales", (48,), "scales"),
        ("bottleneck_channels", 30, "bottleneck"),
        ("extractor", "vgg", "extractor"),
    ])
    def test_invalid_fields_name_the_field(self, field, value, msg):
        with pytest.raises(ConfigError, match=msg):
            TrainConfig(**{field: value}).validate()

    def test_json_roundtrip(self, tmp_path):
        cfg = fast_config(lr=1e-3)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = load_config(path)
        assert back == cfg

    def test_overrides_parse_types(self):
        cfg = load_config(None, {"iterations": "7", "lr": "0.001",
                                 "variant": "naive", "scales": "64,32"})
        assert cfg.iterations == 7 and cfg.lr == 0.001
        assert cfg.variant == "naive" and cfg.scales == (64, 32)

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            load_config(None, {"bogus": "1"})

    def test_missing_config_file_rejected(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/cfg.json")


class TestAdam:
    def test_single_step_matches_reference_formula(self, rng):
        from motionseg.nn import Parameter

        w = Parameter(rng.standard_normal(5).astype(np.float32))
        g = rng.standard_normal(5).astype(np.float32)
        w0 = w.data.copy()
        opt = Adam({"w": w}, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        w.grad = g.copy()
        opt.step()
        m = 0.1 * g
        v = 0.001 * g * g
        mhat = m / (1 - 0.9)
        vhat = v / (1 - 0.999)
        expected = w0 - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(w.data, expected, rtol=1e-6)

    def test_skips_parameters_without_grad(self, rng):
        from motionseg.nn import Parameter

        w = Parameter(rng.standard_normal(3).astype(np.float32))
        w0 = w.data.copy()
        opt = Adam({"w": w}, lr=0.1)
        opt.step()
        np.testing.assert_array_equal(w.data, w0)


class TestTrainLoop:
    def test_loss_csv_schema_and_finite(self, tiny_dataset, tmp_path):
        cfg = fast_config(iterations=3)
        train(cfg, tiny_dataset, tmp_path / "run")
        header, rows = read_loss_rows(tmp_path / "run" / "loss.csv", skip_wall=False)
        assert header == ["iter", "l_rec", "l_eq_kp", "l_eq_A", "total", "wall_ms"]
        assert len(rows) == 3
        for row in rows:
            assert all(np.isfinite(float(c)) for c in row)

    def test_deterministic_loss_columns(self, tiny_dataset, tmp_path):
        cfg = fast_config(iterations=5)
        train(cfg, tiny_dataset, tmp_path / "a")
        train(cfg, tiny_dataset, tmp_path / "b")
        _, rows_a = read_loss_rows(tmp_path / "a" / "loss.csv")
        _, rows_b = read_loss_rows(tmp_path / "b" / "loss.csv")
        assert rows_a == rows_b

    def test_checkpoint_resume_is_bitwise_equivalent(self, tiny_dataset, tmp_path):
        cfg = fast_config(iterations=6, checkpoint_every=3)
        final_a = train(cfg, tiny_dataset, tmp_path / "full_run")

        # interrupted run: first 3 iterations land in ckpt_000003, resume to 6
        final_b = train(cfg, tiny_dataset, tmp_path / "resumed",
                        resume_from=tmp_path / "full_run" / "ckpt_000003")

        from motionseg.cpmt import read_container

        tensors_a, meta_a = read_container(final_a)
        tensors_b, meta_b = read_container(final_b)
        assert meta_a["iteration"] == meta_b["iteration"] == 6
        assert meta_a["rng_state"] == meta_b["rng_state"]
        for name in tensors_a:
            np.testing.assert_array_equal(tensors_a[name], tensors_b[name], err_msg=name)

    def test_resume_with_different_config_rejected(self, tiny_dataset, tmp_path):
        cfg = fast_config(iterations=4, checkpoint_every=2)
        train(cfg, tiny_dataset, tmp_path / "x")
        other = fast_config(iterations=4, checkpoint_every=2, lr=1e-3)
        with pytest.raises(ConfigError, match="config"):
            train(other, tiny_dataset, tmp_path / "y",
                  resume_from=tmp_path / "x" / "ckpt_000002")

    def test_numeric_failure_dumps_diagnostics(self, tiny_dataset, tmp_path, monkeypatch):
        def explode(*args, **kwargs):
            raise NumericError("synthetic failure")

        monkeypatch.setattr(train_mod, "reconstruction_loss", explode)
        cfg = fast_config(iterations=2)
        with pytest.raises(NumericError):
            train(cfg, tiny_dataset, tmp_path / "boom")
        diag = json.loads((tmp_path / "boom" / "diagnostic.json").read_text())
        assert "param_norms" in diag and "last_batch_pairs" in diag
        assert len(diag["last_batch_pairs"]) == cfg.batch_size

    def test_train_split_disjoint(self, tiny_dataset):
        tr, ev = train_split(tiny_dataset, 0.67)
        assert len(tr) + len(ev) == tiny_dataset.n_videos
        assert set(tr).isdisjoint(set(ev))
        assert len(ev) >= 1


class TestCheckpoint:
    def test_save_load_roundtrip_exact(self, tiny_dataset, tmp_path):
        cfg = fast_config(iterations=2)
        segnet, reconnet, _ = build_models(cfg)
        opt = Adam(merged_params(segnet, reconnet), lr=cfg.lr)
        rng = np.random.default_rng(5)
        rng.integers(1000)  # advance the state
        path = save_checkpoint(tmp_path / "ck", segnet, reconnet, opt, 2, cfg, rng)
        seg2, gen2, _, opt2, it, cfg2, rng2 = load_checkpoint(path)
        assert it == 2 and cfg2 == cfg
        assert rng2.bit_generator.state == rng.bit_generator.state
        for (na, a), (nb, b) in zip(segnet.named_parameters(), seg2.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(a.data, b.data)
        for name in opt.m:
            np.testing.assert_array_equal(opt.m[name], opt2.m[name])

    def test_wrong_kind_rejected(self, tmp_path):
        from motionseg.cpmt import FormatError, write_container

        write_container(tmp_path / "ck", {"x": np.zeros(2, dtype=np.float32)}, {"kind": "other"})
        with pytest.raises(FormatError, match="checkpoint"):
            load_checkpoint(tmp_path / "ck")
