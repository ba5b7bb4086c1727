"""Tests for file formats, checkpoints, and the command-line interface."""

import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from proxyform import io
from proxyform.cli import main
from proxyform.pipeline import PipelineConfig, init_params


def _round9(x):
    return np.array([[float(f"{v:.9g}") for v in row] for row in x])


class TestCloudFormats:
    def test_ply_round_trip_nine_digits(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = rng.normal(size=(10, 3)) * 100
        path = tmp_path / "c.ply"
        io.export_cloud(cloud, path)
        assert_array_equal(io.load_cloud(path), _round9(cloud))

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        cloud = rng.normal(size=(7, 3))
        path = tmp_path / "c.csv"
        io.export_cloud(cloud, path)
        assert_array_equal(io.load_cloud(path), _round9(cloud))

    def test_empty_cloud_valid_ply(self, tmp_path):
        path = tmp_path / "empty.ply"
        io.export_cloud(np.empty((0, 3)), path)
        text = path.read_text()
        assert text.startswith("ply\nformat ascii 1.0\nelement vertex 0\n")
        assert io.load_cloud(path).shape == (0, 3)

    def test_ply_header_shape(self, tmp_path):
        path = tmp_path / "c.ply"
        io.export_cloud(np.ones((2, 3)), path)
        head = path.read_text().splitlines()[:7]
        assert head == ["ply", "format ascii 1.0", "element vertex 2",
                        "property float x", "property float y",
                        "property float z", "end_header"]

    def test_bad_extension_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="infer"):
            io.export_cloud(np.ones((1, 3)), tmp_path / "c.xyz")

    def test_non_ply_content_rejected(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("not a ply\n")
        with pytest.raises(ValueError, match="not a PLY"):
            io.load_cloud(path)


class TestConfigAndReport:
    def test_config_round_trip(self, tmp_path):
        cfg = PipelineConfig(seed=9, beta=0.5, c=64)
        path = tmp_path / "cfg.json"
        io.save_config(cfg, path)
        assert io.load_config(path) == cfg

    def test_malformed_json_reports_location(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"seed": 1,\n "beta": }\n')
        with pytest.raises(json.JSONDecodeError) as err:
            io.load_config(path)
        assert "line 2" in str(err.value)

    def test_report_keys_sorted(self, tmp_path):
        path = tmp_path / "r.json"
        io.save_report({"zeta": 1, "alpha": {"b": 2, "a": 3}}, path)
        text = path.read_text()
        assert text.index('"alpha"') < text.index('"zeta"')
        assert text.index('"a"') < text.index('"b"')


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig(grid_counts=(3, 3, 3), offset_bound_s=0.5, c=16,
                             c_off=8, layers=2, n_views=2, tokens_per_view=3,
                             head_init="random", seed=4)
        params = init_params(cfg)
        path = tmp_path / "params.npz"
        io.save_params(params, path)
        again = io.load_params(path)
        assert_array_equal(again.offset.w1, params.offset.w1)
        assert_array_equal(again.pointnet.weight, params.pointnet.weight)
        assert len(again.text_blocks) == 2
        assert_array_equal(again.text_blocks[1].bias.b_d,
                           params.text_blocks[1].bias.b_d)
        assert_array_equal(again.heads.u_image.weight, params.heads.u_image.weight)
        assert again.pool_score.bias is None

    def test_offset_output_layer_has_no_bias_key(self, tmp_path):
        cfg = PipelineConfig(grid_counts=(3, 3, 3), offset_bound_s=0.5, c=16,
                             c_off=8, layers=1, n_views=2, tokens_per_view=3)
        path = tmp_path / "params.npz"
        io.save_params(init_params(cfg), path)
        with np.load(path) as npz:
            keys = set(npz.files)
        assert "offset.w2" in keys
        assert not any("w2" in k and "bias" in k for k in keys)
        assert "offset.w2.bias" not in keys and "offset.b2" not in keys


SMALL_CFG = dict(grid_counts=[4, 4, 4], offset_bound_s=1.0, c=16, c_off=8,
                 layers=1, m=8, n_text_proxies=4, n_views=2, tokens_per_view=3)


def _write_cfg(tmp_path, **overrides):
    data = dict(SMALL_CFG)
    data.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


class TestCli:
    def test_gen_scene_and_export(self, tmp_path, capsys):
        out = tmp_path / "scene.ply"
        assert main(["gen-scene", "--n", "200", "--seed", "3",
                     "--out", str(out)]) == 0
        cloud = io.load_cloud(out)
        assert cloud.shape == (200, 3)
        csv_out = tmp_path / "scene.csv"
        assert main(["export", "--in", str(out), "--out", str(csv_out)]) == 0
        assert_array_equal(io.load_cloud(csv_out), cloud)

    def test_enhance_writes_ply_and_report(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = tmp_path / "out.ply"
        report = tmp_path / "report.json"
        code = main(["enhance", "--config", str(cfg), "--seed", "7",
                     "--n", "300", "--out", str(out), "--report", str(report)])
        assert code == 0
        assert io.load_cloud(out).shape == (300, 3)
        data = json.loads(report.read_text())
        assert data["seed"] == 7
        assert data["kept_clusters"] == 25  # floor(0.4 * 64) = 25

    def test_enhance_identity_reproducible_bytes(self, tmp_path):
        cfg = _write_cfg(tmp_path, head_init="random")
        a, b = tmp_path / "a.ply", tmp_path / "b.ply"
        scene = tmp_path / "scene.ply"
        assert main(["gen-scene", "--n", "250", "--seed", "1", "--out",
                     str(scene)]) == 0
        for out in (a, b):
            assert main(["enhance", "--config", str(cfg), "--seed", "5",
                         "--in", str(scene), "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_flops_prints_three_variants(self, capsys):
        assert main(["flops", "--grid", "12", "--beta", "0.6", "--c", "256",
                     "--proxies", "32"]) == 0
        out = capsys.readouterr().out
        for token in ("self", "cross", "proxy", "n_seq=691"):
            assert token in out
        # reduction fractions printed with 3 decimals
        assert "0.907" in out

    def test_flops_sweep_writes_csv_and_best(self, tmp_path, capsys):
        out_dir = tmp_path / "flops"
        assert main(["flops", "--sweep", "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "sweep.csv").exists()
        best = json.loads((out_dir / "sweep_best.json").read_text())
        assert abs(best["best"]["reduction"] - best["target"]) < 0.03

    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck", "--instances", "2"]) == 0
        out = capsys.readouterr().out
        assert out.count("ok") == 4

    def test_gradcheck_fails_on_tight_tolerance(self):
        assert main(["gradcheck", "--instances", "1", "--tol", "1e-12"]) == 2

    def test_usage_error_exit_code(self, capsys):
        assert main(["enhance", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command_exit_code(self):
        assert main(["frobnicate"]) == 1

    def test_malformed_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        code = main(["enhance", "--config", str(bad), "--out",
                     str(tmp_path / "x.ply")])
        assert code == 2
        assert "line 1" in capsys.readouterr().err

    def test_env_seed_overrides_config(self, tmp_path, monkeypatch):
        cfg = _write_cfg(tmp_path, seed=1, head_init="random")
        monkeypatch.setenv("PROXYFORM_SEED", "2")
        out_env = tmp_path / "env.ply"
        assert main(["enhance", "--config", str(cfg), "--n", "200", "--out",
                     str(out_env)]) == 0
        monkeypatch.delenv("PROXYFORM_SEED")
        out_one = tmp_path / "one.ply"
        out_two = tmp_path / "two.ply"
        assert main(["enhance", "--config", str(cfg), "--n", "200", "--out",
                     str(out_one)]) == 0
        assert main(["enhance", "--config", str(cfg), "--seed", "2", "--n", "200",
                     "--out", str(out_two)]) == 0
        assert out_env.read_bytes() == out_two.read_bytes()
        assert out_env.read_bytes() != out_one.read_bytes()

    def test_figures_written(self, tmp_path):
        figs = tmp_path / "figs"
        assert main(["gen-scene", "--n", "150", "--out",
                     str(tmp_path / "s.ply"), "--figures", str(figs)]) == 0
        assert (figs / "scene.png").stat().st_size > 0

    def test_bench_runs_small(self, tmp_path, capsys):
        out_dir = tmp_path / "bench"
        assert main(["bench", "--n", "1500", "--grid", "6", "--offset-bound",
                     "1", "--c", "16", "--layers", "1", "--seed", "0",
                     "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "timings.csv").exists()
        assert "total" in capsys.readouterr().out

    def test_params_round_trip_through_cli(self, tmp_path):
        cfg = _write_cfg(tmp_path, head_init="random")
        ckpt = tmp_path / "params.npz"
        out1, out2 = tmp_path / "o1.ply", tmp_path / "o2.ply"
        assert main(["enhance", "--config", str(cfg), "--seed", "3", "--n", "200",
                     "--out", str(out1), "--save-params", str(ckpt)]) == 0
        assert main(["enhance", "--config", str(cfg), "--seed", "3", "--n", "200",
                     "--out", str(out2), "--params", str(ckpt)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
