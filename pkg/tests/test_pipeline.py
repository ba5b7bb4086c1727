"""Tests for scene synthesis, proxies, the enhance flow, and flops reporting."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from proxyform.pipeline import (PipelineConfig, SceneSpec, StageError,
                                TARGET_REDUCTION, best_sweep_match, enhance,
                                flops_report, gen_scene, init_params,
                                offset_bound_scene, overhead_sweep,
                                synth_proxies)


class TestSceneGen:
    def test_deterministic(self):
        spec = SceneSpec(n_points=500)
        a, la = gen_scene(spec, 9)
        b, lb = gen_scene(spec, 9)
        assert_array_equal(a, b)
        assert_array_equal(la, lb)

    def test_point_count(self):
        cloud, labels = gen_scene(SceneSpec(n_points=1000), 1)
        assert cloud.shape == (1000, 3)
        assert labels.shape == (1000,)

    def test_blob_sample_mean(self):
        spec = SceneSpec(n_points=4000, n_blobs=1, blob_fraction=0.5,
                         blob_sigma=0.1, extent=(8.0, 8.0, 8.0),
                         blob_centers=[[2.0, 0.0, 0.0]])
        cloud, labels = gen_scene(spec, 5)
        blob = cloud[labels == 1]
        n = blob.shape[0]
        assert n == 2000
        tol = 3 * 0.1 / np.sqrt(n)
        assert np.all(np.abs(blob.mean(axis=0) - [2.0, 0.0, 0.0]) < tol)

    def test_labels_partition(self):
        cloud, labels = gen_scene(SceneSpec(n_points=300, n_blobs=2), 2)
        assert set(labels.tolist()) == {0, 1, 2}

    def test_empty_scene_rejected(self):
        with pytest.raises(ValueError, match="at least one point"):
            gen_scene(SceneSpec(n_points=0), 0)


class TestSynthProxies:
    def test_shapes(self):
        p = synth_proxies(0, n_text=5, n_views=3, tokens_per_view=7, c=16)
        assert p.text.shape == (5, 16)
        assert len(p.view_tokens) == 3
        assert all(v.shape == (7, 16) for v in p.view_tokens)

    def test_deterministic_and_seed_sensitive(self):
        a = synth_proxies(1, 4, 2, 3, 8)
        b = synth_proxies(1, 4, 2, 3, 8)
        c = synth_proxies(2, 4, 2, 3, 8)
        assert_array_equal(a.text, b.text)
        assert a.text.tobytes() != c.text.tobytes()

    def test_unit_variance(self):
        p = synth_proxies(3, 64, 1, 1, 64)
        assert abs(p.text.std() - 1.0) < 0.05


def _small_cfg(**kw):
    # offset bound shrunk with the grid: 2s must stay below the axis counts
    base = dict(grid_counts=(4, 4, 4), offset_bound_s=1.0, c=16, c_off=8,
                layers=1, m=8, n_text_proxies=4, n_views=2, tokens_per_view=3,
                seed=0)
    base.update(kw)
    return PipelineConfig(**base)


class TestEnhance:
    def test_identity_at_initialization(self):
        cloud, _ = gen_scene(SceneSpec(n_points=400), 3)
        out, report = enhance(_small_cfg(), cloud)
        assert_array_equal(out, cloud)
        assert report.fraction_moved == 0.0
        assert report.max_displacement == 0.0

    def test_deterministic_bitwise(self):
        cloud, _ = gen_scene(SceneSpec(n_points=400), 4)
        cfg = _small_cfg(head_init="random", seed=11)
        a, ra = enhance(cfg, cloud)
        b, rb = enhance(cfg, cloud)
        assert_array_equal(a, b)
        assert ra.config_hash == rb.config_hash

    def test_worker_count_invariance(self):
        cloud, _ = gen_scene(SceneSpec(n_points=500), 5)
        a, _ = enhance(_small_cfg(head_init="random", workers=1), cloud)
        b, _ = enhance(_small_cfg(head_init="random", workers=4), cloud)
        assert_array_equal(a, b)

    def test_kept_cluster_count_default_grid(self):
        cloud, _ = gen_scene(SceneSpec(n_points=800), 6)
        cfg = PipelineConfig(c=16, c_off=8, layers=1, m=8, n_text_proxies=4,
                             n_views=2, tokens_per_view=3)
        out, report = enhance(cfg, cloud)
        assert report.n_grid == 1728
        assert report.kept_clusters == 691

    def test_random_heads_move_points(self):
        cloud, _ = gen_scene(SceneSpec(n_points=400), 7)
        out, report = enhance(_small_cfg(head_init="random", seed=1), cloud)
        assert report.fraction_moved > 0.1
        assert out.shape == cloud.shape

    def test_report_flops_totals_are_sums(self):
        cloud, _ = gen_scene(SceneSpec(n_points=300), 8)
        _, report = enhance(_small_cfg(), cloud)
        text = report.flops["text_stack"]
        image = report.flops["image_stack"]
        for stack in (text, image):
            per_block = stack["flops_per_block"]
            assert per_block["total"] == (per_block["projections"]
                                          + per_block["attention_core"]
                                          + per_block["ffn"] + per_block["bias_add"])
        assert report.flops["total"] == text["flops_total"] + image["flops_total"]

    def test_timings_cover_all_stages(self):
        cloud, _ = gen_scene(SceneSpec(n_points=300), 9)
        _, report = enhance(_small_cfg(), cloud)
        stages = [t["stage"] for t in report.timings]
        assert stages == ["grid-prior", "cluster", "offsets", "recluster", "drop",
                          "features", "text-stack", "image-stack", "reshape"]

    def test_stage_error_is_tagged(self):
        # a degenerate flat cloud leaves no room for the shrunken grid
        flat = np.zeros((50, 3))
        flat[:, 0] = np.linspace(0, 1, 50)
        with pytest.raises(StageError, match="grid-prior"):
            enhance(_small_cfg(), flat)

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            enhance(_small_cfg(), np.empty((0, 3)))

    def test_unscaled_logits_flag_changes_values(self):
        cloud, _ = gen_scene(SceneSpec(n_points=300), 10)
        a, _ = enhance(_small_cfg(head_init="random"), cloud)
        b, _ = enhance(_small_cfg(head_init="random", unscaled_logits=True), cloud)
        assert a.tobytes() != b.tobytes()

    def test_ball_clustering_path(self):
        cloud, _ = gen_scene(SceneSpec(n_points=400), 12)
        cfg = _small_cfg(gamma="ball", radius=0.5)
        out, report = enhance(cfg, cloud)
        assert_array_equal(out, cloud)  # still identity at init
        assert report.kept_clusters == 25

    def test_guided_stacks_have_independent_parameters(self):
        params = init_params(_small_cfg(layers=2))
        a = params.text_blocks[0].wq.weight
        b = params.image_blocks[0].wq.weight
        assert a.tobytes() != b.tobytes()

    def test_literal_head_collapses_at_zero_init(self):
        # the literal head form maps zero features to the zero matrix, so
        # clustered points collapse toward the per-cluster translation
        cloud, _ = gen_scene(SceneSpec(n_points=300), 11)
        out, report = enhance(_small_cfg(literal_transform_head=True), cloud)
        assert report.fraction_moved > 0.0
        moved = np.any(out != cloud, axis=1)
        assert_allclose(out[moved], 0.0, atol=1e-12)


class TestConfig:
    def test_defaults_match_tuned_operating_point(self):
        cfg = PipelineConfig()
        assert cfg.grid_counts == (12, 12, 12)
        assert cfg.beta == 0.6
        assert cfg.offset_bound_s == 4.0
        assert cfg.layers == 3
        assert cfg.kept_clusters == 691

    def test_round_trip_dict(self):
        cfg = PipelineConfig(seed=5, c=64, beta=0.5)
        again = PipelineConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            PipelineConfig.from_dict({"betaa": 0.5})

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError, match="precision"):
            PipelineConfig(precision="float16").validate()
        with pytest.raises(ValueError, match="radius"):
            PipelineConfig(gamma="ball").validate()
        with pytest.raises(ValueError, match="square"):
            PipelineConfig(c=120).validate()
        PipelineConfig(c=100).validate()  # any perfect square is accepted

    def test_hash_stable_and_sensitive(self):
        a, b = PipelineConfig(seed=1), PipelineConfig(seed=1)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != PipelineConfig(seed=2).config_hash()

    def test_offset_bound_scene_mapping(self):
        cfg = PipelineConfig(grid_counts=(10, 10, 10), offset_bound_s=4.0)
        # extent (10, 20, 30) -> smallest cell edge 1.0 -> bound 4.0
        s = offset_bound_scene(cfg, np.zeros(3), np.array([10.0, 20.0, 30.0]))
        assert_allclose(s, 4.0)


class TestFlopsReport:
    def test_variant_ordering(self):
        cfg = PipelineConfig(n_text_proxies=32)
        result = flops_report(cfg)
        reports = result["reports"]
        assert reports["proxy"].attention_core < reports["self"].attention_core
        assert reports["cross"].attention_core < reports["proxy"].attention_core
        assert result["core_reduction_vs_self"]["proxy"] > 0.9

    def test_sweep_contains_documented_config(self):
        rows = overhead_sweep()
        assert len(rows) == 2 * 2 * 4 * 13
        best = best_sweep_match(rows)
        assert abs(best["reduction"] - TARGET_REDUCTION) < 0.03
        # the documented closest config
        assert (best["n_seq"], best["c"], best["n_proxy"], best["ffn_mult"]) == \
            (1152, 256, 128, 2)
