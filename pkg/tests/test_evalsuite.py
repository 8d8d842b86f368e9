import csv

import numpy as np
import pytest
import torch

from mvreal.errors import InvalidInputError
from mvreal.evalsuite import (KID_MIN_SAMPLES, build_report, clip_similarity,
                              kid, mv_consistency)
from mvreal.fixtures import make_textured_image
from mvreal.imageops import ImageRGB, MultiViewSet
from mvreal.pipeline import MockGeneratorClient, PipelineConfig, run_pipeline

FAST = PipelineConfig(seed=0, image_size=32, render_resolution=32,
                      n_splats=8, fit_steps=20)


def rand_views(seed, n=4, size=32):
    gen = torch.Generator().manual_seed(seed)
    return MultiViewSet(views=[ImageRGB(torch.rand(size, size, 3, generator=gen))
                               for _ in range(n)])


class TestClipSimilarity:
    def test_self_similarity(self, global_encoder):
        img = make_textured_image(0)
        views = MultiViewSet(views=[img] * 4)
        assert clip_similarity(img, views, global_encoder) == pytest.approx(1.0, abs=1e-6)

    def test_hand_computed_mean(self, global_encoder):
        img = make_textured_image(1)
        views = rand_views(0)
        ref = global_encoder.embed_global(img).vector
        expected = np.mean([float(torch.dot(global_encoder.embed_global(v).vector, ref))
                            for v in views.views])
        assert clip_similarity(img, views, global_encoder) == pytest.approx(expected, abs=1e-9)


def kid_by_hand(a, b):
    """Independent nested-loop evaluation of the documented estimator."""
    a = [np.asarray(x, dtype=np.float64) for x in a]
    b = [np.asarray(x, dtype=np.float64) for x in b]
    d = a[0].shape[0]
    k = lambda x, y: (float(x @ y) / d + 1.0) ** 3
    m, n = len(a), len(b)
    t_aa = sum(k(a[i], a[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    t_bb = sum(k(b[i], b[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    if m == n:
        t_ab = sum(k(a[i], b[j]) for i in range(m) for j in range(n) if i != j) / (m * (m - 1))
    else:
        t_ab = sum(k(a[i], b[j]) for i in range(m) for j in range(n)) / (m * n)
    return t_aa + t_bb - 2 * t_ab


class TestKid:
    def test_identity_zero(self):
        gen = torch.Generator().manual_seed(0)
        x = torch.randn(12, 6, generator=gen)
        assert abs(kid(x, x)) <= 1e-6

    def test_symmetry(self):
        gen = torch.Generator().manual_seed(1)
        a = torch.randn(8, 5, generator=gen)
        b = torch.randn(8, 5, generator=gen)
        assert abs(kid(a, b) - kid(b, a)) <= 1e-12
        c = torch.randn(11, 5, generator=gen)  # unequal-size path
        assert abs(kid(a, c) - kid(c, a)) <= 1e-12

    def test_hand_expanded_three_by_three(self):
        a = torch.tensor([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
        b = torch.tensor([[2.0, 1.0], [0.0, 1.0], [3.0, 0.0]])
        assert kid(a, b) == pytest.approx(kid_by_hand(a.numpy(), b.numpy()), abs=1e-9)

    def test_hand_oracle_unequal_sizes(self):
        gen = torch.Generator().manual_seed(2)
        a = torch.randint(0, 4, (3, 4), generator=gen).float()
        b = torch.randint(0, 4, (5, 4), generator=gen).float()
        assert kid(a, b) == pytest.approx(kid_by_hand(a.numpy(), b.numpy()), abs=1e-9)

    def test_separated_gaussians(self):
        rng = np.random.default_rng(3)
        a = torch.from_numpy(rng.normal(0.0, 1.0, (100, 8)))
        b = torch.from_numpy(rng.normal(3.0, 1.0, (100, 8)))
        assert kid(a, b) > 0.1

    def test_min_samples(self):
        with pytest.raises(InvalidInputError):
            kid(torch.randn(1, 4), torch.randn(5, 4))


class TestMvConsistency:
    def test_identical_views(self, patch_encoder):
        img = make_textured_image(2)
        views = MultiViewSet(views=[img] * 4)
        assert mv_consistency(views, patch_encoder) == pytest.approx(1.0, abs=1e-6)

    def test_noise_views_low(self, patch_encoder):
        # Independent noise has no cross-view structure; the mutual-NN score
        # should sit well below the aligned-content regime.
        for seed in range(5):
            score = mv_consistency(rand_views(seed * 10 + 5), patch_encoder)
            assert score < 0.5, seed

    def test_reversal_symmetry(self, patch_encoder):
        views = rand_views(6)
        reversed_views = MultiViewSet(views=list(reversed(views.views)))
        a = mv_consistency(views, patch_encoder)
        b = mv_consistency(reversed_views, patch_encoder)
        assert abs(a - b) <= 1e-9


class TestBuildReport:
    def test_empty_manifest(self, tmp_path, global_encoder, patch_encoder):
        from mvreal.pipeline import DatasetManifest
        manifest = DatasetManifest(tmp_path / "manifest.jsonl")
        report = build_report(manifest, global_encoder, patch_encoder)
        assert report.per_asset == []
        assert report.counts["assets"] == 0
        assert report.kid_value is None

    def test_fixture_manifest_with_kid(self, tmp_path, global_encoder, patch_encoder):
        prompts = [f"object number {i}" for i in range(KID_MIN_SAMPLES + 2)]
        manifest = run_pipeline(prompts, tmp_path,
                                MockGeneratorClient(FAST.image_size), FAST)
        out_dir = tmp_path / "report"
        report = build_report(manifest, global_encoder, patch_encoder, out_dir=out_dir)
        assert len(report.per_asset) == len(prompts)
        assert report.kid_value is not None and np.isfinite(report.kid_value)
        assert report.errors == []
        with open(out_dir / "metrics.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == len(prompts)
        assert set(rows[0]) == {"asset_id", "clip_sim", "consistency", "errors"}
        summary = (out_dir / "summary.txt").read_text()
        assert f"assets {len(prompts)}" in summary and "kid" in summary

    def test_corrupted_record_isolated(self, tmp_path, global_encoder, patch_encoder):
        manifest = run_pipeline(["a wolf", "a teapot"], tmp_path,
                                MockGeneratorClient(FAST.image_size), FAST)
        (tmp_path / "asset-0000" / "aligned" / "front.png").unlink()
        report = build_report(manifest, global_encoder, patch_encoder)
        assert len(report.errors) == 1
        assert report.errors[0]["asset_id"] == "asset-0000"
        assert len(report.per_asset) == 1
        assert report.per_asset[0]["asset_id"] == "asset-0001"
