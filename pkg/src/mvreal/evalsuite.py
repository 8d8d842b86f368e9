"""Fidelity and consistency metrics: global-embedding similarity, Kernel
Inception Distance (unbiased MMD^2, polynomial kernel), the multi-view
consistency score, and report generation over a dataset manifest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .errors import InvalidInputError
from .imageops import ImageRGB, MultiViewSet
from .encoders import GlobalEmbedding


def clip_similarity(input_image: ImageRGB, renders: MultiViewSet, global_encoder) -> float:
    """Mean cosine similarity between each view's global embedding and the
    input image's; embeddings are unit-norm so the dot product suffices."""
    ref = global_encoder.embed_global(input_image).vector
    sims = [float(torch.dot(global_encoder.embed_global(v).vector, ref))
            for v in renders.views]
    return sum(sims) / len(sims)


def _poly_kernel(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(features_a, features_b) -> float:
    """Unbiased squared MMD with kernel k(x,y) = (x^T y / d + 1)^3.

    Within-set terms use the U-statistic (diagonal excluded). For equal-size
    sets the cross term also excludes index-matched pairs (the standard
    equal-subset estimator), so kid(X, X) is exactly zero; unequal sizes fall
    back to the full cross mean.
    """
    a = _stack_features(features_a)
    b = _stack_features(features_b)
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise InvalidInputError("kid requires at least 2 samples per side")
    k_aa = _poly_kernel(a, a)
    k_bb = _poly_kernel(b, b)
    k_ab = _poly_kernel(a, b)
    term_a = (k_aa.sum() - k_aa.diagonal().sum()) / (m * (m - 1))
    term_b = (k_bb.sum() - k_bb.diagonal().sum()) / (n * (n - 1))
    if m == n:
        term_ab = (k_ab.sum() - k_ab.diagonal().sum()) / (m * (m - 1))
    else:
        term_ab = k_ab.sum() / (m * n)
    return float(term_a + term_b - 2 * term_ab)


def _stack_features(features) -> torch.Tensor:
    rows = []
    for f in features:
        rows.append(f.vector if isinstance(f, GlobalEmbedding) else torch.as_tensor(f))
    return torch.stack([r.double() for r in rows])


ADJACENT_PAIRS = ((0, 1), (1, 2), (2, 3), (3, 0))


def mv_consistency(views: MultiViewSet, patch_encoder, config=None) -> float:
    """Mean cosine similarity of mutual-nearest-neighbor patch-token pairs
    over the four adjacent view pairs (front-right, right-back, back-left,
    left-front). Mutual pairs always exist (a global-argmax pair is mutual)."""
    tokens = [patch_encoder.embed_patches(v).flat() for v in views.views]
    pair_scores = []
    for i, j in ADJACENT_PAIRS:
        sims = tokens[i] @ tokens[j].T
        fwd = sims.argmax(dim=1)          # best j-token for each i-token
        bwd = sims.argmax(dim=0)          # best i-token for each j-token
        rows = torch.arange(sims.shape[0])
        mutual = bwd[fwd] == rows
        pair_scores.append(float(sims[rows[mutual], fwd[mutual]].mean()))
    return sum(pair_scores) / len(pair_scores)


@dataclass
class MetricReport:
    per_asset: list[dict] = field(default_factory=list)
    kid_value: float | None = None
    counts: dict = field(default_factory=dict)
    encoder_fingerprint: str = ""
    errors: list[dict] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["asset_id", "clip_sim",
                                                   "consistency", "errors"])
            writer.writeheader()
            for row in self.per_asset:
                writer.writerow(row)

    def summary(self) -> str:
        lines = [f"assets {self.counts.get('assets', 0)}",
                 f"errors {len(self.errors)}",
                 f"encoder {self.encoder_fingerprint}"]
        if self.kid_value is not None:
            lines.append(f"kid {self.kid_value:.6f}")
        else:
            lines.append("kid n/a (needs >= 10 samples per corpus)")
        return "\n".join(lines)


KID_MIN_SAMPLES = 10


def build_report(manifest, global_encoder, patch_encoder, out_dir=None) -> MetricReport:
    """Per-asset clip-similarity/consistency plus a corpus KID between seed
    images' and aligned views' embeddings. Records with missing files are
    reported as error entries without failing the rest."""
    from .imageops import load_png
    from .pipeline import AssetRecord, TextPrompt

    cfg = global_encoder.config
    report = MetricReport(
        encoder_fingerprint=f"{cfg.kind}-seed{cfg.seed}-dg{cfg.d_g}-dp{cfg.d_p}")
    seed_feats, view_feats = [], []
    entries = manifest.entries()
    for entry in entries:
        record = AssetRecord(id=entry["id"], root=Path(manifest.path).parent,
                             prompt=TextPrompt(**entry["prompt"]),
                             stage=entry["stage"], seed=entry.get("seed", 0))
        try:
            seed_image = load_png(record.seed_image_path)
            aligned = record.load_views("aligned")
        except (FileNotFoundError, OSError, InvalidInputError) as exc:
            report.errors.append({"asset_id": record.id, "error": str(exc)})
            continue
        row = {
            "asset_id": record.id,
            "clip_sim": round(clip_similarity(seed_image, aligned, global_encoder), 6),
            "consistency": round(mv_consistency(aligned, patch_encoder), 6),
            "errors": "",
        }
        report.per_asset.append(row)
        seed_feats.append(global_encoder.embed_global(seed_image))
        view_feats.extend(global_encoder.embed_global(v) for v in aligned.views)
    report.counts = {"assets": len(report.per_asset),
                     "seed_features": len(seed_feats),
                     "view_features": len(view_feats)}
    if len(seed_feats) >= KID_MIN_SAMPLES and len(view_feats) >= KID_MIN_SAMPLES:
        report.kid_value = kid(seed_feats, view_feats)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_csv(out_dir / "metrics.csv")
        (out_dir / "summary.txt").write_text(report.summary() + "\n")
    return report
