"""Realism supervision losses, differentiable with respect to the
synthesized image: crop-wise perceptual adaptation, dense patch-token
structure matching, their sum, and the L2 / Gram ablation baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .encoders import _as_tensor
from .errors import InvalidInputError
from .imageops import CropSpec, crop_tensor


@dataclass
class LossConfig:
    crop_count: int = 8
    scale_range: tuple[float, float] = (0.25, 0.75)
    adapt_weight: float = 1.0
    match_weight: float = 1.0


@dataclass
class LossValue:
    """A scalar loss, with named sub-terms where applicable."""

    value: torch.Tensor
    breakdown: dict = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value)


def adapt_loss(i_syn, i_gt, crops: list[CropSpec], global_encoder, config: LossConfig | None = None) -> LossValue:
    """Mean over crops of (1 - cosine similarity of global embeddings).

    The same crop rectangle is applied to both images; comparing mismatched
    regions would make the loss meaningless.
    """
    if not crops:
        raise InvalidInputError("crop list must be non-empty")
    syn = _as_tensor(i_syn)
    gt = _as_tensor(i_gt)
    if syn.shape != gt.shape:
        raise InvalidInputError(f"image shapes differ: {tuple(syn.shape)} vs {tuple(gt.shape)}")
    total = 0.0
    for c in crops:
        e_s = global_encoder.embed_global(crop_tensor(syn, c)).vector
        e_g = global_encoder.embed_global(crop_tensor(gt, c)).vector
        total = total + (1.0 - torch.dot(e_s, e_g))
    return LossValue(total / len(crops))


def _best_match_per_token(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """For each row of p, the max cosine similarity over rows of q.

    Ties are broken toward the lowest q index so the gradient path (through
    the winning pair only) is deterministic.
    """
    sims = p @ q.T
    with torch.no_grad():
        row_max = sims.max(dim=1, keepdim=True).values
        cols = torch.arange(q.shape[0], device=sims.device).expand_as(sims)
        idx = torch.where(sims == row_max, cols, torch.full_like(cols, q.shape[0]))
        idx = idx.min(dim=1).values
    return sims.gather(1, idx.unsqueeze(1)).squeeze(1)


def match_loss(i_syn, i_gt, patch_encoder, config: LossConfig | None = None) -> LossValue:
    """1 - mean over synthesized tokens of their best-match cosine against
    the ground-truth token set."""
    p = patch_encoder.embed_patches(_as_tensor(i_syn)).flat()
    q = patch_encoder.embed_patches(_as_tensor(i_gt)).flat()
    best = _best_match_per_token(p, q)
    return LossValue(1.0 - best.mean())


def realism_loss(i_syn, i_gt, crops: list[CropSpec], global_encoder, patch_encoder,
                 config: LossConfig | None = None) -> LossValue:
    """Weighted sum of the adaptation and matching terms (weights default 1:1)."""
    cfg = config or LossConfig()
    a = adapt_loss(i_syn, i_gt, crops, global_encoder, cfg)
    m = match_loss(i_syn, i_gt, patch_encoder, cfg)
    value = cfg.adapt_weight * a.value + cfg.match_weight * m.value
    return LossValue(value, breakdown={"adapt": a.value, "match": m.value})


def l2_loss(i_syn, i_gt) -> LossValue:
    """Mean squared pixel difference."""
    syn = _as_tensor(i_syn)
    gt = _as_tensor(i_gt)
    if syn.shape != gt.shape:
        raise InvalidInputError(f"image shapes differ: {tuple(syn.shape)} vs {tuple(gt.shape)}")
    return LossValue(((syn - gt) ** 2).mean())


def gram_loss(i_syn, i_gt, patch_encoder, config: LossConfig | None = None) -> LossValue:
    """Mean squared difference of the token Gram matrices (1/|P|) sum f f^T.

    Permutation-invariant over tokens, so it carries texture statistics but
    no spatial structure.
    """
    p = patch_encoder.embed_patches(_as_tensor(i_syn)).flat()
    q = patch_encoder.embed_patches(_as_tensor(i_gt)).flat()
    g_p = p.T @ p / p.shape[0]
    g_q = q.T @ q / q.shape[0]
    return LossValue(((g_p - g_q) ** 2).mean())
