"""Pluggable feature encoders: a global (perceptual) embedding and a dense
patch-token map, with deterministic toy implementations for testing.

The toy encoders are seeded affine projections followed by normalization.
They are pure, differentiable, and cheap, while preserving the algebraic
structure (unit-norm outputs, cosine similarities) the losses consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, InvalidInputError
from .imageops import ImageRGB


@dataclass
class GlobalEmbedding:
    """Unit-norm global feature vector."""

    vector: torch.Tensor  # (d_g,)


@dataclass
class PatchTokenMap:
    """A grid of unit-norm patch tokens from an image rescaled to m x m."""

    tokens: torch.Tensor  # (grid_h, grid_w, d_p)
    source_resolution: int

    @property
    def grid_h(self) -> int:
        return self.tokens.shape[0]

    @property
    def grid_w(self) -> int:
        return self.tokens.shape[1]

    def flat(self) -> torch.Tensor:
        """Tokens flattened row-major to (grid_h * grid_w, d_p)."""
        return self.tokens.reshape(-1, self.tokens.shape[-1])


@dataclass
class EncoderConfig:
    kind: str = "toy"
    seed: int = 0
    patch_size: int = 16
    d_g: int = 64
    d_p: int = 32
    m: int = 1024
    global_input: int = 16  # fixed square resolution fed to the global projection

    def __post_init__(self):
        if self.m % self.patch_size != 0:
            raise ConfigurationError(
                f"m={self.m} must be divisible by patch_size={self.patch_size}")
        if (self.m // self.patch_size) ** 2 < 4:
            raise ConfigurationError("token grid must contain at least 4 tokens")


def _as_tensor(image) -> torch.Tensor:
    if isinstance(image, ImageRGB):
        return image.data
    if isinstance(image, torch.Tensor):
        return image
    raise InvalidInputError(f"expected ImageRGB or tensor, got {type(image)}")


def _resize(data: torch.Tensor, size: int) -> torch.Tensor:
    """Bilinear resize of an (H, W, 3) tensor to (size, size, 3)."""
    x = data.permute(2, 0, 1).unsqueeze(0)
    x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    return x.squeeze(0).permute(1, 2, 0)


def _seeded_affine(seed: int, out_dim: int, in_dim: int):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
    b = rng.standard_normal(out_dim) * 0.1
    return torch.from_numpy(w), torch.from_numpy(b)


class ToyGlobalEncoder:
    """Resize -> flatten -> fixed seeded affine projection -> L2 normalize."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        r = config.global_input
        self.weight, self.bias = _seeded_affine(config.seed, config.d_g, 3 * r * r)

    def embed_global(self, image) -> GlobalEmbedding:
        data = _as_tensor(image)
        x = _resize(data, self.config.global_input).reshape(-1)
        # Centering removes the DC component, which would otherwise dominate
        # the projection and push all cosine similarities toward 1.
        x = x - x.mean()
        w = self.weight.to(x.dtype)
        b = self.bias.to(x.dtype)
        y = w @ x + b
        return GlobalEmbedding(y / y.norm())

    def operator_norm(self) -> float:
        """Spectral norm of the projection, for Lipschitz bookkeeping."""
        return float(np.linalg.svd(self.weight.numpy(), compute_uv=False)[0])


class ToyPatchEncoder:
    """Resize to m x m, project each non-overlapping patch, normalize per token."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        p = config.patch_size
        self.weight, self.bias = _seeded_affine(config.seed + 1, config.d_p, 3 * p * p)

    def embed_patches(self, image) -> PatchTokenMap:
        cfg = self.config
        data = _as_tensor(image)
        m, p = cfg.m, cfg.patch_size
        g = m // p
        x = _resize(data, m)
        # (m, m, 3) -> (g, g, p*p*3), each row one patch
        patches = x.reshape(g, p, g, p, 3).permute(0, 2, 1, 3, 4).reshape(g, g, -1)
        # Per-patch centering, same rationale as the global encoder; keeps
        # each token a function of its own patch only.
        patches = patches - patches.mean(dim=-1, keepdim=True)
        w = self.weight.to(x.dtype)
        b = self.bias.to(x.dtype)
        tokens = patches @ w.T + b
        tokens = tokens / tokens.norm(dim=-1, keepdim=True)
        return PatchTokenMap(tokens=tokens, source_resolution=m)


_REGISTRY = {
    "toy-global": ToyGlobalEncoder,
    "toy-patch": ToyPatchEncoder,
}


def register_encoder(name: str, factory) -> None:
    """Register an encoder factory, e.g. an adapter for a pretrained backbone."""
    _REGISTRY[name] = factory


def encoder_registry(name: str, config: EncoderConfig | None = None):
    """Instantiate a registered encoder by name."""
    if name not in _REGISTRY:
        raise KeyError(f"unknown encoder {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](config if config is not None else EncoderConfig())
