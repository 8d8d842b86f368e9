"""A minimal differentiable 3D representation: isotropic Gaussian splats
with an orthographic four-view renderer, plus a toy latent-to-scene decoder.

Conventions: world coordinates in [-1,1]^3 with y up; the camera for
azimuth a views the scene rotated by R_y(-a) and projects orthographically
along z (larger rotated z is closer to the camera). Background is white.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InvalidInputError
from .imageops import CAMERA_IDS, ImageRGB, MultiViewSet

MIN_SCALE = 1e-4

# Exact (cos, sin) for the four orthogonal azimuths.
_ORTHO_TRIG = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}

VIEW_AZIMUTHS = {"front": 0, "right": 90, "back": 180, "left": 270}


@dataclass
class ToySplatScene:
    positions: torch.Tensor  # (N, 3) in [-1,1]^3
    colors: torch.Tensor     # (N, 3) in [0,1]
    scales: torch.Tensor     # (N,) > MIN_SCALE
    opacities: torch.Tensor  # (N,) in [0,1]

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> None:
        with torch.no_grad():
            for name in ("positions", "colors", "scales", "opacities"):
                t = getattr(self, name).detach()
                if not torch.isfinite(t).all():
                    raise InvalidInputError(f"{name} contains non-finite values")
            if self.count:
                if self.colors.min() < 0 or self.colors.max() > 1:
                    raise InvalidInputError("colors out of [0,1]")
                if self.opacities.min() < 0 or self.opacities.max() > 1:
                    raise InvalidInputError("opacities out of [0,1]")
                if self.scales.min() <= MIN_SCALE:
                    raise InvalidInputError(f"scales must exceed {MIN_SCALE}")


@dataclass(frozen=True)
class CameraPose:
    """Orthographic camera at one of the four orthogonal azimuths."""

    azimuth: int

    def __post_init__(self):
        if self.azimuth not in _ORTHO_TRIG:
            raise InvalidInputError(f"azimuth must be one of {sorted(_ORTHO_TRIG)}")


@dataclass
class Latent3D:
    code: torch.Tensor  # (d_z,)


@dataclass
class GeometryHandle:
    """Positions and scales of a fixed splat set; appearance excluded."""

    positions: torch.Tensor
    scales: torch.Tensor


def rotate_y(positions: torch.Tensor, azimuth: int) -> torch.Tensor:
    """Rotate points about the vertical axis by an exact orthogonal angle."""
    c, s = _ORTHO_TRIG[azimuth % 360]
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    return torch.stack([c * x + s * z, y, -s * x + c * z], dim=1)


def render(scene: ToySplatScene, camera: CameraPose, resolution: int) -> ImageRGB:
    """Orthographic alpha-composited splat rendering over a white background.

    Per-pixel weight of a splat is opacity * exp(-d^2 / (2 scale^2)) with d
    the projected 2D distance to the splat center. Splats are composited
    back-to-front; the depth sort is stable on splat index and detached, so
    gradients flow through weights and colors, not the ordering.
    """
    if resolution < 8:
        raise InvalidInputError(f"resolution must be >= 8, got {resolution}")
    h = w = resolution
    dtype = scene.positions.dtype if scene.count else torch.float32
    if scene.count == 0:
        return ImageRGB(torch.ones(h, w, 3, dtype=dtype))

    rotated = rotate_y(scene.positions, -camera.azimuth)
    px, py, depth = rotated[:, 0], rotated[:, 1], rotated[:, 2]

    u = torch.linspace(-1 + 1 / w, 1 - 1 / w, w, dtype=dtype)
    v = torch.linspace(1 - 1 / h, -1 + 1 / h, h, dtype=dtype)
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    uu = uu.reshape(-1)
    vv = vv.reshape(-1)

    d2 = (uu.unsqueeze(0) - px.unsqueeze(1)) ** 2 + (vv.unsqueeze(0) - py.unsqueeze(1)) ** 2
    weights = scene.opacities.unsqueeze(1) * torch.exp(-d2 / (2 * scene.scales.unsqueeze(1) ** 2))

    # Front-to-back transmittance form, equivalent to back-to-front
    # C <- C(1-w) + w c. Descending depth; argsort is stable so equal-depth
    # splats keep index order.
    order = torch.argsort(depth.detach(), descending=True, stable=True)
    weights = weights[order]
    colors = scene.colors[order]

    one_minus = 1.0 - weights
    trans = torch.cumprod(one_minus, dim=0)
    trans = torch.cat([torch.ones(1, weights.shape[1], dtype=dtype), trans[:-1]], dim=0)
    pixels = (trans * weights).unsqueeze(-1) * colors.unsqueeze(1)
    background = (trans[-1] * one_minus[-1]).unsqueeze(-1)  # white
    image = pixels.sum(dim=0) + background
    return ImageRGB(image.reshape(h, w, 3))


def render_views(scene: ToySplatScene, resolution: int) -> MultiViewSet:
    """Render the four orthogonal views in canonical order."""
    views = [render(scene, CameraPose(VIEW_AZIMUTHS[cid]), resolution) for cid in CAMERA_IDS]
    return MultiViewSet(views=views)


class ToyDecoder3D(nn.Module):
    """Small affine+nonlinearity map from a latent code to splat parameters.

    Positions via tanh, colors/opacities via sigmoid, scales via
    softplus + MIN_SCALE floor, so every decoded scene satisfies the scene
    invariants by construction.
    """

    def __init__(self, d_z: int = 256, n_splats: int = 64, hidden: int = 128, seed: int = 0):
        super().__init__()
        self.d_z = d_z
        self.n_splats = n_splats
        gen = torch.Generator().manual_seed(seed)
        self.fc1 = nn.Linear(d_z, hidden)
        self.fc2 = nn.Linear(hidden, n_splats * 8)
        with torch.no_grad():
            for layer in (self.fc1, self.fc2):
                layer.weight.copy_(torch.randn(layer.weight.shape, generator=gen)
                                   / layer.weight.shape[1] ** 0.5)
                layer.bias.zero_()

    def forward(self, latent: Latent3D) -> ToySplatScene:
        # Cap the input RMS at 1: keeps the hidden layer out of tanh
        # saturation for large latents (so gradients keep flowing back to
        # whoever produced them) without amplifying small ones.
        code = latent.code
        rms = code.pow(2).mean().sqrt()
        code = code / torch.clamp(rms, min=1.0)
        raw = self.fc2(torch.tanh(self.fc1(code))).reshape(self.n_splats, 8)
        return ToySplatScene(
            positions=torch.tanh(raw[:, 0:3]),
            colors=torch.sigmoid(raw[:, 3:6]),
            scales=torch.nn.functional.softplus(raw[:, 6]) * 0.3 + 2 * MIN_SCALE,
            opacities=torch.sigmoid(raw[:, 7]),
        )


def decode_latent(latent: Latent3D, decoder: ToyDecoder3D) -> ToySplatScene:
    if not torch.isfinite(latent.code.detach()).all():
        raise InvalidInputError("latent contains non-finite values")
    return decoder(latent)


def apply_texture(geometry: GeometryHandle, appearance: torch.Tensor) -> ToySplatScene:
    """Merge predicted appearance logits (N, 4) with fixed geometry.

    Columns 0:3 are color logits, column 3 the opacity logit; both squashed
    by sigmoid. Geometry fields pass through untouched.
    """
    n = geometry.positions.shape[0]
    if appearance.shape != (n, 4):
        raise InvalidInputError(
            f"appearance must have shape ({n}, 4), got {tuple(appearance.shape)}")
    return ToySplatScene(
        positions=geometry.positions,
        colors=torch.sigmoid(appearance[:, 0:3]),
        scales=geometry.scales,
        opacities=torch.sigmoid(appearance[:, 3]),
    )


def extract_appearance(scene: ToySplatScene, eps: float = 1e-6) -> torch.Tensor:
    """Inverse of apply_texture's squashing, up to clamping at the bounds."""
    c = scene.colors.clamp(eps, 1 - eps)
    o = scene.opacities.clamp(eps, 1 - eps).unsqueeze(1)
    return torch.cat([torch.logit(c), torch.logit(o)], dim=1)


_SCENE_MAGIC = b"MVRS"
_SCENE_VERSION = 1


def save_scene(scene: ToySplatScene, path) -> None:
    """Flat binary layout: magic 'MVRS', uint32 version, uint32 N, then
    float32 arrays positions (N*3), colors (N*3), scales (N), opacities (N)."""
    n = scene.count
    with open(path, "wb") as f:
        f.write(_SCENE_MAGIC)
        f.write(struct.pack("<II", _SCENE_VERSION, n))
        for t in (scene.positions, scene.colors, scene.scales, scene.opacities):
            f.write(t.detach().cpu().numpy().astype("<f4").tobytes())


def load_scene(path) -> ToySplatScene:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _SCENE_MAGIC:
            raise InvalidInputError(f"bad scene magic {magic!r}")
        version, n = struct.unpack("<II", f.read(8))
        if version != _SCENE_VERSION:
            raise InvalidInputError(f"unsupported scene version {version}")
        def arr(count):
            return torch.from_numpy(
                np.frombuffer(f.read(4 * count), dtype="<f4").copy())
        return ToySplatScene(
            positions=arr(n * 3).reshape(n, 3),
            colors=arr(n * 3).reshape(n, 3),
            scales=arr(n),
            opacities=arr(n),
        )
