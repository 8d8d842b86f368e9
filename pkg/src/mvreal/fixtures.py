"""Deterministic toy fixtures: splat scenes, textured probe images, and the
bundled prompt list. Everything here is a pure function of its seed so tests
and demo runs need no bundled binary data.
"""

from __future__ import annotations

import numpy as np
import torch

from .imageops import ImageRGB
from .toyscene import GeometryHandle, Latent3D, ToySplatScene

FIXTURE_PROMPTS = [
    "a wolf",
    "a ceramic teapot",
    "an old leather boot",
    "a wooden rocking horse",
    "a brass pocket watch",
]


def make_fixture_scene(seed: int = 0, n_splats: int = 48) -> ToySplatScene:
    """A clustered random splat scene with varied colors, good as a toy asset."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.5, 0.5, size=(4, 3))
    assign = rng.integers(0, 4, size=n_splats)
    positions = centers[assign] + rng.normal(0, 0.18, size=(n_splats, 3))
    positions = np.clip(positions, -0.95, 0.95)
    palette = rng.uniform(0.1, 0.9, size=(4, 3))
    colors = np.clip(palette[assign] + rng.normal(0, 0.05, size=(n_splats, 3)), 0, 1)
    scales = rng.uniform(0.06, 0.18, size=n_splats)
    opacities = rng.uniform(0.55, 0.95, size=n_splats)
    return ToySplatScene(
        positions=torch.from_numpy(positions).float(),
        colors=torch.from_numpy(colors).float(),
        scales=torch.from_numpy(scales).float(),
        opacities=torch.from_numpy(opacities).float(),
    )


def desaturate_scene(scene: ToySplatScene, amount: float = 0.65) -> ToySplatScene:
    """Blend splat colors toward gray: the 'synthetic appearance' baseline a
    realism-supervised run starts from."""
    gray = scene.colors.mean(dim=1, keepdim=True)
    return ToySplatScene(
        positions=scene.positions.clone(),
        colors=(1 - amount) * scene.colors + amount * gray,
        scales=scene.scales.clone(),
        opacities=scene.opacities.clone(),
    )


def fixture_geometry(scene: ToySplatScene) -> GeometryHandle:
    return GeometryHandle(positions=scene.positions.clone(), scales=scene.scales.clone())


def make_fixture_latent(seed: int = 0, d_z: int = 256) -> Latent3D:
    rng = np.random.default_rng(seed + 7919)
    return Latent3D(torch.from_numpy(rng.standard_normal(d_z)).float())


def make_textured_image(seed: int = 0, size: int = 64) -> ImageRGB:
    """A smooth multi-scale textured image (sums of 2D sinusoids)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    img = np.zeros((size, size, 3))
    for ch in range(3):
        acc = np.zeros((size, size))
        for freq in (2, 5, 9):
            phase = rng.uniform(0, 2 * np.pi, size=2)
            amp = rng.uniform(0.3, 1.0)
            acc += amp * np.sin(2 * np.pi * freq * xx + phase[0]) * np.cos(
                2 * np.pi * freq * yy + phase[1])
        acc = (acc - acc.min()) / (acc.max() - acc.min())
        img[..., ch] = 0.1 + 0.8 * acc
    return ImageRGB(torch.from_numpy(img).float())


def circular_shift(image: ImageRGB, frac: float = 0.25) -> ImageRGB:
    """Shift the image content horizontally by a fraction of its width."""
    shift = int(round(image.width * frac))
    return ImageRGB(torch.roll(image.data, shifts=shift, dims=1))
