"""Image containers, crop sampling, four-panel composition, and Lab histogram matching.

Images are float tensors in [0,1], shape (H, W, 3). PNG I/O quantizes with
value = byte / 255.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image
from skimage import color as _skcolor

from .errors import InvalidInputError

CAMERA_IDS = ("front", "right", "back", "left")

MIN_IMAGE_SIDE = 8
MIN_CROP_SIDE = 16
HIST_BINS = 256


@dataclass
class ImageRGB:
    """An RGB image with float values in [0,1]."""

    data: torch.Tensor  # (H, W, 3)

    def __post_init__(self):
        if not isinstance(self.data, torch.Tensor):
            self.data = torch.as_tensor(self.data, dtype=torch.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise InvalidInputError(f"expected (H, W, 3) image, got {tuple(self.data.shape)}")
        h, w = self.data.shape[:2]
        if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
            raise InvalidInputError(f"image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {h}x{w}")
        with torch.no_grad():
            d = self.data.detach()
            if not torch.isfinite(d).all():
                raise InvalidInputError("image contains non-finite values")
            if d.min() < -1e-6 or d.max() > 1 + 1e-6:
                raise InvalidInputError("image values must lie in [0,1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data.detach().cpu().numpy()


@dataclass(frozen=True)
class CropSpec:
    """A crop rectangle; x0 is the column offset, y0 the row offset."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < MIN_CROP_SIDE or self.h < MIN_CROP_SIDE:
            raise InvalidInputError(f"crop extents must be >= {MIN_CROP_SIDE}, got {self.w}x{self.h}")
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidInputError("crop offsets must be non-negative")


@dataclass
class MultiViewSet:
    """An ordered bundle of exactly four equal-sized views."""

    views: list[ImageRGB]
    camera_ids: tuple[str, str, str, str] = CAMERA_IDS

    def __post_init__(self):
        if len(self.views) != 4:
            raise InvalidInputError(f"expected exactly 4 views, got {len(self.views)}")
        if len(self.camera_ids) != 4:
            raise InvalidInputError("expected exactly 4 camera ids")
        h, w = self.views[0].height, self.views[0].width
        for v in self.views[1:]:
            if v.height != h or v.width != w:
                raise InvalidInputError("all views must share identical dimensions")

    @property
    def view_height(self) -> int:
        return self.views[0].height

    @property
    def view_width(self) -> int:
        return self.views[0].width


@dataclass
class LabImage:
    """CIE L*a*b* image; L* in [0,100], a*/b* roughly in [-128,127]."""

    data: np.ndarray  # (H, W, 3)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def sample_shared_crops(rng_seed: int, height: int, width: int, count: int,
                        scale_range: tuple[float, float] = (0.25, 0.75)) -> list[CropSpec]:
    """Sample `count` square crops, deterministic in the seed.

    The crop side is uniform in scale_range * min(height, width); the
    position is uniform subject to containment. The same crop list is meant
    to be applied to both the synthesized and the ground-truth image.
    """
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    smin, smax = scale_range
    if not (0.0 < smin <= smax <= 1.0):
        raise InvalidInputError(f"scale_range must satisfy 0 < min <= max <= 1, got {scale_range}")
    short = min(height, width)
    if smin * short < MIN_CROP_SIDE:
        raise InvalidInputError(
            f"image too small for minimum crop: {smin} * {short} < {MIN_CROP_SIDE}")
    rng = np.random.default_rng(rng_seed)
    crops = []
    for _ in range(count):
        side = int(round(rng.uniform(smin, smax) * short))
        side = max(MIN_CROP_SIDE, min(side, short))
        x0 = int(rng.integers(0, width - side + 1))
        y0 = int(rng.integers(0, height - side + 1))
        crops.append(CropSpec(x0=x0, y0=y0, w=side, h=side))
    return crops


def apply_crop(image: ImageRGB, crop: CropSpec) -> ImageRGB:
    """Extract the exact pixel sub-rectangle; no resampling."""
    if crop.x0 + crop.w > image.width or crop.y0 + crop.h > image.height:
        raise InvalidInputError(
            f"crop {crop} exceeds image bounds {image.height}x{image.width}")
    return ImageRGB(image.data[crop.y0:crop.y0 + crop.h, crop.x0:crop.x0 + crop.w])


def crop_tensor(data: torch.Tensor, crop: CropSpec) -> torch.Tensor:
    """Crop a raw (H, W, 3) tensor, preserving the autograd graph."""
    if crop.x0 + crop.w > data.shape[1] or crop.y0 + crop.h > data.shape[0]:
        raise InvalidInputError("crop exceeds tensor bounds")
    return data[crop.y0:crop.y0 + crop.h, crop.x0:crop.x0 + crop.w]


def compose_four_panel(views: MultiViewSet) -> ImageRGB:
    """Tile the four views row-major: front | right // back | left."""
    a, b, c, d = (v.data for v in views.views)
    top = torch.cat([a, b], dim=1)
    bottom = torch.cat([c, d], dim=1)
    return ImageRGB(torch.cat([top, bottom], dim=0))


def split_four_panel(composite: ImageRGB) -> MultiViewSet:
    """Exact inverse of compose_four_panel."""
    h, w = composite.height, composite.width
    if h % 2 or w % 2:
        raise InvalidInputError(f"composite dimensions must be even, got {h}x{w}")
    hh, hw = h // 2, w // 2
    d = composite.data
    return MultiViewSet(views=[
        ImageRGB(d[:hh, :hw]),
        ImageRGB(d[:hh, hw:]),
        ImageRGB(d[hh:, :hw]),
        ImageRGB(d[hh:, hw:]),
    ])


def rgb_to_lab(image: ImageRGB) -> LabImage:
    """sRGB (D65) -> CIE L*a*b*."""
    return LabImage(_skcolor.rgb2lab(image.numpy().astype(np.float64)))


def lab_to_rgb(image: LabImage) -> ImageRGB:
    """CIE L*a*b* -> sRGB; out-of-gamut values are clipped to [0,1]."""
    rgb = _skcolor.lab2rgb(image.data.astype(np.float64))
    rgb = np.clip(rgb, 0.0, 1.0)
    return ImageRGB(torch.from_numpy(rgb.astype(np.float32)))


def _match_channel(src: np.ndarray, ref: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Monotone quantile mapping of one Lab channel onto a reference channel.

    Empirical CDFs on `bins` equal bins spanning the combined value range,
    linearly interpolated between bin edges. A constant reference collapses
    the whole source channel onto the constant.
    """
    ref_span = ref.max() - ref.min()
    if ref_span < 1e-9:
        return np.full_like(src, float(ref.mean()))
    lo = min(src.min(), ref.min())
    hi = max(src.max(), ref.max())
    if hi - lo < 1e-9:
        return src.copy()
    edges = np.linspace(lo, hi, bins + 1)
    # Index-proportional jitter keeps both CDFs strictly increasing so the
    # piecewise-linear inverse is well defined (and exact when src == ref).
    jitter = np.arange(bins + 1) * 1e-10
    cdf_src = np.concatenate([[0.0], np.cumsum(np.histogram(src, edges)[0])]) / src.size + jitter
    cdf_ref = np.concatenate([[0.0], np.cumsum(np.histogram(ref, edges)[0])]) / ref.size + jitter
    p = np.interp(src, edges, cdf_src)
    return np.interp(p, cdf_ref, edges)


def histogram_match_lab(source: ImageRGB, reference: ImageRGB) -> ImageRGB:
    """Match the source's per-channel Lab histograms to the reference's.

    Each of L*, a*, b* is remapped independently through the monotone
    quantile map CDF_ref^-1 o CDF_src, then converted back to RGB.
    """
    src_lab = rgb_to_lab(source).data
    ref_lab = rgb_to_lab(reference).data
    out = np.empty_like(src_lab)
    for ch in range(3):
        out[..., ch] = _match_channel(
            src_lab[..., ch].ravel(), ref_lab[..., ch].ravel()).reshape(src_lab.shape[:2])
    return lab_to_rgb(LabImage(out))


def lab_channel_wasserstein(a: ImageRGB, b: ImageRGB, bins: int = HIST_BINS) -> np.ndarray:
    """Per-channel Wasserstein-1 distance between two images' Lab histograms.

    Returned in units of bin-widths (shared bins over the combined range),
    so a value of 1.0 means the histograms are one bin apart on average.
    """
    la = rgb_to_lab(a).data.reshape(-1, 3)
    lb = rgb_to_lab(b).data.reshape(-1, 3)
    dists = np.zeros(3)
    for ch in range(3):
        x, y = la[:, ch], lb[:, ch]
        lo = min(x.min(), y.min())
        hi = max(x.max(), y.max())
        if hi - lo < 1e-9:
            continue
        edges = np.linspace(lo, hi, bins + 1)
        cdf_x = np.cumsum(np.histogram(x, edges)[0]) / x.size
        cdf_y = np.cumsum(np.histogram(y, edges)[0]) / y.size
        # W1 = integral of |CDF_x - CDF_y|; one bin of |CDF| gap costs one bin-width.
        dists[ch] = np.abs(cdf_x - cdf_y).sum()
    return dists


def save_png(image: ImageRGB, path) -> None:
    arr = np.clip(np.round(image.numpy() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_png(path) -> ImageRGB:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return ImageRGB(torch.from_numpy(arr))
