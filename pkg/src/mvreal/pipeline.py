"""Structure-aligned multi-view dataset construction: prompt rewriting,
generator orchestration, four-panel detail enhancement, per-view color
alignment, and manifest persistence.

All generator calls go through a pluggable client; the default mock client is
deterministic so the full flow runs offline. Every stage writes its artifacts
before advancing the stage marker, and later stages always read their inputs
back from disk, so a crashed run resumes to byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (ConfigurationError, IngestionError, InvalidInputError,
                     PipelineError)
from .imageops import (CAMERA_IDS, ImageRGB, MultiViewSet, compose_four_panel,
                       histogram_match_lab, lab_channel_wasserstein, load_png,
                       save_png, split_four_panel)
from .toyscene import (MIN_SCALE, ToySplatScene, load_scene, render_views,
                       save_scene)

# --- Prompt templates (verbatim; the golden-string tests pin these) ---------

PROMPT_REWRITE_TEMPLATE = (
    "Optimize this prompt into a single, high-quality, photorealistic physical "
    "object description, focusing on realistic materials, detailed textures, "
    "and authentic visual qualities: {raw}."
)

GENERATION_SUFFIX = (
    ", real camera shot, real photograph, pure white background with no "
    "shadows, complete object, high-quality photography, macro lens detail, "
    "professional studio lighting."
)

EDIT_PROMPT = (
    "Edit Image, photorealistic micro-refinement only, make it a real object; "
    "strictly preserve exact composition and framing (NO recomposition); lock "
    "camera parameters (position, rotation, FOV, focal length); lock scale and "
    "subject position; preserve exact geometry, silhouette and perspective; "
    "fix tiny artifacts; refine textures and micro-details; keep colors and "
    "lighting exactly the same."
)


@dataclass
class TextPrompt:
    raw: str
    rewritten: str = ""
    realism_suffixed: str = ""


STAGES = ("prompted", "imaged", "reconstructed", "rendered", "enhanced",
          "aligned", "complete")


def _stage_index(stage: str) -> int:
    if stage not in STAGES:
        raise InvalidInputError(f"unknown stage {stage!r}")
    return STAGES.index(stage)


# --- Generator clients ------------------------------------------------------


class GeneratorClient:
    """Interface over the text-rewrite / text-to-image / image-edit services."""

    capabilities = ("rewrite_text", "text_to_image", "edit_image")

    def rewrite_text(self, prompt: str) -> str:
        raise NotImplementedError

    def text_to_image(self, prompt: str, seed: int) -> ImageRGB:
        raise NotImplementedError

    def edit_image(self, image: ImageRGB, prompt: str) -> ImageRGB:
        raise NotImplementedError


class MockGeneratorClient(GeneratorClient):
    """Deterministic offline stand-in for the generation services.

    rewrite_text produces a canned rewrite; text_to_image renders a seeded
    smooth texture (a pure function of the prompt text and seed); edit_image
    applies a fixed mild color shift — a known transform the alignment stage
    must undo. Call counts are tracked so tests can assert idempotence.
    """

    def __init__(self, image_size: int = 64):
        self.image_size = image_size
        self.call_counts = {c: 0 for c in self.capabilities}

    def rewrite_text(self, prompt: str) -> str:
        self.call_counts["rewrite_text"] += 1
        core = prompt.strip().rstrip(".")
        return (f"A photorealistic {core} with detailed surface textures, "
                "realistic materials, and authentic visual qualities")

    def text_to_image(self, prompt: str, seed: int) -> ImageRGB:
        from .fixtures import make_textured_image
        self.call_counts["text_to_image"] += 1
        digest = hashlib.sha256(f"{prompt}\x00{seed}".encode("utf-8")).digest()
        return make_textured_image(int.from_bytes(digest[:4], "little"),
                                   size=self.image_size)

    def edit_image(self, image: ImageRGB, prompt: str) -> ImageRGB:
        self.call_counts["edit_image"] += 1
        data = image.data.clone()
        # Fixed warm shift + mild contrast stretch: structure-preserving.
        data[..., 0] = (data[..., 0] * 0.92 + 0.06).clamp(0.0, 1.0)
        data[..., 1] = (data[..., 1] * 0.96 + 0.02).clamp(0.0, 1.0)
        data[..., 2] = (data[..., 2] * 0.88).clamp(0.0, 1.0)
        return ImageRGB(data)


class LiveGeneratorClient(GeneratorClient):
    """Placeholder for HTTP-backed services; configured but not bundled.

    Holds endpoint/credential from the environment and fails each call with a
    retriable pipeline error until a transport is wired in. Credentials are
    never persisted anywhere.
    """

    def __init__(self, endpoint: str, credential: str = ""):
        if not endpoint:
            raise ConfigurationError(
                "live client mode requires MVREAL_CLIENT_ENDPOINT")
        self.endpoint = endpoint
        self._credential = credential

    def _unavailable(self):
        raise PipelineError(
            f"live generator at {self.endpoint} is not reachable in this "
            "build; rerun in mock mode or supply a transport")

    def rewrite_text(self, prompt: str) -> str:
        self._unavailable()

    def text_to_image(self, prompt: str, seed: int) -> ImageRGB:
        self._unavailable()

    def edit_image(self, image: ImageRGB, prompt: str) -> ImageRGB:
        self._unavailable()


def make_client(mode: str | None = None, image_size: int = 64) -> GeneratorClient:
    """Client from explicit mode or MVREAL_CLIENT_MODE (default mock)."""
    mode = mode or os.environ.get("MVREAL_CLIENT_MODE", "mock")
    if mode == "mock":
        return MockGeneratorClient(image_size=image_size)
    if mode == "live":
        return LiveGeneratorClient(os.environ.get("MVREAL_CLIENT_ENDPOINT", ""),
                                   os.environ.get("MVREAL_CLIENT_CREDENTIAL", ""))
    raise ConfigurationError(f"unknown client mode {mode!r}")


# --- Prompt building --------------------------------------------------------


def rewrite_prompt(raw: str, client: GeneratorClient) -> TextPrompt:
    """Fill the rewrite template with the raw text and submit it."""
    if not raw:
        raise InvalidInputError("raw prompt must be non-empty")
    request = PROMPT_REWRITE_TEMPLATE.format(raw=raw)
    try:
        rewritten = client.rewrite_text(request)
    except PipelineError:
        raise
    except Exception as exc:  # client transport failures are retriable
        raise PipelineError(f"rewrite_text failed: {exc}") from exc
    if not rewritten:
        raise PipelineError("client returned an empty rewrite")
    return TextPrompt(raw=raw, rewritten=rewritten)


def build_generation_prompt(prompt: TextPrompt) -> str:
    """Rewritten description + the fixed realistic-constraints suffix."""
    if not prompt.rewritten:
        raise InvalidInputError("prompt has not been rewritten yet")
    return prompt.rewritten + GENERATION_SUFFIX


def build_edit_prompt() -> str:
    return EDIT_PROMPT


# --- Background matte and toy reconstruction --------------------------------


def remove_background(image: ImageRGB, threshold: float = 0.92) -> ImageRGB:
    """Snap near-white pixels to exact white.

    The generation prompt demands a pure white background, so a threshold
    matte is adequate for fixtures; swap in a real matting model here for
    photographic inputs.
    """
    data = image.data.clone()
    mask = (data.min(dim=-1).values >= threshold).unsqueeze(-1)
    return ImageRGB(torch.where(mask, torch.ones_like(data), data))


def fit_scene_to_image(image: ImageRGB, n_splats: int = 16, steps: int = 200,
                       resolution: int = 32, seed: int = 0) -> ToySplatScene:
    """Fit a splat scene to one image by L2 render loss on the front view.

    A desk-scale stand-in for an image-to-3D generator: any scene producing
    four coherent renders suffices to exercise the downstream stages.
    Unconstrained parameters are squashed into the scene invariants.
    """
    from .toyscene import CameraPose, render

    target = remove_background(image)
    small = torch.nn.functional.interpolate(
        target.data.permute(2, 0, 1).unsqueeze(0), size=(resolution, resolution),
        mode="bilinear", align_corners=False).squeeze(0).permute(1, 2, 0)

    gen = torch.Generator().manual_seed(seed)
    raw_pos = (torch.rand(n_splats, 3, generator=gen) * 1.2 - 0.6).requires_grad_(True)
    raw_col = torch.randn(n_splats, 3, generator=gen).requires_grad_(True)
    raw_scale = torch.full((n_splats,), -1.0).requires_grad_(True)
    raw_op = torch.zeros(n_splats).requires_grad_(True)

    def build():
        return ToySplatScene(
            positions=torch.tanh(raw_pos),
            colors=torch.sigmoid(raw_col),
            scales=torch.nn.functional.softplus(raw_scale) * 0.4 + 2 * MIN_SCALE,
            opacities=torch.sigmoid(raw_op),
        )

    opt = torch.optim.Adam([raw_pos, raw_col, raw_scale, raw_op], lr=5e-2)
    for _ in range(steps):
        rendered = render(build(), CameraPose(0), resolution)
        loss = ((rendered.data - small) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        scene = build()
    return ToySplatScene(positions=scene.positions.detach(),
                         colors=scene.colors.detach(),
                         scales=scene.scales.detach(),
                         opacities=scene.opacities.detach())


# --- Records and manifest ---------------------------------------------------


@dataclass
class AssetRecord:
    id: str
    root: Path
    prompt: TextPrompt
    stage: str = "prompted"
    stats: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def dir(self) -> Path:
        return Path(self.root) / self.id

    @property
    def seed_image_path(self) -> Path:
        return self.dir / "seed.png"

    @property
    def scene_path(self) -> Path:
        return self.dir / "scene.bin"

    def view_paths(self, kind: str) -> list[Path]:
        sub = {"rendered": "views", "enhanced": "enhanced", "aligned": "aligned"}[kind]
        return [self.dir / sub / f"{cid}.png" for cid in CAMERA_IDS]

    def load_views(self, kind: str) -> MultiViewSet:
        return MultiViewSet(views=[load_png(p) for p in self.view_paths(kind)])


@dataclass
class PipelineConfig:
    seed: int = 0
    image_size: int = 64
    render_resolution: int = 64
    n_splats: int = 16
    fit_steps: int = 200
    workers: int = 1


MANIFEST_SCHEMA_VERSION = 1


class DatasetManifest:
    """Append-only JSONL record index; last entry per id wins on load."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, record: AssetRecord) -> None:
        entry = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "id": record.id,
            "stage": record.stage,
            "prompt": {"raw": record.prompt.raw,
                       "rewritten": record.prompt.rewritten,
                       "realism_suffixed": record.prompt.realism_suffixed},
            "seed": record.seed,
            "stats": record.stats,
        }
        with open(self.path, "a") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        latest: dict[str, dict] = {}
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if entry.get("schema_version") != MANIFEST_SCHEMA_VERSION:
                    raise InvalidInputError(
                        f"unsupported manifest schema {entry.get('schema_version')}")
                latest[entry["id"]] = entry
        return list(latest.values())


# --- Crash-safe stage plumbing ----------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _read_stage(record: AssetRecord) -> str:
    marker = record.dir / "stage.txt"
    if marker.exists():
        return marker.read_text().strip()
    return ""


def _advance_stage(record: AssetRecord, stage: str) -> None:
    # The marker is written only after the stage's artifacts are on disk.
    _atomic_write_text(record.dir / "stage.txt", stage + "\n")
    record.stage = stage


def _write_stats(record: AssetRecord) -> None:
    lines = [f"{k} {v}" for k, v in sorted(record.stats.items())]
    _atomic_write_text(record.dir / "stats.txt", "\n".join(lines) + "\n")


def _load_prompt(record: AssetRecord) -> TextPrompt:
    data = json.loads((record.dir / "prompt.json").read_text())
    return TextPrompt(**data)


def new_record(root, raw_prompt: str, index: int, seed: int = 0) -> AssetRecord:
    rid = f"asset-{index:04d}"
    return AssetRecord(id=rid, root=Path(root), prompt=TextPrompt(raw=raw_prompt),
                       stage="", seed=seed)


def run_record(record: AssetRecord, client: GeneratorClient,
               config: PipelineConfig, scene_source=None) -> AssetRecord:
    """Advance one record through every remaining stage.

    Each stage reads its inputs back from disk (so fresh and resumed runs see
    identical, quantized artifacts) and writes its outputs before the stage
    marker advances. Re-running a complete record performs no client calls.
    """
    record.dir.mkdir(parents=True, exist_ok=True)
    done = _read_stage(record)
    done_idx = _stage_index(done) if done else -1
    if done:
        record.stage = done

    if done_idx < _stage_index("prompted"):
        prompt = rewrite_prompt(record.prompt.raw, client)
        prompt.realism_suffixed = build_generation_prompt(prompt)
        _atomic_write_text(record.dir / "prompt.json",
                           json.dumps(prompt.__dict__, sort_keys=True, indent=1))
        record.prompt = prompt
        _advance_stage(record, "prompted")
    else:
        record.prompt = _load_prompt(record)

    if done_idx < _stage_index("imaged"):
        image = client.text_to_image(record.prompt.realism_suffixed, record.seed)
        save_png(image, record.seed_image_path)
        _advance_stage(record, "imaged")

    if done_idx < _stage_index("reconstructed"):
        seed_image = load_png(record.seed_image_path)
        source = scene_source or fit_scene_to_image
        scene = source(seed_image, n_splats=config.n_splats,
                       steps=config.fit_steps, seed=record.seed)
        save_scene(scene, record.scene_path)
        _advance_stage(record, "reconstructed")

    if done_idx < _stage_index("rendered"):
        scene = load_scene(record.scene_path)
        views = render_views(scene, config.render_resolution)
        (record.dir / "views").mkdir(exist_ok=True)
        for path, view in zip(record.view_paths("rendered"), views.views):
            save_png(view, path)
        _advance_stage(record, "rendered")

    if done_idx < _stage_index("enhanced"):
        views = record.load_views("rendered")
        panel = compose_four_panel(views)
        edited = client.edit_image(panel, build_edit_prompt())
        enhanced = split_four_panel(edited)
        (record.dir / "enhanced").mkdir(exist_ok=True)
        for path, view in zip(record.view_paths("enhanced"), enhanced.views):
            save_png(view, path)
        _advance_stage(record, "enhanced")

    if done_idx < _stage_index("aligned"):
        rendered = record.load_views("rendered")
        enhanced = record.load_views("enhanced")
        (record.dir / "aligned").mkdir(exist_ok=True)
        aligned_views = []
        for r, e in zip(rendered.views, enhanced.views):
            aligned_views.append(histogram_match_lab(e, r))
        for path, view in zip(record.view_paths("aligned"), aligned_views):
            save_png(view, path)
        aligned = MultiViewSet(views=aligned_views)
        record.stats.update(_alignment_stats(rendered, enhanced, aligned))
        _write_stats(record)
        _advance_stage(record, "aligned")
    elif (record.dir / "stats.txt").exists():
        record.stats.update(_parse_stats(record.dir / "stats.txt"))

    if done_idx < _stage_index("complete"):
        _advance_stage(record, "complete")
    return record


def _alignment_stats(rendered: MultiViewSet, enhanced: MultiViewSet,
                     aligned: MultiViewSet) -> dict:
    from .encoders import EncoderConfig, encoder_registry
    from .evalsuite import mv_consistency

    stats = {}
    pre = post = 0.0
    for cid, r, e, a in zip(CAMERA_IDS, rendered.views, enhanced.views, aligned.views):
        w_pre = sum(lab_channel_wasserstein(e, r))
        w_post = sum(lab_channel_wasserstein(a, r))
        stats[f"lab_w1_pre_{cid}"] = round(w_pre, 6)
        stats[f"lab_w1_post_{cid}"] = round(w_post, 6)
        pre += w_pre
        post += w_post
    stats["lab_w1_pre_total"] = round(pre, 6)
    stats["lab_w1_post_total"] = round(post, 6)
    pe = encoder_registry("toy-patch", EncoderConfig(m=32, patch_size=8))
    stats["consistency_rendered"] = round(mv_consistency(rendered, pe), 6)
    stats["consistency_enhanced"] = round(mv_consistency(enhanced, pe), 6)
    stats["consistency_aligned"] = round(mv_consistency(aligned, pe), 6)
    return stats


def _parse_stats(path: Path) -> dict:
    stats = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, value = line.split(None, 1)
            stats[key] = float(value)
    return stats


def run_pipeline(prompts: list[str], out_dir, client: GeneratorClient,
                 config: PipelineConfig) -> DatasetManifest:
    """Process every prompt into a complete record; append new completions to
    the manifest. Records are independent; the manifest writer is the only
    shared resource and is appended serially here."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(out_dir / "manifest.jsonl")
    known = {e["id"]: e for e in manifest.entries()}
    records = [new_record(out_dir, raw, i, seed=config.seed + i)
               for i, raw in enumerate(prompts)]

    def process(rec):
        return run_record(rec, client, config)

    if config.workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            done = list(pool.map(process, records))
    else:
        done = [process(r) for r in records]

    for rec in done:
        if rec.id not in known or known[rec.id]["stage"] != "complete":
            manifest.append(rec)
    return manifest


def import_external_views(directory) -> AssetRecord:
    """Ingest a directory of pre-made rendered + enhanced views (e.g. actual
    API outputs) as a record ready for alignment."""
    directory = Path(directory)
    missing = []
    for sub in ("views", "enhanced"):
        for cid in CAMERA_IDS:
            if not (directory / sub / f"{cid}.png").exists():
                missing.append(f"{sub}/{cid}.png")
    if missing:
        raise IngestionError(
            f"missing view files in {directory}: {', '.join(missing)}")
    record = AssetRecord(id=directory.name, root=directory.parent,
                         prompt=TextPrompt(raw="(imported)", rewritten="(imported)"),
                         stage="enhanced")
    rendered = record.load_views("rendered")
    enhanced = record.load_views("enhanced")
    sizes = {(v.height, v.width) for v in rendered.views + enhanced.views}
    if len(sizes) != 1:
        raise InvalidInputError(f"imported views have mismatched sizes: {sorted(sizes)}")
    _advance_stage(record, "enhanced")
    return record
