"""Command-line entry point: dataset construction, per-paradigm toy training,
supervision ablations, metric reports, and a fast self-test suite.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure, 3 divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigurationError, DivergenceError, InvalidInputError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_DIVERGENCE = 3


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    client_mode: str = "mock"
    out: str = "runs/out"
    steps: int = 500
    strategy: str = "coupled"
    prompts_file: str | None = None
    ablate_steps: int = 200
    encoder: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config root must be a mapping, got {type(raw)}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        from .strategies import STRATEGIES
        if self.client_mode not in ("mock", "live"):
            raise ConfigurationError(f"client_mode must be mock or live, got {self.client_mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}")
        if self.steps <= 0 or self.workers <= 0:
            raise ConfigurationError("steps and workers must be positive")
        from .encoders import EncoderConfig
        from .pipeline import PipelineConfig
        for payload, target in ((self.encoder, EncoderConfig),
                                (self.pipeline, PipelineConfig)):
            known = {f.name for f in fields(target)}
            unknown = sorted(set(payload) - known)
            if unknown:
                raise ConfigurationError(
                    f"unknown {target.__name__} keys: {', '.join(unknown)}")


def _build_encoders(config: RunConfig):
    from .encoders import EncoderConfig, encoder_registry
    enc_cfg = EncoderConfig(**config.encoder) if config.encoder else None
    if enc_cfg is None:
        from .strategies import overfit_encoders
        return overfit_encoders(config.seed)
    return (encoder_registry("toy-global", enc_cfg),
            encoder_registry("toy-patch", enc_cfg))


# --- Commands ---------------------------------------------------------------


def cmd_pipeline(config: RunConfig) -> int:
    from .fixtures import FIXTURE_PROMPTS
    from .pipeline import PipelineConfig, make_client, run_pipeline

    if config.prompts_file is not None:
        path = Path(config.prompts_file)
        if not path.exists():
            print(f"error: prompt file not found: {path}", file=sys.stderr)
            return EXIT_USAGE
        prompts = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    else:
        prompts = FIXTURE_PROMPTS
    pipe_cfg = PipelineConfig(**{"seed": config.seed, "workers": config.workers,
                                 **config.pipeline})
    client = make_client(config.client_mode, image_size=pipe_cfg.image_size)
    manifest = run_pipeline(prompts, config.out, client, pipe_cfg)
    incomplete = [e["id"] for e in manifest.entries() if e["stage"] != "complete"]
    if incomplete:
        print(f"error: {len(incomplete)} records incomplete: {incomplete}",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"pipeline: {len(manifest.entries())} records complete -> {config.out}")
    return EXIT_OK


def cmd_train(config: RunConfig) -> int:
    from .strategies import (OverfitConfig, build_overfit, load_checkpoint,
                             save_checkpoint, write_loss_csv)

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    run = build_overfit(OverfitConfig(strategy=config.strategy, seed=config.seed,
                                      steps=config.steps),
                        *_build_encoders(config))
    ckpt = out / "checkpoint.pt"
    if ckpt.exists():
        run.models, run.state, _ = load_checkpoint(ckpt, run.models, run.state)
        print(f"resumed from {ckpt} at step {run.state.step}")
    while run.state.step < config.steps:
        run.step()
    write_loss_csv(run.state.loss_history, out / "loss.csv")
    save_checkpoint(ckpt, run.models, run.state, config.strategy)
    totals = [e["total"] for e in run.state.loss_history]
    print(f"train[{config.strategy}]: steps {run.state.step} "
          f"loss {totals[0]:.4f} -> {totals[-1]:.4f}")
    return EXIT_OK


ABLATION_VARIANTS = (
    ("full", {"variant": "real", "adapt_weight": 1.0, "match_weight": 1.0}),
    ("wo_adapt", {"variant": "real", "adapt_weight": 0.0, "match_weight": 1.0}),
    ("wo_match", {"variant": "real", "adapt_weight": 1.0, "match_weight": 0.0}),
    ("l2", {"variant": "l2"}),
    ("gram", {"variant": "gram"}),
)


def structure_shift_probe(variant: str, adapt_weight: float, match_weight: float,
                          patch_encoder, global_encoder, seed: int = 0) -> float:
    """Loss gap between a horizontally shifted textured image and itself under
    the given supervision variant. Spatial-structure-aware losses score the
    shifted copy high; texture-statistics losses barely move."""
    from .fixtures import circular_shift, make_textured_image
    from .imageops import sample_shared_crops
    from .losses import LossConfig, gram_loss, l2_loss, realism_loss

    image = make_textured_image(seed)
    # A quarter-image shift would permute patch tokens exactly and hide from
    # the set-based matching term; 0.37 lands between patch boundaries.
    shifted = circular_shift(image, frac=0.37)
    crops = sample_shared_crops(seed, image.height, image.width, 4, (0.45, 0.9))
    cfg = LossConfig(adapt_weight=adapt_weight, match_weight=match_weight)
    if variant == "real":
        gap = realism_loss(shifted, image, crops, global_encoder, patch_encoder, cfg)
        base = realism_loss(image, image, crops, global_encoder, patch_encoder, cfg)
    elif variant == "l2":
        gap, base = l2_loss(shifted, image), l2_loss(image, image)
    else:
        gap = gram_loss(shifted, image, patch_encoder, cfg)
        base = gram_loss(image, image, patch_encoder, cfg)
    return gap.item() - base.item()


def cmd_ablate(config: RunConfig) -> int:
    import csv

    from .strategies import OverfitConfig, build_overfit, run_overfit

    global_encoder, patch_encoder = _build_encoders(config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, overrides in ABLATION_VARIANTS:
        cfg = OverfitConfig(strategy="feedforward", seed=config.seed,
                            steps=config.ablate_steps, **overrides)
        run = build_overfit(cfg, global_encoder, patch_encoder)
        state = run_overfit(run)
        totals = [e["total"] for e in state.loss_history]
        probe = structure_shift_probe(cfg.variant, cfg.adapt_weight,
                                      cfg.match_weight, patch_encoder,
                                      global_encoder, seed=config.seed)
        rows.append({"variant": name,
                     "init_loss": round(totals[0], 6),
                     "final_loss": round(totals[-1], 6),
                     "reduction": round(1 - totals[-1] / totals[0], 6),
                     "shift_probe": round(probe, 6)})
    with open(out / "ablation.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["variant", "init_loss",
                                               "final_loss", "reduction",
                                               "shift_probe"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"{row['variant']:>9}: final {row['final_loss']:.4f} "
              f"shift-probe {row['shift_probe']:.4f}")
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    from .evalsuite import build_report
    from .pipeline import DatasetManifest

    manifest_path = Path(config.out) / "manifest.jsonl"
    if not manifest_path.exists():
        print(f"error: manifest not found: {manifest_path}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest = DatasetManifest(manifest_path)
    report = build_report(manifest, *_build_encoders(config),
                          out_dir=Path(config.out) / "report")
    print(report.summary())
    return EXIT_OK


def cmd_selftest(config: RunConfig) -> int:
    import numpy as np
    import torch

    from .fixtures import make_fixture_scene, make_textured_image
    from .imageops import (compose_four_panel, histogram_match_lab,
                           sample_shared_crops, split_four_panel)
    from .losses import adapt_loss, match_loss, realism_loss
    from .pipeline import (EDIT_PROMPT, GENERATION_SUFFIX,
                           PROMPT_REWRITE_TEMPLATE)
    from .strategies import (NoiseSchedule, ddpm_forward, ddpm_predict_clean,
                             rf_noise, rf_predict_clean)
    from .toyscene import CameraPose, Latent3D, render, render_views, rotate_y, ToySplatScene
    from .evalsuite import kid

    global_encoder, patch_encoder = _build_encoders(config)
    checks = []

    image = make_textured_image(config.seed)
    crops = sample_shared_crops(config.seed, image.height, image.width, 4, (0.3, 0.8))
    checks.append(("loss zero at identity",
                   adapt_loss(image, image, crops, global_encoder).item() < 1e-6
                   and match_loss(image, image, patch_encoder).item() < 1e-6
                   and realism_loss(image, image, crops, global_encoder,
                                    patch_encoder).item() < 1e-6))

    gen = torch.Generator().manual_seed(config.seed)
    x0 = Latent3D(torch.randn(32, generator=gen, dtype=torch.float64))
    eps = Latent3D(torch.randn(32, generator=gen, dtype=torch.float64))
    t = 0.37
    x_t = rf_noise(x0, t, eps)
    rec = rf_predict_clean(x_t, t, eps.code - x0.code)
    checks.append(("rectified-flow recovery", float((rec.code - x0.code).abs().max()) < 1e-6))

    sched = NoiseSchedule.ddpm_cosine()
    x0d = torch.randn(4, 16, generator=gen, dtype=torch.float64)
    epsd = torch.randn(4, 16, generator=gen, dtype=torch.float64)
    xt = ddpm_forward(x0d, 60, epsd, sched)
    recd = ddpm_predict_clean(xt, 60, epsd, sched)
    checks.append(("ddpm recovery", float((recd - x0d).abs().max()) < 1e-5))

    scene = make_fixture_scene(config.seed)
    rotated = ToySplatScene(positions=rotate_y(scene.positions, 90),
                            colors=scene.colors, scales=scene.scales,
                            opacities=scene.opacities)
    a = render(scene, CameraPose(0), 32).data
    b = render(rotated, CameraPose(90), 32).data
    checks.append(("renderer equivariance", float((a - b).abs().max()) < 1e-5))

    views = render_views(scene, 32)
    rt = split_four_panel(compose_four_panel(views))
    checks.append(("four-panel round-trip",
                   all(torch.equal(x.data, y.data)
                       for x, y in zip(views.views, rt.views))))

    matched = histogram_match_lab(image, image)
    checks.append(("histogram self-identity",
                   float((matched.data - image.data).abs().max()) <= 1 / 255))

    checks.append(("prompt templates",
                   PROMPT_REWRITE_TEMPLATE.startswith("Optimize this prompt")
                   and GENERATION_SUFFIX.endswith("professional studio lighting.")
                   and "lock camera parameters" in EDIT_PROMPT))

    feats = [torch.randn(8, generator=gen) for _ in range(12)]
    checks.append(("kid identity", abs(kid(feats, feats)) <= 1e-6))

    ok = True
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}")
        ok = ok and passed
    return EXIT_OK if ok else EXIT_RUNTIME


# --- Argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvreal")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("pipeline", "train", "ablate", "eval", "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--strategy", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--mock", action="store_true")
        mode.add_argument("--live", action="store_true")
    return parser


def _config_from_args(args) -> RunConfig:
    config = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    for name in ("seed", "workers", "steps", "strategy", "out"):
        value = getattr(args, name)
        if value is not None:
            setattr(config, name, value)
    if args.mock:
        config.client_mode = "mock"
    if args.live:
        config.client_mode = "live"
    config.validate()
    return config


COMMANDS = {
    "pipeline": cmd_pipeline,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        config = _config_from_args(args)
    except (ConfigurationError, InvalidInputError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](config)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to a stable exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
