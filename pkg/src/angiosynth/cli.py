"""Command-line front end.

Subcommands: prepare, train, infer, perturb, evaluate, study make,
study score, inspect. Every artifact-producing command writes a
run_manifest.json next to its outputs. Config precedence is
defaults < --config JSON file < flags; the effective config is echoed
into the manifest.
"""

from __future__ import annotations

import argparse
import importlib
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .blocks import ResidualBlockConfig, count_parameters
from .dataset import (
    build_training_samples,
    cache_key,
    dataset_hash,
    denormalize,
    eval_quadrant_crops,
    load_pairs,
    normalize,
    read_sample_cache,
    stack_samples,
    write_sample_cache,
)
from .discriminators import default_discriminator_configs
from .errors import AngiosynthError, InputError
from .evaluation import (
    RandomProjectionEmbedder,
    build_study_kit,
    evaluate_conditions,
    score_study,
)
from .generators import default_generator_configs
from .objective import ObjectiveConfig
from .perturb import PerturbationSpec, apply_perturbation
from .runmeta import RunManifest, utc_now
from .trainer import (
    TrainingSchedule,
    TrainingState,
    fit,
    infer_from_state,
    load_training_state,
    save_training_state,
)


def _load_image(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    return normalize(arr)


def _save_image(path, tensor):
    arr = denormalize(tensor)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def _layered_config(args, keys):
    """defaults < --config file < explicit flags."""
    config = {}
    if getattr(args, "config", None):
        config.update(json.loads(Path(args.config).read_text()))
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _make_embedder(spec_str):
    """'random[:dim[:seed]]' or an import path 'module:callable'."""
    if spec_str.startswith("random"):
        parts = spec_str.split(":")
        dim = int(parts[1]) if len(parts) > 1 else 64
        seed = int(parts[2]) if len(parts) > 2 else 0
        return RandomProjectionEmbedder(dim=dim, seed=seed)
    module_name, _, attr = spec_str.partition(":")
    if not attr:
        raise InputError(
            f"embedder {spec_str!r} must be 'random[:dim[:seed]]' or "
            f"'module:callable'"
        )
    factory = getattr(importlib.import_module(module_name), attr)
    return factory() if callable(factory) and not hasattr(factory, "__self__") \
        else factory


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_inspect(args):
    for variant in ("proposed", "original"):
        cfg = ResidualBlockConfig(
            channels=args.channels, kernel=args.kernel, variant=variant
        )
        count = count_parameters(cfg)
        print(
            f"residual block [{variant:8s}] C={args.channels} K={args.kernel}: "
            f"{count.total:,} parameters "
            f"({count.convolution_weights:,} conv + "
            f"{count.normalization_params:,} norm)"
        )
    if args.block:
        cfg = ResidualBlockConfig(
            channels=args.channels, kernel=args.kernel, variant=args.block
        )
        print(count_parameters(cfg).total)
    print()
    print(f"discriminator patch maps (pyramid base {args.base_size}):")
    for name, cfg in default_discriminator_configs(args.base_size).items():
        print(
            f"  {name:10s} input {cfg.input_size:4d} -> patch "
            f"{cfg.patch_output_size}x{cfg.patch_output_size}"
        )
    return 0


def cmd_prepare(args):
    started = utc_now()
    pairs = load_pairs(args.data_root, split="train")
    samples = build_training_samples(pairs, n=args.crops, size=args.crop_size,
                                     seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    key = cache_key(dataset_hash(args.data_root), args.seed, args.crops,
                    args.crop_size)
    cache_path = out / "sample_cache.ascache"
    write_sample_cache(cache_path, samples, key)
    print(f"{len(pairs)} pairs -> {len(samples)} crops -> {cache_path}")
    RunManifest(
        command="prepare",
        config={"crops": args.crops, "crop_size": args.crop_size,
                "cache_key": key},
        seed=args.seed,
        dataset_hash=dataset_hash(args.data_root),
        started_at=started, finished_at=utc_now(),
        outputs=[cache_path.name],
    ).write(out)
    return 0


def _schedule_from_args(args, config):
    fields = ("epochs", "batch_size", "d_steps_per_cycle", "learning_rate",
              "seed", "joint_every_cycle", "checkpoint_every")
    kwargs = {k: config[k] for k in fields if k in config}
    return TrainingSchedule(**kwargs)


def cmd_train(args):
    started = utc_now()
    config = _layered_config(args, (
        "epochs", "batch_size", "d_steps_per_cycle", "learning_rate", "seed",
        "checkpoint_every",
    ))
    if args.lambda_weight is not None:
        config["lambda_weight"] = args.lambda_weight
    schedule = _schedule_from_args(args, config)
    objective = ObjectiveConfig(
        lambda_weight=config.get("lambda_weight", 10.0)
    )
    if args.cache:
        samples = read_sample_cache(args.cache)
    else:
        pairs = load_pairs(args.data_root, split="train")
        samples = build_training_samples(pairs, n=args.crops,
                                         size=args.crop_size,
                                         seed=schedule.seed)
    fundus_all, angio_all = stack_samples(samples)
    size = fundus_all.shape[1]
    if args.resume:
        state = load_training_state(args.resume)
    elif args.toy or size != 512:
        from .trainer import toy_training_state

        state = toy_training_state(size, args.base_channels or 4,
                                   schedule, objective)
    else:
        coarse_cfg, fine_cfg = default_generator_configs()
        state = TrainingState.initialize(coarse_cfg, fine_cfg, None,
                                         schedule, objective)
    out = Path(args.out)
    if schedule.epochs == 0:
        out.mkdir(parents=True, exist_ok=True)
        final = save_training_state(state, out / "checkpoint_final.ckpt")
    else:
        final = fit(state, fundus_all, angio_all, out)
    print(f"trained to cycle {state.cycle}; checkpoint: {final}")
    hash_ = dataset_hash(args.data_root) if args.data_root else None
    RunManifest(
        command="train",
        config={**config, "samples": len(samples), "input_size": int(size)},
        seed=schedule.seed, dataset_hash=hash_,
        started_at=started, finished_at=utc_now(),
        outputs=[Path(final).name],
    ).write(out)
    return 0


def cmd_infer(args):
    started = utc_now()
    state = load_training_state(args.checkpoint)
    src = Path(args.image)
    paths = sorted(src.iterdir()) if src.is_dir() else [src]
    paths = [p for p in paths if p.suffix.lower() in
             (".png", ".jpg", ".jpeg", ".bmp")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in paths:
        fundus = _load_image(path)
        angio = infer_from_state(fundus, state)
        target = out / f"{path.stem}_angio.png"
        _save_image(target, angio)
        written.append(target.name)
    print(f"wrote {len(written)} angiogram(s) to {out}")
    RunManifest(
        command="infer",
        config={"checkpoint": str(args.checkpoint)},
        started_at=started, finished_at=utc_now(), outputs=written,
    ).write(out)
    return 0


def cmd_perturb(args):
    started = utc_now()
    spec = PerturbationSpec(
        kind=args.kind,
        amount=args.amount,
        radius_fraction=args.radius_fraction,
        seed=args.seed,
    )
    src = Path(args.image)
    paths = sorted(src.iterdir()) if src.is_dir() else [src]
    paths = [p for p in paths if p.suffix.lower() in
             (".png", ".jpg", ".jpeg", ".bmp")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sidecar = {}
    for path in paths:
        image = _load_image(path)
        result = apply_perturbation(image, spec)
        name = f"{path.stem}_{spec.kind}.png"
        _save_image(out / name, result)
        sidecar[name] = spec.to_dict()
    (out / "perturbations.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True)
    )
    print(f"wrote {len(sidecar)} perturbed image(s) to {out}")
    RunManifest(
        command="perturb", config=spec.to_dict(), seed=args.seed,
        started_at=started, finished_at=utc_now(),
        outputs=sorted(sidecar) + ["perturbations.json"],
    ).write(out)
    return 0


def cmd_evaluate(args):
    started = utc_now()
    state = load_training_state(args.checkpoint)
    pairs = load_pairs(args.data_root, split="eval")
    crop = min(args.crop_size, state.g_fine.config.input_size)
    samples = [
        s for pair in pairs for s in eval_quadrant_crops(pair, crop)
    ]
    embedder = _make_embedder(args.embedder)
    report = evaluate_conditions(
        lambda fundus: infer_from_state(fundus, state), samples, embedder
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "frechet_report.csv")
    report.to_json(out / "frechet_report.json")
    for name, score in report.scores.items():
        delta = report.deltas[name]
        print(f"{name:6s} frechet {score:10.4f}  (vs none {delta:+.4f})")
    for name, err in report.errors.items():
        print(f"{name:6s} FAILED: {err}", file=sys.stderr)
    RunManifest(
        command="evaluate",
        config={"embedder": args.embedder, "crop_size": crop,
                "conditions": list(report.scores)},
        dataset_hash=dataset_hash(args.data_root),
        started_at=started, finished_at=utc_now(),
        outputs=["frechet_report.csv", "frechet_report.json"],
    ).write(out)
    return 0


def _load_dir_images(directory):
    paths = sorted(
        p for p in Path(directory).iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    out = []
    for p in paths:
        with Image.open(p) as img:
            out.append(normalize(np.asarray(img.convert("L"))[..., None]))
    return out


def cmd_study_make(args):
    started = utc_now()
    real = _load_dir_images(args.real_dir)
    fake = _load_dir_images(args.fake_dir)
    kit = build_study_kit(real, fake, n=args.n, seed=args.seed)
    out = Path(args.out)
    items_dir = out / "items"
    items_dir.mkdir(parents=True, exist_ok=True)
    for item_id, image in kit.items:
        _save_image(items_dir / f"{item_id}.png", image)
    # the key lives outside the item directory so raters never see it
    (out / "key.json").write_text(json.dumps(kit.key, indent=2, sort_keys=True))
    n_real = sum(1 for v in kit.key.values() if v == "real")
    print(f"{len(kit.items)} items ({n_real} real / "
          f"{len(kit.items) - n_real} fake) -> {items_dir}")
    RunManifest(
        command="study make", config={"n": args.n}, seed=args.seed,
        started_at=started, finished_at=utc_now(),
        outputs=["items/", "key.json"],
    ).write(out)
    return 0


def cmd_study_score(args):
    key = json.loads(Path(args.key).read_text())
    responses = {}
    import csv as _csv

    with open(args.responses, newline="") as fh:
        for row in _csv.reader(fh):
            if not row or row[0].strip().lower() == "item_id":
                continue
            responses[row[0].strip()] = row[1].strip().lower()
    report = score_study(responses, key)
    display = report.rounded()
    print(f"fake correct : {report.fake_correct_rate:6.2f}%")
    print(f"real correct : {report.real_correct_rate:6.2f}%")
    print(f"missed       : {report.missed:6.2f}%  (display {display['missed']}%)")
    print(f"found        : {report.found:6.2f}%  (display {display['found']}%)")
    print(f"confusion    : {report.confusion:6.2f}%")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "fake_correct_rate": report.fake_correct_rate,
            "real_correct_rate": report.real_correct_rate,
            "missed": report.missed,
            "found": report.found,
            "confusion": report.confusion,
        }, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="angiosynth",
        description="Fundus-to-angiogram translation: training, inference, "
                    "perturbation robustness, and evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="parameter counts and patch-size table")
    p.add_argument("--block", choices=("proposed", "original"),
                   help="print only this variant's total on its own line")
    p.add_argument("--channels", type=int, default=32,
                   help="residual-block channels (default 32)")
    p.add_argument("--kernel", type=int, default=3,
                   help="residual-block kernel (default 3)")
    p.add_argument("--base-size", type=int, default=512,
                   help="pyramid base for the patch-size table (default 512)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("prepare", help="ingest pairs and cache random crops")
    p.add_argument("--data-root", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--crops", type=int, default=50,
                   help="random crops per pair (default 50)")
    p.add_argument("--crop-size", type=int, default=512,
                   help="square crop side (default 512)")
    p.add_argument("--seed", type=int, default=0, help="crop sampling seed")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="fit the GAN")
    p.add_argument("--data-root", help="dataset root directory")
    p.add_argument("--cache", help="prepared sample cache (.ascache)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="JSON config file (defaults < file < flags)")
    p.add_argument("--epochs", type=int, help="training epochs (default 100)")
    p.add_argument("--batch-size", type=int, dest="batch_size",
                   help="minibatch size (default 4)")
    p.add_argument("--d-steps", type=int, dest="d_steps_per_cycle",
                   help="discriminator updates per cycle (default 2)")
    p.add_argument("--learning-rate", type=float, dest="learning_rate",
                   help="Adam learning rate (default 2e-4)")
    p.add_argument("--lambda", type=float, dest="lambda_weight",
                   help="reconstruction weight (default 10)")
    p.add_argument("--seed", type=int, help="run seed (default 0)")
    p.add_argument("--crops", type=int, default=50,
                   help="random crops per pair (default 50)")
    p.add_argument("--crop-size", type=int, default=512,
                   help="square crop side (default 512)")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every",
                   help="cycles between checkpoints (default: final only)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--toy", action="store_true",
                   help="force the desk-scale model regardless of crop size")
    p.add_argument("--base-channels", type=int, dest="base_channels",
                   help="toy-model base channels (default 4)")
    p.add_argument("--workers", type=int, default=0,
                   help="data-loading workers (0 = inline)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="translate fundus image(s)")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--image", required=True, help="fundus image or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("perturb", help="apply a perturbation to image(s)")
    p.add_argument("--image", required=True, help="image or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--kind", required=True,
                   choices=("none", "blur", "sharpen", "noise", "whirl",
                            "pinch"),
                   help="perturbation kind")
    p.add_argument("--amount", type=float,
                   help="strength (kind-specific default)")
    p.add_argument("--radius-fraction", type=float, dest="radius_fraction",
                   default=1.0, help="affected disk radius, whirl/pinch only")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("evaluate",
                       help="Frechet score per perturbation condition")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--data-root", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--embedder", default="random",
                   help="'random[:dim[:seed]]' or 'module:callable' "
                        "(default random)")
    p.add_argument("--crop-size", type=int, default=512,
                   help="evaluation crop side (default 512)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="blinded real/fake study kit")
    study_sub = p.add_subparsers(dest="study_command", required=True)

    ps = study_sub.add_parser("make", help="build a balanced blinded kit")
    ps.add_argument("--real-dir", required=True, help="real angiogram images")
    ps.add_argument("--fake-dir", required=True, help="generated angiograms")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--n", type=int, default=40, help="kit size (default 40)")
    ps.add_argument("--seed", type=int, default=0, help="shuffle seed")
    ps.set_defaults(func=cmd_study_make)

    ps = study_sub.add_parser("score", help="score rater responses")
    ps.add_argument("--responses", required=True,
                    help="CSV of item_id,label rows")
    ps.add_argument("--key", required=True, help="key.json from 'study make'")
    ps.add_argument("--out", help="optional JSON report path")
    ps.set_defaults(func=cmd_study_score)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AngiosynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
