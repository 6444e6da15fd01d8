"""Command-line interface.

Subcommands: gen-data, make-masks, train, eval, reconstruct, export-video,
demo-transforms. Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from .data import (
    DatasetManifest,
    PhantomConfig,
    build_dataset,
    load_manifest,
    save_masks,
    save_sequence,
)
from .errors import ConfigError, DataError, NumericError
from .forward_model import MaskSpec, add_noise, forward, sample_masks
from .groups import GroupConfig
from .training import (
    Checkpoint,
    TrainConfig,
    derive_numpy_rng,
    derive_torch_rng,
    evaluate,
    train,
)
from .viz import demo_transforms, export_video

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ktrecon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, default=50, help="number of sequences")
    p.add_argument("--split-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=int, default=12)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--n-ellipses", type=int, default=4)
    p.add_argument("--motion-amplitude", type=float, default=0.1)
    p.add_argument("--pulsation-amplitude", type=float, default=0.12)
    p.add_argument("--no-phase-texture", action="store_true")

    p = sub.add_parser("make-masks", help="draw and store per-entry sampling masks")
    p.add_argument("--manifest", required=True, help="path to manifest.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--acceleration", type=float, default=8.0)
    p.add_argument("--acs", type=int, default=8)
    p.add_argument("--scheme", choices=["gaussian_columns", "uniform_columns"],
                   default="gaussian_columns")
    p.add_argument("--static-pattern", action="store_true",
                   help="share one column draw across frames instead of per-frame i.i.d.")

    p = sub.add_parser("train", help="train a reconstructor from a JSON config")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override checkpoint directory")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or zero-filled baseline)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--config", default=None, help="TrainConfig JSON (for --zf without checkpoint)")
    p.add_argument("--manifest", default=None, help="override the config's manifest path")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--mode", default="direct", choices=["direct", "tssdu_star"])
    p.add_argument("--splits", type=int, default=8, help="averaging count for tssdu_star")
    p.add_argument("--zf", action="store_true", help="evaluate the zero-filled baseline")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="report path prefix (writes .json and .txt)")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("reconstruct", help="reconstruct one manifest entry")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--id", required=True, help="manifest entry id")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--mode", default="direct", choices=["direct", "tssdu_star"])
    p.add_argument("--splits", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gif", action="store_true", help="also export a magnitude GIF")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("export-video", help="export a sequence file as GIF or PNG frames")
    p.add_argument("--input", required=True, help="sequence (.seq) file")
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="gif", choices=["gif", "png_frames"])

    p = sub.add_parser("demo-transforms", help="render random group transforms of a sequence")
    p.add_argument("--input", required=True, help="sequence (.seq) file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-temporal", action="store_true")
    p.add_argument("--no-cpab", action="store_true")
    p.add_argument("--cpab-sigma", type=float, default=0.3)

    return parser


def _cmd_gen_data(args) -> int:
    config = PhantomConfig(
        t=args.t, h=args.height, w=args.width, n_ellipses=args.n_ellipses,
        motion_amplitude=args.motion_amplitude,
        pulsation_amplitude=args.pulsation_amplitude,
        phase_texture=not args.no_phase_texture, seed=args.seed,
    )
    manifest = build_dataset(args.n, config, args.split_fraction, args.out, args.seed)
    print(f"wrote {len(manifest.entries)} sequences to {args.out} "
          f"({len(manifest.split('train'))} train / {len(manifest.split('test'))} test)")
    return EXIT_OK


def _cmd_make_masks(args) -> int:
    manifest = load_manifest(args.manifest)
    spec = MaskSpec(
        acceleration=args.acceleration, acs_lines=args.acs, scheme=args.scheme,
        per_frame_iid=not args.static_pattern, seed=args.seed,
    )
    entries = []
    for i, entry in enumerate(manifest.entries):
        masks = sample_masks(spec, *entry.dims, derive_numpy_rng(args.seed, 100, i))
        mask_name = f"{entry.id}.mask"
        save_masks(masks, manifest.root / mask_name)
        entries.append(dataclasses.replace(entry, mask_path=mask_name, mask_spec=spec))
    manifest = DatasetManifest(entries=entries, root=manifest.root)
    manifest.save(manifest.root / "manifest.json")
    print(f"wrote {len(entries)} masks (R={spec.acceleration:g}, ACS={spec.acs_lines})")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = TrainConfig.from_json_file(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, checkpoint_dir=args.out)
    if not config.checkpoint_dir:
        raise ConfigError("config has no checkpoint_dir and --out was not given")
    checkpoint = train(config, threads=args.threads)
    print(f"trained {checkpoint.step} steps; checkpoint in {config.checkpoint_dir}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    torch.set_num_threads(args.threads)
    if args.checkpoint is not None:
        checkpoint = Checkpoint.load(args.checkpoint)
        config = checkpoint.config()
        model = None if args.zf else checkpoint.build_model()
    elif args.config is not None:
        if not args.zf:
            raise ConfigError("--config without --checkpoint only supports --zf")
        config = TrainConfig.from_json_file(args.config)
        model = None
    else:
        raise ConfigError("eval needs --checkpoint or --config")
    if args.manifest is not None:
        config = dataclasses.replace(config, dataset_manifest=args.manifest)
    report = evaluate(model, config, split=args.split, mode=args.mode,
                      tssdu_splits=args.splits, seed=args.seed)
    print(report.to_text_table())
    if args.out:
        prefix = Path(args.out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        prefix.with_suffix(".json").write_text(report.to_json())
        prefix.with_suffix(".txt").write_text(report.to_text_table() + "\n")
        print(f"report written to {prefix.with_suffix('.json')}")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    torch.set_num_threads(args.threads)
    checkpoint = Checkpoint.load(args.checkpoint)
    config = checkpoint.config()
    manifest_path = args.manifest or config.dataset_manifest
    manifest = load_manifest(manifest_path)
    entry = manifest.entry(args.id)
    x = manifest.load(entry)
    masks = sample_masks(config.mask_spec, *x.shape, derive_numpy_rng(args.seed, 0))
    y = forward(x, masks)
    if config.noise_sigma > 0:
        y = add_noise(y, config.noise_sigma, derive_numpy_rng(args.seed, 1))
    model = checkpoint.build_model()
    with torch.no_grad():
        if args.mode == "direct":
            from .backbone import reconstruct as run
            xhat = run(model, y, masks)
        else:
            from .losses import tssdu_star_reconstruct
            xhat = tssdu_star_reconstruct(
                model, y, masks, args.splits, config.loss.ssdu_input_fraction,
                derive_torch_rng(args.seed, 2),
            )
    out = Path(args.out)
    save_sequence(xhat, out.with_suffix(".seq"))
    print(f"wrote {out.with_suffix('.seq')}")
    if args.gif:
        export_video(xhat, out.with_suffix(".gif"))
        print(f"wrote {out.with_suffix('.gif')}")
    return EXIT_OK


def _cmd_export_video(args) -> int:
    from .data import load_sequence

    files = export_video(load_sequence(args.input), args.out, format=args.format)
    print(f"wrote {len(files)} file(s) to {args.out}")
    return EXIT_OK


def _cmd_demo_transforms(args) -> int:
    config = GroupConfig(
        use_temporal=not args.no_temporal, use_rotation=False,
        use_cpab=not args.no_cpab, cpab_sigma=args.cpab_sigma,
    )
    files = demo_transforms(args.input, config, args.out, k=args.k, seed=args.seed)
    print(f"wrote {len(files)} GIFs to {args.out}")
    return EXIT_OK


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "make-masks": _cmd_make_masks,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "reconstruct": _cmd_reconstruct,
    "export-video": _cmd_export_video,
    "demo-transforms": _cmd_demo_transforms,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
