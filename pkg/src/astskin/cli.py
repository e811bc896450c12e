"""Command-line pipeline: gen, train, eval, infer.

Exit codes: 0 success, 1 runtime/domain error, 2 usage error.  Every
subcommand is reproducible from its flags and input files alone; the
``AST_SEED`` environment variable supplies a default seed when ``--seed``
is absent (the flag wins).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import calib, evaluation, gpr, signal, skinsim
from .errors import AstskinError, InputError
from .provenance import fingerprint

FRAME_FIELDS = "frame_index,force_n,dia_mm,x_mm,y_mm,sd_force,sd_dia,sd_x,sd_y"


def _seed_value(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return value


def _default_seed() -> int:
    env = os.environ.get("AST_SEED")
    if env is None:
        return 0
    try:
        return _seed_value(env)
    except argparse.ArgumentTypeError as exc:
        raise InputError(f"AST_SEED: {exc}") from exc


def _resolve_skin(args) -> skinsim.SkinSpec:
    if args.spec is not None:
        return skinsim.load_spec(args.spec)
    return skinsim.SKIN_PRESETS[args.skin]()


def cmd_gen(args) -> int:
    spec = _resolve_skin(args)
    seed = args.seed if args.seed is not None else _default_seed()
    tones = signal.ToneSet()
    protocol = calib.default_protocol(
        spec,
        frames_per_press=args.frames_per_press,
        noise_sd=args.noise,
        base_seed=seed,
    )
    dataset = calib.generate_dataset(spec, protocol, tones)
    calib.save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} samples to {args.out} (+ {calib.meta_path(args.out).name})")
    return 0


def cmd_train(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    dataset = calib.load_dataset(args.data)
    train_part, val_part, _ = calib.split(dataset, seed)
    x_train = calib.design_matrix(train_part)
    x_val = calib.design_matrix(val_part)

    models: dict[str, gpr.GPModel] = {}
    rmse: dict[str, float] = {}
    for idx, name in enumerate(gpr.BUNDLE_TARGETS):
        try:
            models[name] = gpr.fit(
                x_train,
                calib.target_vector(train_part, name),
                restarts=args.restarts,
                seed=(seed, idx),
                target_name=name,
            )
        except AstskinError as exc:
            raise AstskinError(f"fitting model '{name}' failed: {exc}") from exc
        rmse[name] = gpr.validate(
            models[name], x_val, calib.target_vector(val_part, name)
        )

    bundle = gpr.ModelBundle(
        models=models,
        skin=dataset.spec,
        tones=dataset.tones,
        skin_fingerprint=fingerprint(dataset.spec.to_dict()),
        dataset_fingerprint=dataset.fingerprint,
        dataset_path=str(args.data),
        noise_sd=dataset.protocol.noise_sd,
        split_seed=seed,
        train_seed=seed,
        validation_rmse=rmse,
    )
    gpr.save_bundle(bundle, args.out)

    unit = {"force": "N", "diameter": "mm", "loc_x": "mm", "loc_y": "mm"}
    print(f"validation RMSE ({calib.skin_label(dataset.spec)} skin, {len(val_part)} samples):")
    for name in gpr.BUNDLE_TARGETS:
        print(f"  {name:<9} ({unit[name]:>2})  {rmse[name]:.4f}")
    print(f"wrote bundle to {args.out}")
    return 0


def cmd_eval(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    bundle = gpr.load_bundle(args.bundle)
    if args.mode == "calibration":
        dataset = calib.load_dataset(bundle.dataset_path)
        report = evaluation.calibration_report(bundle, dataset)
    else:
        report = evaluation.realtime_protocol(
            bundle,
            bundle.skin,
            force=args.force,
            trials=args.trials,
            seed=seed,
        )
    rows = evaluation.emit_report(report, format=args.format, path=args.out)
    if rows == 0:
        print(f"warning: report {args.out} has no data rows", file=sys.stderr)
    print(f"wrote {rows} report rows to {args.out}")
    return 0


def cmd_infer(args) -> int:
    bundle = gpr.load_bundle(args.bundle)
    tones = bundle.tones
    layers = bundle.skin.layer_count
    source = sys.stdin.buffer if args.audio == "-" else args.audio
    buffer = signal.read_pcm(source, tones.sample_rate)

    block = tones.frame_len * layers
    n_frames = len(buffer) // block
    leftover = len(buffer) - n_frames * block
    if leftover:
        print(
            f"warning: discarded {leftover} trailing samples (partial frame)",
            file=sys.stderr,
        )

    out = sys.stdout
    out.write(FRAME_FIELDS + "\n")
    frame_ms = []
    budget_ms = 1000.0 * tones.frame_seconds
    for i in range(n_frames):
        start = time.perf_counter()
        chunk = buffer.samples[i * block : (i + 1) * block]
        mags = np.concatenate(
            [
                signal.tone_magnitudes(
                    signal.SampleBuffer(samples=chunk[layer::layers], sample_rate=tones.sample_rate),
                    tones,
                )
                for layer in range(layers)
            ]
        )
        features = signal.FeatureVector(magnitudes=np.maximum(mags, 0.0), layer_count=layers)
        est = evaluation.estimate(bundle, features)
        out.write(
            f"{i},{est.force!r},{est.diameter!r},{est.x!r},{est.y!r},"
            f"{est.sd_force!r},{est.sd_diameter!r},{est.sd_x!r},{est.sd_y!r}\n"
        )
        frame_ms.append(1000.0 * (time.perf_counter() - start))
    if frame_ms:
        print(
            f"processed {n_frames} frames: mean {np.mean(frame_ms):.2f} ms/frame, "
            f"max {np.max(frame_ms):.2f} ms (budget {budget_ms:.0f} ms)",
            file=sys.stderr,
        )
    else:
        print("warning: no full frames in input", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="astskin",
        description="Acoustic soft tactile skin: simulate, calibrate, evaluate, stream.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a calibration dataset (CSV + meta sidecar)")
    pick = gen.add_mutually_exclusive_group(required=True)
    pick.add_argument("--skin", choices=sorted(skinsim.SKIN_PRESETS), help="skin preset")
    pick.add_argument("--spec", type=Path, help="skin spec file (key = value lines)")
    gen.add_argument("--out", type=Path, required=True, help="output CSV path")
    gen.add_argument("--seed", type=_seed_value, default=None, help="base seed (default: AST_SEED or 0)")
    gen.add_argument("--noise", type=float, default=skinsim.DEFAULT_FEATURE_NOISE_SD, help="feature noise sd")
    gen.add_argument(
        "--frames-per-press", type=int, default=20, help="recorded frames per press"
    )
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="fit the four per-feature GP models")
    train.add_argument("--data", type=Path, required=True, help="dataset CSV from gen")
    train.add_argument("--out", type=Path, required=True, help="output bundle JSON path")
    train.add_argument("--seed", type=_seed_value, default=None, help="split/fit seed (default: AST_SEED or 0)")
    train.add_argument("--restarts", type=int, default=8, help="hyperparameter search restarts")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a bundle (calibration test set or real-time protocol)")
    ev.add_argument("--bundle", type=Path, required=True, help="bundle JSON from train")
    ev.add_argument("--mode", choices=("calibration", "realtime"), required=True)
    ev.add_argument("--force", type=float, default=evaluation.REALTIME_FORCE_N, help="commanded force (realtime)")
    ev.add_argument("--trials", type=int, default=evaluation.REALTIME_TRIALS, help="trials per point/peg (realtime)")
    ev.add_argument("--seed", type=_seed_value, default=None, help="trial noise seed (default: AST_SEED or 0)")
    ev.add_argument("--out", type=Path, required=True, help="output report path")
    ev.add_argument("--format", choices=("csv", "markdown"), default="csv", help="report format")
    ev.set_defaults(func=cmd_eval)

    infer = sub.add_parser("infer", help="stream tactile estimates from raw float32 PCM")
    infer.add_argument("--bundle", type=Path, required=True, help="bundle JSON from train")
    infer.add_argument(
        "--audio",
        required=True,
        help="headerless float32 LE PCM path, or '-' for standard input "
        "(bi-layer: two interleaved channels, layer 1 first)",
    )
    infer.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except AstskinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
