"""Command-line surface.

Machine-readable results go to stdout as one JSON object per line; human
notes go to stderr. Exit codes: 0 success, 2 usage/config error, 1 runtime
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import phantom as phantom_mod
from .errors import VoxsrError
from .field import load_checkpoint, save_checkpoint
from .metrics import MetricsReport, psnr, ssim3d, tricubic_upsample
from .phantom import PhantomSpec
from .trainer import VARIANTS, TrainConfig, infer_volume, train
from .volume_io import Volume3D, crop, downsample, import_nifti, load_vvol, save_vvol, scale_geometry


class UsageError(Exception):
    """Bad arguments or config; maps to exit code 2."""


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj: dict) -> None:
    print(json.dumps(obj), flush=True)


def _config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _resolve_factor(args) -> int:
    if getattr(args, "sigma", None) is not None:
        k = int(round(args.sigma ** (1.0 / 3.0)))
        _note(f"volumetric scale sigma={args.sigma} -> per-axis factor k={k}")
    elif getattr(args, "factor", None) is not None:
        k = args.factor
    else:
        raise UsageError("one of --factor or --sigma is required")
    if k < 1:
        raise UsageError(f"factor must be a positive integer, got {k}")
    return k


def _load_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        try:
            cfg = TrainConfig.from_json(args.config)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        cfg = TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _load_volume(path: str) -> Volume3D:
    if str(path).endswith((".nii",)):
        return import_nifti(path)
    return load_vvol(path)


def _ensure_unit_range(vol: Volume3D, label: str) -> Volume3D:
    lo = float(vol.data.min())
    hi = float(vol.data.max())
    if lo < 0.0 or hi > 1.0:
        from .volume_io import normalize

        _note(f"{label}: intensities in [{lo:.4g}, {hi:.4g}]; normalizing to [0, 1]")
        return normalize(vol)
    return vol


def _phantom_spec(args) -> PhantomSpec:
    if getattr(args, "spec", None):
        try:
            return PhantomSpec.from_json(args.spec)
        except (ValueError, json.JSONDecodeError) as exc:
            raise UsageError(f"bad phantom spec: {exc}") from exc
    params = {}
    if getattr(args, "params", None):
        try:
            params = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--params is not valid JSON: {exc}") from exc
    spec = PhantomSpec(kind=args.kind, size=args.size, seed=args.seed or 0, params=params)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return spec


def _evaluate(pred: Volume3D, ref: Volume3D, method: str, config_hash: str, seconds: float) -> MetricsReport:
    started = time.perf_counter()
    value_psnr = psnr(pred, ref)
    value_ssim = ssim3d(pred, ref)
    return MetricsReport(
        psnr=value_psnr,
        ssim=value_ssim,
        dims=pred.dims,
        method=method,
        config_hash=config_hash,
        seconds=seconds + (time.perf_counter() - started),
    )


# ----- commands ----------------------------------------------------------------


def cmd_phantom(args) -> int:
    spec = _phantom_spec(args)
    vol = phantom_mod.generate(spec)
    save_vvol(vol, args.output)
    _emit({"out": str(args.output), "dims": list(vol.dims), "kind": spec.kind})
    return 0


def cmd_downsample(args) -> int:
    k = _resolve_factor(args)
    if k < 2:
        raise UsageError("downsampling needs a factor >= 2")
    vol = _load_volume(args.input)
    out = downsample(vol, k)
    save_vvol(out, args.output)
    _emit({"out": str(args.output), "dims": list(out.dims), "factor": k})
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    lr = _ensure_unit_range(_load_volume(args.input), "train input")
    result = train(lr, cfg)
    save_checkpoint(result.model, args.output, train_config=cfg.to_dict())
    log = {
        "checkpoint": str(args.output),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "loss_history": result.epoch_losses,
        "final_loss": result.epoch_losses[-1],
        "seconds": result.seconds,
    }
    log_path = Path(str(args.output) + ".log.json")
    log_path.write_text(json.dumps(log, indent=2), encoding="utf-8")
    _emit({
        "checkpoint": str(args.output),
        "final_loss": result.epoch_losses[-1],
        "epochs": cfg.epochs,
        "log": str(log_path),
    })
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.input)
    if getattr(args, "like", None):
        ref = _load_volume(args.like)
        dims, affine = ref.dims, ref.affine
    else:
        k = _resolve_factor(args)
        if model.lr_dims is None or model.lr_affine is None:
            raise ValueError("checkpoint carries no source geometry; use --like instead")
        dims, affine = scale_geometry(model.lr_dims, model.lr_affine, k)
    vol = infer_volume(model, dims, affine)
    save_vvol(vol, args.output)
    _emit({"out": str(args.output), "dims": list(vol.dims)})
    return 0


def cmd_eval(args) -> int:
    pred = _load_volume(args.input)
    ref = _load_volume(args.ref)
    report = _evaluate(pred, ref, args.method, args.config_hash or "", 0.0)
    print(report.to_json(), flush=True)
    return 0


def cmd_baseline(args) -> int:
    k = _resolve_factor(args)
    lr = _load_volume(args.input)
    out = tricubic_upsample(lr, k)
    save_vvol(out, args.output)
    _emit({"out": str(args.output), "dims": list(out.dims), "factor": k})
    return 0


def _run_variant(hr: Volume3D, lr: Volume3D, k: int, cfg: TrainConfig) -> tuple[MetricsReport, object]:
    started = time.perf_counter()
    result = train(lr, cfg)
    dims, affine = scale_geometry(lr.dims, lr.affine, k)
    pred = infer_volume(result.model, dims, affine)
    gt = crop(hr, pred.dims)
    seconds = time.perf_counter() - started
    report = _evaluate(pred, gt, cfg.variant, _config_hash(cfg), seconds)
    return report, result


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in (args.variants or "").split(",") if v.strip()]
    if not variants:
        raise UsageError(f"--variants must list at least one of {VARIANTS}")
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {VARIANTS}")
    k = _resolve_factor(args)
    cfg = _load_config(args)
    hr = _ensure_unit_range(_load_volume(args.input), "ablate input")
    lr = downsample(hr, k) if k >= 2 else hr

    rows = []
    for variant in variants:
        report, _ = _run_variant(hr, lr, k, replace(cfg, variant=variant))
        row = report.to_dict()
        row["variant"] = variant
        row["factor"] = k
        rows.append(row)
        _emit(row)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return 0


def cmd_pipeline(args) -> int:
    k = _resolve_factor(args)
    cfg = _load_config(args)
    spec = _phantom_spec(args)
    hr = phantom_mod.generate(spec)
    lr = downsample(hr, k) if k >= 2 else hr
    _note(f"phantom {spec.kind} {hr.dims} -> LR {lr.dims} (k={k})")

    started = time.perf_counter()
    result = train(lr, cfg)
    dims, affine = scale_geometry(lr.dims, lr.affine, k)
    pred = infer_volume(result.model, dims, affine)
    model_seconds = time.perf_counter() - started
    gt = crop(hr, pred.dims)
    model_report = _evaluate(pred, gt, "model", _config_hash(cfg), model_seconds)

    base_started = time.perf_counter()
    base = tricubic_upsample(lr, k)
    base_report = _evaluate(base, gt, "tricubic", _config_hash(cfg), time.perf_counter() - base_started)

    print(model_report.to_json(), flush=True)
    print(base_report.to_json(), flush=True)

    if args.outdir:
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        save_vvol(hr, outdir / "hr.vvol")
        save_vvol(lr, outdir / "lr.vvol")
        save_vvol(pred, outdir / "pred.vvol")
        save_vvol(base, outdir / "tricubic.vvol")
        save_checkpoint(result.model, outdir / "model.ckpt", train_config=cfg.to_dict())
        with open(outdir / "reports.ndjson", "w", encoding="utf-8") as fh:
            fh.write(model_report.to_json() + "\n")
            fh.write(base_report.to_json() + "\n")
        with open(outdir / "train_log.json", "w", encoding="utf-8") as fh:
            json.dump({"loss_history": result.epoch_losses, "config": cfg.to_dict()}, fh, indent=2)
    return 0


# ----- parser ------------------------------------------------------------------


def _add_io(parser, need_in=True, need_out=True) -> None:
    if need_in:
        parser.add_argument("--in", dest="input", required=True, help="input file path")
    if need_out:
        parser.add_argument("--out", dest="output", required=True, help="output file path")


def _add_factor(parser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--factor", type=int, help="per-axis integer factor k")
    group.add_argument("--sigma", type=float, help="volumetric scale; mapped to k = round(sigma^(1/3))")


def _add_phantom_args(parser) -> None:
    parser.add_argument("--kind", choices=phantom_mod.KINDS, default="smooth-blobs")
    parser.add_argument("--size", type=int, default=32, help="edge length in voxels")
    parser.add_argument("--params", help="JSON dict of phantom parameters")
    parser.add_argument("--spec", help="JSON file holding a full phantom spec")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxsr",
        description="Volumetric super-resolution: fit a grid field to a low-res "
        "volume and sample it at any resolution.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="accepted for interface compatibility; commands run single-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic volume")
    _add_phantom_args(p)
    p.add_argument("--seed", type=int, default=0)
    _add_io(p, need_in=False)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("downsample", help="block-mean downsample a volume")
    _add_io(p)
    _add_factor(p)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("train", help="fit the field to a low-res volume")
    _add_io(p)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="sample a trained field onto a target grid")
    _add_io(p)
    _add_factor(p)
    p.add_argument("--like", help="vvol whose dims/affine define the target grid")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM of a volume against a reference")
    _add_io(p, need_out=False)
    p.add_argument("--ref", required=True, help="reference volume path")
    p.add_argument("--method", default="model", help="method label for the report")
    p.add_argument("--config-hash", dest="config_hash", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="tricubic upsampling baseline")
    _add_io(p)
    _add_factor(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ablate", help="train and score model variants")
    _add_io(p, need_out=False)
    p.add_argument("--out", dest="output", help="optional ndjson results file")
    _add_factor(p)
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated variant tags")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("pipeline", help="phantom -> downsample -> train -> infer -> eval (+ baseline)")
    _add_phantom_args(p)
    p.add_argument("--seed", type=int, default=None, help="phantom and training seed")
    _add_factor(p)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--outdir", help="directory for volumes, checkpoint, and reports")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _note(f"error: {exc}")
        return 2
    except FileNotFoundError as exc:
        _note(f"error: input file not found: {exc.filename}")
        return 2
    except (VoxsrError, ValueError, RuntimeError, OSError) as exc:
        _note(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
