"""Command-line interface: synth, train, infer, eval, ablate.

Flags override values from an optional flat key=value config file.  Every
command echoes its effective configuration (and writes it next to its
outputs) before doing any work, so a run can be reproduced from its own
artifacts.  Exit codes: 0 success, 2 usage/configuration error, 3 data
error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import benchmark as bench
from . import metrics as mt
from . import video_data as vd
from .errors import CheckpointError, ConfigError, DataError, FlowProviderError
from .flow import NullFlowProvider, get_flow, resolve_provider, write_flo
from .network import ABLATIONS, InpaintingNetwork, ModelConfig, load_model
from .train import TrainSettings, robust_synthetic_sequence, train_model

log = logging.getLogger(__name__)

FLOW_CMD_ENV = "STLCA_FLOW_CMD"

_DEFAULTS = {
    "seed": 0,
    "steps": 2000,
    "size": "64x64",
    "frames": 20,
    "shapes": 3,
    "mask_kind": None,  # dataset masks as-is; synthetic data defaults to square
    "ablation": "none",
    "q": None,
    "r": None,
    "d": 8.0,
    "lr": 1e-3,
    "num_seeds": 3,
    "side_range": "12x20",
}


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"expected HxW, got {text!r}") from exc
    return h, w


def parse_config_file(path) -> dict[str, str]:
    """Flat `key = value` lines; `#` starts a comment."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _merge(args: argparse.Namespace) -> dict:
    """Effective settings: flag > config file > default."""
    file_values = parse_config_file(args.config) if args.config else {}
    merged = {}
    for key, value in vars(args).items():
        if key in ("config", "command", "func"):
            continue
        if value is not None:
            merged[key] = value
        elif key in file_values:
            default = _DEFAULTS.get(key)
            caster = type(default) if default is not None else str
            raw = file_values[key]
            merged[key] = caster(raw) if caster is not bool else raw.lower() in ("1", "true", "yes")
        else:
            merged[key] = _DEFAULTS.get(key)
    return merged


def _echo_config(cfg: dict, out_dir: Path | None) -> str:
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg) if cfg[k] is not None]
    text = "\n".join(lines)
    print("effective configuration:")
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "effective_config.txt").write_text(text + "\n")
    return text


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _model_config(cfg: dict) -> ModelConfig:
    base = ModelConfig(boundary_distance=float(cfg["d"]))
    if cfg.get("q") is not None:
        base = replace(base, bank_capacity=int(cfg["q"]))
    if cfg.get("r") is not None:
        base = replace(base, bank_lookback=int(cfg["r"]))
    return base.for_ablation(cfg["ablation"])


def _load_dataset(cfg: dict) -> vd.VideoSequence:
    h, w = _parse_size(cfg["size"])
    data = cfg.get("data")
    if data is None:
        raise ConfigError("--data is required")
    kind = cfg.get("mask_kind")
    if data == "synthetic":
        seq = robust_synthetic_sequence(
            int(cfg["frames"]), h, w, int(cfg["shapes"]), int(cfg["seed"])
        )
        kind = kind or "square"  # synthetic ground truth needs holes to inpaint
    else:
        root = Path(data)
        frame_dir = root / "frames" if (root / "frames").is_dir() else root
        mask_dir = root / "masks" if (root / "masks").is_dir() else None
        if cfg.get("masks") and kind not in ("irregular", "object"):
            mask_dir = Path(cfg["masks"])
        seq = vd.load_frame_folder(frame_dir, size=(h, w), mask_dir=mask_dir)
    if kind == "square":
        lo, hi = _parse_size(cfg["side_range"])
        seq = vd.VideoSequence(
            seq.frames,
            vd.generate_square_masks(len(seq), h, w, int(cfg["seed"]), (lo, hi)),
            motion=seq.motion,
        )
    elif kind in ("irregular", "object"):
        spec = vd.MaskSpec(kind=kind, source_path=cfg.get("masks"))
        seq = vd.VideoSequence(
            seq.frames,
            vd.build_masks(spec, len(seq), h, w, int(cfg["seed"])),
            motion=seq.motion,
        )
    return seq


def _provider_for(cfg: dict, seq: vd.VideoSequence):
    flow_dir = None
    data = cfg.get("data")
    if data and data != "synthetic" and (Path(data) / "flows").is_dir():
        flow_dir = Path(data) / "flows"
    try:
        return resolve_provider(seq, flow_dir=flow_dir,
                                command=os.environ.get(FLOW_CMD_ENV))
    except ConfigError:
        if all((m == 1).all() for m in seq.masks):
            return NullFlowProvider()  # nothing to inpaint, flow never read
        raise


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    h, w = _parse_size(cfg["size"])
    t = int(cfg["frames"])
    seq = robust_synthetic_sequence(t, h, w, int(cfg["shapes"]), int(cfg["seed"]))
    lo, hi = _parse_size(cfg["side_range"])
    masks = vd.generate_square_masks(t, h, w, int(cfg["seed"]), (lo, hi))
    seq = vd.VideoSequence(seq.frames, masks, motion=seq.motion)
    vd.export_sequence(seq, out)
    flow_dir = out / "flows"
    flow_dir.mkdir(exist_ok=True)
    offsets = ModelConfig().neighbor_offsets
    pairs = sorted(
        {(a, min(max(a + off, 0), t - 1)) for a in range(t) for off in offsets}
    )
    provider = resolve_provider(seq)
    for a, b in pairs:
        write_flo(flow_dir / f"flow_{a}_{b}.flo", get_flow(provider, seq, a, b).vectors)
    (out / "meta.json").write_text(json.dumps(
        {"frames": t, "height": h, "width": w, "seed": int(cfg["seed"]),
         "shapes": int(cfg["shapes"]), "flow_pairs": len(pairs)}, indent=2))
    print(f"wrote {t} frames, masks, and {len(pairs)} flow files to {out}")
    return 0


def cmd_train(cfg: dict) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    h, w = _parse_size(cfg["size"])
    lo, hi = _parse_size(cfg["side_range"])
    settings = TrainSettings(
        steps=int(cfg["steps"]),
        learning_rate=float(cfg["lr"]),
        seed=int(cfg["seed"]),
        height=h,
        width=w,
        sequence_length=int(cfg["frames"]),
        num_shapes=int(cfg["shapes"]),
        mask_side_range=(lo, hi),
        model=_model_config(cfg),
    )
    videos = provider = None
    if cfg.get("data") not in (None, "synthetic"):
        videos = [_load_dataset(cfg)]
        provider = _provider_for(cfg, videos[0])
    result = train_model(settings, out_dir=out, videos=videos, provider=provider)
    ema = result.loss_ema()
    print(f"trained {settings.steps} steps; final loss {result.final_loss:.5f} "
          f"(ema {ema[0]:.5f} -> {ema[-1]:.5f})")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_infer(cfg: dict) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    ckpt = cfg.get("checkpoint")
    if not ckpt or not Path(ckpt).exists():
        raise CheckpointError(f"checkpoint not found: {ckpt}")
    net, _ = load_model(ckpt)
    overrides = {}
    if cfg.get("q") is not None and int(cfg["q"]) != net.config.bank_capacity:
        overrides["bank_capacity"] = int(cfg["q"])
    if cfg.get("r") is not None and int(cfg["r"]) != net.config.bank_lookback:
        overrides["bank_lookback"] = int(cfg["r"])
    if overrides:
        net.config = replace(net.config, **overrides)
    seq = _load_dataset(cfg)
    provider = _provider_for(cfg, seq)
    started = time.perf_counter()
    restored = net.inpaint_sequence(seq, provider)
    wall = time.perf_counter() - started
    frame_dir = out / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    names, hashes = [], []
    for i, frame in enumerate(restored.frames):
        name = f"{i:05d}.png"
        vd.save_frame(frame_dir / name, frame)
        names.append(name)
        hashes.append(_sha256_file(frame_dir / name))
    hashed_cfg = "\n".join(
        f"{k} = {cfg[k]}" for k in sorted(cfg)
        if cfg[k] is not None and k not in ("out",)
    )
    manifest = {
        "frames": names,
        "frame_sha256": hashes,
        "checkpoint_sha256": _sha256_file(ckpt),
        "config_sha256": hashlib.sha256(hashed_cfg.encode()).hexdigest(),
        "model_config": asdict(net.config),
        "seed": int(cfg["seed"]),
        "timing": {"wall_seconds": wall, "seconds_per_frame": wall / len(restored)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"restored {len(restored)} frames to {frame_dir} "
          f"({wall:.2f} s, {wall / len(restored):.2f} s/frame)")
    return 0


def cmd_eval(cfg: dict) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    truth = _load_dataset(cfg)
    restored_dir = cfg.get("restored")
    if not restored_dir:
        raise ConfigError("--restored directory is required for eval")
    h, w = _parse_size(cfg["size"])
    restored = vd.load_frame_folder(restored_dir, size=(h, w))
    if len(restored) != len(truth):
        raise DataError(
            f"restored has {len(restored)} frames, ground truth {len(truth)}"
        )
    report = mt.evaluate_sequence(restored.frames, truth.frames, truth.masks)
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    fill = mt.mean_fill(truth.frames, truth.masks)
    baseline = mt.evaluate_sequence(fill, truth.frames, truth.masks)
    summary = {
        "mean_psnr": report.mean_psnr,
        "mean_ssim": report.mean_ssim,
        "mean_masked_psnr": report.mean_masked_psnr,
        "baseline_mean_fill_masked_psnr": baseline.mean_masked_psnr,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_ablate(cfg: dict) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    h, w = _parse_size(cfg["size"])
    lo, hi = _parse_size(cfg["side_range"])
    protocol = bench.BenchmarkProtocol(
        height=h, width=w, sequence_length=int(cfg["frames"]),
        num_shapes=int(cfg["shapes"]), steps=int(cfg["steps"]),
        learning_rate=float(cfg["lr"]), mask_side_range=(lo, hi),
    )
    seeds = tuple(int(cfg["seed"]) + k for k in range(int(cfg["num_seeds"])))
    results = bench.run_ablation_study(seeds, protocol)
    medians: dict[str, dict[str, float]] = {}
    for ablation in ABLATIONS:
        rows = [r for r in results if r.ablation == ablation]
        medians[ablation] = {
            "masked_psnr": float(np.median([r.masked_psnr for r in rows])),
            "ssim": float(np.median([r.ssim for r in rows])),
            "perceptual": float(np.median([r.perceptual for r in rows])),
        }
    with open(out / "table.csv", "w") as fh:
        fh.write("ablation,masked_psnr,ssim,perceptual\n")
        for ablation in ABLATIONS:
            m = medians[ablation]
            fh.write(f"{ablation},{m['masked_psnr']:.4f},{m['ssim']:.4f},"
                     f"{m['perceptual']:.6f}\n")
    payload = {
        "seeds": list(seeds),
        "protocol": asdict(protocol),
        "medians": medians,
        "runs": [vars(r) for r in results],
    }
    (out / "results.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    print((out / "table.csv").read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stlca",
        description="Video inpainting with short-term boundary alignment and "
                    "a dynamic long-term feature bank",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--size", help="frame size HxW")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic video with masks and flows")
    add_common(p)
    p.add_argument("--frames", type=int)
    p.add_argument("--shapes", type=int)
    p.add_argument("--side-range", dest="side_range", help="square mask side LOxHI")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    add_common(p)
    p.add_argument("--data", help="'synthetic' or a frame folder")
    p.add_argument("--masks", help="mask directory for irregular/object kinds")
    p.add_argument("--mask-kind", dest="mask_kind",
                   choices=("square", "irregular", "object"))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--frames", type=int)
    p.add_argument("--shapes", type=int)
    p.add_argument("--side-range", dest="side_range")
    p.add_argument("--ablation", choices=("none",) + ABLATIONS)
    p.add_argument("--q", type=int, help="feature bank capacity")
    p.add_argument("--r", type=int, help="feature bank lookback")
    p.add_argument("--d", type=float, help="boundary context distance")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="restore a video with a trained model")
    add_common(p)
    p.add_argument("--data", help="'synthetic' or a frame folder")
    p.add_argument("--masks")
    p.add_argument("--mask-kind", dest="mask_kind",
                   choices=("square", "irregular", "object"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--shapes", type=int)
    p.add_argument("--side-range", dest="side_range")
    p.add_argument("--q", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--d", type=float)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compare restored frames against ground truth")
    add_common(p)
    p.add_argument("--data", help="ground-truth folder (frames/ + masks/) or 'synthetic'")
    p.add_argument("--restored", help="folder of restored frames")
    p.add_argument("--masks")
    p.add_argument("--mask-kind", dest="mask_kind",
                   choices=("square", "irregular", "object"))
    p.add_argument("--frames", type=int)
    p.add_argument("--shapes", type=int)
    p.add_argument("--side-range", dest="side_range")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the study configurations")
    add_common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--frames", type=int)
    p.add_argument("--shapes", type=int)
    p.add_argument("--side-range", dest="side_range")
    p.add_argument("--num-seeds", dest="num_seeds", type=int)
    p.set_defaults(func=cmd_ablate)

    return parser


def run(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _merge(args)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FlowProviderError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4


def main():
    sys.exit(run())
