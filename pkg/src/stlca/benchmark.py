"""Desk-scale evaluation protocol shared by the ablation command and the
acceptance suite.

A run trains one configuration on the seeded synthetic stream and evaluates
it on held-out seeded videos (64x64, 20 frames, square masks by default),
reporting missing-region PSNR against the per-frame mean-fill baseline plus
full-frame PSNR/SSIM and a fixed-extractor perceptual distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import losses as ls
from . import metrics as mt
from .flow import SyntheticFlowProvider
from .network import ABLATIONS, InpaintingNetwork, ModelConfig
from .train import TrainSettings, derived_seed, robust_synthetic_sequence, train_model
from .video_data import VideoSequence, generate_square_masks

log = logging.getLogger(__name__)

EVAL_SEED_SALT = 0xE7A1


@dataclass(frozen=True)
class BenchmarkProtocol:
    height: int = 64
    width: int = 64
    sequence_length: int = 20
    num_shapes: int = 3
    steps: int = 2000
    learning_rate: float = 1e-4
    mask_side_range: tuple[int, int] = (12, 20)
    eval_videos: int = 3

    def train_settings(self, ablation: str, seed: int,
                       base: ModelConfig | None = None) -> TrainSettings:
        base = base if base is not None else ModelConfig()
        return TrainSettings(
            steps=self.steps,
            learning_rate=self.learning_rate,
            seed=seed,
            height=self.height,
            width=self.width,
            sequence_length=self.sequence_length,
            num_shapes=self.num_shapes,
            mask_side_range=self.mask_side_range,
            model=base.for_ablation(ablation),
        )

    def eval_video(self, index: int) -> VideoSequence:
        scene = robust_synthetic_sequence(
            self.sequence_length, self.height, self.width, self.num_shapes,
            derived_seed(EVAL_SEED_SALT, index, 0),
        )
        masks = generate_square_masks(
            self.sequence_length, self.height, self.width,
            derived_seed(EVAL_SEED_SALT, index, 1), self.mask_side_range,
        )
        return VideoSequence(scene.frames, masks, motion=scene.motion)


@dataclass
class BenchmarkResult:
    ablation: str
    seed: int
    masked_psnr: float
    psnr: float
    ssim: float
    perceptual: float
    baseline_masked_psnr: float
    train_seconds: float


def evaluate_model(net: InpaintingNetwork, protocol: BenchmarkProtocol) -> dict:
    """Inference metrics of one model over the held-out videos."""
    provider = SyntheticFlowProvider()
    extractor = ls.FixedRandomExtractor(seed=0)
    masked, full, structural, perceptual, baseline = [], [], [], [], []
    for k in range(protocol.eval_videos):
        seq = protocol.eval_video(k)
        restored = net.inpaint_sequence(seq, provider)
        report = mt.evaluate_sequence(restored.frames, seq.frames, seq.masks)
        masked.append(report.mean_masked_psnr)
        full.append(report.mean_psnr)
        structural.append(report.mean_ssim)
        pred = [np.transpose(f, (2, 0, 1)) for f in restored.frames]
        truth = [np.transpose(f, (2, 0, 1)) for f in seq.frames]
        perceptual.append(ls.per_loss(pred, truth, extractor).data.item() / len(seq))
        fill = mt.mean_fill(seq.frames, seq.masks)
        baseline.append(
            mt.evaluate_sequence(fill, seq.frames, seq.masks).mean_masked_psnr
        )
    return {
        "masked_psnr": float(np.mean(masked)),
        "psnr": float(np.mean(full)),
        "ssim": float(np.mean(structural)),
        "perceptual": float(np.mean(perceptual)),
        "baseline_masked_psnr": float(np.mean(baseline)),
    }


def run_benchmark(ablation: str, seed: int,
                  protocol: BenchmarkProtocol | None = None,
                  base_config: ModelConfig | None = None,
                  out_dir=None) -> BenchmarkResult:
    """Train one configuration under the protocol and evaluate it."""
    import time

    protocol = protocol if protocol is not None else BenchmarkProtocol()
    settings = protocol.train_settings(ablation, seed, base_config)
    started = time.perf_counter()
    trained = train_model(settings, out_dir=out_dir)
    train_seconds = time.perf_counter() - started
    stats = evaluate_model(trained.net, protocol)
    log.info(
        "benchmark %s seed=%d masked_psnr=%.2f baseline=%.2f (%.0f s train)",
        ablation, seed, stats["masked_psnr"], stats["baseline_masked_psnr"],
        train_seconds,
    )
    return BenchmarkResult(
        ablation=ablation, seed=seed, train_seconds=train_seconds, **stats
    )


def run_ablation_study(seeds: tuple[int, ...] = (0, 1, 2),
                       protocol: BenchmarkProtocol | None = None,
                       base_config: ModelConfig | None = None) -> list[BenchmarkResult]:
    """All five configurations over the given seeds (the study grid)."""
    results = []
    for ablation in ABLATIONS:
        for seed in seeds:
            results.append(run_benchmark(ablation, seed, protocol, base_config))
    return results


def median_by_ablation(results: list[BenchmarkResult]) -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for r in results:
        out.setdefault(r.ablation, []).append(r.masked_psnr)
    return {k: float(np.median(v)) for k, v in out.items()}
