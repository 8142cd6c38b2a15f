"""Training loop: frame-sequential optimization on a seeded stream of
synthetic videos.

One optimizer step per frame; the recurrent state (LSTM tensors, feature
bank, restored frames) carries through each video with gradients truncated
at frame boundaries, and resets between videos.  Fresh scenes and masks are
drawn per video from seeds derived from the run seed, so runs are
reproducible bit for bit on one machine.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as ls
from . import nn
from .flow import SyntheticFlowProvider
from .network import InpaintingNetwork, ModelConfig, masked_inputs, save_model
from .video_data import VideoSequence, generate_square_masks, generate_synthetic_sequence

log = logging.getLogger(__name__)


@dataclass
class TrainSettings:
    steps: int = 2000
    learning_rate: float = 1e-4
    seed: int = 0
    height: int = 64
    width: int = 64
    sequence_length: int = 20
    num_shapes: int = 3
    mask_side_range: tuple[int, int] = (16, 28)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: ls.LossWeights = field(default_factory=ls.LossWeights)
    extractor_seed: int = 0
    teacher_force_refs: bool = True
    grad_clip_norm: float | None = 1.0
    lr_decay: bool = True  # cosine decay to 10% of the base rate
    log_every: int = 100
    checkpoint_every: int = 0  # 0: only the final checkpoint


@dataclass
class TrainResult:
    net: InpaintingNetwork
    loss_records: list[dict]
    checkpoint_path: Path | None
    final_loss: float

    def loss_ema(self, alpha: float = 0.05) -> list[float]:
        out = []
        ema = None
        for rec in self.loss_records:
            ema = rec["total"] if ema is None else (1 - alpha) * ema + alpha * rec["total"]
            out.append(ema)
        return out


def derived_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0] >> 1)


def robust_synthetic_sequence(length, height, width, num_shapes, seed,
                              attempts: int = 64) -> VideoSequence:
    """Like generate_synthetic_sequence, but deterministic seeds that cannot
    host disjoint trajectories are skipped instead of raising."""
    from .errors import ConfigError

    for k in range(attempts):
        try:
            return generate_synthetic_sequence(
                length, height, width, num_shapes, derived_seed(seed, k)
            )
        except ConfigError:
            continue
    raise ConfigError(
        f"no placeable scene after {attempts} attempts ({num_shapes} shapes "
        f"in {height}x{width})"
    )


def make_training_video(settings: TrainSettings, index: int) -> VideoSequence:
    """Video `index` of the training stream: fresh scene, fresh square mask."""
    scene = robust_synthetic_sequence(
        settings.sequence_length, settings.height, settings.width,
        settings.num_shapes, derived_seed(settings.seed, index, 0),
    )
    masks = generate_square_masks(
        settings.sequence_length, settings.height, settings.width,
        derived_seed(settings.seed, index, 1), settings.mask_side_range,
    )
    return VideoSequence(scene.frames, masks, motion=scene.motion)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def train_model(settings: TrainSettings, out_dir=None, videos=None,
                provider=None) -> TrainResult:
    """Optimize a fresh model for `settings.steps` frame updates.

    By default videos come from the seeded synthetic stream with exact
    flows; pass `videos` (cycled) and a matching `provider` to train on
    fixed data instead.
    """
    model_config = replace(
        settings.model, init_seed=derived_seed(settings.seed, 0xA11)
    )
    net = InpaintingNetwork(model_config)
    extractor = ls.FixedRandomExtractor(seed=settings.extractor_seed)
    optimizer = nn.Adam(net.named_parameters(), lr=settings.learning_rate)
    if provider is None:
        provider = SyntheticFlowProvider()

    out_path = Path(out_dir) if out_dir is not None else None
    loss_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        loss_file = open(out_path / "losses.jsonl", "w")

    records: list[dict] = []
    step = 0
    video_index = 0
    started = time.perf_counter()
    try:
        while step < settings.steps:
            if videos is not None:
                seq = videos[video_index % len(videos)]
            else:
                seq = make_training_video(settings, video_index)
            video_index += 1
            inputs = masked_inputs(seq)
            state = net.initial_state(seq.height, seq.width)
            for t in range(len(seq)):
                if step >= settings.steps:
                    break
                # losses and the recurrent state see raw outputs in training
                result, state = net.inpaint_frame(
                    seq, t, state, provider, seq_masked=inputs, train=True,
                    teacher_force_refs=settings.teacher_force_refs,
                    composite=False,
                )
                truth = np.transpose(seq.frames[t], (2, 0, 1))
                loss, report = ls.total_loss(
                    [result.raw], [truth], [seq.masks[t]], settings.weights, extractor
                )
                optimizer.zero_grad()
                loss.backward()
                if settings.grad_clip_norm is not None:
                    clip_gradients(net.parameters(), settings.grad_clip_norm)
                if settings.lr_decay:
                    frac = step / max(settings.steps - 1, 1)
                    optimizer.lr = settings.learning_rate * (
                        0.1 + 0.9 * 0.5 * (1.0 + np.cos(np.pi * frac))
                    )
                optimizer.step()
                step += 1
                record = {"step": step, **report.as_dict()}
                records.append(record)
                if loss_file is not None:
                    loss_file.write(json.dumps(record) + "\n")
                if settings.log_every and step % settings.log_every == 0:
                    log.info(
                        "step %d/%d total=%.5f rec=%.5f mre=%.5f (%.1f s)",
                        step, settings.steps, report.total, report.rec,
                        report.mre, time.perf_counter() - started,
                    )
                if (out_path is not None and settings.checkpoint_every
                        and step % settings.checkpoint_every == 0):
                    save_model(out_path / f"checkpoint_{step:06d}.npz", net, optimizer)
    finally:
        if loss_file is not None:
            loss_file.close()

    checkpoint_path = None
    if out_path is not None:
        checkpoint_path = out_path / "checkpoint_final.npz"
        save_model(checkpoint_path, net, optimizer)
    return TrainResult(net, records, checkpoint_path, records[-1]["total"])
