"""The recurrent inpainting network.

Frame t flows through two encoders (the target stream carries its mask as a
fourth channel), short-term aggregation at up to three scales, long-term
non-local refinement of the coarsest map, a convolutional LSTM, and a
decoder with skip connections from the aggregated feature maps.  The final
frame replaces the raw input in the recurrent state so later frames
reference restored content.

All ablation switches change only the forward path; the parameter set is
identical across configurations, so checkpoints stay interchangeable.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .bsca import BscaDiagnostics, BscaModule
from .dlca import FeatureBank, NonLocalAggregator, select_candidate
from .errors import CheckpointError, ConfigError
from .flow import (
    FlowField,
    FlowProvider,
    downsample_flow,
    extend_flow_into_holes,
    get_flow,
    zero_flow,
)
from .mask_geometry import downsample_mask
from .video_data import KNOWN, MISSING, VideoSequence

log = logging.getLogger(__name__)

SCALE_FACTORS = (2, 4, 8)


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    boundary_distance: float = 8.0
    neighbor_offsets: tuple[int, ...] = (-6, -3, 3, 6)
    bank_capacity: int = 10
    bank_lookback: int = 9
    use_bsca: bool = True
    bsca_scale_factors: tuple[int, ...] = SCALE_FACTORS
    dlca_mode: str = "dynamic"  # dynamic | fixed | off
    dlca_fixed_stride: int = 5
    composite_output: bool = True
    emulate_masked_flow: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if len(self.neighbor_offsets) != 4:
            raise ConfigError("exactly four neighbor offsets are required")
        if self.dlca_mode not in ("dynamic", "fixed", "off"):
            raise ConfigError(f"unknown dlca_mode {self.dlca_mode!r}")
        if not set(self.bsca_scale_factors) <= set(SCALE_FACTORS):
            raise ConfigError(
                f"bsca scales must be drawn from {SCALE_FACTORS}"
            )
        if self.base_channels < 2:
            raise ConfigError("base_channels must be at least 2")
        if self.bank_capacity < 1 or self.bank_lookback < 1:
            raise ConfigError("bank capacity and lookback must be positive")

    @property
    def channels(self) -> tuple[int, int, int]:
        return (self.base_channels, 2 * self.base_channels, 4 * self.base_channels)

    def for_ablation(self, name: str) -> "ModelConfig":
        """The five study configurations, by name."""
        if name in ("none", "full"):
            return self
        if name == "no_bsca":
            return replace(self, use_bsca=False)
        if name == "bsca_18":
            return replace(self, bsca_scale_factors=(8,))
        if name == "no_dlca":
            return replace(self, dlca_mode="off")
        if name == "dlca_fixed":
            return replace(self, dlca_mode="fixed")
        raise ConfigError(f"unknown ablation {name!r}")


ABLATIONS = ("no_bsca", "bsca_18", "no_dlca", "dlca_fixed", "full")


class EncoderStage(nn.Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.down = nn.Conv2d(cin, cout, kernel=3, stride=2, rng=rng)
        self.refine = nn.Conv2d(cout, cout, kernel=3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.leaky_relu(self.refine(ad.leaky_relu(self.down(x))))


class Encoder(nn.Module):
    def __init__(self, in_channels: int, channels, rng: np.random.Generator):
        cins = (in_channels,) + tuple(channels[:-1])
        self.stages = [EncoderStage(ci, co, rng) for ci, co in zip(cins, channels)]

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    """Mirrored upsampling decoder.

    Skips carry the aggregated feature maps at 1/4 and 1/2 plus, at full
    resolution, the masked input frame and its mask, so known content is a
    short copy path and capacity goes to the synthesized regions.
    """

    def __init__(self, channels, rng: np.random.Generator):
        c1, c2, c3 = channels
        self.up1 = nn.ConvTranspose2d(c3, c2, rng=rng)
        self.fuse1 = nn.Conv2d(2 * c2, c2, kernel=3, rng=rng)
        self.up2 = nn.ConvTranspose2d(c2, c1, rng=rng)
        self.fuse2 = nn.Conv2d(2 * c1, c1, kernel=3, rng=rng)
        self.up3 = nn.ConvTranspose2d(c1, c1, rng=rng)
        self.fuse3 = nn.Conv2d(c1 + 4, c1, kernel=3, rng=rng)
        self.head = nn.Conv2d(c1, 3, kernel=3, rng=rng)

    def __call__(self, latent: Tensor, skip_quarter: Tensor, skip_half: Tensor,
                 frame_and_mask: Tensor) -> Tensor:
        x = ad.leaky_relu(self.up1(latent))
        x = ad.leaky_relu(self.fuse1(ad.concat([x, skip_quarter], axis=0)))
        x = ad.leaky_relu(self.up2(x))
        x = ad.leaky_relu(self.fuse2(ad.concat([x, skip_half], axis=0)))
        x = ad.leaky_relu(self.up3(x))
        x = ad.leaky_relu(self.fuse3(ad.concat([x, frame_and_mask], axis=0)))
        return ad.sigmoid(self.head(x))


@dataclass
class RecurrentState:
    """Everything carried between frames of one sequence."""

    hidden: Tensor
    cell: Tensor
    bank: FeatureBank
    restored: list[np.ndarray] = field(default_factory=list)  # (3, H, W) each
    offered: set[int] = field(default_factory=set)

    def state_dict(self) -> dict:
        return {
            "hidden": self.hidden.data.copy(),
            "cell": self.cell.data.copy(),
            "bank": self.bank.state_dict(),
            "restored": [f.copy() for f in self.restored],
            "offered": sorted(self.offered),
        }


@dataclass
class FrameResult:
    raw: Tensor  # decoder output, (3, H, W) in [0, 1]
    output: np.ndarray  # final frame after optional compositing, (3, H, W)
    bsca_diagnostics: list[BscaDiagnostics]
    dlca_attention: np.ndarray | None
    aggregated_features: list[np.ndarray] | None = None  # psi at 1/2, 1/4, 1/8


class InpaintingNetwork(nn.Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        c1, c2, c3 = config.channels
        self.encoder_a = Encoder(4, config.channels, rng)
        self.encoder_b = Encoder(3, config.channels, rng)
        self.bsca = [
            BscaModule(c, factor, config.boundary_distance, rng)
            for c, factor in zip(config.channels, SCALE_FACTORS)
        ]
        self.long_term = NonLocalAggregator(c3, rng)
        self.lstm = nn.ConvLstmCell(c3, rng)
        self.decoder = Decoder(config.channels, rng)

    # -- plain encoder passes --------------------------------------------------

    def encode_target(self, frame_chw: np.ndarray, mask: np.ndarray) -> list[Tensor]:
        """Target-stream features at the three scales (no aggregation)."""
        x = Tensor(np.concatenate([frame_chw, mask[None].astype(np.float64)], axis=0))
        return self.encoder_a(x)

    def encode_reference(self, frame_chw: np.ndarray):
        """Reference-stream features; the coarsest map doubles as the bank
        feature."""
        feats = self.encoder_b(Tensor(frame_chw))
        return feats, feats[-1]

    # -- recurrent pipeline ----------------------------------------------------

    def initial_state(self, height: int, width: int) -> RecurrentState:
        h, c = self.lstm.initial_state(height // 8, width // 8)
        return RecurrentState(
            h, c, FeatureBank(self.config.bank_capacity, self.config.bank_lookback)
        )

    def _reference_indices(self, t: int, length: int) -> list[int]:
        return [min(max(t + off, 0), length - 1) for off in self.config.neighbor_offsets]

    def _reference_frame(self, seq_masked: list[np.ndarray], state: RecurrentState,
                         t: int, i: int, teacher_force: bool) -> np.ndarray:
        if not teacher_force and i < t and i < len(state.restored):
            return state.restored[i]
        return seq_masked[i]

    def _prepared_flows(self, seq: VideoSequence, provider: FlowProvider, t: int,
                        ref_idx: list[int], mask: np.ndarray) -> list[FlowField]:
        flows = []
        for i in ref_idx:
            f = get_flow(provider, seq, t, i)
            if self.config.emulate_masked_flow:
                f = extend_flow_into_holes(f, mask)
            flows.append(f)
        return flows

    def _fixed_bank_features(self, seq_masked: list[np.ndarray]) -> list[np.ndarray]:
        feats = []
        with ad.no_grad():
            for j in range(0, len(seq_masked), self.config.dlca_fixed_stride):
                _, u = self.encode_reference(seq_masked[j])
                feats.append(u.data)
        return feats

    def inpaint_frame(self, seq: VideoSequence, t: int, state: RecurrentState,
                      provider: FlowProvider, seq_masked: list[np.ndarray] | None = None,
                      train: bool = False,
                      teacher_force_refs: bool = False,
                      composite: bool | None = None) -> tuple[FrameResult, RecurrentState]:
        """Restore frame t and update the recurrent state.

        `seq_masked` (channel-first frames with holes zeroed) can be passed
        to avoid recomputation when iterating a sequence.  With
        `teacher_force_refs` the past reference streams read the masked raw
        frames instead of earlier outputs, which keeps the aggregation
        mechanism clear of self-generated noise early in training.
        `composite` overrides the config's compositing switch per call
        (training wants raw outputs in losses and state).
        """
        cfg = self.config
        length = len(seq)
        if not 0 <= t < length:
            raise ConfigError(f"frame {t} outside sequence of length {length}")
        if seq_masked is None:
            seq_masked = masked_inputs(seq)
        mask = seq.masks[t]
        x_t = seq_masked[t]

        ref_idx = self._reference_indices(t, length)
        # boundary-aware aggregation never reads flow without a missing
        # region; the warp variant always does
        if cfg.use_bsca and not (mask == MISSING).any():
            flows_full = [zero_flow(seq.height, seq.width, t, i) for i in ref_idx]
        else:
            flows_full = self._prepared_flows(seq, provider, t, ref_idx, mask)
        ref_frames = [
            self._reference_frame(seq_masked, state, t, i, teacher_force_refs)
            for i in ref_idx
        ]
        ref_feats = [self.encoder_b(Tensor(f)) for f in ref_frames]

        masks_l = {f: downsample_mask(mask, f) for f in SCALE_FACTORS}
        flows_l = {
            f: [downsample_flow(fl, f) for fl in flows_full] for f in SCALE_FACTORS
        }

        # target stream with interleaved short-term aggregation
        frame_and_mask = Tensor(
            np.concatenate([x_t, mask[None].astype(np.float64)], axis=0)
        )
        x = frame_and_mask
        skips: list[Tensor] = []
        bsca_diags: list[BscaDiagnostics] = []
        for s, factor in enumerate(SCALE_FACTORS):
            x = self.encoder_a.stages[s](x)
            refs_s = [feats[s] for feats in ref_feats]
            if cfg.use_bsca and factor in cfg.bsca_scale_factors:
                x, diag = self.bsca[s].step(x, refs_s, masks_l[factor], flows_l[factor])
                bsca_diags.append(diag)
            elif not cfg.use_bsca:
                x, diag = self.bsca[s].warp_step(x, refs_s, flows_l[factor])
                bsca_diags.append(diag)
            skips.append(x)

        psi_half, psi_quarter, psi_eighth = skips

        # long-term refinement
        dlca_attention = None
        refined = psi_eighth
        if cfg.dlca_mode == "dynamic":
            candidate = select_candidate(
                t, cfg.bank_lookback, len(state.restored), state.offered
            )
            if candidate is not None:
                state.offered.add(candidate)
                with ad.no_grad():
                    _, u_target = self.encode_reference(x_t)
                    _, u_candidate = self.encode_reference(state.restored[candidate])
                report = state.bank.update(u_target.data, u_candidate.data, candidate)
                log.debug(
                    "bank offer t=%d candidate=%d accepted=%s replaced=%s",
                    t, candidate, report.accepted, report.replaced_source_index,
                )
            refined, dlca_attention = self.long_term(
                psi_eighth, state.bank.features(), masks_l[8]
            )
        elif cfg.dlca_mode == "fixed":
            refined, dlca_attention = self.long_term(
                psi_eighth, self._fixed_bank_features(seq_masked), masks_l[8]
            )

        hidden, cell = self.lstm(refined, state.hidden, state.cell)
        raw = self.decoder(hidden, psi_quarter, psi_half, frame_and_mask)

        do_composite = cfg.composite_output if composite is None else composite
        if do_composite:
            keep = np.broadcast_to(mask == KNOWN, raw.data.shape)
            output = np.where(keep, x_t, raw.data)
        else:
            output = raw.data.copy()

        state.hidden = hidden.detach() if train else hidden
        state.cell = cell.detach() if train else cell
        state.restored.append(output)
        result = FrameResult(
            raw, output, bsca_diags, dlca_attention,
            aggregated_features=[s.data for s in skips],
        )
        return result, state

    def inpaint_sequence(self, seq: VideoSequence, provider: FlowProvider) -> VideoSequence:
        """Restore a whole sequence in temporal order (inference mode)."""
        seq_masked = masked_inputs(seq)
        state = self.initial_state(seq.height, seq.width)
        outputs = []
        with ad.no_grad():
            for t in range(len(seq)):
                result, state = self.inpaint_frame(
                    seq, t, state, provider, seq_masked=seq_masked
                )
                outputs.append(np.transpose(result.output, (1, 2, 0)))
        return VideoSequence(outputs, [m.copy() for m in seq.masks])


def masked_inputs(seq: VideoSequence) -> list[np.ndarray]:
    """Channel-first frames with missing pixels zeroed (the network input)."""
    return [
        np.ascontiguousarray(np.transpose(f, (2, 0, 1)) * (m == KNOWN))
        for f, m in zip(seq.frames, seq.masks)
    ]


def save_model(path, net: InpaintingNetwork, optimizer: nn.Adam | None = None):
    nn.save_checkpoint(
        path, net, meta={"model_config": asdict(net.config)}, optimizer=optimizer
    )


def load_model(path) -> tuple[InpaintingNetwork, dict | None]:
    """Rebuild a network from a checkpoint; returns (net, optimizer state)."""
    params, header, opt_state, _ = nn.load_checkpoint(path)
    meta = header.get("meta", {})
    if "model_config" not in meta:
        raise CheckpointError(f"{path} carries no model config")
    cfg_dict = dict(meta["model_config"])
    for key in ("neighbor_offsets", "bsca_scale_factors"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = ModelConfig(**cfg_dict)
    net = InpaintingNetwork(config)
    net.load_state_dict(params)
    return net, opt_state
