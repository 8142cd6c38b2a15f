"""Boundary-aware short-term context aggregation at one encoding scale.

For every connected missing component the module locates the ring of known
pixels around it, maps that ring through each neighbor's flow to find the
matching bounding region in the neighbor's feature map, crops and resizes
those regions onto the target's box, refines them with a dilated-convolution
block, and blends all five candidate patches (four neighbors plus the
target's own box) with per-pixel softmax attention.  The blended box is
written back into the target feature map, which then passes through an
output refinement block.

The module also provides the warp-based variant used by the ablation that
removes boundary-aware alignment: whole reference maps are backward-warped
onto the target and the same attention blends full maps instead of boxes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError
from .flow import FlowField, map_region, map_region_raw
from .mask_geometry import (
    BoundaryContext,
    BoundingRegion,
    bounding_box,
    box_from_coords,
    component_ring,
    missing_components,
    scaled_distance,
)

log = logging.getLogger(__name__)

NUM_STREAMS = 5  # four neighbors plus the target's own box


@dataclass
class ComponentReport:
    box: BoundingRegion
    ref_fallbacks: list[bool]
    skipped: bool = False


@dataclass
class BscaDiagnostics:
    components: list[ComponentReport] = field(default_factory=list)
    pre_refine: np.ndarray | None = None  # target map after box writes, before output refinement
    degenerate_mask: bool = False


class BscaModule(nn.Module):
    """Learned parameters and forward logic for one encoding scale."""

    def __init__(self, channels: int, scale_factor: int, boundary_distance: float,
                 rng: np.random.Generator):
        self.channels = channels
        self.scale_factor = scale_factor
        self.distance = scaled_distance(boundary_distance, scale_factor)
        self.align_refine = nn.Aspp(channels, rng)
        self.score_conv = nn.Conv2d(NUM_STREAMS * channels, NUM_STREAMS,
                                    kernel=3, rng=rng)
        # start with near-uniform weights over the references and a low score
        # for the target's own box, whose missing region carries no content
        self.score_conv.weight.data *= 0.1
        self.score_conv.bias.data[:] = 0.0
        self.score_conv.bias.data[NUM_STREAMS - 1] = -2.0
        self.out_refine = nn.Aspp(channels, rng)

    # -- alignment -----------------------------------------------------------

    def align_reference(self, target_feat: Tensor, ref_feat: Tensor,
                        ctx: BoundaryContext, flow_l: FlowField):
        """Crop the flow-mapped bounding region from a reference feature map,
        resize it onto the target's box, and refine it.

        Returns (patch, fallback).  When every mapped ring pixel lands outside
        the frame the reference box falls back to the target's own coordinates
        and the fallback flag is set.
        """
        h, w = target_feat.shape[1:]
        if ref_feat.shape != target_feat.shape:
            raise ConfigError("target and reference feature shapes differ")
        box_t = bounding_box(ctx, (h, w))
        raw = map_region_raw(ctx, flow_l)
        in_frame = (
            (raw[:, 0] >= 0) & (raw[:, 0] < h) & (raw[:, 1] >= 0) & (raw[:, 1] < w)
        )
        fallback = not bool(in_frame.any())
        if fallback:
            box_r = box_t
            log.debug("mapped region fully out of frame; using target box")
        else:
            box_r = box_from_coords(map_region(ctx, flow_l), (h, w))
        patch = ad.crop2d(ref_feat, box_r.top, box_r.left, box_r.height, box_r.width)
        if (box_r.height, box_r.width) != (box_t.height, box_t.width):
            patch = ad.resize_bilinear(patch, box_t.height, box_t.width)
        return self.align_refine(patch), fallback

    # -- aggregation ----------------------------------------------------------

    def attention_maps(self, patches: list[Tensor]) -> Tensor:
        """Per-pixel softmax weights over the candidate patches; shape
        (5, h, w), each location summing to one."""
        if len(patches) != NUM_STREAMS:
            raise ConfigError(f"expected {NUM_STREAMS} patches, got {len(patches)}")
        shape = patches[0].shape
        for p in patches[1:]:
            if p.shape != shape:
                raise ConfigError("aggregation patches must share one shape")
        logits = self.score_conv(ad.concat(patches, axis=0))
        return ad.softmax(logits, axis=0)

    def attention_aggregate(self, patches: list[Tensor]) -> Tensor:
        weights = self.attention_maps(patches)
        out = ad.narrow(weights, 0, 0, 1) * patches[0]
        for j in range(1, NUM_STREAMS):
            out = out + ad.narrow(weights, 0, j, 1) * patches[j]
        return out

    # -- full step ------------------------------------------------------------

    def step(self, target_feat: Tensor, ref_feats: list[Tensor], mask_l: np.ndarray,
             flows_l: list[FlowField]):
        """Aggregate every missing component and refine the whole map.

        With no missing pixels the target passes through the output
        refinement untouched; a mask with no known boundary skips
        aggregation and flags the diagnostics.
        """
        if len(ref_feats) != NUM_STREAMS - 1 or len(flows_l) != NUM_STREAMS - 1:
            raise ConfigError("expected four reference feature maps and flows")
        diag = BscaDiagnostics()
        out = target_feat
        for comp in missing_components(mask_l):
            ctx = component_ring(mask_l, comp, self.distance, self.scale_factor)
            if len(ctx) == 0:
                diag.degenerate_mask = diag.degenerate_mask or ctx.degenerate
                diag.components.append(
                    ComponentReport(BoundingRegion(0, 0, 0, 0), [], skipped=True)
                )
                log.debug("component with no known boundary skipped")
                continue
            box_t = bounding_box(ctx, mask_l.shape)
            patches = []
            fallbacks = []
            for ref, flw in zip(ref_feats, flows_l):
                patch, fb = self.align_reference(target_feat, ref, ctx, flw)
                patches.append(patch)
                fallbacks.append(fb)
            patches.append(
                ad.crop2d(target_feat, box_t.top, box_t.left, box_t.height, box_t.width)
            )
            aggregated = self.attention_aggregate(patches)
            out = ad.paste2d(out, aggregated, box_t.top, box_t.left)
            diag.components.append(ComponentReport(box_t, fallbacks))
        diag.pre_refine = out.data.copy()
        return self.out_refine(out), diag

    def warp_step(self, target_feat: Tensor, ref_feats: list[Tensor],
                  flows_l: list[FlowField]):
        """Ablation path: flow-warp whole reference maps onto the target and
        blend full maps with the same attention."""
        patches = [
            ad.warp_bilinear(ref, flw.vectors)
            for ref, flw in zip(ref_feats, flows_l)
        ]
        patches.append(target_feat)
        aggregated = self.attention_aggregate(patches)
        diag = BscaDiagnostics(pre_refine=aggregated.data.copy())
        return self.out_refine(aggregated), diag
