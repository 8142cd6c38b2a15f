"""Training objective: reconstruction, missing-region, perceptual and style
terms with their default balance (1, 2, 0.01, 1).

Sums over frames use per-frame means (per element, per missing pixel, per
tap) so the balance weights keep their meaning at any resolution.  The
perceptual extractor is pluggable: a frozen random convolutional net keeps
the default hermetic, or a classifier-weights file can back the same taps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, as_tensor
from .errors import ConfigError
from .video_data import MISSING


@dataclass(frozen=True)
class LossWeights:
    mre: float = 2.0
    per: float = 0.01
    style: float = 1.0

    def __post_init__(self):
        if min(self.mre, self.per, self.style) < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    rec: float
    mre: float
    per: float
    style: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {"rec": self.rec, "mre": self.mre, "per": self.per,
                "style": self.style, "total": self.total}


class FixedRandomExtractor(nn.Module):
    """Three frozen random conv blocks with a tap after each.

    Gradients flow through to the input but the filters never train, which
    keeps the perceptual distance a fixed function.
    """

    def __init__(self, in_channels: int = 3, seed: int = 0):
        rng = np.random.default_rng(seed)
        widths = [8, 16, 32]
        self.blocks = []
        cin = in_channels
        for cout in widths:
            conv = nn.Conv2d(cin, cout, kernel=3, stride=2, rng=rng)
            conv.weight.requires_grad = False
            conv.bias.requires_grad = False
            self.blocks.append(conv)
            cin = cout

    def taps(self, x: Tensor) -> list[Tensor]:
        out = []
        h = as_tensor(x)
        for conv in self.blocks:
            h = ad.relu(conv(h))
            out.append(h)
        return out


_VGG_LAYERS = [
    # (name, out_channels, tap_after)
    ("conv1_1", 64, False), ("conv1_2", 64, False),
    ("conv2_1", 128, False), ("conv2_2", 128, True),
    ("conv3_1", 256, False), ("conv3_2", 256, False), ("conv3_3", 256, True),
    ("conv4_1", 512, False), ("conv4_2", 512, False), ("conv4_3", 512, True),
]
_VGG_POOL_BEFORE = {"conv2_1", "conv3_1", "conv4_1"}
_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
_IMAGENET_STD = np.array([0.229, 0.224, 0.225])


class ClassifierExtractor:
    """VGG16-style conv stack loaded from an .npz of pretrained filters.

    The file must hold ``<layer>/weight`` (Co,Ci,3,3) and ``<layer>/bias``
    arrays for conv1_1 .. conv4_3.  Taps are taken after the relu of
    conv2_2, conv3_3 and conv4_3.  A missing file is a configuration error,
    never a silent fallback.
    """

    def __init__(self, weights_path):
        path = Path(weights_path) if weights_path else None
        if path is None or not path.exists():
            raise ConfigError(
                f"classifier extractor weights not found at {weights_path!r}; "
                "provide an .npz or use the fixed-random extractor"
            )
        with np.load(path) as z:
            self.params = {}
            for name, cout, _ in _VGG_LAYERS:
                try:
                    w = z[f"{name}/weight"]
                    b = z[f"{name}/bias"]
                except KeyError as exc:
                    raise ConfigError(f"weights file missing {exc}") from exc
                if w.shape[0] != cout:
                    raise ConfigError(f"{name} has {w.shape[0]} filters, expected {cout}")
                self.params[name] = (Tensor(w), Tensor(b))

    def taps(self, x: Tensor) -> list[Tensor]:
        mean = _IMAGENET_MEAN[:, None, None]
        std = _IMAGENET_STD[:, None, None]
        h = (as_tensor(x) - mean) * (1.0 / std)
        out = []
        for name, _, tap in _VGG_LAYERS:
            if name in _VGG_POOL_BEFORE:
                h = _avg_pool2(h)
            w, b = self.params[name]
            h = ad.relu(ad.conv2d(h, w, b, stride=1, dilation=1, padding=1))
            if tap:
                out.append(h)
        return out


def _avg_pool2(x: Tensor) -> Tensor:
    c, h, w = x.shape
    r = ad.reshape(x, (c, h // 2, 2, w // 2, 2))
    return mul_scale(ad.tsum(ad.tsum(r, axis=4), axis=2), 0.25)


def mul_scale(x: Tensor, s: float) -> Tensor:
    return ad.mul(x, s)


def build_extractor(kind: str = "fixed-random", weights_path=None, seed: int = 0,
                    in_channels: int = 3):
    if kind == "fixed-random":
        return FixedRandomExtractor(in_channels=in_channels, seed=seed)
    if kind == "pretrained-classifier":
        return ClassifierExtractor(weights_path)
    raise ConfigError(f"unknown extractor kind {kind!r}")


def _check_pair(pred, truth):
    pred = as_tensor(pred)
    truth_arr = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth_arr.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {truth_arr.shape}")
    return pred, truth_arr


def rec_loss(pred_frames, truth_frames) -> Tensor:
    """Sum over frames of the per-element mean absolute error."""
    total = None
    for p, y in zip(pred_frames, truth_frames, strict=True):
        p, y = _check_pair(p, y)
        term = ad.tmean(ad.tabs(p - y))
        total = term if total is None else total + term
    return total


def mre_loss(pred_frames, truth_frames, masks) -> Tensor:
    """Sum over frames of the mean absolute error over missing pixels only."""
    total = Tensor(0.0)
    for p, y, m in zip(pred_frames, truth_frames, masks, strict=True):
        p, y = _check_pair(p, y)
        m = np.asarray(m)
        missing = (m == MISSING).astype(np.float64)
        count = missing.sum()
        if count == 0:
            continue
        channels = p.shape[0]
        hole_err = ad.tsum(ad.tabs(p - y) * missing[None, :, :])
        total = total + ad.mul(hole_err, 1.0 / (channels * count))
    return total


def per_loss(pred_frames, truth_frames, extractor) -> Tensor:
    """Per-tap mean L1 feature distance, averaged over taps, summed over
    frames."""
    total = None
    for p, y in zip(pred_frames, truth_frames, strict=True):
        p, y = _check_pair(p, y)
        taps_p = extractor.taps(p)
        with ad.no_grad():
            taps_y = extractor.taps(Tensor(y))
        n = len(taps_p)
        term = None
        for tp, ty in zip(taps_p, taps_y):
            d = ad.tmean(ad.tabs(tp - ty.data))
            term = d if term is None else term + d
        term = ad.mul(term, 1.0 / n)
        total = term if total is None else total + term
    return total


def _gram(feat: Tensor) -> Tensor:
    c, h, w = feat.shape
    flat = ad.reshape(feat, (c, h * w))
    return ad.mul(flat @ ad.transpose2d(flat), 1.0 / (c * h * w))


def style_loss(pred_frames, truth_frames, extractor) -> Tensor:
    """L1 between channel Gram matrices of the tap features, averaged over
    taps, summed over frames."""
    total = None
    for p, y in zip(pred_frames, truth_frames, strict=True):
        p, y = _check_pair(p, y)
        taps_p = extractor.taps(p)
        with ad.no_grad():
            taps_y = extractor.taps(Tensor(y))
        n = len(taps_p)
        term = None
        for tp, ty in zip(taps_p, taps_y):
            gy = _gram(ty).data
            d = ad.tmean(ad.tabs(_gram(tp) - gy))
            term = d if term is None else term + d
        term = ad.mul(term, 1.0 / n)
        total = term if total is None else total + term
    return total


def total_loss(pred_frames, truth_frames, masks, weights: LossWeights,
               extractor) -> tuple[Tensor, LossReport]:
    """Weighted objective; returns the scalar graph node and a plain report."""
    rec = rec_loss(pred_frames, truth_frames)
    mre = mre_loss(pred_frames, truth_frames, masks)
    per = per_loss(pred_frames, truth_frames, extractor)
    style = style_loss(pred_frames, truth_frames, extractor)
    total = (rec + ad.mul(mre, weights.mre) + ad.mul(per, weights.per)
             + ad.mul(style, weights.style))
    report = LossReport(
        rec=rec.data.item(), mre=mre.data.item(), per=per.data.item(),
        style=style.data.item(), total=total.data.item(),
    )
    return total, report
