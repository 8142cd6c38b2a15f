"""PSNR and SSIM over frames and sequences, plus missing-region variants.

SSIM follows the canonical windowed form: 11x11 Gaussian window with sigma
1.5, stabilizers K1=0.01 and K2=0.03 at unit dynamic range, averaged over
valid window positions and channels.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .video_data import MISSING

PSNR_CAP = 99.0
_WIN = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def _gauss_window() -> np.ndarray:
    ax = np.arange(_WIN) - (_WIN - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * _SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


_KERNEL = _gauss_window()


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 99 dB for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def masked_psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray,
                peak: float = 1.0) -> float | None:
    """PSNR restricted to missing pixels; None when the mask has no hole."""
    missing = np.asarray(mask) == MISSING
    if not missing.any():
        return None
    a = np.asarray(a, dtype=np.float64)[missing]
    b = np.asarray(b, dtype=np.float64)[missing]
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    win = np.lib.stride_tricks.sliding_window_view(x, (_WIN, _WIN))
    wy = np.lib.stride_tricks.sliding_window_view(y, (_WIN, _WIN))
    mu_x = (win * _KERNEL).sum(axis=(-2, -1))
    mu_y = (wy * _KERNEL).sum(axis=(-2, -1))
    xx = (win * win * _KERNEL).sum(axis=(-2, -1)) - mu_x**2
    yy = (wy * wy * _KERNEL).sum(axis=(-2, -1)) - mu_y**2
    xy = (win * wy * _KERNEL).sum(axis=(-2, -1)) - mu_x * mu_y
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Windowed structural similarity averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < _WIN or a.shape[1] < _WIN:
        raise ConfigError(f"frames must be at least {_WIN}x{_WIN} for ssim")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c])
                          for c in range(a.shape[2])]))


@dataclass
class MetricReport:
    psnr_per_frame: list[float] = field(default_factory=list)
    ssim_per_frame: list[float] = field(default_factory=list)
    masked_psnr_per_frame: list[float | None] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_per_frame))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_per_frame))

    @property
    def mean_masked_psnr(self) -> float | None:
        vals = [v for v in self.masked_psnr_per_frame if v is not None]
        return float(np.mean(vals)) if vals else None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame_index", "psnr", "ssim", "masked_psnr"])
            rows = zip(self.psnr_per_frame, self.ssim_per_frame,
                       self.masked_psnr_per_frame)
            for i, (p, s, m) in enumerate(rows):
                writer.writerow([i, f"{p:.6f}", f"{s:.6f}",
                                 "" if m is None else f"{m:.6f}"])

    def to_json(self, path):
        payload = {
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "mean_masked_psnr": self.mean_masked_psnr,
            "frames": len(self.psnr_per_frame),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def evaluate_sequence(restored_frames, truth_frames, masks) -> MetricReport:
    """Per-frame PSNR/SSIM plus missing-region PSNR."""
    report = MetricReport()
    for r, y, m in zip(restored_frames, truth_frames, masks, strict=True):
        report.psnr_per_frame.append(psnr(r, y))
        report.ssim_per_frame.append(ssim(r, y))
        report.masked_psnr_per_frame.append(masked_psnr(r, y, m))
    return report


def mean_fill(frames, masks) -> list[np.ndarray]:
    """Per-frame baseline: holes take the mean color of the known pixels."""
    out = []
    for f, m in zip(frames, masks, strict=True):
        f = np.asarray(f, dtype=np.float64)
        known = np.asarray(m) == 1
        filled = f.copy()
        if known.any() and not known.all():
            fill = f[known].mean(axis=0)
            filled[~known] = fill
        elif not known.any():
            filled[:] = 0.5
        out.append(filled)
    return out
