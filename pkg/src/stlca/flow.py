"""Optical-flow fields, providers, per-scale downsampling and warping.

Flow vectors are stored (dy, dx) in pixel units of their own grid, pointing
from the target frame toward the reference frame.  Providers hand out
full-resolution fields; `downsample_flow` average-pools and rescales them for
an encoding scale.  On disk the Middlebury ``.flo`` layout is used (magic
202021.25, little-endian int32 width/height, interleaved float32 (dx, dy));
the loader swaps to the internal (dy, dx) order.
"""

from __future__ import annotations

import shutil
import struct
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ConfigError, FlowProviderError
from .mask_geometry import BoundaryContext
from .video_data import VideoSequence, save_frame

FLO_MAGIC = 202021.25


@dataclass
class FlowField:
    vectors: np.ndarray  # (H, W, 2) float64, (dy, dx)
    src: int
    dst: int
    scale_factor: int = 1

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise ConfigError(f"flow must be (H, W, 2), got {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise ConfigError("flow contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]


def zero_flow(h: int, w: int, src: int = 0, dst: int = 0,
              scale_factor: int = 1) -> FlowField:
    return FlowField(np.zeros((h, w, 2)), src, dst, scale_factor)


class FlowProvider:
    """Produces a full-resolution flow field for any frame pair of a
    sequence."""

    def flow(self, seq: VideoSequence, t: int, i: int) -> FlowField:
        raise NotImplementedError


class NullFlowProvider(FlowProvider):
    """Placeholder for runs whose masks have no holes; never legally queried."""

    def flow(self, seq, t, i):
        raise FlowProviderError(
            "flow requested but no flow source is configured; provide a flow "
            "directory, STLCA_FLOW_CMD, or synthetic data"
        )


class SyntheticFlowProvider(FlowProvider):
    """Exact fields reconstructed from a synthetic sequence's motion model."""

    def flow(self, seq, t, i):
        if seq.motion is None:
            raise FlowProviderError("sequence carries no synthetic motion model")
        return FlowField(seq.motion.flow(t, i), t, i)


class FileFlowProvider(FlowProvider):
    """Reads ``flow_{t}_{i}.flo`` files from a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def flow(self, seq, t, i):
        path = self.directory / f"flow_{t}_{i}.flo"
        if not path.exists():
            raise FlowProviderError(f"missing flow file {path}")
        return FlowField(read_flo(path), t, i)


class ExternalCommandFlowProvider(FlowProvider):
    """Runs a configured estimator: ``cmd <frame_t.png> <frame_i.png> <out.flo>``.

    Invocations are serialized per provider instance.
    """

    def __init__(self, command: str):
        if not command:
            raise ConfigError("external flow command is empty")
        self.command = command
        self._lock = threading.Lock()

    def flow(self, seq, t, i):
        with self._lock, tempfile.TemporaryDirectory(prefix="stlca_flow_") as tmp:
            tmp = Path(tmp)
            a, b, out = tmp / "a.png", tmp / "b.png", tmp / "out.flo"
            save_frame(a, seq.frames[t])
            save_frame(b, seq.frames[i])
            cmd = self.command.split() + [str(a), str(b), str(out)]
            try:
                proc = subprocess.run(cmd, capture_output=True, text=True, timeout=300)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise FlowProviderError(f"flow command failed to run: {exc}") from exc
            if proc.returncode != 0:
                raise FlowProviderError(
                    f"flow command exited {proc.returncode}: {proc.stderr.strip()}"
                )
            if not out.exists():
                raise FlowProviderError("flow command produced no output file")
            return FlowField(read_flo(out), t, i)


def get_flow(provider: FlowProvider, seq: VideoSequence, t: int, i: int) -> FlowField:
    """Full-resolution flow from frame t toward frame i (zero when t == i)."""
    n = len(seq)
    if not (0 <= t < n and 0 <= i < n):
        raise ConfigError(f"frame pair ({t}, {i}) outside sequence of length {n}")
    if t == i:
        return zero_flow(seq.height, seq.width, t, i)
    return provider.flow(seq, t, i)


def downsample_flow(flow: FlowField, factor: int) -> FlowField:
    """Average-pool to scale 1/factor and rescale vectors into the coarse
    grid's pixel units."""
    if factor == 1:
        return flow
    h, w = flow.shape
    if h % factor or w % factor:
        raise ConfigError(f"flow {h}x{w} not divisible by factor {factor}")
    pooled = flow.vectors.reshape(
        h // factor, factor, w // factor, factor, 2
    ).mean(axis=(1, 3))
    return FlowField(pooled / factor, flow.src, flow.dst,
                     flow.scale_factor * factor)


def map_region(ctx: BoundaryContext, flow: FlowField) -> np.ndarray:
    """Image of the ring under the flow: round(p + flow(p)) clamped into
    bounds; returned as unique sorted (row, col) pairs."""
    h, w = flow.shape
    if len(ctx) == 0:
        return np.zeros((0, 2), dtype=np.int32)
    vecs = flow.vectors[ctx.ring[:, 0], ctx.ring[:, 1]]
    mapped = np.rint(ctx.ring + vecs).astype(np.int64)
    mapped[:, 0] = np.clip(mapped[:, 0], 0, h - 1)
    mapped[:, 1] = np.clip(mapped[:, 1], 0, w - 1)
    return np.unique(mapped.astype(np.int32), axis=0)


def map_region_raw(ctx: BoundaryContext, flow: FlowField) -> np.ndarray:
    """Unclamped rounded ring image; used to detect fully out-of-frame maps."""
    if len(ctx) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    vecs = flow.vectors[ctx.ring[:, 0], ctx.ring[:, 1]]
    return np.rint(ctx.ring + vecs).astype(np.int64)


def warp(flow: FlowField, array: np.ndarray) -> np.ndarray:
    """Backward-warp an (H, W) or (H, W, C) array: out(p) = in(p + flow(p)),
    bilinear, clamped at edges."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.shape[:2] != flow.shape:
        raise ConfigError(f"array {arr.shape} does not match flow {flow.shape}")
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    chw = np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))
    out = kernels.warp_bilinear_fwd(chw, flow.vectors)
    out = np.transpose(out, (1, 2, 0))
    return out[:, :, 0] if squeeze else out


def extend_flow_into_holes(flow: FlowField, mask: np.ndarray) -> FlowField:
    """Replace flow vectors at missing pixels with the nearest known pixel's
    vector.

    Flow estimated between masked frames carries no information inside the
    holes; real estimators smear the surrounding motion inward.  This is the
    deterministic stand-in for that behavior: vectors at known pixels are kept
    bit-exactly.
    """
    mask = np.asarray(mask)
    missing = mask == 0
    if not missing.any() or missing.all():
        return flow
    nearest = ndimage.distance_transform_edt(
        missing, return_distances=False, return_indices=True
    )
    vectors = flow.vectors.copy()
    vectors[missing] = flow.vectors[nearest[0][missing], nearest[1][missing]]
    return FlowField(vectors, flow.src, flow.dst, flow.scale_factor)


def read_flo(path) -> np.ndarray:
    """Read a Middlebury .flo file into an (H, W, 2) float64 (dy, dx) array."""
    with open(path, "rb") as fh:
        magic = struct.unpack("<f", fh.read(4))[0]
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise FlowProviderError(f"{path} is not a .flo file (magic {magic})")
        w, h = struct.unpack("<ii", fh.read(8))
        data = np.frombuffer(fh.read(h * w * 2 * 4), dtype="<f4")
        if data.size != h * w * 2:
            raise FlowProviderError(f"{path} is truncated")
    dxdy = data.reshape(h, w, 2).astype(np.float64)
    return dxdy[:, :, ::-1].copy()  # (dx, dy) on disk -> (dy, dx) internally


def write_flo(path, vectors: np.ndarray):
    """Write (H, W, 2) float64 (dy, dx) vectors as a .flo file."""
    h, w, _ = vectors.shape
    dxdy = np.ascontiguousarray(vectors[:, :, ::-1], dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(dxdy.tobytes())


def resolve_provider(seq: VideoSequence, flow_dir=None,
                     command: str | None = None) -> FlowProvider:
    """Pick a provider: explicit .flo directory, then external command, then
    the sequence's own synthetic motion."""
    if flow_dir is not None:
        return FileFlowProvider(flow_dir)
    if command:
        if shutil.which(command.split()[0]) is None:
            raise ConfigError(f"flow command {command.split()[0]!r} not found")
        return ExternalCommandFlowProvider(command)
    if seq.motion is not None:
        return SyntheticFlowProvider()
    raise ConfigError(
        "no flow source: provide a flow directory, STLCA_FLOW_CMD, or synthetic data"
    )
