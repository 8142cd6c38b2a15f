"""Frames, masks, sequences, dataset IO, and the synthetic benchmark generator.

Conventions used everywhere downstream:

* frames are (H, W, 3) float64 arrays with values in [0, 1];
* masks are (H, W) uint8 arrays, 1 = known pixel, 0 = missing pixel;
* H and W are divisible by 8 (the three encoding scales need it);
* the synthetic generator knows its own motion, so ground-truth flow between
  any two frames of a generated sequence is available exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import ConfigError, DataError

MISSING = 0
KNOWN = 1


def validate_frame(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ConfigError(f"frame must be (H, W, 3), got {pixels.shape}")
    h, w, _ = pixels.shape
    if h % 8 or w % 8:
        raise ConfigError(f"frame dimensions must be divisible by 8, got {h}x{w}")
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ConfigError("frame values must lie in [0, 1]")
    return pixels


def validate_mask(values: np.ndarray, h: int, w: int) -> np.ndarray:
    values = np.asarray(values)
    if values.shape != (h, w):
        raise ConfigError(f"mask shape {values.shape} does not match frame {h}x{w}")
    if not np.isin(values, (0, 1)).all():
        raise ConfigError("mask values must be exactly 0 or 1")
    return values.astype(np.uint8)


@dataclass
class ShapeTrack:
    """One moving shape: axis-aligned rect or ellipse with constant velocity.

    The fill is a base color plus a linear gradient in shape-local
    coordinates, so the texture translates rigidly with the shape and the
    stored flow stays exact.
    """

    kind: str  # "rect" | "ellipse"
    color: np.ndarray  # (3,)
    size: tuple[int, int]  # (height, width)
    start: tuple[int, int]  # (row, col) of top-left at t=0
    velocity: tuple[int, int]  # (vy, vx), integer pixels per frame
    shading: tuple[float, float] = (0.0, 0.0)  # gradient along local (y, x)

    def top_left(self, t: int) -> tuple[int, int]:
        return (self.start[0] + self.velocity[0] * t,
                self.start[1] + self.velocity[1] * t)

    def pixel_mask(self, t: int, h: int, w: int) -> np.ndarray:
        top, left = self.top_left(t)
        sh, sw = self.size
        out = np.zeros((h, w), dtype=bool)
        if self.kind == "rect":
            out[top : top + sh, left : left + sw] = True
        else:
            yy, xx = np.mgrid[0:h, 0:w]
            cy = top + (sh - 1) / 2.0
            cx = left + (sw - 1) / 2.0
            ry = sh / 2.0
            rx = sw / 2.0
            out = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        return out

    def paint(self, frame: np.ndarray, t: int):
        h, w, _ = frame.shape
        inside = self.pixel_mask(t, h, w)
        top, left = self.top_left(t)
        sh, sw = self.size
        coords = np.argwhere(inside)
        u = (coords[:, 0] - top) / max(sh - 1, 1) - 0.5
        v = (coords[:, 1] - left) / max(sw - 1, 1) - 0.5
        offset = u * self.shading[0] + v * self.shading[1]
        frame[coords[:, 0], coords[:, 1]] = np.clip(
            self.color[None, :] + offset[:, None], 0.0, 1.0
        )


@dataclass
class SyntheticMotion:
    """Everything needed to reconstruct frames and exact flow of a synthetic
    sequence: a (possibly panning) background plus non-overlapping
    constant-velocity shapes.

    The background is a canvas at least as large as the frame; each frame
    crops it at an integer offset that advances by `background_velocity`,
    so a camera pan is exact pixel translation.
    """

    height: int
    width: int
    length: int
    background: np.ndarray  # canvas (>= H, >= W, 3)
    shapes: list[ShapeTrack]
    background_velocity: tuple[int, int] = (0, 0)

    def _offset(self, t: int) -> tuple[int, int]:
        vy, vx = self.background_velocity
        base_y = max(0, -vy * (self.length - 1))
        base_x = max(0, -vx * (self.length - 1))
        return base_y + vy * t, base_x + vx * t

    def occupancy(self, t: int) -> np.ndarray:
        """Label map at time t: 0 background, k>0 is shape index k-1."""
        labels = np.zeros((self.height, self.width), dtype=np.int32)
        for k, shape in enumerate(self.shapes):
            labels[shape.pixel_mask(t, self.height, self.width)] = k + 1
        return labels

    def render(self, t: int) -> np.ndarray:
        oy, ox = self._offset(t)
        frame = self.background[oy : oy + self.height,
                                ox : ox + self.width].copy()
        for shape in self.shapes:
            shape.paint(frame, t)
        return frame

    def flow(self, t: int, i: int) -> np.ndarray:
        """Exact displacement field from frame t toward frame i, (H, W, 2) as
        (dy, dx), piecewise constant: shape pixels carry their shape's
        motion, background pixels the pan."""
        dt = i - t
        vectors = np.empty((self.height, self.width, 2), dtype=np.float64)
        vectors[:, :, 0] = -self.background_velocity[0] * dt
        vectors[:, :, 1] = -self.background_velocity[1] * dt
        for shape in self.shapes:
            inside = shape.pixel_mask(t, self.height, self.width)
            vectors[inside, 0] = shape.velocity[0] * dt
            vectors[inside, 1] = shape.velocity[1] * dt
        return vectors


@dataclass
class VideoSequence:
    """Ordered frames with parallel masks; the unit of inpainting."""

    frames: list[np.ndarray]
    masks: list[np.ndarray]
    motion: SyntheticMotion | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ConfigError("a sequence needs at least one frame")
        if len(self.frames) != len(self.masks):
            raise ConfigError(
                f"{len(self.frames)} frames but {len(self.masks)} masks"
            )
        h, w, _ = self.frames[0].shape
        self.frames = [validate_frame(f) for f in self.frames]
        for f in self.frames:
            if f.shape[:2] != (h, w):
                raise ConfigError("all frames must share the same H, W")
        self.masks = [validate_mask(m, h, w) for m in self.masks]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]


@dataclass
class MaskSpec:
    """How to build masks for a sequence."""

    kind: str = "square"  # square | irregular | object
    side_range: tuple[int, int] = (12, 32)
    source_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("square", "irregular", "object"):
            raise ConfigError(f"unknown mask kind {self.kind!r}")
        lo, hi = self.side_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad square side range {self.side_range}")
        if self.kind in ("irregular", "object") and not self.source_path:
            raise ConfigError(f"{self.kind} masks need a source_path")


def generate_square_masks(t: int, h: int, w: int, seed: int,
                          side_range: tuple[int, int] = (12, 32)) -> list[np.ndarray]:
    """T identical masks with one missing axis-aligned square.

    Side is uniform in side_range, location uniform within bounds, both drawn
    from the given seed, so results are reproducible bit for bit.
    """
    lo, hi = side_range
    if hi > min(h, w):
        raise ConfigError(f"square side up to {hi} does not fit in {h}x{w}")
    rng = np.random.default_rng(seed)
    side = int(rng.integers(lo, hi + 1))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    mask = np.full((h, w), KNOWN, dtype=np.uint8)
    mask[top : top + side, left : left + side] = MISSING
    return [mask.copy() for _ in range(t)]


def _mask_files(path) -> list[Path]:
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"mask directory {root} does not exist")
    files = sorted(
        p for p in root.iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if not files:
        raise DataError(f"no mask images found in {root}")
    return files


def _load_mask_file(path: Path, h: int, w: int) -> np.ndarray:
    try:
        img = Image.open(path).convert("L")
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    img = img.resize((w, h), Image.NEAREST)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return (arr >= 0.5).astype(np.uint8)


def load_irregular_masks(path, t: int, h: int, w: int, seed: int) -> list[np.ndarray]:
    """Sample T masks (with replacement) from a directory of mask images.

    Images are resized nearest-neighbor to (h, w) and binarized at 0.5;
    white (>=0.5) is known, black is missing.
    """
    files = _mask_files(path)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(files), size=t)
    return [_load_mask_file(files[i], h, w) for i in picks]


def load_object_masks(path, t: int, h: int, w: int) -> list[np.ndarray]:
    """Frame-aligned object masks: the directory must hold at least T images
    in filename order."""
    files = _mask_files(path)
    if len(files) < t:
        raise DataError(f"{path} has {len(files)} masks, need {t}")
    return [_load_mask_file(files[i], h, w) for i in range(t)]


def build_masks(spec: MaskSpec, t: int, h: int, w: int, seed: int) -> list[np.ndarray]:
    if spec.kind == "square":
        return generate_square_masks(t, h, w, seed, spec.side_range)
    if spec.kind == "irregular":
        return load_irregular_masks(spec.source_path, t, h, w, seed)
    return load_object_masks(spec.source_path, t, h, w)


def _smooth_background(rng: np.random.Generator, h: int, w: int,
                       cells: int = 8) -> np.ndarray:
    coarse = rng.uniform(0.05, 0.95, size=(3, cells, cells))
    fine = kernels.resize_bilinear_fwd(np.ascontiguousarray(coarse), h, w)
    return np.transpose(fine, (1, 2, 0))


def generate_synthetic_sequence(t: int, h: int, w: int, num_shapes: int,
                                seed: int,
                                background_velocity: tuple[int, int] | None = None,
                                ) -> VideoSequence:
    """Moving-shapes video with exactly known motion.

    Colored rectangles and ellipses translate with constant integer velocity
    over a smooth background that itself pans with a constant integer
    velocity (a camera pan; pass (0, 0) for a static scene, None to sample a
    nonzero pan).  Trajectories are rejection-sampled so shapes stay inside
    the frame and never overlap each other at any time, making the stored
    per-pixel flow exact.  Masks default to all-known; pair with a mask
    generator for inpainting runs.
    """
    if t < 1:
        raise ConfigError("sequence length must be >= 1")
    rng = np.random.default_rng(seed)
    if background_velocity is None:
        # pans fast enough that neighbor frames reveal content behind
        # typical static holes
        nonzero = np.array([-3, -2, 2, 3])
        background_velocity = (int(rng.choice(nonzero)), int(rng.choice(nonzero)))
    span_y = abs(background_velocity[0]) * (t - 1)
    span_x = abs(background_velocity[1]) * (t - 1)
    background = _smooth_background(
        rng, h + span_y, w + span_x, cells=max(4, (h + span_y) // 8)
    )
    shapes: list[ShapeTrack] = []
    boxes_by_time: list[list[tuple[int, int, int, int]]] = [[] for _ in range(t)]
    min_side = max(6, min(h, w) // 6)
    max_side = max(min_side + 1, min(h, w) // 3)
    for _ in range(num_shapes):
        placed = False
        for _attempt in range(2000):
            sh = int(rng.integers(min_side, max_side + 1))
            sw = int(rng.integers(min_side, max_side + 1))
            vy = int(rng.integers(-2, 3))
            vx = int(rng.integers(-2, 3))
            if vy == 0 and vx == 0:
                continue
            y_lo = max(0, -vy * (t - 1))
            y_hi = h - sh - max(0, vy * (t - 1))
            x_lo = max(0, -vx * (t - 1))
            x_hi = w - sw - max(0, vx * (t - 1))
            if y_hi < y_lo or x_hi < x_lo:
                continue
            y0 = int(rng.integers(y_lo, y_hi + 1))
            x0 = int(rng.integers(x_lo, x_hi + 1))
            candidate = [(y0 + vy * k, x0 + vx * k, sh, sw) for k in range(t)]
            overlap = any(
                not (cy + sh <= oy or oy + oh_ <= cy or cx + sw <= ox or ox + ow_ <= cx)
                for k, (cy, cx, _, _) in enumerate(candidate)
                for (oy, ox, oh_, ow_) in boxes_by_time[k]
            )
            if overlap:
                continue
            kind = "rect" if rng.random() < 0.5 else "ellipse"
            color = rng.uniform(0.25, 0.75, size=3)
            shading = tuple(rng.uniform(-0.25, 0.25, size=2))
            shapes.append(
                ShapeTrack(kind, color, (sh, sw), (y0, x0), (vy, vx), shading)
            )
            for k, (cy, cx, _, _) in enumerate(candidate):
                boxes_by_time[k].append((cy, cx, sh, sw))
            placed = True
            break
        if not placed:
            raise ConfigError(
                f"could not place {num_shapes} non-overlapping shapes in {h}x{w}"
            )
    motion = SyntheticMotion(h, w, t, background, shapes,
                             background_velocity=background_velocity)
    frames = [motion.render(k) for k in range(t)]
    masks = [np.full((h, w), KNOWN, dtype=np.uint8) for _ in range(t)]
    return VideoSequence(frames, masks, motion=motion)


_NUM_RE = re.compile(r"(\d+)")


def _numeric_key(path: Path):
    m = _NUM_RE.findall(path.stem)
    return (int(m[-1]) if m else 0, path.name)


def load_frame_folder(path, size: tuple[int, int] | None = None,
                      mask_dir=None) -> VideoSequence:
    """Load a directory of numerically ordered frames (optional mask dir).

    Frames are resized bilinearly to `size` (H, W) when given; masks use
    nearest-neighbor and are binarized at 0.5.  Without a mask directory all
    pixels are marked known.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"frame directory {root} does not exist")
    files = sorted(
        (p for p in root.iterdir()
         if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")),
        key=_numeric_key,
    )
    if not files:
        raise DataError(f"no frames found in {root}")
    frames = []
    for f in files:
        try:
            img = Image.open(f).convert("RGB")
        except OSError as exc:
            raise DataError(f"cannot read frame {f}: {exc}") from exc
        if size is not None:
            img = img.resize((size[1], size[0]), Image.BILINEAR)
        frames.append(np.asarray(img, dtype=np.float64) / 255.0)
    h, w, _ = frames[0].shape
    if mask_dir is not None:
        mask_files = _mask_files(mask_dir)
        if len(mask_files) != len(files):
            raise DataError(
                f"{len(files)} frames but {len(mask_files)} masks in {mask_dir}"
            )
        masks = [_load_mask_file(p, h, w) for p in mask_files]
    else:
        masks = [np.full((h, w), KNOWN, dtype=np.uint8) for _ in files]
    return VideoSequence(frames, masks)


def save_frame(path, frame: np.ndarray):
    arr = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def save_mask(path, mask: np.ndarray):
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(path)


def export_sequence(seq: VideoSequence, out_dir, with_masks: bool = True):
    """Write a sequence to disk in the frame-folder layout."""
    out = Path(out_dir)
    frame_dir = out / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        save_frame(frame_dir / f"{i:05d}.png", frame)
    if with_masks:
        mask_dir = out / "masks"
        mask_dir.mkdir(parents=True, exist_ok=True)
        for i, mask in enumerate(seq.masks):
            save_mask(mask_dir / f"{i:05d}.png", mask)
    return out
