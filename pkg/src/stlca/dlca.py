"""Dynamic long-term context aggregation: the feature bank and its
non-local refinement of the coarsest target feature map.

The bank holds at most q feature maps of previously restored frames, each
tagged with its source frame index.  A candidate (the frame r steps back,
or the oldest not-yet-offered restored frame during warm-up) replaces the
stored entry farthest (L1) from the current target feature, but only if the
candidate itself is closer.  Refinement is non-local attention: every
missing-region position of the target queries every position of every bank
entry, and the attention-weighted value replaces the target feature there.
Known positions are never touched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .video_data import MISSING

log = logging.getLogger(__name__)


@dataclass
class BankEntry:
    feature: np.ndarray  # (C, h, w) at the coarsest scale
    source_index: int


@dataclass
class BankDistanceReport:
    """Distances behind one update decision."""

    entry_distances: list[float]
    candidate_distance: float
    replaced_source_index: int | None
    accepted: bool
    skipped_duplicate: bool = False


@dataclass
class FeatureBank:
    capacity: int = 10
    lookback: int = 9
    entries: list[BankEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def source_indices(self) -> list[int]:
        return [e.source_index for e in self.entries]

    def features(self) -> list[np.ndarray]:
        return [e.feature for e in self.entries]

    def update(self, target_feature: np.ndarray, candidate_feature: np.ndarray,
               candidate_index: int) -> BankDistanceReport:
        """Offer one candidate; at most one entry changes."""
        distances = [
            float(np.abs(target_feature - e.feature).sum()) for e in self.entries
        ]
        cand_dist = float(np.abs(target_feature - candidate_feature).sum())
        if candidate_index in self.source_indices():
            log.debug("bank candidate %d already stored; skipped", candidate_index)
            return BankDistanceReport(distances, cand_dist, None, False,
                                      skipped_duplicate=True)
        if not self.is_full:
            self.entries.append(BankEntry(candidate_feature.copy(), candidate_index))
            return BankDistanceReport(distances, cand_dist, None, True)
        d_max = max(distances)
        max_pos = distances.index(d_max)  # ties take the lowest position
        if cand_dist < d_max:
            removed = self.entries.pop(max_pos)
            self.entries.append(BankEntry(candidate_feature.copy(), candidate_index))
            return BankDistanceReport(distances, cand_dist, removed.source_index, True)
        return BankDistanceReport(distances, cand_dist, None, False)

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "lookback": self.lookback,
            "features": [e.feature.copy() for e in self.entries],
            "source_indices": self.source_indices(),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "FeatureBank":
        bank = cls(capacity=int(state["capacity"]), lookback=int(state["lookback"]))
        for feat, idx in zip(state["features"], state["source_indices"]):
            bank.entries.append(BankEntry(np.asarray(feat, np.float64), int(idx)))
        return bank


def update_bank(bank: FeatureBank, target_feature: np.ndarray,
                candidate_feature: np.ndarray, candidate_index: int):
    """Functional veneer over FeatureBank.update (the bank is mutated)."""
    report = bank.update(target_feature, candidate_feature, candidate_index)
    return bank, report


def select_candidate(t: int, lookback: int, restored_count: int,
                     offered: set[int]) -> int | None:
    """Which restored frame to offer to the bank while inpainting frame t.

    Past the warm-up (t > lookback) the candidate is frame t - lookback.
    During warm-up every restored frame is offered once, oldest first.
    Nothing is offered before any frame has been restored.
    """
    if restored_count <= 0:
        return None
    if t > lookback:
        idx = t - lookback
        return idx if 0 <= idx < restored_count else None
    for idx in range(restored_count):
        if idx not in offered:
            return idx
    return None


class NonLocalAggregator(nn.Module):
    """Non-local attention from target positions onto all bank positions.

    Queries and keys embed to half the channel count, values keep full
    width; all embeddings are pointwise convolutions.  Output replaces the
    target feature only where the (coarse) mask marks pixels missing.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        if channels < 2:
            raise ValueError("non-local aggregation needs at least 2 channels")
        self.channels = channels
        self.query = nn.Conv2d(channels, channels // 2, kernel=1, rng=rng)
        self.key = nn.Conv2d(channels, channels // 2, kernel=1, rng=rng)
        self.value = nn.Conv2d(channels, channels, kernel=1, rng=rng)
        self.out = nn.Conv2d(channels, channels, kernel=1, rng=rng)

    def __call__(self, psi: Tensor, bank_features: list[np.ndarray],
                 mask_l: np.ndarray):
        """Returns (refined tensor, attention rows as ndarray or None).

        An empty bank returns `psi` unchanged.  Attention rows have shape
        (target positions, bank positions) and sum to one per row.
        """
        if not bank_features:
            return psi, None
        c, h, w = psi.shape
        n = h * w
        q = ad.transpose2d(ad.reshape(self.query(psi), (c // 2, n)))  # (N, C/2)
        keys = []
        values = []
        for feat in bank_features:
            entry = Tensor(feat)
            keys.append(ad.reshape(self.key(entry), (c // 2, n)))
            values.append(ad.reshape(self.value(entry), (c, n)))
        k = ad.concat(keys, axis=1)  # (C/2, M)
        v = ad.concat(values, axis=1)  # (C, M)
        attn = ad.softmax(q @ k, axis=1)  # (N, M)
        gathered = ad.transpose2d(attn @ ad.transpose2d(v))  # (C, N)
        z = self.out(ad.reshape(gathered, (c, h, w)))
        refined = ad.where_mask(np.asarray(mask_l) == MISSING, z, psi)
        return refined, attn.data.copy()
