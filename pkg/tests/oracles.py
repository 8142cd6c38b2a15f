"""Independent reference implementations used as test oracles.

These deliberately avoid the library's own code paths: the ring oracle is an
exhaustive distance scan, the bank oracle is a line-by-line transcription of
the published update procedure over plain Python lists.
"""

import numpy as np


def brute_force_ring(mask: np.ndarray, d: float) -> set[tuple[int, int]]:
    """All known pixels within Euclidean distance d of some missing pixel,
    by exhaustive comparison against every missing pixel."""
    missing = np.argwhere(np.asarray(mask) == 0)
    known = np.argwhere(np.asarray(mask) == 1)
    if len(missing) == 0 or len(known) == 0:
        return set()
    d2 = (known[:, None, :].astype(np.int64) - missing[None, :, :]) ** 2
    min_sq = d2.sum(axis=2).min(axis=1)
    keep = known[min_sq <= int(round(d * d))]
    return {(int(r), int(c)) for r, c in keep}


def bank_update_reference(entries: list[tuple[np.ndarray, int]], capacity: int,
                          target: np.ndarray, candidate: np.ndarray,
                          candidate_index: int):
    """Line-by-line transcription of the dynamic feature update rule.

    Returns (new_entries, replaced_index_or_None, accepted).  Ties on the
    maximum distance pick the lowest entry position; a candidate whose source
    index is already stored is skipped.
    """
    if any(idx == candidate_index for _, idx in entries):
        return list(entries), None, False
    if len(entries) < capacity:
        return list(entries) + [(candidate, candidate_index)], None, True
    distance = []
    d_cand = float(np.abs(target - candidate).sum())
    for feat, _ in entries:
        distance.append(float(np.abs(target - feat).sum()))
    d_max = max(distance)
    max_pos = distance.index(d_max)
    if d_cand < d_max:
        out = list(entries)
        removed = out.pop(max_pos)
        out.append((candidate, candidate_index))
        return out, removed[1], True
    return list(entries), None, False
