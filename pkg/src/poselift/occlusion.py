"""Random joint occlusion and temporal-interpolation guidance.

Missing joints are encoded as exact (0, 0, 0) triples. Guidance fills each
missing joint from its temporally nearest observation of the same joint and
attaches a confidence that decays linearly with the frame gap: a copy from k
frames in the past scores max(0, 1 - k/f_past), from the future
max(0, 1 - k/f_future). Near sequence boundaries the search window slides so
its total span f_past + f_future + 1 is preserved, and the slid per-frame
window sizes are used as the confidence denominators.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import OcclusionMask, PoseSequence2D


class Fallback(str, enum.Enum):
    """What to do when a joint has no observation inside the search window."""

    ZERO_FILL = "zero_fill"
    WHOLE_SEQUENCE_SEARCH = "whole_sequence_search"


@dataclass(frozen=True)
class GuidanceConfig:
    f_past: int = 3
    f_future: int = 3
    fallback: Fallback = Fallback.WHOLE_SEQUENCE_SEARCH

    def __post_init__(self):
        if self.f_past < 1 or self.f_future < 1:
            raise ValueError("window sizes f_past and f_future must be >= 1")
        object.__setattr__(self, "fallback", Fallback(self.fallback))


class CategoryName(str, enum.Enum):
    MILD = "mild"
    INTERMEDIATE = "intermediate"
    SEVERE = "severe"


@dataclass(frozen=True)
class OcclusionCategory:
    name: CategoryName
    min_missing: int
    max_missing: int


def categorize(n_missing: int, j: int) -> OcclusionCategory:
    """Bucket a per-frame missing-joint count: mild below one third of the
    joints, severe above two thirds, intermediate in between."""
    if not 0 <= n_missing <= j:
        raise ValueError(f"n_missing={n_missing} outside [0, {j}]")
    # largest n with 3n < j, smallest n with 3n > 2j
    mild_hi = (j - 1) // 3
    severe_lo = (2 * j) // 3 + 1
    if 3 * n_missing < j:
        return OcclusionCategory(CategoryName.MILD, 1, mild_hi)
    if 3 * n_missing > 2 * j:
        return OcclusionCategory(CategoryName.SEVERE, severe_lo, j - 1)
    return OcclusionCategory(CategoryName.INTERMEDIATE, mild_hi + 1, severe_lo - 1)


def inject_array(data: np.ndarray, n_missing_per_frame: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Array-level occlusion: a fresh uniform draw of n joints per frame is
    zeroed in all three channels. Returns (occluded copy, presence grid)."""
    t, j = data.shape[0], data.shape[1]
    if not 0 <= n_missing_per_frame < j:
        raise ValueError(
            f"n_missing_per_frame={n_missing_per_frame} must satisfy 0 <= n < {j}")
    out = np.array(data)
    present = np.ones((t, j), dtype=bool)
    for i in range(t):
        missing = rng.choice(j, size=n_missing_per_frame, replace=False)
        present[i, missing] = False
        out[i, missing, :] = 0.0
    return out, present


def inject_occlusion(seq: PoseSequence2D, n_missing_per_frame: int,
                     seed: int) -> tuple[PoseSequence2D, OcclusionMask]:
    """Zero a fresh uniform draw of n joints in every frame.

    All three channels of an occluded joint are set to exactly zero. The
    returned mask records presence and is reproducible from the seed.
    """
    rng = np.random.default_rng(seed)
    data, present = inject_array(seq.data, n_missing_per_frame, rng)
    mask = OcclusionMask(present=present, seed=seed,
                         n_missing_per_frame=n_missing_per_frame)
    return PoseSequence2D(data), mask


def zero_filled(seq: PoseSequence2D, mask: OcclusionMask) -> PoseSequence2D:
    """Represent missing joints as zeros in all channels (no guidance).

    This is the single source of truth for the unguided baseline input; the
    trainer's zero-fill regime and the comparison harness both call it.
    """
    if (mask.frames, mask.joints) != (seq.frames, seq.joints):
        raise ValueError("mask dimensions do not match sequence")
    data = np.array(seq.data)
    data[~mask.present] = 0.0
    return PoseSequence2D(data)


def slide_window(i: int, t: int, f_past: int, f_future: int) -> tuple[int, int]:
    """Per-frame (past, future) window sizes with the total span preserved.

    Mid-sequence frames keep (f_past, f_future). Near a boundary the short
    side donates its unusable slots to the other side, so the first frame of
    a long sequence gets (0, f_past + f_future) and the last
    (f_past + f_future, 0). Sequences shorter than the span clamp both sides.
    """
    span = f_past + f_future
    past = min(i, max(f_past, span - (t - 1 - i)))
    future = min(t - 1 - i, max(f_future, span - i))
    return past, future


def confidence_for_gap(gap: int, f_past: int, f_future: int) -> float:
    """Confidence of a joint copied from ``gap`` frames away.

    gap = 0 is an actual observation (1.0); gap = -k a copy from k frames in
    the past, reduced by 1/f_past per frame; gap = +k symmetric with f_future.
    Clamped to [0, 1].
    """
    if gap == 0:
        return 1.0
    if gap < 0:
        if f_past <= 0:
            return 0.0
        return max(0.0, 1.0 - (-gap) / f_past)
    if f_future <= 0:
        return 0.0
    return max(0.0, 1.0 - gap / f_future)


def _nearest_present(present_frames: np.ndarray, i: int) -> tuple[int | None, int | None]:
    """(nearest past frame, nearest future frame) of an ordered index array."""
    pos = int(np.searchsorted(present_frames, i))
    past = int(present_frames[pos - 1]) if pos > 0 else None
    future = int(present_frames[pos]) if pos < len(present_frames) else None
    return past, future


def guide_array(data: np.ndarray, present: np.ndarray,
                cfg: GuidanceConfig) -> np.ndarray:
    """Array-level guidance: fill missing (frame, joint) cells in a (t, j, 3)
    array given a (t, j) presence grid. Present cells are left untouched."""
    t, j = present.shape
    out = np.array(data)
    for q in range(j):
        col = present[:, q]
        if col.all():
            continue
        present_frames = np.flatnonzero(col)
        for i in np.flatnonzero(~col):
            i = int(i)
            p_win, f_win = slide_window(i, t, cfg.f_past, cfg.f_future)
            past, future = _nearest_present(present_frames, i)
            past_ok = past is not None and (i - past) <= p_win
            future_ok = future is not None and (future - i) <= f_win
            if past_ok and future_ok:
                src = past if (i - past) <= (future - i) else future
            elif past_ok:
                src = past
            elif future_ok:
                src = future
            else:
                # nothing inside the window
                if (cfg.fallback is Fallback.WHOLE_SEQUENCE_SEARCH
                        and len(present_frames) > 0):
                    if past is not None and future is not None:
                        src = past if (i - past) <= (future - i) else future
                    else:
                        src = past if past is not None else future
                    out[i, q, 0:2] = data[src, q, 0:2]
                else:
                    out[i, q, 0:2] = 0.0
                out[i, q, 2] = 0.0
                continue
            out[i, q, 0:2] = data[src, q, 0:2]
            out[i, q, 2] = confidence_for_gap(src - i, p_win, f_win)
    return out


def guide_sequence(seq: PoseSequence2D, mask: OcclusionMask,
                   cfg: GuidanceConfig | None = None) -> PoseSequence2D:
    """Fill every missing joint from its nearest observation (ties go to the
    past) and set its confidence from the frame gap; see the module docstring
    for boundary and fallback behavior."""
    cfg = cfg or GuidanceConfig()
    if (mask.frames, mask.joints) != (seq.frames, seq.joints):
        raise ValueError("mask dimensions do not match sequence")
    return PoseSequence2D(guide_array(seq.data, mask.present, cfg))
