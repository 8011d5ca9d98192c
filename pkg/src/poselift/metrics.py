"""Evaluation protocols for lifted poses.

Protocol 1 is the mean per-joint position error between root-relative
predictions and ground truth; Protocol 2 first aligns the prediction with a
least-squares similarity transform (scale, rotation, translation; reflections
excluded). PCK counts joints under a 150 mm error threshold and AUC averages
the PCK curve over thresholds 5, 10, ..., 150 mm.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .core import PoseDataset, PoseSequence2D
from .occlusion import GuidanceConfig, guide_sequence, inject_occlusion, zero_filled

AUC_THRESHOLDS_MM = np.arange(5.0, 151.0, 5.0)  # 30 thresholds


class AlignmentError(ValueError):
    """Raised when a joint cloud is too degenerate to align (rank < 2)."""


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError(f"rotation determinant {np.linalg.det(r):.8f} != +1")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthogonal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation


def mpjpe_p1(pred, gt) -> float:
    """Protocol 1: mean Euclidean distance in mm over (..., j, 3) poses."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def procrustes_align(pred, gt):
    """Least-squares similarity transform from pred onto gt.

    Solves min over (s, R, t) of sum ||s R p_i + t - g_i||^2 via SVD of the
    centered cross-covariance; the reflection branch is excluded by flipping
    the smallest singular direction whenever the determinant would be -1.
    Returns (SimilarityTransform, aligned_pred).
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"need matching (j, 3) poses, got {p.shape} and {g.shape}")
    n = p.shape[0]
    if n < 3:
        raise AlignmentError("need at least 3 joints to align")
    mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
    x, y = p - mu_p, g - mu_g
    for name, cloud in (("pred", x), ("gt", y)):
        sv = np.linalg.svd(cloud, compute_uv=False)
        if sv[0] <= 0 or sv[1] <= 1e-9 * sv[0]:
            raise AlignmentError(f"{name} joint cloud is rank-deficient (collinear)")
    var_p = (x * x).sum() / n
    cov = y.T @ x / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_p)
    trans = mu_g - scale * rot @ mu_p
    transform = SimilarityTransform(scale=scale, rotation=rot, translation=trans)
    return transform, transform.apply(p)


def mpjpe_p2(pred, gt) -> float:
    """Protocol 2: Protocol 1 after similarity alignment of the prediction."""
    _, aligned = procrustes_align(pred, gt)
    return mpjpe_p1(aligned, gt)


def pck(pred, gt, threshold_mm: float = 150.0) -> float:
    """Percentage of joints with error strictly under the threshold."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    dist = np.linalg.norm(pred - gt, axis=-1)
    return float(100.0 * (dist < threshold_mm).mean())


def auc(pred, gt) -> float:
    """Mean PCK over the 30-threshold grid 5..150 mm."""
    return float(np.mean([pck(pred, gt, th) for th in AUC_THRESHOLDS_MM]))


# -- report -----------------------------------------------------------------

METRIC_KEYS = ("mpjpe_p1", "mpjpe_p2", "pck", "auc")


@dataclass
class EvalReport:
    per_action: dict[str, dict[str, float]]
    aggregate: dict[str, float]
    occlusion: dict = field(default_factory=dict)
    model_id: str = ""

    def to_dict(self) -> dict:
        return {"per_action": self.per_action, "aggregate": self.aggregate,
                "occlusion": self.occlusion, "model_id": self.model_id}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(per_action=d["per_action"], aggregate=d["aggregate"],
                   occlusion=d.get("occlusion", {}), model_id=d.get("model_id", ""))


def _sequence_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def prepare_eval_input(seq: PoseSequence2D, n_missing: int, seq_seed: int,
                       guidance: GuidanceConfig | None,
                       zero_fill_inputs: bool) -> PoseSequence2D:
    """Occlude a test sequence and produce the model input for one regime:
    guided fill, or the zero-filled baseline when zero_fill_inputs is set."""
    if n_missing <= 0:
        return seq
    occluded, mask = inject_occlusion(seq, n_missing, seq_seed)
    if zero_fill_inputs:
        return zero_filled(occluded, mask)
    return guide_sequence(occluded, mask, guidance or GuidanceConfig())


def evaluate(predict, dataset: PoseDataset, window: int, n_missing: int = 0,
             seed: int = 0, guidance: GuidanceConfig | None = None,
             zero_fill_inputs: bool = False, model_id: str = "",
             batch_limit: int = 64) -> EvalReport:
    """Occlude, guide, and lift every test window; aggregate per action.

    ``predict`` maps a float32 batch of windows (B, window, j, 3) plus a list
    of (sequence_id, start_frame) pairs to central poses (B, j, 3). Windows
    slide with stride 1 and are scored on their central frame. The aggregate
    row is the unweighted mean of the per-action rows.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.frames < window:
        raise ValueError(
            f"sequences of {dataset.frames} frames are shorter than the "
            f"{window}-frame evaluation window")
    half = window // 2
    per_action_values: dict[str, list[tuple]] = defaultdict(list)
    for si in range(len(dataset)):
        seq = PoseSequence2D(dataset.x2d[si])
        inp = prepare_eval_input(seq, n_missing, _sequence_seed(seed, si),
                                 guidance, zero_fill_inputs)
        xs = inp.data
        gt = dataset.y3d[si]
        starts = list(range(0, dataset.frames - window + 1))
        for chunk_start in range(0, len(starts), batch_limit):
            chunk = starts[chunk_start: chunk_start + batch_limit]
            windows = np.stack([xs[s: s + window] for s in chunk])
            info = [(dataset.ids[si], s) for s in chunk]
            preds = np.asarray(predict(windows.astype(np.float32), info))
            for pose, s in zip(preds, chunk):
                target = gt[s + half]
                per_action_values[dataset.actions[si]].append((
                    mpjpe_p1(pose, target),
                    mpjpe_p2(pose, target),
                    pck(pose, target),
                    auc(pose, target),
                ))
    per_action = {}
    for action in sorted(per_action_values):
        arr = np.asarray(per_action_values[action], dtype=np.float64)
        per_action[action] = dict(zip(METRIC_KEYS, arr.mean(axis=0).tolist()))
    rows = np.asarray([[per_action[a][k] for k in METRIC_KEYS] for a in per_action])
    aggregate = dict(zip(METRIC_KEYS, rows.mean(axis=0).tolist()))
    occlusion_info = {"n_missing": n_missing, "seed": seed,
                      "zero_fill_inputs": zero_fill_inputs}
    return EvalReport(per_action=per_action, aggregate=aggregate,
                      occlusion=occlusion_info, model_id=model_id)
