"""Synthetic paired data: kinematic 3D motion plus projected noisy 2D detections.

A forward-kinematics chain with sinusoidal joint-angle trajectories produces
root-relative 3D ground truth in millimeters; a pinhole camera projects it to
normalized 2D detections and Gaussian noise mimics detector error. Everything
is deterministic per seed, so train/test splits with disjoint motion seeds
stand in for the licensed motion-capture datasets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (PoseDataset, PoseSequence2D, PoseSequence3D, SkeletonSpec,
                   default_skeleton, load_sequence, save_sequence)

DEFAULT_FPS = 50.0

# rest-pose direction (unit, from parent) and bone length (mm) per joint of
# the default 17-joint skeleton; z is up, the subject faces +y
_REST_DIRS = np.array([
    (0, 0, 0),      # hip (root)
    (-1, 0, 0),     # r_hip
    (0, 0, -1),     # r_knee
    (0, 0, -1),     # r_ankle
    (1, 0, 0),      # l_hip
    (0, 0, -1),     # l_knee
    (0, 0, -1),     # l_ankle
    (0, 0, 1),      # spine
    (0, 0, 1),      # thorax
    (0, 0, 1),      # neck
    (0, 0, 1),      # head
    (1, 0, 0),      # l_shoulder
    (0, 0, -1),     # l_elbow
    (0, 0, -1),     # l_wrist
    (-1, 0, 0),     # r_shoulder
    (0, 0, -1),     # r_elbow
    (0, 0, -1),     # r_wrist
], dtype=np.float64)

_BONE_LENGTHS = np.array([
    0.0, 130.0, 450.0, 440.0, 130.0, 450.0, 440.0,
    230.0, 250.0, 110.0, 110.0,
    150.0, 280.0, 250.0, 150.0, 280.0, 250.0,
], dtype=np.float64)

# peak joint-angle amplitude in radians by action archetype
_ACTION_AMPLITUDE = {
    "walk": 0.85, "run": 1.1, "sit": 0.4, "wave": 0.7,
    "stretch": 0.9, "idle": 0.2,
}


@dataclass(frozen=True)
class MotionSpec:
    """Per-joint sinusoidal angular motion on a fixed-bone-length skeleton."""

    skeleton: SkeletonSpec
    bone_lengths: np.ndarray
    rest_directions: np.ndarray
    frequencies: np.ndarray   # (j, 2) Hz, rotations about z then x
    amplitudes: np.ndarray    # (j, 2) radians
    phases: np.ndarray        # (j, 2) radians
    base_angles: np.ndarray | None = None   # (j, 2) static offsets, radians
    n_frames: int = 81
    fps: float = DEFAULT_FPS
    action_label: str = "motion"
    seed: int = 0

    def __post_init__(self):
        if self.base_angles is None:
            object.__setattr__(self, "base_angles",
                               np.zeros((self.skeleton.n_joints, 2)))
        j = self.skeleton.n_joints
        for name in ("bone_lengths", "rest_directions", "frequencies",
                     "amplitudes", "phases", "base_angles"):
            object.__setattr__(self, name, np.asarray(getattr(self, name),
                                                      dtype=np.float64))
        if self.bone_lengths.shape != (j,):
            raise ValueError(f"bone_lengths must have shape ({j},)")
        for q in range(j):
            if q != self.skeleton.root_index and self.bone_lengths[q] <= 0:
                raise ValueError(f"bone length of joint {q} must be positive")
        if self.rest_directions.shape != (j, 3):
            raise ValueError(f"rest_directions must have shape ({j}, 3)")
        for name in ("frequencies", "amplitudes", "phases", "base_angles"):
            if getattr(self, name).shape != (j, 2):
                raise ValueError(f"{name} must have shape ({j}, 2)")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")


def default_motion_spec(action: str = "walk", n_frames: int = 81,
                        fps: float = DEFAULT_FPS, seed: int = 0,
                        skeleton: SkeletonSpec | None = None) -> MotionSpec:
    """Draw per-joint motion parameters for an action archetype."""
    skeleton = skeleton or default_skeleton()
    j = skeleton.n_joints
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    amp_max = _ACTION_AMPLITUDE.get(action, 0.6)
    freqs = rng.uniform(0.3, 1.2, size=(j, 2))
    amps = rng.uniform(0.1 * amp_max, amp_max, size=(j, 2))
    amps[skeleton.root_index] = rng.uniform(0.02, 0.1, size=2)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(j, 2))
    # static per-sequence articulation plus a uniform whole-body heading so
    # the dataset's poses are actually diverse in the image
    base = rng.normal(0.0, 0.2, size=(j, 2))
    base[skeleton.root_index, 0] = rng.uniform(0.0, 2.0 * np.pi)
    base[skeleton.root_index, 1] = rng.normal(0.0, 0.1)
    if j == 17:
        lengths, dirs = _BONE_LENGTHS, _REST_DIRS
    else:
        lengths = np.full(j, 300.0)
        lengths[skeleton.root_index] = 0.0
        raw = rng.normal(size=(j, 3))
        dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        dirs[skeleton.root_index] = 0.0
    return MotionSpec(skeleton=skeleton, bone_lengths=lengths,
                      rest_directions=dirs, frequencies=freqs, amplitudes=amps,
                      phases=phases, base_angles=base, n_frames=n_frames,
                      fps=fps, action_label=action, seed=seed)


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def generate_motion(spec: MotionSpec) -> PoseSequence3D:
    """Forward kinematics over the parent tree with sinusoidal joint angles.

    The root stays pinned at the origin, so the output is root-relative by
    construction; bone lengths are exactly constant across frames.
    """
    skel = spec.skeleton
    j = skel.n_joints
    order = _topological_joints(skel)
    out = np.zeros((spec.n_frames, j, 3), dtype=np.float64)
    for i in range(spec.n_frames):
        tau = i / spec.fps
        ang = spec.base_angles + spec.amplitudes * np.sin(
            2.0 * np.pi * spec.frequencies * tau + spec.phases)
        rot_world = [None] * j
        pos = np.zeros((j, 3))
        for q in order:
            local = _rot_z(ang[q, 0]) @ _rot_x(ang[q, 1])
            if q == skel.root_index:
                rot_world[q] = local
                continue
            parent = skel.parents[q]
            rot_world[q] = rot_world[parent] @ local
            offset = spec.bone_lengths[q] * spec.rest_directions[q]
            pos[q] = pos[parent] + rot_world[q] @ offset
        out[i] = pos
    return PoseSequence3D(out)


def _topological_joints(skel: SkeletonSpec) -> list[int]:
    order = [skel.root_index]
    seen = {skel.root_index}
    while len(order) < skel.n_joints:
        for q in range(skel.n_joints):
            if q not in seen and skel.parents[q] in seen:
                order.append(q)
                seen.add(q)
    return order


# -- camera ------------------------------------------------------------------

def _default_orientation() -> np.ndarray:
    # camera on -y world axis looking at the origin: image x = world x,
    # image y = world down, optical axis = world +y
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, 0.0, -1.0],
                     [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera: focal length as a 35 mm-equivalent, pixel extrinsics.

    The default framing keeps a standing subject at 4 m filling most of the
    image height, like indoor capture footage."""

    focal_mm: float = 65.0
    image_width: int = 1000
    image_height: int = 1000
    principal_point: tuple[float, float] = (500.0, 500.0)
    position: tuple[float, float, float] = (0.0, -4000.0, 0.0)
    orientation: np.ndarray = field(default_factory=_default_orientation)

    def __post_init__(self):
        if self.focal_mm <= 0:
            raise ValueError("focal length must be positive")
        r = np.asarray(self.orientation, dtype=np.float64)
        if r.shape != (3, 3) or np.abs(r.T @ r - np.eye(3)).max() > 1e-9 \
                or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("orientation must be a proper orthogonal 3x3 matrix")
        object.__setattr__(self, "orientation", r)

    @property
    def focal_px(self) -> float:
        return self.focal_mm / 36.0 * self.image_width

    def to_dict(self) -> dict:
        return {"focal_mm": self.focal_mm, "image_width": self.image_width,
                "image_height": self.image_height,
                "principal_point": list(self.principal_point),
                "position": list(self.position),
                "orientation": np.asarray(self.orientation).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSpec":
        return cls(focal_mm=d["focal_mm"], image_width=d["image_width"],
                   image_height=d["image_height"],
                   principal_point=tuple(d["principal_point"]),
                   position=tuple(d["position"]),
                   orientation=np.asarray(d["orientation"]))


def project_to_2d(seq3d: PoseSequence3D, cam: CameraSpec) -> PoseSequence2D:
    """Perspective projection to [-1, 1] coordinates normalized by image
    width, origin at the principal point; confidence is 1.0 everywhere."""
    world = np.asarray(seq3d.data, dtype=np.float64)
    cam_pts = (world - np.asarray(cam.position)) @ cam.orientation.T
    z = cam_pts[..., 2]
    if np.any(z <= 0):
        raise ValueError("joint behind camera (non-positive depth)")
    half_w = cam.image_width / 2.0
    out = np.empty_like(world, dtype=np.float64)
    out[..., 0] = cam.focal_px * cam_pts[..., 0] / z / half_w
    out[..., 1] = cam.focal_px * cam_pts[..., 1] / z / half_w
    out[..., 2] = 1.0
    return PoseSequence2D(out.astype(np.float32))


def back_project(seq2d: PoseSequence2D, depths: np.ndarray,
                 cam: CameraSpec) -> np.ndarray:
    """Invert the projection given per-joint camera depths; returns world
    coordinates (t, j, 3). With ground-truth depths this reproduces the 3D
    ground truth exactly, which is the round-trip oracle used in tests."""
    data = np.asarray(seq2d.data, dtype=np.float64)
    z = np.asarray(depths, dtype=np.float64)
    half_w = cam.image_width / 2.0
    cam_pts = np.empty_like(data)
    cam_pts[..., 0] = data[..., 0] * half_w * z / cam.focal_px
    cam_pts[..., 1] = data[..., 1] * half_w * z / cam.focal_px
    cam_pts[..., 2] = z
    return cam_pts @ cam.orientation + np.asarray(cam.position)


def camera_depths(seq3d: PoseSequence3D, cam: CameraSpec) -> np.ndarray:
    """Per-joint depths along the optical axis, for the back-projection oracle."""
    world = np.asarray(seq3d.data, dtype=np.float64)
    return ((world - np.asarray(cam.position)) @ cam.orientation.T)[..., 2]


def add_detector_noise(seq2d: PoseSequence2D, sigma: float,
                       seed: int) -> PoseSequence2D:
    """I.i.d. Gaussian perturbation of x and y; confidence is untouched."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    data = np.array(seq2d.data)
    if sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        data[..., 0:2] += rng.normal(0.0, sigma, size=data[..., 0:2].shape).astype(np.float32)
    return PoseSequence2D(data)


# -- dataset files -------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def make_dataset(n_sequences: int, actions: list[str], t: int, out_dir,
                 seed: int, train_fraction: float = 0.75,
                 test_frames: int | None = None, noise_sigma: float = 0.01,
                 fps: float = DEFAULT_FPS,
                 camera: CameraSpec | None = None) -> dict:
    """Write paired .pseq2d/.pseq3d files plus a JSON manifest.

    Sequences are tagged train/test with provably disjoint motion seeds
    (train seeds even, test seeds odd on a per-dataset base offset).
    """
    if n_sequences < 1:
        raise ValueError("need at least one sequence")
    if not actions:
        raise ValueError("need at least one action label")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    camera = camera or CameraSpec()
    skeleton = default_skeleton()
    n_train = int(round(n_sequences * train_fraction))
    base = seed * (2 ** 21)
    rows = []
    for i in range(n_sequences):
        split = "train" if i < n_train else "test"
        motion_seed = base + 2 * i + (0 if split == "train" else 1)
        frames = t if split == "train" else (test_frames or t)
        action = actions[i % len(actions)]
        spec = default_motion_spec(action=action, n_frames=frames, fps=fps,
                                   seed=motion_seed, skeleton=skeleton)
        gt = generate_motion(spec)
        det = add_detector_noise(project_to_2d(gt, camera), noise_sigma,
                                 motion_seed)
        name = f"seq_{i:04d}"
        save_sequence(det, out_dir / f"{name}.pseq2d")
        save_sequence(gt, out_dir / f"{name}.pseq3d")
        rows.append({"id": name, "action": action, "split": split,
                     "motion_seed": motion_seed, "frames": frames,
                     "file_2d": f"{name}.pseq2d", "file_3d": f"{name}.pseq3d"})
    manifest = {"version": 1, "seed": seed, "fps": fps,
                "noise_sigma": noise_sigma, "n_joints": skeleton.n_joints,
                "camera": camera.to_dict(), "sequences": rows}
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def load_manifest(data_dir) -> dict:
    with open(Path(data_dir) / MANIFEST_NAME, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_dataset(data_dir, split: str | None = None) -> PoseDataset:
    """Load the paired sequences of one split into stacked arrays."""
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    rows = [r for r in manifest["sequences"]
            if split is None or r["split"] == split]
    if not rows:
        raise ValueError(f"no sequences for split {split!r} in {data_dir}")
    frame_counts = {r["frames"] for r in rows}
    if len(frame_counts) != 1:
        raise ValueError(
            f"cannot stack sequences with mixed frame counts {sorted(frame_counts)}")
    x2d, y3d, labels, ids = [], [], [], []
    for r in rows:
        x2d.append(load_sequence(data_dir / r["file_2d"]).data)
        y3d.append(load_sequence(data_dir / r["file_3d"]).data)
        labels.append(r["action"])
        ids.append(r["id"])
    return PoseDataset(x2d=np.stack(x2d), y3d=np.stack(y3d), actions=labels,
                       ids=ids)
