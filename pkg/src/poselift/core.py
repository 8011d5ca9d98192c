"""Skeleton and pose-sequence domain types plus the PSEQ binary file format.

Every other module trades in the types defined here: a skeleton topology,
frame-major 2D detection sequences ``(x, y, confidence)``, root-relative 3D
sequences in millimeters, and boolean presence masks for occluded joints.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PSEQ_MAGIC = b"PSEQv001"

H36M_JOINT_NAMES = (
    "hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M_PARENTS = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)


class SequenceFormatError(ValueError):
    """Raised for malformed PSEQ/mask files or checkpoint payloads."""


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint topology: a parent array defining a single tree.

    The root's parent is itself; every other joint must reach the root by
    walking parent links (no cycles, no forests).
    """

    n_joints: int = 17
    root_index: int = 0
    parents: tuple[int, ...] = H36M_PARENTS
    joint_names: tuple[str, ...] = H36M_JOINT_NAMES

    def __post_init__(self):
        if self.n_joints < 2:
            raise ValueError(f"need at least 2 joints, got {self.n_joints}")
        if len(self.parents) != self.n_joints:
            raise ValueError("parents length does not match n_joints")
        if not 0 <= self.root_index < self.n_joints:
            raise ValueError("root_index out of range")
        if self.parents[self.root_index] != self.root_index:
            raise ValueError("root joint must be its own parent")
        if len(self.joint_names) != self.n_joints:
            raise ValueError("joint_names length does not match n_joints")
        for j in range(self.n_joints):
            if not 0 <= self.parents[j] < self.n_joints:
                raise ValueError(f"parent index of joint {j} out of range")
            if j != self.root_index and self.parents[j] == j:
                raise ValueError(f"joint {j} is its own parent but not the root")
        # every joint must reach the root in < n_joints hops
        for j in range(self.n_joints):
            cur, hops = j, 0
            while cur != self.root_index:
                cur = self.parents[cur]
                hops += 1
                if hops >= self.n_joints:
                    raise ValueError(f"parent array contains a cycle through joint {j}")

    def children(self, joint):
        return [j for j in range(self.n_joints)
                if self.parents[j] == joint and j != self.root_index]


def default_skeleton() -> SkeletonSpec:
    """17-joint Human3.6M-style topology used throughout."""
    return SkeletonSpec()


def _check_frame_major(data, name):
    arr = np.ascontiguousarray(data)
    if arr.dtype != np.float64:
        arr = arr.astype(np.float32) if arr.dtype != np.float32 else arr
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} data must have shape (frames, joints, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("t >= 1 violated: sequence needs at least one frame")
    if arr.shape[1] < 1:
        raise ValueError("sequence needs at least one joint")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PoseSequence2D:
    """Frame-major (t, j, 3) detections: channels are (x, y, confidence).

    x and y live in image coordinates normalized to [-1, 1] by image width;
    confidence is expected in [0, 1] with fully observed joints at 1.0.
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _check_frame_major(self.data, "2D"))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PoseSequence3D:
    """Frame-major (t, j, 3) poses in millimeters, root-relative.

    The root joint sits at the origin of every frame (within 1e-6 mm).
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _check_frame_major(self.data, "3D"))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class OcclusionMask:
    """Per-frame joint presence grid with the RNG seed that produced it."""

    present: np.ndarray
    seed: int
    n_missing_per_frame: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.present, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must have shape (frames, joints), got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "present", arr)

    @property
    def frames(self) -> int:
        return self.present.shape[0]

    @property
    def joints(self) -> int:
        return self.present.shape[1]


@dataclass
class ValidationResult:
    ok: bool
    violations: list[str] = field(default_factory=list)


def validate_sequence(seq, spec: SkeletonSpec) -> ValidationResult:
    """Check a sequence against the skeleton and its type invariants.

    Violations are returned as data, never raised: a shape mismatch, NaN or
    Inf entries, an out-of-range confidence channel for 2D, or a root joint
    away from the origin for 3D.
    """
    violations = []
    data = seq.data
    if seq.joints != spec.n_joints:
        violations.append(
            f"shape mismatch: {seq.joints} joints in sequence, {spec.n_joints} in skeleton")
    if not np.isfinite(data).all():
        violations.append("non-finite values present")
    if isinstance(seq, PoseSequence2D):
        conf = data[:, :, 2]
        if np.isfinite(conf).all() and (conf.min() < 0.0 or conf.max() > 1.0):
            violations.append(
                f"confidence out of range [0, 1]: min={conf.min():.4g} max={conf.max():.4g}")
    elif isinstance(seq, PoseSequence3D):
        if seq.joints == spec.n_joints:
            root = data[:, spec.root_index, :]
            if np.isfinite(root).all() and np.abs(root).max() > 1e-6:
                violations.append(
                    f"root not at origin: max |root| = {np.abs(root).max():.4g} mm")
    else:
        raise TypeError(f"not a pose sequence: {type(seq)!r}")
    return ValidationResult(ok=not violations, violations=violations)


# ---------------------------------------------------------------------------
# PSEQ binary format
#
# file = 8-byte magic "PSEQv001"
#      | 4-byte little-endian header length
#      | UTF-8 JSON header
#      | frames * joints * 3 little-endian float32 values, frame-major
# ---------------------------------------------------------------------------

def save_sequence(seq, path) -> None:
    """Write a sequence in PSEQ format. Round-trips bit-exactly."""
    kind = "2d" if isinstance(seq, PoseSequence2D) else "3d"
    header = {
        "frames": seq.frames,
        "joints": seq.joints,
        "channels": 3,
        "kind": kind,
        "layout": "frame-major",
        "dtype": "f32le",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(seq.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(PSEQ_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_sequence(path):
    """Read a PSEQ file back into a PoseSequence2D or PoseSequence3D."""
    raw = Path(path).read_bytes()
    if len(raw) < len(PSEQ_MAGIC) + 4:
        raise SequenceFormatError(f"{path}: file too short for PSEQ header")
    if raw[: len(PSEQ_MAGIC)] != PSEQ_MAGIC:
        raise SequenceFormatError(
            f"{path}: unknown format version (magic {raw[:8]!r})")
    (header_len,) = struct.unpack_from("<I", raw, len(PSEQ_MAGIC))
    header_start = len(PSEQ_MAGIC) + 4
    if header_start + header_len > len(raw):
        raise SequenceFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[header_start: header_start + header_len])
    except json.JSONDecodeError as exc:
        raise SequenceFormatError(f"{path}: bad JSON header: {exc}") from exc
    for key in ("frames", "joints", "channels", "kind", "layout", "dtype"):
        if key not in header:
            raise SequenceFormatError(f"{path}: header missing {key!r}")
    if header["dtype"] != "f32le" or header["layout"] != "frame-major" or header["channels"] != 3:
        raise SequenceFormatError(f"{path}: unsupported encoding {header!r}")
    t, j = int(header["frames"]), int(header["joints"])
    if t < 1:
        raise SequenceFormatError(f"{path}: t >= 1 violated (header frames={t})")
    if j < 1:
        raise SequenceFormatError(f"{path}: header joints={j} invalid")
    payload = raw[header_start + header_len:]
    expected = t * j * 3 * 4
    if len(payload) != expected:
        raise SequenceFormatError(
            f"{path}: payload length mismatch (got {len(payload)} bytes, expected {expected})")
    data = np.frombuffer(payload, dtype="<f4").reshape(t, j, 3)
    if header["kind"] == "2d":
        return PoseSequence2D(data)
    if header["kind"] == "3d":
        return PoseSequence3D(data)
    raise SequenceFormatError(f"{path}: unknown sequence kind {header['kind']!r}")


# ---------------------------------------------------------------------------
# Mask JSON: {"seed": ..., "n_missing": ..., "present": RLE rows}
# Each row is a flat [value, count, value, count, ...] run-length encoding.
# ---------------------------------------------------------------------------

def _rle_encode(row) -> list[int]:
    out = []
    run_val = bool(row[0])
    run_len = 0
    for v in row:
        if bool(v) == run_val:
            run_len += 1
        else:
            out.extend((int(run_val), run_len))
            run_val, run_len = bool(v), 1
    out.extend((int(run_val), run_len))
    return out


def _rle_decode(encoded, width) -> np.ndarray:
    row = np.empty(width, dtype=bool)
    pos = 0
    for val, count in zip(encoded[0::2], encoded[1::2]):
        row[pos: pos + count] = bool(val)
        pos += count
    if pos != width:
        raise SequenceFormatError(f"RLE row decodes to {pos} entries, expected {width}")
    return row


def save_mask(mask: OcclusionMask, path) -> None:
    doc = {
        "seed": int(mask.seed),
        "n_missing": int(mask.n_missing_per_frame),
        "frames": mask.frames,
        "joints": mask.joints,
        "present": [_rle_encode(row) for row in mask.present],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_mask(path) -> OcclusionMask:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("seed", "n_missing", "frames", "joints", "present"):
        if key not in doc:
            raise SequenceFormatError(f"{path}: mask file missing {key!r}")
    rows = doc["present"]
    if len(rows) != doc["frames"]:
        raise SequenceFormatError(f"{path}: mask row count does not match frames")
    present = np.stack([_rle_decode(r, doc["joints"]) for r in rows])
    return OcclusionMask(present=present, seed=doc["seed"],
                         n_missing_per_frame=doc["n_missing"])


@dataclass
class PoseDataset:
    """A collection of paired sequences: noisy 2D detections and 3D ground truth.

    ``x2d`` has shape (n, t, j, 3) and ``y3d`` shape (n, t, j, 3); ``actions``
    carries one label per sequence.
    """

    x2d: np.ndarray
    y3d: np.ndarray
    actions: list[str]
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x2d = np.asarray(self.x2d, dtype=np.float32)
        self.y3d = np.asarray(self.y3d, dtype=np.float32)
        if self.x2d.ndim != 4 or self.y3d.ndim != 4:
            raise ValueError("dataset arrays must have shape (n, t, j, 3)")
        if self.x2d.shape != self.y3d.shape:
            raise ValueError(
                f"2D/3D shape mismatch: {self.x2d.shape} vs {self.y3d.shape}")
        if len(self.actions) != len(self.x2d):
            raise ValueError("need one action label per sequence")
        if not self.ids:
            self.ids = [f"seq{i:04d}" for i in range(len(self.x2d))]

    def __len__(self) -> int:
        return self.x2d.shape[0]

    @property
    def frames(self) -> int:
        return self.x2d.shape[1]

    @property
    def joints(self) -> int:
        return self.x2d.shape[2]
