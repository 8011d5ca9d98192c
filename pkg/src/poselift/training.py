"""Training loop: mean per-joint position error loss, AMSGrad updates,
occlusion regimes, and bitwise-resumable checkpoints.

Occlusion regimes during training:
  NOG - inject occlusion and leave missing joints as zeros (no guidance);
  OGV - train on clean sequences, guidance is applied only at evaluation;
  OAT - inject fresh occlusion each step and guide the batch before lifting.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import occlusion as occ
from .autodiff import Tensor
from .core import PoseDataset, SequenceFormatError
from .model import DtfModel, ModelConfig, build_model
from .occlusion import GuidanceConfig

CKPT_MAGIC = b"DTFCKv01"

# keeps the distance gradient defined at coincident joints while staying below
# the loss-zero tolerance: sqrt(eps) = 1e-8
_DIST_EPS = 1e-16

OCCLUSION_MODES = ("NOG", "OGV", "OAT")


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 0.98
    seed: int = 0
    occlusion_mode: str = "OAT"
    n_missing_per_frame: int = 0
    guidance: GuidanceConfig = GuidanceConfig()
    central_frame_loss: bool = True
    eval_every: int = 0
    eval_seed: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.occlusion_mode not in OCCLUSION_MODES:
            raise ValueError(
                f"occlusion_mode must be one of {OCCLUSION_MODES}, got {self.occlusion_mode!r}")
        if self.n_missing_per_frame < 0:
            raise ValueError("n_missing_per_frame must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


def mpjpe_loss(pred: Tensor, gt) -> Tensor:
    """Mean Euclidean distance between predicted and ground-truth joints.

    Accepts (..., j, 3) tensors; the distance is smoothed as
    sqrt(d^2 + 1e-16) so the gradient stays finite at d = 0.
    """
    gt_data = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=pred.data.dtype)
    if pred.shape != gt_data.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt_data.shape}")
    diff = pred - Tensor(gt_data)
    dist = ad.sqrt((diff * diff).sum(axis=-1) + _DIST_EPS)
    return dist.mean()


# -- AMSGrad ---------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    v_max: dict[str, np.ndarray]
    step: int = 0


def init_optimizer_state(params: dict[str, Tensor]) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
        v_max={k: np.zeros_like(p.data) for k, p in params.items()},
    )


def amsgrad_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                 state: OptimizerState, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> OptimizerState:
    """One AMSGrad update in place: exponential moment estimates with a
    running elementwise maximum of the second moment in the denominator and
    a bias-corrected first moment in the numerator."""
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m, v, vm = state.m[name], state.v[name], state.v_max[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        np.maximum(vm, v, out=vm)
        p.data -= lr * (m / bias1) / (np.sqrt(vm) + eps)
    return state


# -- batch assembly -----------------------------------------------------------

def _step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, stream]))


def make_batch(dataset: PoseDataset, cfg: TrainConfig, step: int):
    """Deterministic batch for one step: sampled indices plus the regime's
    occlusion treatment. Returns (inputs, targets) as float32 arrays."""
    n = len(dataset)
    rng = _step_rng(cfg.seed, step, 0)
    if cfg.batch_size <= n:
        idx = rng.choice(n, size=cfg.batch_size, replace=False)
    else:
        idx = rng.choice(n, size=cfg.batch_size, replace=True)
    x = np.array(dataset.x2d[idx])
    y = np.array(dataset.y3d[idx])
    if cfg.occlusion_mode in ("NOG", "OAT") and cfg.n_missing_per_frame > 0:
        for b in range(x.shape[0]):
            item_rng = _step_rng(cfg.seed, step, 1000 + b)
            x[b], present = occ.inject_array(x[b], cfg.n_missing_per_frame, item_rng)
            if cfg.occlusion_mode == "OAT":
                x[b] = occ.guide_array(x[b], present, cfg.guidance)
    return x, y


def train(model: DtfModel, dataset: PoseDataset, cfg: TrainConfig,
          state: OptimizerState | None = None, start_step: int = 0,
          eval_dataset: PoseDataset | None = None, eval_fn=None,
          log_file=None):
    """Run the training loop; fully determined by (model, dataset, cfg).

    Emits one log record per step ({"step", "loss", "lr"}) and, when an
    evaluation hook is configured, periodic records with evaluation metrics.
    Returns (model, state, logs). Resuming from a checkpointed (state,
    start_step) reproduces the uninterrupted run bitwise.
    """
    if dataset.frames != model.cfg.t or dataset.joints != model.cfg.j:
        raise ValueError(
            f"dataset ({dataset.frames}, {dataset.joints}) does not match model "
            f"(t={model.cfg.t}, j={model.cfg.j})")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if state is None:
        state = init_optimizer_state(model.params)
    steps_per_epoch = max(1, math.ceil(len(dataset) / cfg.batch_size))
    central = model.cfg.central_frame
    logs = []

    for step in range(start_step, cfg.steps):
        x, y = make_batch(dataset, cfg, step)
        pred = model.forward(x)
        if cfg.central_frame_loss:
            loss = mpjpe_loss(pred[:, central], y[:, central])
        else:
            loss = mpjpe_loss(pred, y)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise RuntimeError(
                f"non-finite loss {loss_val} at step {step} "
                f"(lr={cfg.learning_rate}, mode={cfg.occlusion_mode}); aborting")
        model.zero_grad()
        loss.backward()
        lr = cfg.learning_rate * cfg.lr_decay ** (step // steps_per_epoch)
        grads = {k: p.grad for k, p in model.params.items()}
        amsgrad_step(model.params, grads, state, lr)
        record = {"step": step, "loss": loss_val, "lr": lr}
        if (cfg.eval_every > 0 and eval_fn is not None
                and (step + 1) % cfg.eval_every == 0):
            record.update(eval_fn(model, step))
        logs.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
    return model, state, logs


# -- checkpoints -----------------------------------------------------------
#
# file = 8-byte magic | 4-byte little-endian header length | JSON header
#      | little-endian float32 payload
# The header carries the model config, seed, step, and a manifest of
# (name, shape, byte offset) entries for every parameter and optimizer slot.
# ---------------------------------------------------------------------------

def save_checkpoint(model: DtfModel, state: OptimizerState | None, path,
                    step: int = 0) -> None:
    arrays: list[tuple[str, np.ndarray]] = [
        (name, p.data) for name, p in model.params.items()]
    if state is not None:
        for slot, table in (("m", state.m), ("v", state.v), ("vmax", state.v_max)):
            arrays.extend((f"opt.{slot}.{name}", arr) for name, arr in table.items())
    manifest = []
    offset = 0
    blobs = []
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": 1,
        "config": model.cfg.to_dict(),
        "seed": model.seed,
        "step": step,
        "opt_step": state.step if state is not None else None,
        "manifest": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Rebuild (model, state, step) from a checkpoint file.

    The model is reconstructed from the stored config and every parameter is
    restored bit-exactly; a manifest entry whose shape or offset does not fit
    the payload is rejected.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise SequenceFormatError(
            f"{path}: checkpoint version mismatch (magic {raw[:8]!r})")
    (header_len,) = struct.unpack_from("<I", raw, len(CKPT_MAGIC))
    start = len(CKPT_MAGIC) + 4
    try:
        header = json.loads(raw[start: start + header_len])
    except json.JSONDecodeError as exc:
        raise SequenceFormatError(f"{path}: corrupt checkpoint header: {exc}") from exc
    if header.get("version") != 1:
        raise SequenceFormatError(
            f"{path}: checkpoint version mismatch ({header.get('version')!r})")
    payload = raw[start + header_len:]
    cfg = ModelConfig.from_dict(header["config"])
    model = build_model(cfg, header["seed"])
    entries = {e["name"]: e for e in header["manifest"]}

    def read_array(name, like):
        entry = entries.get(name)
        if entry is None:
            raise SequenceFormatError(f"{path}: manifest missing {name!r}")
        shape = tuple(entry["shape"])
        if shape != like.shape:
            raise SequenceFormatError(
                f"{path}: manifest shape {shape} for {name!r} does not match "
                f"model shape {like.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        off = entry["offset"]
        if off < 0 or off + nbytes > len(payload):
            raise SequenceFormatError(
                f"{path}: manifest offset overflow for {name!r} "
                f"(offset {off} + {nbytes} bytes > payload {len(payload)})")
        return np.frombuffer(payload, dtype="<f4", count=max(1, nbytes // 4),
                             offset=off).reshape(shape).copy()

    for name, p in model.params.items():
        p.data = read_array(name, p.data)
    state = None
    if header.get("opt_step") is not None:
        state = OptimizerState(m={}, v={}, v_max={}, step=header["opt_step"])
        for name, p in model.params.items():
            state.m[name] = read_array(f"opt.m.{name}", p.data)
            state.v[name] = read_array(f"opt.v.{name}", p.data)
            state.v_max[name] = read_array(f"opt.vmax.{name}", p.data)
    return model, state, header["step"]
