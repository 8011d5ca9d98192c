"""Command line interface: synth | occlude | guide | train | eval | gradcheck | compare.

Every subcommand takes explicit seeds; there are no hidden entropy sources.
Heavy imports happen inside the handlers so the thread cap from
POSELIFT_THREADS can be applied before numpy loads its BLAS.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

MODEL_SEED_DEFAULT = 11


def _cap_threads():
    cap = os.environ.get("POSELIFT_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


# -- run configuration ---------------------------------------------------------

RUN_CONFIG_VERSION = "1"
_TOP_KEYS = {"version", "model", "train", "data_dir", "out_dir", "model_seed"}
_TRAIN_KEYS = {"steps", "batch_size", "learning_rate", "lr_decay", "seed",
               "occlusion_mode", "n_missing_per_frame", "guidance",
               "central_frame_loss", "eval_every", "eval_seed"}
_GUIDE_KEYS = {"f_past", "f_future", "fallback"}


def parse_run_config(doc: dict):
    """Validate and split a run config: unknown keys are rejected and the
    schema version string is required."""
    from .model import ModelConfig
    from .occlusion import GuidanceConfig
    from .training import TrainConfig

    if "version" not in doc:
        raise ValueError("run config must carry a 'version' string")
    if str(doc["version"]) != RUN_CONFIG_VERSION:
        raise ValueError(
            f"unsupported run config version {doc['version']!r} "
            f"(expected {RUN_CONFIG_VERSION!r})")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ValueError(f"unknown run config keys: {sorted(unknown)}")
    for key in ("model", "train", "data_dir", "out_dir"):
        if key not in doc:
            raise ValueError(f"run config missing {key!r}")
    model_cfg = ModelConfig.from_dict(doc["model"])
    train_doc = dict(doc["train"])
    unknown = set(train_doc) - _TRAIN_KEYS
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    guide_doc = dict(train_doc.pop("guidance", {}))
    unknown = set(guide_doc) - _GUIDE_KEYS
    if unknown:
        raise ValueError(f"unknown guidance config keys: {sorted(unknown)}")
    train_cfg = TrainConfig(guidance=GuidanceConfig(**guide_doc), **train_doc)
    return (model_cfg, train_cfg, doc["data_dir"], doc["out_dir"],
            int(doc.get("model_seed", MODEL_SEED_DEFAULT)))


# -- handlers -----------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import make_dataset

    actions = [a for a in args.actions.split(",") if a]
    manifest = make_dataset(args.n, actions, args.frames, args.out, args.seed,
                            train_fraction=args.train_fraction,
                            test_frames=args.test_frames,
                            noise_sigma=args.noise)
    n_train = sum(1 for r in manifest["sequences"] if r["split"] == "train")
    print(f"wrote {len(manifest['sequences'])} sequences "
          f"({n_train} train) to {args.out}")
    return 0


def cmd_occlude(args) -> int:
    from .core import PoseSequence2D, load_sequence, save_mask, save_sequence
    from .occlusion import inject_occlusion

    seq = load_sequence(args.input)
    if not isinstance(seq, PoseSequence2D):
        raise ValueError(f"{args.input} is not a 2D sequence")
    occluded, mask = inject_occlusion(seq, args.n_missing, args.seed)
    save_sequence(occluded, args.output)
    save_mask(mask, args.mask)
    print(f"occluded {args.n_missing}/{seq.joints} joints per frame -> {args.output}")
    return 0


def cmd_guide(args) -> int:
    from .core import PoseSequence2D, load_mask, load_sequence, save_sequence
    from .occlusion import Fallback, GuidanceConfig, guide_sequence

    seq = load_sequence(args.input)
    if not isinstance(seq, PoseSequence2D):
        raise ValueError(f"{args.input} is not a 2D sequence")
    mask = load_mask(args.mask)
    fallback = (Fallback.WHOLE_SEQUENCE_SEARCH if args.fallback == "whole"
                else Fallback.ZERO_FILL)
    cfg = GuidanceConfig(f_past=args.fp, f_future=args.ff, fallback=fallback)
    guided = guide_sequence(seq, mask, cfg)
    save_sequence(guided, args.output)
    print(f"guided {args.input} -> {args.output}")
    return 0


def cmd_train(args) -> int:
    from pathlib import Path

    from . import metrics
    from .model import build_model
    from .synth import load_dataset
    from .training import TrainConfig, save_checkpoint, train

    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    model_cfg, train_cfg, data_dir, out_dir, model_seed = parse_run_config(doc)
    dataset = load_dataset(data_dir, "train")
    try:
        eval_dataset = load_dataset(data_dir, "test")
    except ValueError:
        eval_dataset = None
    model = build_model(model_cfg, model_seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    eval_fn = None
    if eval_dataset is not None and train_cfg.eval_every > 0:
        def eval_fn(m, step):
            report = metrics.evaluate(
                m.predict_batch, eval_dataset, window=model_cfg.t,
                n_missing=train_cfg.n_missing_per_frame,
                seed=train_cfg.eval_seed, guidance=train_cfg.guidance,
                zero_fill_inputs=(train_cfg.occlusion_mode == "NOG"))
            return {"eval_mpjpe_p1": report.aggregate["mpjpe_p1"],
                    "eval_mpjpe_p2": report.aggregate["mpjpe_p2"]}

    with open(out / "metrics.ndjson", "w", encoding="utf-8") as log:
        model, state, logs = train(model, dataset, train_cfg,
                                   eval_fn=eval_fn, log_file=log)
    ckpt = out / "checkpoint.bin"
    save_checkpoint(model, state, ckpt, step=train_cfg.steps)
    print(f"trained {train_cfg.steps} steps; final loss "
          f"{logs[-1]['loss']:.3f}; checkpoint -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    from . import metrics
    from .occlusion import GuidanceConfig
    from .synth import load_dataset
    from .training import load_checkpoint

    model, _, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, args.split)
    guidance = GuidanceConfig(f_past=args.fp, f_future=args.ff)
    report = metrics.evaluate(model.predict_batch, dataset,
                              window=model.cfg.t, n_missing=args.n_missing,
                              seed=args.seed, guidance=guidance,
                              zero_fill_inputs=args.zero_fill,
                              model_id=str(args.checkpoint))
    doc = report.to_dict()
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    agg = report.aggregate
    print(f"P1 {agg['mpjpe_p1']:.2f} mm  P2 {agg['mpjpe_p2']:.2f} mm  "
          f"PCK {agg['pck']:.2f}  AUC {agg['auc']:.2f}  -> {args.out}")
    return 0


def gradcheck_suite():
    """Finite-difference checks for every differentiable primitive plus the
    full tiny fusion model; returns [(name, max_rel_err, tol, ok), ...]."""
    import numpy as np

    from .autodiff import Tensor, gelu, layer_norm
    from .model import ModelConfig, build_model
    from .nn import (AttentionConfig, gradient_check, init_attention,
                     init_mlp, mlp_block, multi_head_attention, sdp_attention)
    from .training import mpjpe_loss

    rows = []

    def run(name, f, params, tol=1e-4):
        report = gradient_check(f, params, step=1e-5, tol=tol)
        rows.append((name, report.max_rel_err, tol, report.ok))

    rng = np.random.default_rng(4242)
    for rep in range(5):
        n = int(rng.integers(2, 6))
        d = int(rng.integers(2, 5)) * 2
        probe = rng.normal(size=(n, d))

        x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        g = Tensor(rng.normal(size=d) + 1.0, requires_grad=True)
        b = Tensor(rng.normal(size=d), requires_grad=True)
        run(f"layer_norm[{rep}]",
            lambda x=x, g=g, b=b, p=probe: (layer_norm(x, g, b) * Tensor(p)).sum(),
            {"x": x, "g": g, "b": b})

        x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        run(f"gelu[{rep}]", lambda x=x, p=probe: (gelu(x) * Tensor(p)).sum(),
            {"x": x})

        q = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        k = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        v = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        run(f"sdp_attention[{rep}]",
            lambda q=q, k=k, v=v, d=d, p=probe: (sdp_attention(q, k, v, d) * Tensor(p)).sum(),
            {"q": q, "k": k, "v": v})

        x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        att = init_attention(rng, d, np.float64)
        cfg = AttentionConfig(2, d)
        run(f"multi_head_attention[{rep}]",
            lambda x=x, att=att, cfg=cfg, p=probe:
                (multi_head_attention(x, x, att, cfg) * Tensor(p)).sum(),
            {"x": x, **att})

        x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        mlp = init_mlp(rng, d, 2 * d, d, np.float64)
        run(f"mlp_block[{rep}]",
            lambda x=x, mlp=mlp, p=probe: (mlp_block(x, mlp) * Tensor(p)).sum(),
            {"x": x, **mlp})

    cfg = ModelConfig(variant="DTF", t=9, j=5, embed_dim=8, n_heads=2,
                      mvg_layers=4, srm_layers=2, ifm_layers=1)
    model = build_model(cfg, seed=35, dtype=np.float64)
    x = rng.uniform(-1, 1, size=(1, cfg.t, cfg.j, 3))
    gt = rng.normal(size=(1, cfg.j, 3))
    gt[:, cfg.root_index] = 0.0

    def end_to_end():
        pred = model.forward(Tensor(x))
        return mpjpe_loss(pred[:, cfg.central_frame], gt)

    run("dtf_end_to_end", end_to_end, model.params, tol=1e-3)
    return rows


def cmd_gradcheck(args) -> int:
    rows = gradcheck_suite()
    width = max(len(name) for name, *_ in rows)
    print(f"{'primitive':<{width}}  {'max rel err':>12}  {'tol':>8}  status")
    for name, err, tol, ok in rows:
        print(f"{name:<{width}}  {err:>12.3e}  {tol:>8.0e}  {'PASS' if ok else 'FAIL'}")
    return 0 if all(ok for *_, ok in rows) else 1


def cmd_compare(args) -> int:
    import csv

    from . import metrics
    from .occlusion import GuidanceConfig
    from .synth import load_dataset
    from .training import load_checkpoint

    model, _, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, args.split)
    missing = [int(v) for v in args.n_missing.split(",") if v]
    seeds = [int(v) for v in args.seeds.split(",") if v]
    if len(seeds) == 1:
        seeds = seeds * len(missing)
    if len(seeds) != len(missing):
        raise ValueError("need one seed or one seed per n-missing setting")
    guidance = GuidanceConfig(f_past=args.fp, f_future=args.ff)
    rows = []
    for n, seed in zip(missing, seeds):
        for mode, zero in (("nog", True), ("guided", False)):
            report = metrics.evaluate(model.predict_batch, dataset,
                                      window=model.cfg.t, n_missing=n,
                                      seed=seed, guidance=guidance,
                                      zero_fill_inputs=zero)
            rows.append({"n_missing": n, "mode": mode, "seed": seed,
                         **{k: report.aggregate[k] for k in metrics.METRIC_KEYS}})
            print(f"n_missing={n:2d} mode={mode:6s} "
                  f"P1={report.aggregate['mpjpe_p1']:8.2f} "
                  f"P2={report.aggregate['mpjpe_p2']:8.2f}")
    with open(f"{args.out}.json", "w", encoding="utf-8") as fh:
        json.dump({"checkpoint": str(args.checkpoint), "rows": rows}, fh, indent=1)
    with open(f"{args.out}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.out}.json and {args.out}.csv")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poselift",
        description="occlusion-aware 2D-to-3D pose lifting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--actions", default="walk,sit")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--test-frames", type=int, default=None)
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("occlude", help="inject per-frame random occlusion")
    p.add_argument("--n-missing", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("mask")
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("guide", help="fill missing joints with confidence")
    p.add_argument("--fp", type=int, default=3)
    p.add_argument("--ff", type=int, default=3)
    p.add_argument("--fallback", choices=("whole", "zero"), default="whole")
    p.add_argument("input")
    p.add_argument("mask")
    p.add_argument("output")
    p.set_defaults(func=cmd_guide)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--n-missing", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fp", type=int, default=3)
    p.add_argument("--ff", type=int, default=3)
    p.add_argument("--zero-fill", action="store_true",
                   help="zero-filled baseline inputs instead of guidance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare",
                       help="zero-fill vs guided inputs across a missing-joint sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--n-missing", default="4,6,8,10,12,14,16")
    p.add_argument("--seeds", default="0")
    p.add_argument("--fp", type=int, default=3)
    p.add_argument("--ff", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as exit code 1 with a clean message
        print(f"poselift: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    _cap_threads()
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
