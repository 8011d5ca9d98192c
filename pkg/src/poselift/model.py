"""The dual-view transformer fusion lifting network and its ablation variants.

Pipeline per view: a spatial transformer stack over the joints of each frame
(multi-view generator), a learned projection of each frame to an embedding of
width M plus a temporal position embedding, temporal self-attention with a
combined-views refinement MLP (self-refinement), then cross-view attention and
a fused-views MLP (information fusion) feeding a per-frame regression head.
The central frame of the regressed sequence is the final 3D estimate.

Variants: SVG (one view, no fusion), DVG (two views averaged, no fusion),
DTF (two views with fusion), TVG (three views with cyclic pairwise fusion).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, concat, layer_norm, no_grad, split
from .core import PoseSequence2D, PoseSequence3D
from .nn import AttentionConfig, mlp_block, multi_head_attention

VARIANT_VIEWS = {"SVG": 1, "DVG": 2, "DTF": 2, "TVG": 3}

# spatial tokens are the raw (x, y, confidence) triples, so the per-frame
# attention over joints runs single-head with 3-wide projections
SPATIAL_DIM = 3

# the regression head works in meter-scale units and the output boundary
# converts to millimeters; regressing mm directly from O(0.1) normalized
# features leaves the input pathway three orders of magnitude too weak at init
OUTPUT_SCALE_MM = 1000.0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "DTF"
    t: int = 27
    j: int = 17
    mvg_layers: int = 4
    srm_layers: int = 2
    ifm_layers: int = 1
    embed_dim: int = 64
    n_heads: int = 8
    mlp_ratio: float = 2.0
    root_index: int = 0

    def __post_init__(self):
        if self.variant not in VARIANT_VIEWS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {sorted(VARIANT_VIEWS)}")
        if self.embed_dim % self.n_heads:
            raise ValueError(
                f"embed_dim={self.embed_dim} not divisible by n_heads={self.n_heads}")
        if self.mvg_layers < 1 or self.srm_layers < 1 or self.ifm_layers < 1:
            raise ValueError("all layer counts must be >= 1")
        if self.t < 1 or self.j < 2:
            raise ValueError("need t >= 1 and j >= 2")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")
        if not 0 <= self.root_index < self.j:
            raise ValueError("root_index out of range")

    @property
    def n_views(self) -> int:
        return VARIANT_VIEWS[self.variant]

    @property
    def has_fusion(self) -> bool:
        return self.variant in ("DTF", "TVG")

    @property
    def central_frame(self) -> int:
        return self.t // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _hidden(width: int, ratio: float) -> int:
    return max(1, int(round(width * ratio)))


def build_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> "DtfModel":
    """Deterministically initialize all parameters for the given config.

    Linear weights are scaled-uniform fan-in draws from a single seeded
    stream (so the same (cfg, seed) is bitwise reproducible); biases and
    position embeddings start at zero, layer norms at identity.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    p: dict[str, Tensor] = {}

    def emb(name, shape):
        p[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ln(name, d):
        for suffix, t in nn.init_layer_norm(d, dtype).items():
            p[f"{name}.{suffix}"] = t

    def att(name, d):
        for suffix, t in nn.init_attention(rng, d, dtype).items():
            p[f"{name}.{suffix}"] = t

    def mlp(name, d_in, d_out):
        for suffix, t in nn.init_mlp(rng, d_in, _hidden(d_in, cfg.mlp_ratio),
                                     d_out, dtype).items():
            p[f"{name}.{suffix}"] = t

    def lin(name, d_in, d_out):
        w, b = nn.init_linear(rng, d_in, d_out, dtype)
        p[f"{name}.w"], p[f"{name}.b"] = w, b

    k_views, m = cfg.n_views, cfg.embed_dim
    for k in range(k_views):
        v = f"v{k}"
        ln(f"{v}.in_ln", SPATIAL_DIM)
        emb(f"{v}.e_sp", (cfg.t, cfg.j, SPATIAL_DIM))
        for l in range(cfg.mvg_layers):
            ln(f"{v}.mvg{l}.ln1", SPATIAL_DIM)
            att(f"{v}.mvg{l}.msa", SPATIAL_DIM)
            ln(f"{v}.mvg{l}.ln2", SPATIAL_DIM)
            mlp(f"{v}.mvg{l}.mlp", SPATIAL_DIM, SPATIAL_DIM)
        ln(f"{v}.out_ln", SPATIAL_DIM)
        lin(f"{v}.t_proj", cfg.j * SPATIAL_DIM, m)
        emb(f"{v}.e_tp", (cfg.t, m))
    for l in range(cfg.srm_layers):
        for k in range(k_views):
            ln(f"v{k}.srm{l}.ln", m)
            att(f"v{k}.srm{l}.msa", m)
        ln(f"srm{l}.cvr.ln", k_views * m)
        mlp(f"srm{l}.cvr.mlp", k_views * m, k_views * m)
    if cfg.has_fusion:
        for l in range(cfg.ifm_layers):
            for k in range(k_views):
                ln(f"v{k}.ifm{l}.ln", m)
                att(f"v{k}.ifm{l}.mca", m)
        ln("fvr.ln", k_views * m)
        mlp("fvr.mlp", k_views * m, m)
    lin("head", m, cfg.j * SPATIAL_DIM)
    return DtfModel(cfg, seed, p)


class DtfModel:
    """Parameter store plus the forward pass for one architecture variant."""

    def __init__(self, cfg: ModelConfig, seed: int, params: dict[str, Tensor]):
        self.cfg = cfg
        self.seed = seed
        self.params = params
        self._spatial_att = AttentionConfig(1, SPATIAL_DIM)
        self._temporal_att = AttentionConfig(cfg.n_heads, cfg.embed_dim)

    # -- parameter access ----------------------------------------------------

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _att_params(self, prefix: str) -> dict:
        return {s: self._p(f"{prefix}.{s}")
                for s in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}

    def _mlp_params(self, prefix: str) -> dict:
        return {s: self._p(f"{prefix}.{s}") for s in ("w1", "b1", "w2", "b2")}

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return layer_norm(x, self._p(f"{prefix}.g"), self._p(f"{prefix}.b"))

    # -- forward pieces --------------------------------------------------------

    def mvg_forward(self, x: Tensor, view: int) -> Tensor:
        """Spatial stack of one view: (B, t, j, 3) -> (B, t, j, 3).

        Initial layer norm plus the view's spatial embedding, then mvg_layers
        pre-norm attention/MLP residual blocks attending over the joint axis
        within each frame, closed by an outer residual from the raw input.
        """
        v = f"v{view}"
        h = self._ln(x, f"{v}.in_ln") + self._p(f"{v}.e_sp")
        for l in range(self.cfg.mvg_layers):
            lp = f"{v}.mvg{l}"
            normed = self._ln(h, f"{lp}.ln1")
            h = h + multi_head_attention(normed, normed,
                                         self._att_params(f"{lp}.msa"),
                                         self._spatial_att)
            h = h + mlp_block(self._ln(h, f"{lp}.ln2"),
                              self._mlp_params(f"{lp}.mlp"))
        return x + self._ln(h, f"{v}.out_ln")

    def embed_view(self, spatial: Tensor, view: int) -> Tensor:
        """Flatten each frame's joints and project to the embedding width,
        then add the view's temporal position embedding: -> (B, t, M)."""
        lead = spatial.shape[:-2]
        flat = spatial.reshape((*lead, self.cfg.j * SPATIAL_DIM))
        v = f"v{view}"
        y = nn.linear(flat, self._p(f"{v}.t_proj.w"), self._p(f"{v}.t_proj.b"))
        return y + self._p(f"{v}.e_tp")

    def srm_forward(self, views: list[Tensor]) -> list[Tensor]:
        """Per-view temporal self-attention followed by the combined-views
        refinement: concatenate all views, apply one pre-norm residual MLP
        over the joint feature axis, split back."""
        if len(views) != self.cfg.n_views:
            raise ValueError(f"expected {self.cfg.n_views} views, got {len(views)}")
        for l in range(self.cfg.srm_layers):
            refined = []
            for k, y in enumerate(views):
                lp = f"v{k}.srm{l}"
                normed = self._ln(y, f"{lp}.ln")
                refined.append(y + multi_head_attention(
                    normed, normed, self._att_params(f"{lp}.msa"),
                    self._temporal_att))
            if len(refined) == 1:
                cat = refined[0]
            else:
                cat = concat(refined, axis=-1)
            cat = cat + mlp_block(self._ln(cat, f"srm{l}.cvr.ln"),
                                  self._mlp_params(f"srm{l}.cvr.mlp"))
            views = split(cat, self.cfg.n_views, axis=-1) \
                if self.cfg.n_views > 1 else [cat]
        return views

    def ifm_forward(self, views: list[Tensor]) -> Tensor:
        """Cross-view attention between views (each view queries its cyclic
        neighbor, all in parallel) and the fused-views MLP down to one (B, t, M)
        stream. Only the fusion variants carry these parameters."""
        if not self.cfg.has_fusion:
            raise ValueError(f"variant {self.cfg.variant} has no information fusion")
        if len(views) != self.cfg.n_views:
            raise ValueError(f"expected {self.cfg.n_views} views, got {len(views)}")
        kv = self.cfg.n_views
        for l in range(self.cfg.ifm_layers):
            normed = [self._ln(views[k], f"v{k}.ifm{l}.ln") for k in range(kv)]
            views = [views[k] + multi_head_attention(
                normed[k], normed[(k + 1) % kv],
                self._att_params(f"v{k}.ifm{l}.mca"), self._temporal_att)
                for k in range(kv)]
        cat = concat(views, axis=-1)
        return mlp_block(self._ln(cat, "fvr.ln"), self._mlp_params("fvr.mlp"))

    def forward(self, x) -> Tensor:
        """Full pass: (B, t, j, 3) guided 2D input to a root-relative
        (B, t, j, 3) 3D sequence in millimeters."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self._param_dtype()))
        if x.shape[-3:] != (self.cfg.t, self.cfg.j, 3):
            raise ValueError(
                f"input shape {x.shape} does not match model "
                f"(t={self.cfg.t}, j={self.cfg.j}, 3)")
        views = []
        for k in range(self.cfg.n_views):
            spatial = self.mvg_forward(x, k)
            views.append(self.embed_view(spatial, k))
        views = self.srm_forward(views)
        if self.cfg.has_fusion:
            fused = self.ifm_forward(views)
        elif self.cfg.variant == "DVG":
            fused = (views[0] + views[1]) * 0.5
        else:
            fused = views[0]
        out = nn.linear(fused, self._p("head.w"), self._p("head.b")) * OUTPUT_SCALE_MM
        out = out.reshape((*out.shape[:-1], self.cfg.j, SPATIAL_DIM))
        ri = self.cfg.root_index
        root = out[..., ri:ri + 1, :]
        return out - root

    def _param_dtype(self):
        return next(iter(self.params.values())).data.dtype

    def predict_batch(self, x: np.ndarray, info=None) -> np.ndarray:
        """Central-frame poses for a batch of windows: (B, t, j, 3) -> (B, j, 3)."""
        with no_grad():
            out = self.forward(np.asarray(x, dtype=np.float32))
        return np.array(out.data[:, self.cfg.central_frame])


def model_forward(seq: PoseSequence2D, model: DtfModel):
    """Lift one guided 2D sequence: returns the full root-relative 3D sequence
    and the central-frame pose that serves as the final estimate."""
    if (seq.frames, seq.joints) != (model.cfg.t, model.cfg.j):
        raise ValueError(
            f"sequence ({seq.frames}, {seq.joints}) does not match model "
            f"(t={model.cfg.t}, j={model.cfg.j})")
    with no_grad():
        out = model.forward(seq.data[np.newaxis])
    seq3d = np.array(out.data[0])
    return PoseSequence3D(seq3d), seq3d[model.cfg.central_frame].copy()
