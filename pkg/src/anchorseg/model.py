"""Full model assembly: reasoner + grounding + decoder, and checkpoints.

The decoder consumes visual features from a small trainable conv encoder
(stand-in for a pretrained vision backbone); the prior from the anchor
query is added on top when enabled. One forward pass per (tokens, symbols,
image) triple returns mask logits plus the response vector both
cycle-consistency terms supervise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import decoder as D
from . import grounding as Gr
from . import querybank as Q
from . import tensor as T
from .config import RunConfig
from .errors import ContractError
from .optim import Parameter
from .scenes import VOCAB_SIZE

MAGIC_CKPT = b"ASGC"
CKPT_VERSION = 1
META_NAME = "meta.dims"

_META_FIELDS = ("h", "w", "c", "G", "d_lm", "d", "C", "H", "W", "L_vl", "L_sam",
                "N_bank", "T_anchors")


@dataclass
class VisEncoderParams:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    strides: tuple[int, int]


@dataclass
class ModelParams:
    reasoner: Q.ToyReasonerParams
    positional: Q.PositionalTable
    conv_head: Gr.ConvHeadParams
    vis: VisEncoderParams
    decoder: D.DecoderParams
    fusion: Optional[Gr.FusionParams]

    def named_parameters(self) -> list[Parameter]:
        """Everything serialized into checkpoints, frozen encoder included."""
        r = self.reasoner
        params = [r.embed, r.init_w, r.init_b, r.anchor_w, r.anchor_b,
                  r.phi_w1, r.phi_b1, r.phi_w2, r.phi_b2]
        params += r.step_ws + r.step_bs
        params.append(self.positional.rows)
        params += self.conv_head.weights + self.conv_head.biases
        params += [self.vis.w1, self.vis.b1, self.vis.w2, self.vis.b2]
        dec = self.decoder
        params += [dec.query_w, dec.query_b, dec.out_w, dec.out_b]
        for blk in dec.blocks:
            for attn in (blk.q2p, blk.p2q):
                params += [attn.wq, attn.wk, attn.wv]
            params += [blk.ffn_w1, blk.ffn_b1, blk.ffn_w2, blk.ffn_b2]
        if self.fusion is not None:
            params += [self.fusion.weight, self.fusion.bias]
        return params

    def trainable_parameters(self) -> list[Parameter]:
        """The visual encoder stays frozen (stand-in for a pretrained
        backbone), so localization pressure falls on the query pathway."""
        frozen = {id(self.vis.w1), id(self.vis.b1), id(self.vis.w2), id(self.vis.b2)}
        return [p for p in self.named_parameters() if id(p) not in frozen]


VIS_HIDDEN = 8


def init_model(cfg: RunConfig, seed: int, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    reasoner = Q.init_reasoner(rng, VOCAB_SIZE, cfg.d_lm, cfg.d, cfg.K, dtype)
    positional = Q.PositionalTable.zeros(cfg.N_bank, cfg.d, dtype)
    head = Gr.init_conv_head(rng, cfg.C, cfg.conv_strides, dtype)
    v1, v2 = cfg.vis_strides
    vis = VisEncoderParams(
        w1=Parameter(rng.normal(0, 1 / np.sqrt(cfg.c * 9),
                                size=(VIS_HIDDEN, cfg.c, 3, 3)), "vis.w1", dtype),
        b1=Parameter(np.zeros(VIS_HIDDEN), "vis.b1", dtype),
        w2=Parameter(rng.normal(0, 1 / np.sqrt(VIS_HIDDEN * 9),
                                size=(cfg.C, VIS_HIDDEN, 3, 3)), "vis.w2", dtype),
        b2=Parameter(np.zeros(cfg.C), "vis.b2", dtype),
        strides=(v1, v2),
    )
    dec = D.init_decoder(rng, cfg.d, cfg.C, dtype)
    fusion = (Gr.FusionParams.identity(cfg.C, cfg.T_anchors, dtype)
              if cfg.T_anchors > 1 else None)
    return ModelParams(reasoner, positional, head, vis, dec, fusion)


def encode_features(image: np.ndarray, vis: VisEncoderParams) -> T.Tensor:
    """Image [h,w,c] -> decoder features [C,H,W] via two strided convs."""
    x = T.Tensor(np.ascontiguousarray(image.transpose(2, 0, 1)))
    x = T.relu(T.conv2d(x, vis.w1.tensor, vis.b1.tensor, stride=vis.strides[0]))
    return T.conv2d(x, vis.w2.tensor, vis.b2.tensor, stride=vis.strides[1])


@dataclass
class ForwardOut:
    logits: T.Tensor          # [h, w] pre-sigmoid
    s_raw: T.Tensor           # [N] raw anchor responses
    s_norm: T.Tensor          # [N] min-max normalized responses
    bank: Q.QueryBank


def forward_sample(params: ModelParams, cfg: RunConfig, tokens: np.ndarray,
                   symbols: Sequence[int], image: np.ndarray) -> ForwardOut:
    tok = T.Tensor(tokens)
    hiddens, h_anc = Q.generate_query_bank(tok, symbols, params.reasoner)
    bank = Q.make_query_bank(hiddens, h_anc, params.reasoner)
    tok_proj = Q.project_phi_rows(tok, params.reasoner)
    s_raw = Gr.spatial_responses(tok_proj, bank.anchor)
    s_norm = T.minmax_normalize(s_raw)

    feats = encode_features(image, params.vis)
    if cfg.use_prior:
        prior = Gr.build_spatial_prior(s_raw, cfg.h, cfg.w, cfg.L_vl, cfg.L_sam,
                                       params.conv_head)
        if params.fusion is not None:
            prior = Gr.fuse_multi_anchor([prior] * cfg.T_anchors, params.fusion)
        feats = Gr.inject_prior(feats, prior)

    if cfg.use_contextual:
        queries = Q.add_positional(bank, params.positional)
    else:
        queries = Q.anchor_only_queries(bank, params.positional)
    logits = D.decode_conditioned(feats, queries, (cfg.h, cfg.w), params.decoder)
    return ForwardOut(logits=logits, s_raw=s_raw, s_norm=s_norm, bank=bank)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

def _meta_vector(cfg: RunConfig) -> np.ndarray:
    vals = [getattr(cfg, name) for name in _META_FIELDS]
    vals += list(cfg.conv_strides) + list(cfg.vis_strides) + [cfg.seed]
    return np.asarray(vals, dtype=np.float32)


def config_from_meta(vec: np.ndarray) -> RunConfig:
    cfg = RunConfig()
    for name, v in zip(_META_FIELDS, vec):
        setattr(cfg, name, int(round(float(v))))
    base = len(_META_FIELDS)
    cfg.conv_strides = tuple(int(round(float(v))) for v in vec[base:base + 3])
    cfg.vis_strides = tuple(int(round(float(v))) for v in vec[base + 3:base + 5])
    cfg.seed = int(round(float(vec[base + 5])))
    return cfg


def save_checkpoint(path, params: ModelParams, cfg: RunConfig):
    entries = [(META_NAME, _meta_vector(cfg))]
    entries += [(p.name, p.data) for p in params.named_parameters()]
    with open(path, "wb") as f:
        f.write(MAGIC_CKPT)
        f.write(struct.pack("<I", CKPT_VERSION))
        for name, arr in entries:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint_arrays(path) -> dict[str, np.ndarray]:
    arrays = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC_CKPT:
            raise ContractError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        while True:
            raw = f.read(4)
            if not raw:
                break
            (nlen,) = struct.unpack("<I", raw)
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            arrays[name] = data.copy()
    return arrays


def load_checkpoint(path) -> tuple[ModelParams, RunConfig]:
    arrays = read_checkpoint_arrays(path)
    if META_NAME not in arrays:
        raise ContractError(f"checkpoint is missing the {META_NAME} record")
    cfg = config_from_meta(arrays.pop(META_NAME))
    params = init_model(cfg, seed=0)
    byname = {p.name: p for p in params.named_parameters()}
    missing = set(byname) - set(arrays)
    extra = set(arrays) - set(byname)
    if missing or extra:
        raise ContractError(
            f"checkpoint/model mismatch: missing {sorted(missing)[:3]}, "
            f"extra {sorted(extra)[:3]}")
    for name, arr in arrays.items():
        p = byname[name]
        if p.data.shape != arr.shape:
            raise ContractError(
                f"parameter {name}: checkpoint shape {arr.shape} vs {p.data.shape}")
        p.tensor.data = arr.astype(p.data.dtype)
    return params, cfg
