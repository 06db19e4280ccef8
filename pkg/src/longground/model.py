"""The grounding network: anchor encoding, scoring, re-ranking and boundary
regression, for both batched training and per-query inference."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses
from .anchors import AnchorGrid, iou_matrix, partition_base
from .config import RunConfig
from .encoder import (
    SwinConfig,
    encode_multiscale,
    init_intra_anchor,
    init_swin_block,
    intra_anchor_msa,
)
from .errors import DataError, DimensionError
from .numerics import Tensor, ops
from .params import ParamStore, add_linear
from .ranking import content_scores, context_scores, rank_order, select_topm
from .regression import Prediction, adjust_bounds_array, attentive_pool, init_regressor, predict_bias


@dataclass
class Encoded:
    """Query-independent encoding of one video."""

    grid: AnchorGrid
    anchors: Tensor                 # (A, D) context features over all scales
    frames: np.ndarray              # raw (N, D) features in model precision


@dataclass
class Content:
    """Intra-anchor features for a set of anchors, grouped by scale."""

    ids: np.ndarray                 # global anchor indices, ascending
    vhat: list[Tensor]              # per scale (B_l, C_l, D)
    valid: list[np.ndarray]         # per scale (B_l, C_l)
    groups: list[np.ndarray]        # per scale, positions into ``ids``

    def pooled(self, w: Tensor) -> Tensor:
        # ids are ascending and global indices are scale-major, so concatenating
        # the per-scale blocks keeps the order of ``ids``
        return ops.concat([attentive_pool(v, w, fv) for v, fv in zip(self.vhat, self.valid)], axis=0)

    def scores(self, q: Tensor) -> Tensor:
        """Content scores ``(Q, len(ids))``."""
        parts = [content_scores(v, fv, q) for v, fv in zip(self.vhat, self.valid)]
        return ops.concat(parts, axis=1)


@dataclass
class Candidates:
    """One query's scored candidate anchors and their (adjusted) bounds."""

    ids: np.ndarray
    scores: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    grid: AnchorGrid


class GroundingModel:
    def __init__(self, cfg: RunConfig, params: ParamStore):
        self.cfg = cfg
        self.params = params
        self.swin = SwinConfig(cfg.dim, cfg.window_size, cfg.shift, cfg.n_heads, cfg.mlp_ratio, cfg.pool)

    # ---------------------------------------------------------------- init
    @classmethod
    def init(cls, cfg: RunConfig, seed: int | None = None) -> "GroundingModel":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        dt, d = cfg.dtype, cfg.dim
        store = ParamStore()
        add_linear(store.scope("conv"), "x", cfg.c0 * d, d, rng, dt)
        swin = SwinConfig(d, cfg.window_size, cfg.shift, cfg.n_heads, cfg.mlp_ratio, cfg.pool)
        # residual branches start small so the stack is close to identity
        gain = 1.0 / math.sqrt(2 * cfg.n_scales)
        for l in range(cfg.n_scales):
            init_swin_block(store.scope(f"block{l + 1}"), swin, rng, dt, out_gain=gain)
        init_intra_anchor(store.scope("intra"), d, max_anchor_len(cfg), rng, dt, out_gain=gain)
        init_regressor(store.scope("reg"), d, cfg.hidden, rng, dt, out_gain=0.1)
        return cls(cfg, store)

    @property
    def dtype(self):
        return self.cfg.dtype

    def grid_for(self, n_frames: int, fps: float) -> AnchorGrid:
        return AnchorGrid(n_frames, fps, self.cfg.c0, self.cfg.pool_factors)

    # -------------------------------------------------------------- encode
    def encode(self, features: np.ndarray, fps: float) -> Encoded:
        features = np.ascontiguousarray(features, dtype=self.dtype)
        if features.ndim != 2 or features.shape[1] != self.cfg.dim:
            raise DimensionError(f"features of shape {features.shape} do not match dim={self.cfg.dim}")
        p = self.params.scope("conv")
        e0, valid = partition_base(Tensor(features), self.cfg.c0, p["x.w"], p["x.b"])
        blocks = [self.params.scope(f"block{l + 1}") for l in range(self.cfg.n_scales)]
        feats, _ = encode_multiscale(e0, blocks, self.cfg.pool_factors, self.swin, valid)
        grid = self.grid_for(features.shape[0], fps)
        anchors = ops.concat(feats, axis=0)
        if anchors.shape[0] != grid.size:
            raise DimensionError(f"encoder produced {anchors.shape[0]} anchors, grid has {grid.size}")
        return Encoded(grid, anchors, features)

    def content(self, enc: Encoded, ids) -> Content:
        """Run intra-anchor attention over the frames of each anchor in ``ids``."""
        ids = np.unique(np.asarray(ids, dtype=int))
        grid, frames = enc.grid, enc.frames
        p = self.params.scope("intra")
        vhat, valid, groups = [], [], []
        scales = grid.scale_of[ids]
        for l in range(1, grid.n_scales + 1):
            pos = np.flatnonzero(scales == l)
            if pos.size == 0:
                continue
            g = ids[pos]
            c = grid.lengths[l - 1]
            idx = grid.frame_lo[g][:, None] + np.arange(c)[None, :]
            fv = idx < grid.frame_hi[g][:, None]
            block = frames[np.minimum(idx, grid.n_frames - 1)]
            vhat.append(intra_anchor_msa(Tensor(block), p, self.cfg.n_heads, fv))
            valid.append(fv)
            groups.append(pos)
        return Content(ids, vhat, valid, groups)

    def offsets(self, enc: Encoded, content: Content, rows: np.ndarray, anchor_pos: np.ndarray,
                q: Tensor) -> Tensor:
        """Boundary offsets ``(P, 2)`` for anchors ``content.ids[anchor_pos]``
        paired with query rows ``q[rows]``."""
        reg = self.params.scope("reg")
        uniq, inv = np.unique(anchor_pos, return_inverse=True)
        sub = self._content_subset(content, uniq)
        pooled = ops.take(sub.pooled(reg["att_w"]), inv, axis=0)
        e = ops.take(enc.anchors, content.ids[anchor_pos], axis=0)
        return predict_bias(e, pooled, ops.take(q, rows, axis=0), reg)

    @staticmethod
    def _content_subset(content: Content, positions: np.ndarray) -> Content:
        # positions index into content.ids; keep only the requested anchors
        vhat, valid, groups = [], [], []
        for v, fv, g in zip(content.vhat, content.valid, content.groups):
            keep = np.flatnonzero(np.isin(g, positions))
            if keep.size == 0:
                continue
            vhat.append(v if keep.size == len(g) else ops.take(v, keep, axis=0))
            valid.append(fv[keep])
            groups.append(g[keep])
        return Content(content.ids[np.sort(positions)], vhat, valid, groups)

    # ---------------------------------------------------------------- train
    def loss(self, features: np.ndarray, fps: float, queries: np.ndarray, spans: np.ndarray,
             variant: str | None = None) -> tuple[Tensor, dict]:
        """Total training loss for one video and a batch of its queries."""
        cfg = self.cfg
        variant = variant or cfg.loss_variant
        enc = self.encode(features, fps)
        grid = enc.grid
        q = Tensor(np.asarray(queries, dtype=self.dtype))
        spans = np.asarray(spans, dtype=float)
        ctx = context_scores(enc.anchors, q)                                    # (Q, A)
        y = iou_matrix(grid.starts, grid.ends, spans[:, 0], spans[:, 1])       # (Q, A)

        subsets = [select_topm(ctx.data[k], grid, cfg.m) for k in range(len(q.data))]
        union = np.unique(np.concatenate(subsets))
        member = np.zeros((len(subsets), len(union)), dtype=bool)
        for k, s in enumerate(subsets):
            member[k, np.searchsorted(union, s)] = True
        content = self.content(enc, union)
        ctn = content.scores(q)                                                 # (Q, U)
        y_sub = y[:, union]
        align = losses.alignment_loss(ctx, y, ctn, y_sub, cfg.alpha_ctx, cfg.alpha_ctn,
                                      None, member, variant)

        rows, cols = np.nonzero(member & (y_sub > 0))
        if rows.size:
            delta = self.offsets(enc, content, rows, cols, q)
            g = union[cols]
            length = (grid.ends[g] - grid.starts[g]).astype(self.dtype)
            col0, col1 = ops.index(delta, (slice(None), 0)), ops.index(delta, (slice(None), 1))
            ps = ops.add(ops.mul(col0, length), grid.starts[g].astype(self.dtype))
            pe = ops.add(ops.mul(col1, length), grid.ends[g].astype(self.dtype))
            reg = losses.iou_loss(ps, pe, spans[rows, 0], spans[rows, 1])
        else:
            reg = Tensor(np.zeros((), dtype=self.dtype))
        total = losses.total_loss(align, reg, cfg.weights)
        return total, {"align": float(align.item()), "reg": float(reg.item()), "total": float(total.item())}

    # ------------------------------------------------------------ inference
    def predict(self, features: np.ndarray, fps: float, queries: np.ndarray, n: int | None = None,
                rr: bool | None = None, br: bool | None = None, keep: int | None = None):
        """Ranked predictions for each query row: the first ``keep`` (default
        ``n``) candidates, see :meth:`candidates`."""
        cfg = self.cfg
        rr = cfg.rr if rr is None else rr
        br = cfg.br if br is None else br
        keep = keep or n or cfg.n
        enc = self.encode(features, fps)
        return self.predict_encoded(enc, queries, rr, br, keep)

    def predict_encoded(self, enc: Encoded, queries, rr: bool, br: bool, keep: int):
        return self.finalize(self.candidates(enc, queries, rr, br, keep), keep)

    def candidates(self, enc: Encoded, queries, rr: bool, br: bool, keep: int) -> list[Candidates]:
        """Scored (and, with ``br``, boundary-adjusted) candidates per query.

        With re-ranking the candidates are each query's per-scale top-``m``
        subset scored by context + content; without it, all anchors scored by
        context, of which only the best ``keep`` are regressed.
        """
        grid = enc.grid
        q = Tensor(np.atleast_2d(np.asarray(queries, dtype=self.dtype)))
        ctx = context_scores(enc.anchors, q).data                                 # (Q, A)
        n_q = ctx.shape[0]
        out = []
        content = None
        if rr:
            subsets = [select_topm(ctx[k], grid, self.cfg.m) for k in range(n_q)]
            content = self.content(enc, np.concatenate(subsets))
            ctn_all = content.scores(q).data                                     # (Q, U)
            for k, s in enumerate(subsets):
                out.append(Candidates(s, ctx[k, s] + ctn_all[k, np.searchsorted(content.ids, s)],
                                      grid.starts[s], grid.ends[s], grid))
        else:
            valid = np.flatnonzero(grid.valid_mask)
            for k in range(n_q):
                ids = valid
                if br:
                    ids = rank_order(ctx[k], grid.starts, grid.scale_of, grid.valid_mask)[:keep]
                out.append(Candidates(ids, ctx[k, ids], grid.starts[ids], grid.ends[ids], grid))
        if br:
            picked = np.concatenate([c.ids for c in out])
            if content is None:
                content = self.content(enc, picked)
            rows = np.concatenate([np.full(len(c.ids), k) for k, c in enumerate(out)])
            delta = self.offsets(enc, content, rows, np.searchsorted(content.ids, picked), q).data
            splits = np.cumsum([len(c.ids) for c in out])[:-1]
            for c, d in zip(out, np.split(delta, splits)):
                c.starts, c.ends = adjust_bounds_array(c.starts, c.ends, d, grid.duration)
        return out

    @staticmethod
    def finalize(cands: list[Candidates], keep: int) -> list[list[Prediction]]:
        """Sort by score (ties: anchor start, then scale) and truncate."""
        preds = []
        for c in cands:
            order = rank_order(c.scores, c.grid.starts[c.ids], c.grid.scale_of[c.ids])[:keep]
            preds.append([Prediction(float(c.starts[i]), float(c.ends[i]), float(c.scores[i]), int(c.ids[i]))
                          for i in order])
        return preds


def max_anchor_len(cfg: RunConfig) -> int:
    return int(cfg.c0 * np.prod(cfg.pool_factors))


def check_dim(cfg: RunConfig, dim: int) -> None:
    if cfg.dim != dim:
        raise DataError(f"config dim={cfg.dim} but data has dim={dim}")
