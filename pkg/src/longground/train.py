"""Optimiser, training loop and dataset-level evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import Dataset, sample_batch
from .errors import NumericError
from .metrics import DEFAULT_M, DEFAULT_N, EvalResult, recall_at
from .model import GroundingModel, check_dim
from .numerics import Tape
from .params import ParamStore
from .regression import top_n

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay, applied to matrices only."""

    def __init__(self, params: ParamStore, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None or not p.requires_grad:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            if self.weight_decay and p.data.ndim >= 2:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


def learning_rate(cfg: RunConfig, step: int) -> float:
    """Constant, or one step decay by ``lr_decay`` at ``lr_decay_step``."""
    if cfg.lr_decay_step and step >= cfg.lr_decay_step:
        return cfg.lr * cfg.lr_decay
    return cfg.lr


@dataclass
class TrainResult:
    model: GroundingModel
    optimizer: AdamW
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    steps_done: int = 0

    def log_text(self) -> str:
        rows = ["step\talign\treg\ttotal"]
        rows += [f"{s}\t{a!r}\t{r!r}\t{t!r}" for s, a, r, t in self.history]
        return "\n".join(rows) + "\n"


def _batch_rng(cfg: RunConfig, step: int) -> np.random.Generator:
    # one stream per step, so a resumed run draws the same batches
    return np.random.default_rng([cfg.seed, step])


def train(cfg: RunConfig, dataset: Dataset, model: GroundingModel | None = None,
          optimizer: AdamW | None = None, start_step: int = 0, steps: int | None = None,
          freeze: str | None = None) -> TrainResult:
    """Run ``steps`` optimisation steps (default: up to ``cfg.steps``).

    ``freeze`` is a parameter-name prefix excluded from updates.
    """
    check_dim(cfg, dataset.dim)
    model = model or GroundingModel.init(cfg)
    if freeze:
        model.params.requires_grad_(False, prefix=freeze)
    opt = optimizer or AdamW(model.params, cfg.lr, cfg.weight_decay)
    end = cfg.steps if steps is None else start_step + steps
    result = TrainResult(model, opt, steps_done=start_step)
    feats = {v.video_id: np.ascontiguousarray(v.features, dtype=cfg.dtype) for v in dataset.videos}
    for step in range(start_step, end):
        video, anns = sample_batch(dataset, cfg.batch_queries, _batch_rng(cfg, step))
        queries = np.stack([a.query_vec for a in anns])
        spans = np.array([a.span for a in anns], dtype=float)
        model.params.zero_grad()
        with Tape() as tape:
            loss, parts = model.loss(feats[video.video_id], video.fps, queries, spans)
            if not np.isfinite(parts["total"]):
                raise NumericError(f"non-finite loss at step {step}")
            tape.backward(loss)
        opt.step(learning_rate(cfg, step))
        result.history.append((step, parts["align"], parts["reg"], parts["total"]))
        if step % cfg.log_every == 0 or step == end - 1:
            log.info("step %d align %.4f reg %.4f total %.4f", step, parts["align"], parts["reg"], parts["total"])
        result.steps_done = step + 1
    return result


def predict_dataset(model: GroundingModel, dataset: Dataset, rr: bool | None = None, br: bool | None = None,
                    n: int | None = None, use_nms: bool | None = None):
    """Ranked predictions for every query, in ``dataset.queries()`` order."""
    cfg = model.cfg
    n = n or max(cfg.n, max(DEFAULT_N))
    use_nms = cfg.use_nms if use_nms is None else use_nms
    keep = n if not use_nms else None
    preds, gts = [], []
    for video in dataset.videos:
        anns = dataset.annotations.get(video.video_id, [])
        if not anns:
            continue
        queries = np.stack([a.query_vec for a in anns])
        enc = model.encode(video.features, video.fps)
        rr_ = cfg.rr if rr is None else rr
        br_ = cfg.br if br is None else br
        if keep is None:
            # NMS needs the whole candidate list, not just the first n
            keep_ = enc.grid.size
        else:
            keep_ = keep
        out = model.predict_encoded(enc, queries, rr_, br_, keep_)
        for a, p in zip(anns, out):
            preds.append(top_n(p, n, use_nms, cfg.nms_threshold))
            gts.append(a.span)
    return preds, gts


def evaluate(model: GroundingModel, dataset: Dataset, rr: bool | None = None, br: bool | None = None,
             n_list=DEFAULT_N, m_list=DEFAULT_M, use_nms: bool | None = None) -> EvalResult:
    check_dim(model.cfg, dataset.dim)
    preds, gts = predict_dataset(model, dataset, rr, br, max(n_list), use_nms)
    return recall_at(preds, gts, n_list, m_list)
