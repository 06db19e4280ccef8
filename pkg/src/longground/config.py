"""Run configuration: every hyperparameter in one validated record.

Files use an INI-style ``[run]`` section of ``key = value`` lines, so a
config can be written, diffed and embedded in a checkpoint as plain text.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .errors import ParameterError, UsageError
from .losses import RANK_VARIANTS, LossWeights

SECTION = "run"
PRECISIONS = {"float32", "float64"}


@dataclass(frozen=True)
class RunConfig:
    # anchors / encoder
    c0: int = 10
    n_scales: int = 4
    pool_factors: tuple[int, ...] = (1, 2, 2, 2)
    window_size: int = 8
    shift: int = 4
    n_heads: int = 4
    mlp_ratio: int = 2
    pool: str = "max"
    dim: int = 64
    reg_hidden: int = 0            # 0 means 2 * dim
    # ranking / output
    m: int = 100
    n: int = 5
    use_nms: bool = False
    nms_threshold: float = 0.5
    # losses
    alpha_ctx: float = 100.0       # sharpness of the rank sigmoid
    alpha_ctn: float = 100.0
    lambda_align: float = 1.0
    lambda_reg: float = 20.0
    loss_variant: str = "dual"
    # optimisation
    lr: float = 1e-3
    lr_decay_step: int = 0         # 0 disables the step decay
    lr_decay: float = 0.1
    weight_decay: float = 0.01
    steps: int = 2000
    batch_queries: int = 32
    seed: int = 0
    precision: str = "float64"
    log_every: int = 50
    # module toggles
    pr: bool = True
    rr: bool = True
    br: bool = True
    # sliding-window baseline
    slide_window: int = 128
    slide_stride: int = 64

    def __post_init__(self):
        object.__setattr__(self, "pool_factors", tuple(int(r) for r in self.pool_factors))
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ParameterError(msg)

        need(self.c0 >= 1, "c0 must be >= 1")
        need(self.n_scales == len(self.pool_factors),
             f"n_scales={self.n_scales} but {len(self.pool_factors)} pool factors given")
        need(all(r >= 1 for r in self.pool_factors), "pool factors must be >= 1")
        need(self.window_size >= 1 and 0 <= self.shift < self.window_size, "need 0 <= shift < window_size")
        need(self.dim >= 1 and self.n_heads >= 1 and self.dim % self.n_heads == 0,
             f"n_heads={self.n_heads} must divide dim={self.dim}")
        need(self.pool in ("max", "mean"), f"unknown pool {self.pool!r}")
        need(self.m >= 1 and self.n >= 1, "m and n must be >= 1")
        need(0.0 <= self.nms_threshold <= 1.0, "nms_threshold must lie in [0, 1]")
        need(self.alpha_ctx > 0 and self.alpha_ctn > 0, "alpha must be positive")
        need(self.loss_variant in RANK_VARIANTS, f"loss_variant must be one of {RANK_VARIANTS}")
        need(self.lr > 0 and self.steps >= 0 and self.batch_queries >= 1, "bad optimiser settings")
        need(self.weight_decay >= 0 and 0 < self.lr_decay <= 1, "bad weight decay or lr decay")
        need(self.precision in PRECISIONS, f"precision must be one of {sorted(PRECISIONS)}")
        need(self.pr, "pre-ranking cannot be disabled; it produces the candidate list")
        need(0 < self.slide_stride <= self.slide_window, "sliding window needs 0 < stride <= window")
        need(self.reg_hidden >= 0 and self.log_every >= 1, "bad reg_hidden or log_every")
        LossWeights(self.lambda_align, self.lambda_reg)

    # ----------------------------------------------------------- derived
    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_align, self.lambda_reg)

    @property
    def hidden(self) -> int:
        return self.reg_hidden or 2 * self.dim

    @property
    def dtype(self):
        import numpy as np
        return np.float32 if self.precision == "float32" else np.float64

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    # ------------------------------------------------------------ text io
    def to_text(self) -> str:
        lines = [f"[{SECTION}]"]
        for f in _fields():
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise UsageError(f"unreadable config: {exc}") from None
        if cp.sections() != [SECTION]:
            raise UsageError(f"config must contain exactly one [{SECTION}] section")
        raw = dict(cp[SECTION])
        raw.update({k: str(v) if not isinstance(v, str) else v for k, v in overrides.items()})
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        known = {f.name: f for f in _fields()}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        kw = {k: _parse(known[k], v) for k, v in raw.items()}
        return cls(**kw)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), **overrides)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _fields():
    return list(dataclasses.fields(RunConfig))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(f: dataclasses.Field, v):
    if not isinstance(v, str):
        return v
    kind = str(f.type)
    v = v.strip()
    try:
        if kind == "bool":
            low = v.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(v)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(v)
        if kind == "float":
            return float(v)
        if kind.startswith("tuple"):
            return tuple(int(x) for x in v.replace(",", " ").split())
    except ValueError:
        raise UsageError(f"bad value for {f.name}: {v!r}") from None
    return v


def mad_preset(**kw) -> RunConfig:
    """Settings reported for the long-movie benchmark (full-size features)."""
    base = dict(c0=10, n_scales=4, pool_factors=(1, 2, 2, 2), dim=512, m=100, alpha_ctx=100.0,
                alpha_ctn=100.0, lambda_align=1.0, lambda_reg=20.0, lr=1e-3, lr_decay_step=40_000,
                lr_decay=0.1, steps=100_000, batch_queries=32)
    base.update(kw)
    return RunConfig(**base)


def ego4d_preset(**kw) -> RunConfig:
    base = dict(c0=6, n_scales=4, pool_factors=(1, 2, 2, 2), m=20, lambda_align=1.0, lambda_reg=5.0)
    base.update(kw)
    return RunConfig(**base)


def overrides_from_pairs(pairs) -> dict:
    """``["lr=1e-3", "rr=false"]`` -> ``{"lr": "1e-3", "rr": "false"}``."""
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def from_sources(path=None, pairs=None) -> RunConfig:
    """Defaults, then an optional file, then ``key=value`` overrides."""
    over = overrides_from_pairs(pairs)
    if path is not None:
        return RunConfig.load(path, **over)
    return RunConfig.from_mapping(over)

