"""
Where the time goes: one pass versus sliding windows
=====================================================

Times both pipelines on a long random video, split into pre-processing,
model and post-processing, and puts the measured numbers next to the
analytic FLOP counts.
"""

# %%
import time

import numpy as np

from longground import bench
from longground.config import RunConfig
from longground.data import VideoFeatures
from longground.model import GroundingModel

cfg = RunConfig(precision="float32")
model = GroundingModel.init(cfg)
rng = np.random.default_rng(0)
video = VideoFeatures("long", 5.0, rng.standard_normal((20_000, cfg.dim)).astype(np.float32))
queries = [rng.standard_normal(cfg.dim).astype(np.float32) for _ in range(10)]

# %%
sc = bench.SlidingConfig(128, 64)
reports = bench.benchmark([video], [queries], model, sc, repeats=3)
print(bench.format_report(reports, bench.compare(reports)))

# %%
# The sliding pipeline repeats every frame about window / stride times.
print("redundancy", bench.redundancy_ratio(video.n_frames, cfg.dim, sc))
for n in (10_000, 20_000, 40_000, 80_000):
    print(n, bench.onepass_flops(n, cfg), bench.sliding_flops(n, cfg.dim, sc))

# %%
# Once the encoding exists, another query only costs scoring, re-ranking
# and regression. The timed protocol feeds one (video, query) pair at a
# time and does not reuse it.
enc = model.encode(video.features, video.fps)
t0 = time.perf_counter()
for q in queries:
    model.finalize(model.candidates(enc, q[None], True, True, cfg.n), cfg.n)
print(f"per query with a shared encoding: {(time.perf_counter() - t0) / len(queries) * 1e3:.1f} ms")
