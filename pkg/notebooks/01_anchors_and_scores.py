"""
Anchors, encoding and scores on one synthetic video
====================================================

Walks one video through the anchor grid, the multi-scale encoder and the
query scoring, without any training.
"""

# %%
import numpy as np

from longground.config import RunConfig
from longground.data import mad_like_preset
from longground.model import GroundingModel
from longground.numerics import Tensor
from longground.ranking import context_scores

ds = mad_like_preset(seed=0, n_videos=1)
video = ds.videos[0]
ann = ds.annotations[video.video_id][0]
print(video.video_id, video.features.shape, f"{video.duration:.0f}s", "target", ann.span)

# %%
# The grid: four scales of non-overlapping anchors, each scale twice as
# coarse as the one before.
cfg = RunConfig(precision="float32")
model = GroundingModel.init(cfg)
grid = model.grid_for(video.n_frames, video.fps)
for l in range(1, grid.n_scales + 1):
    print(f"scale {l}: {grid.counts[l - 1]:4d} anchors of {grid.lengths[l - 1]:3d} frames")

# %%
# Encoding is query-independent; scoring a query is one cosine per anchor.
enc = model.encode(video.features, video.fps)
ctx = context_scores(enc.anchors, Tensor(ann.query_vec.astype(np.float32))).data
best = int(np.argmax(ctx))
print("anchors:", enc.anchors.shape, "best anchor", best,
      (float(grid.starts[best]), float(grid.ends[best])), "score", round(float(ctx[best]), 4))

# %%
# Untrained, the order is close to noise; compare with the target span
# printed at the top, then see notebook 02 for a trained model.
preds = model.predict(video.features, video.fps, ann.query_vec[None], n=5)[0]
for p in preds:
    print(f"{p.t_s:7.1f} {p.t_e:7.1f}  {p.score:.4f}")
