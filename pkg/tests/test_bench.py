import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longground import bench
from longground.config import RunConfig
from longground.data import VideoFeatures
from longground.errors import ParameterError, UsageError
from longground.gradsuite import tiny_config
from longground.model import GroundingModel


def test_window_count_example():
    assert bench.n_windows(1000, 128, 64) == 15
    assert bench.n_windows(100, 128, 64) == 1
    assert bench.n_windows(128, 128, 64) == 1
    assert bench.n_windows(129, 128, 64) == 2


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 5000), w=st.integers(1, 300), frac=st.floats(0.05, 1.0))
def test_windows_cover_every_frame(n, w, frac):
    s = max(1, int(w * frac))
    starts = bench.window_starts(n, w, s)
    assert starts[0] == 0
    assert starts[-1] + w >= n
    assert np.all(np.diff(starts) == s)


def test_sliding_config_validation():
    with pytest.raises(ParameterError):
        bench.SlidingConfig(128, 200)
    with pytest.raises(ParameterError):
        bench.SlidingConfig(128, 0)
    with pytest.raises(ParameterError):
        bench.SlidingConfig(head="transformer")


def test_redundancy_ratio():
    assert bench.redundancy_ratio(50_000, 64, bench.SlidingConfig(128, 128)) == 1.0
    assert bench.redundancy_ratio(50_000, 64, bench.SlidingConfig(128, 64)) == pytest.approx(2.0, abs=0.1)


def test_redundancy_law():
    sc = bench.SlidingConfig(128, 32)
    flat = bench.SlidingConfig(128, 128)
    n = 20_000
    assert bench.sliding_flops(n, 64, sc) >= (128 / 32) * bench.sliding_flops(n, 64, flat) * 0.98


def test_onepass_flops_linear_in_length():
    cfg = RunConfig()
    f = [bench.onepass_flops(n, cfg) for n in (1_000, 10_000, 100_000)]
    assert np.all(np.diff(f) > 0)
    # affine in N: re-ranking m anchors per scale adds a constant, so equal
    # steps in length cost equal increments once every scale holds m anchors
    a, b, c = (bench.onepass_flops(n, cfg) for n in (100_000, 200_000, 300_000))
    assert (c - b) == pytest.approx(b - a, rel=0.01)


def test_flop_count_dispatch():
    cfg = RunConfig()
    assert bench.flop_count("one-pass", 1000, cfg) == bench.onepass_flops(1000, cfg)
    assert bench.flop_count("sliding-window", 1000, cfg) == bench.sliding_flops(1000, 64, bench.SlidingConfig())
    with pytest.raises(UsageError):
        bench.flop_count("two-pass", 1000, cfg)


def test_matmul_flops():
    assert bench.matmul_flops(2, 3, 4) == 48


def _setup(n_frames=300):
    cfg = tiny_config(m=4, slide_window=20, slide_stride=10)
    model = GroundingModel.init(cfg)
    rng = np.random.default_rng(0)
    video = VideoFeatures("v", 2.0, rng.normal(size=(n_frames, cfg.dim)))
    queries = [rng.normal(size=cfg.dim) for _ in range(3)]
    return model, video, queries


def test_instrumentation_is_neutral():
    model, video, queries = _setup()
    for q in queries:
        preds, phases = bench.run_onepass(video, q, model)
        raw = model.predict(video.features, video.fps, q.reshape(1, -1))[0]
        assert [p.span for p in preds] == [p.span for p in raw]
        assert [p.score for p in preds] == [p.score for p in raw]
        assert len(phases) == 3 and all(t >= 0 for t in phases)


def test_sliding_predictions():
    _, video, queries = _setup()
    preds, _ = bench.run_sliding(video, queries[0], bench.SlidingConfig(20, 10), n=5)
    assert len(preds) == 5
    assert all(0 <= p.t_s < p.t_e <= video.duration for p in preds)
    scores = [p.score for p in preds]
    assert scores == sorted(scores, reverse=True)


def test_benchmark_reports_and_comparison():
    model, video, queries = _setup()
    reports = bench.benchmark([video], [queries], model, repeats=2, memory=True)
    assert [r.kind for r in reports] == ["one-pass", "sliding-window"]
    for r in reports:
        assert r.total_s == pytest.approx(r.pre_s + r.model_s + r.post_s)
        assert r.feeds == 3 and r.peak_bytes > 0
    cmp = bench.compare(reports)
    assert cmp["speedup_total"] == pytest.approx(reports[1].total_s / reports[0].total_s)
    lines = bench.format_report(reports, cmp).splitlines()
    assert [json.loads(x)["kind"] for x in lines] == ["one-pass", "sliding-window", "comparison"]


def test_compare_identical_and_mismatched():
    r = bench.PipelineReport("one-pass", 1.0, 2.0, 3.0, 6.0, 10)
    same = bench.compare([r, bench.PipelineReport("sliding-window", 1.0, 2.0, 3.0, 6.0, 10)])
    assert all(same[k] == 1.0 for k in ("speedup_pre", "speedup_model", "speedup_post", "speedup_total"))
    other = bench.PipelineReport("sliding-window", 1.0, 2.0, 3.0, 6.0, 10, feeds=2)
    with pytest.raises(UsageError):
        bench.compare([r, other])
    with pytest.raises(UsageError):
        bench.compare([r])


def test_benchmark_needs_feeds():
    model, video, _ = _setup()
    with pytest.raises(UsageError):
        bench.benchmark([video], [[]], model)
