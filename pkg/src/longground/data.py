"""Synthetic long-video features, the binary feature format and batch sampling.

Feature file layout (little-endian)::

    offset  size  field
    0       4     magic b"SOON"
    4       4     version, u32 (= 1)
    8       1     dtype, u8 (0 = float32, 1 = float64)
    9       8     fps, float64
    17      8     N (frames), u64
    25      8     D (dim), u64
    33      N*D*w payload, row-major

Annotations live in a JSON-lines sidecar, one object per query with keys
``query_id``, ``video_id``, ``start``, ``end``, ``dtype`` and ``query_vec``
(base64 of the little-endian float payload).
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, UsageError

MAGIC = b"SOON"
VERSION = 1
HEADER = struct.Struct("<4sIBdQQ")
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class VideoFeatures:
    video_id: str
    fps: float
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features)
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise UsageError(f"features must be a non-empty N x D matrix, got shape {f.shape}")
        if self.fps <= 0:
            raise ParameterError(f"fps must be positive, got {self.fps}")
        self.features = f

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps


@dataclass
class QueryAnnotation:
    query_id: str
    video_id: str
    query_vec: np.ndarray
    span: tuple[float, float]

    @property
    def start(self) -> float:
        return self.span[0]

    @property
    def end(self) -> float:
        return self.span[1]


@dataclass
class Dataset:
    videos: list[VideoFeatures]
    annotations: dict[str, list[QueryAnnotation]] = field(default_factory=dict)
    split: str = "train"

    def __post_init__(self):
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise UsageError("duplicate video ids")
        known = set(ids)
        for vid, anns in self.annotations.items():
            if vid not in known:
                raise UsageError(f"annotations reference unknown video {vid!r}")
            for a in anns:
                if a.video_id != vid:
                    raise UsageError(f"annotation {a.query_id!r} filed under the wrong video")

    def video(self, video_id: str) -> VideoFeatures:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def queries(self):
        """Yield ``(video, annotation)`` pairs in a fixed order."""
        for v in self.videos:
            for a in self.annotations.get(v.video_id, []):
                yield v, a

    @property
    def n_queries(self) -> int:
        return sum(len(a) for a in self.annotations.values())

    @property
    def dim(self) -> int:
        return self.videos[0].dim


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def in_span_frames(span: tuple[float, float], n_frames: int, fps: float) -> np.ndarray:
    """Indices of frames whose centre time lies in ``[start, end)``."""
    centres = (np.arange(n_frames) + 0.5) / fps
    return np.flatnonzero((centres >= span[0]) & (centres < span[1]))


def generate_synthetic(seed: int, n_videos: int, frames_per_video: int, dim: int,
                       queries_per_video: int, span_len_range: tuple[float, float],
                       signal_strength: float, fps: float = 1.0, split: str = "train",
                       dtype=np.float64, id_prefix: str = "vid") -> Dataset:
    """Build a dataset of noise videos with planted query moments.

    Background frames are isotropic unit noise. A frame covered by one or more
    query spans becomes ``normalize(w * s + (1 - w) * noise)`` where ``s`` is
    the unit-normalised sum of the covering query vectors and ``w`` is
    ``signal_strength``. Span lengths (seconds) and starts are uniform.
    """
    lo, hi = span_len_range
    duration = frames_per_video / fps
    if not (0 <= signal_strength <= 1):
        raise ParameterError(f"signal_strength must lie in [0, 1], got {signal_strength}")
    if lo <= 0 or hi < lo or hi > duration:
        raise ParameterError(f"span length range {span_len_range} is infeasible for a {duration:g}s video")
    if lo * fps < 1:
        raise ParameterError("shortest span must cover at least one frame")
    if n_videos < 1 or frames_per_video < 1 or dim < 1 or queries_per_video < 0:
        raise ParameterError("counts must be positive")

    rng = np.random.default_rng(seed)
    w = float(signal_strength)
    videos, annotations = [], {}
    for v in range(n_videos):
        vid = f"{id_prefix}{v:04d}"
        noise = _unit_rows(rng.standard_normal((frames_per_video, dim)))
        queries = _unit_rows(rng.standard_normal((queries_per_video, dim)))
        signal = np.zeros((frames_per_video, dim))
        anns = []
        for k in range(queries_per_video):
            length = rng.uniform(lo, hi)
            start = rng.uniform(0.0, duration - length)
            span = (float(start), float(start + length))
            idx = in_span_frames(span, frames_per_video, fps)
            signal[idx] += queries[k]
            anns.append(QueryAnnotation(f"{vid}_q{k:03d}", vid, queries[k].astype(dtype), span))
        covered = np.linalg.norm(signal, axis=1) > 0
        frames = noise.copy()
        if covered.any():
            frames[covered] = _unit_rows(w * _unit_rows(signal[covered]) + (1.0 - w) * noise[covered])
        videos.append(VideoFeatures(vid, float(fps), frames.astype(dtype)))
        annotations[vid] = anns
    return Dataset(videos, annotations, split)


def mad_like_preset(seed: int = 0, n_videos: int = 20, frames_per_video: int = 2000, dim: int = 64,
                    queries_per_video: int = 32, signal_strength: float = 0.8, fps: float = 5.0,
                    **kw) -> Dataset:
    """Short, sparse moments: spans cover 1-3% of each video."""
    duration = frames_per_video / fps
    return generate_synthetic(seed, n_videos, frames_per_video, dim, queries_per_video,
                              (0.01 * duration, 0.03 * duration), signal_strength, fps=fps, **kw)


def split_by_video(dataset: Dataset, n_holdout: int, seed: int = 0,
                   names: tuple[str, str] = ("train", "val")) -> tuple[Dataset, Dataset]:
    """Partition videos into two disjoint datasets."""
    if not 0 < n_holdout < len(dataset.videos):
        raise UsageError("n_holdout must leave at least one video on each side")
    order = np.random.default_rng(seed).permutation(len(dataset.videos))
    held = set(order[:n_holdout].tolist())
    parts = ([], [])
    for i, v in enumerate(dataset.videos):
        parts[i in held].append(v)
    return tuple(
        Dataset(vs, {v.video_id: dataset.annotations.get(v.video_id, []) for v in vs}, name)
        for vs, name in zip(parts, names)
    )


# ------------------------------------------------------------------- batches

def sample_batch(dataset: Dataset, batch_size: int, seed) -> tuple[VideoFeatures, list[QueryAnnotation]]:
    """One video and ``batch_size`` queries grounded in it.

    Queries are drawn without replacement when the video has enough of them,
    with replacement otherwise. ``seed`` may be an int or a ``Generator``.
    """
    candidates = [v for v in dataset.videos if dataset.annotations.get(v.video_id)]
    if not candidates:
        raise UsageError("dataset has no annotated video to sample from")
    if batch_size < 1:
        raise UsageError("batch_size must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    video = candidates[int(rng.integers(len(candidates)))]
    anns = dataset.annotations[video.video_id]
    replace = len(anns) < batch_size
    picks = rng.choice(len(anns), size=batch_size, replace=replace)
    return video, [anns[int(i)] for i in picks]


# -------------------------------------------------------------------- format

def save_features(path, video: VideoFeatures) -> None:
    feats = video.features
    dt = np.dtype(feats.dtype).newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise UsageError(f"unsupported feature dtype {feats.dtype}")
    n, d = feats.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[dt], float(video.fps), n, d))
        fh.write(np.ascontiguousarray(feats, dtype=dt).tobytes())


def load_features(path, video_id: str | None = None) -> VideoFeatures:
    """Read a feature file; ``video_id`` defaults to the file stem."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"truncated header: expected {HEADER.size} bytes, got {len(raw)}", offset=len(raw))
    magic, version, code, fps, n, d = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=8)
    dt = _CODE_DTYPES[code]
    expected = n * d * dt.itemsize
    actual = len(raw) - HEADER.size
    if actual != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes, got {actual}",
                          offset=HEADER.size + min(actual, expected))
    feats = np.frombuffer(raw, dtype=dt, offset=HEADER.size).reshape(n, d).astype(dt.newbyteorder("="))
    return VideoFeatures(video_id or path.stem, fps, feats)


def _encode_vec(vec: np.ndarray) -> tuple[str, str]:
    dt = np.dtype(vec.dtype).newbyteorder("<")
    return base64.b64encode(np.ascontiguousarray(vec, dtype=dt).tobytes()).decode("ascii"), dt.str


def save_annotations(path, annotations) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            payload, dtype = _encode_vec(np.asarray(a.query_vec))
            rec = {"query_id": a.query_id, "video_id": a.video_id,
                   "start": a.span[0], "end": a.span[1], "dtype": dtype, "query_vec": payload}
            fh.write(json.dumps(rec) + "\n")


def load_annotations(path) -> list[QueryAnnotation]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                vec = np.frombuffer(base64.b64decode(rec["query_vec"]), dtype=np.dtype(rec["dtype"]))
                out.append(QueryAnnotation(rec["query_id"], rec["video_id"],
                                           vec.astype(vec.dtype.newbyteorder("=")),
                                           (float(rec["start"]), float(rec["end"]))))
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed annotation record ({exc})") from exc
    return out


def save_dataset(dataset: Dataset, out_dir) -> list[Path]:
    """Write ``<id>.feat`` per video, ``annotations.jsonl`` and ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for v in dataset.videos:
        p = out_dir / f"{v.video_id}.feat"
        save_features(p, v)
        written.append(p)
    ann_path = out_dir / "annotations.jsonl"
    save_annotations(ann_path, [a for _, a in dataset.queries()])
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"split": dataset.split,
                                    "videos": [v.video_id for v in dataset.videos]}, indent=1) + "\n")
    return written + [ann_path, manifest]


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {data_dir}")
    manifest = json.loads(manifest_path.read_text())
    videos = [load_features(data_dir / f"{vid}.feat", vid) for vid in manifest["videos"]]
    annotations = {v.video_id: [] for v in videos}
    for a in load_annotations(data_dir / "annotations.jsonl"):
        if a.video_id not in annotations:
            raise FormatError(f"annotation {a.query_id} references unknown video {a.video_id}")
        annotations[a.video_id].append(a)
    return Dataset(videos, annotations, manifest.get("split", "train"))
