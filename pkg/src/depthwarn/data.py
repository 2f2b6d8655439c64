"""Data model for videos, detections and precomputed features, plus the
PDAF feature-archive format.

An archive is a directory holding `manifest.json` (dims, video table) and
one binary blob per video. Blob layout: magic b"PDAF", little-endian u32
version, then little-endian float32 arrays per frame in order
(detection count, boxes, scores, label ids, obj_features, label_features,
depth_map, dyn_feature). Everything after the header is float32, counts
included, so the stream is trivially seekable and byte-deterministic.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArchiveError

MAGIC = b"PDAF"
VERSION = 1


@dataclass
class Detection:
    """One detected agent: pixel box, class id, score and frozen features."""

    box: np.ndarray           # (x1, y1, x2, y2) pixels, float32
    label_id: int
    score: float
    obj_feature: np.ndarray   # length d1, float32
    label_feature: np.ndarray  # length d2, float32

    def center(self):
        x1, y1, x2, y2 = self.box
        return (float(x1 + x2) / 2.0, float(y1 + y2) / 2.0)

    def area(self):
        x1, y1, x2, y2 = self.box
        return float(max(0.0, x2 - x1) * max(0.0, y2 - y1))


@dataclass
class FrameObservation:
    """Per-frame detections, depth map and the global dynamic feature."""

    index: int
    detections: list
    depth_map: np.ndarray     # H x W, relative inverse depth (larger = nearer)
    dyn_feature: np.ndarray   # length d_dyn_in


@dataclass
class VideoSample:
    """Ordered frames plus the video-level label.

    `accident_frame` is 1-based; positive samples satisfy
    0 < accident_frame <= len(frames). `meta` carries generator-side
    ground truth for tests and is never serialized.
    """

    id: str
    frames: list
    positive: bool
    accident_frame: int | None
    fps: float
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_frames(self):
        return len(self.frames)


@dataclass
class PredictionCurve:
    """Per-frame accident probabilities for one video; probs[k] = P_{k+1}."""

    video_id: str
    probs: np.ndarray
    positive: bool
    accident_frame: int | None
    fps: float

    def to_dict(self):
        return {
            "video_id": self.video_id,
            "probs": [float(p) for p in self.probs],
            "positive": bool(self.positive),
            "accident_frame": None if self.accident_frame is None else int(self.accident_frame),
            "fps": float(self.fps),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            video_id=d["video_id"],
            probs=np.asarray(d["probs"], dtype=np.float64),
            positive=bool(d["positive"]),
            accident_frame=d.get("accident_frame"),
            fps=float(d["fps"]),
        )


@dataclass
class ArchiveDims:
    d1: int            # obj_feature width
    d2: int            # label_feature width
    depth_rows: int
    depth_cols: int
    d_dyn_in: int
    image_h: int
    image_w: int


def select_top_m(detections, m):
    """Keep the m highest-score detections, score-descending.

    Ties break toward the smaller box area, then input order. Fewer than
    m detections are all kept (padding is the caller's mask problem).
    """
    if m < 1:
        raise ValueError("select_top_m: m must be >= 1")
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, detections[i].area(), i))
    return [detections[i] for i in order[:m]]


# ---------------------------------------------------------------------------
# serialization


def _f32(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float32))


def _encode_video(sample, dims):
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for frame in sample.frames:
        k = len(frame.detections)
        boxes = np.zeros((k, 4), dtype=np.float32)
        scores = np.zeros(k, dtype=np.float32)
        labels = np.zeros(k, dtype=np.float32)
        objs = np.zeros((k, dims.d1), dtype=np.float32)
        labfs = np.zeros((k, dims.d2), dtype=np.float32)
        for j, det in enumerate(frame.detections):
            boxes[j] = det.box
            scores[j] = det.score
            labels[j] = det.label_id
            objs[j] = det.obj_feature
            labfs[j] = det.label_feature
        chunks.append(np.float32(k).tobytes())
        chunks.append(boxes.tobytes())
        chunks.append(scores.tobytes())
        chunks.append(labels.tobytes())
        chunks.append(objs.tobytes())
        chunks.append(labfs.tobytes())
        chunks.append(_f32(frame.depth_map).tobytes())
        chunks.append(_f32(frame.dyn_feature).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buf, where):
        self.buf = buf
        self.off = 0
        self.where = where

    def floats(self, n):
        end = self.off + 4 * n
        if end > len(self.buf):
            raise ArchiveError("%s: truncated array (wanted %d floats at offset %d)"
                               % (self.where, n, self.off))
        out = np.frombuffer(self.buf, dtype="<f4", count=n, offset=self.off)
        self.off = end
        return out

    def done(self):
        return self.off == len(self.buf)


def _decode_video(buf, entry, dims):
    where = "video %r" % entry["id"]
    if buf[:4] != MAGIC:
        raise ArchiveError("%s: bad magic %r" % (where, buf[:4]))
    (version,) = struct.unpack("<I", buf[4:8])
    if version != VERSION:
        raise ArchiveError("%s: unsupported version %d" % (where, version))
    r = _Reader(buf[8:], where)
    frames = []
    for i in range(entry["n_frames"]):
        fw = "%s frame %d" % (where, i)
        kf = float(r.floats(1)[0])
        k = int(kf)
        if kf != k or k < 0:
            raise ArchiveError("%s: bad detection count %r" % (fw, kf))
        boxes = r.floats(4 * k).reshape(k, 4).copy()
        scores = r.floats(k).copy()
        labels = r.floats(k).copy()
        objs = r.floats(k * dims.d1).reshape(k, dims.d1).copy()
        labfs = r.floats(k * dims.d2).reshape(k, dims.d2).copy()
        depth = r.floats(dims.depth_rows * dims.depth_cols).reshape(
            dims.depth_rows, dims.depth_cols).copy()
        dyn = r.floats(dims.d_dyn_in).copy()
        dets = []
        for j in range(k):
            x1, y1, x2, y2 = boxes[j]
            if not (x1 < x2 and y1 < y2):
                raise ArchiveError("%s det %d: degenerate box %r" % (fw, j, boxes[j]))
            if not (0.0 <= scores[j] <= 1.0):
                raise ArchiveError("%s det %d: score %r outside [0, 1]" % (fw, j, scores[j]))
            lab = float(labels[j])
            if lab != int(lab):
                raise ArchiveError("%s det %d: non-integer label %r" % (fw, j, lab))
            dets.append(Detection(box=boxes[j], label_id=int(lab), score=float(scores[j]),
                                  obj_feature=objs[j], label_feature=labfs[j]))
        if not np.isfinite(depth).all() or (depth < 0).any():
            raise ArchiveError("%s: depth map must be finite and >= 0" % fw)
        if not np.isfinite(dyn).all():
            raise ArchiveError("%s: non-finite dyn_feature" % fw)
        frames.append(FrameObservation(index=i, detections=dets,
                                       depth_map=depth, dyn_feature=dyn))
    if not r.done():
        raise ArchiveError("%s: %d trailing bytes" % (where, len(r.buf) - r.off))
    return frames


def save_archive(samples, path, dims):
    """Write samples to a PDAF archive directory (deterministic bytes)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    videos = []
    for s in samples:
        _check_sample(s, dims)
        fname = "%s.pdaf" % s.id
        (path / fname).write_bytes(_encode_video(s, dims))
        videos.append({
            "id": s.id,
            "file": fname,
            "n_frames": s.n_frames,
            "fps": float(s.fps),
            "positive": bool(s.positive),
            "accident_frame": None if s.accident_frame is None else int(s.accident_frame),
        })
    manifest = {
        "format": "PDAF",
        "version": VERSION,
        "dims": {
            "obj_feature": dims.d1,
            "label_feature": dims.d2,
            "depth_rows": dims.depth_rows,
            "depth_cols": dims.depth_cols,
            "dyn_feature": dims.d_dyn_in,
        },
        "image_size": [dims.image_h, dims.image_w],
        "videos": videos,
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _check_sample(s, dims):
    if s.positive:
        if s.accident_frame is None or not (0 < s.accident_frame <= s.n_frames):
            raise ArchiveError("video %r: positive sample needs accident_frame in [1, %d], got %r"
                               % (s.id, s.n_frames, s.accident_frame))
    elif s.accident_frame is not None:
        raise ArchiveError("video %r: negative sample carries accident_frame %r"
                           % (s.id, s.accident_frame))
    for frame in s.frames:
        if frame.depth_map.shape != (dims.depth_rows, dims.depth_cols):
            raise ArchiveError("video %r frame %d: depth map %r, manifest says %r"
                               % (s.id, frame.index, frame.depth_map.shape,
                                  (dims.depth_rows, dims.depth_cols)))
        if len(frame.dyn_feature) != dims.d_dyn_in:
            raise ArchiveError("video %r frame %d: dyn_feature length %d, manifest says %d"
                               % (s.id, frame.index, len(frame.dyn_feature), dims.d_dyn_in))
        for j, det in enumerate(frame.detections):
            if len(det.obj_feature) != dims.d1 or len(det.label_feature) != dims.d2:
                raise ArchiveError("video %r frame %d det %d: feature widths (%d, %d) != (%d, %d)"
                                   % (s.id, frame.index, j, len(det.obj_feature),
                                      len(det.label_feature), dims.d1, dims.d2))


def load_manifest(path):
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise ArchiveError("no manifest.json under %s" % path)
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise ArchiveError("bad manifest.json under %s: %s" % (path, e)) from e
    if manifest.get("format") != "PDAF" or manifest.get("version") != VERSION:
        raise ArchiveError("%s: not a PDAF v%d manifest" % (mpath, VERSION))
    d = manifest["dims"]
    ih, iw = manifest["image_size"]
    dims = ArchiveDims(d1=d["obj_feature"], d2=d["label_feature"],
                       depth_rows=d["depth_rows"], depth_cols=d["depth_cols"],
                       d_dyn_in=d["dyn_feature"], image_h=ih, image_w=iw)
    return manifest, dims


def load_archive(path):
    """Load and fully validate a PDAF archive; returns (samples, dims)."""
    path = Path(path)
    manifest, dims = load_manifest(path)
    samples = []
    for entry in manifest["videos"]:
        blob = path / entry["file"]
        if not blob.exists():
            raise ArchiveError("video %r: missing blob %s" % (entry["id"], blob))
        frames = _decode_video(blob.read_bytes(), entry, dims)
        sample = VideoSample(id=entry["id"], frames=frames,
                             positive=bool(entry["positive"]),
                             accident_frame=entry["accident_frame"],
                             fps=float(entry["fps"]))
        _check_sample(sample, dims)
        samples.append(sample)
    return samples, dims


def video_samples_equal(a, b):
    """Field-exact comparison used by round-trip tests (meta excluded)."""
    if (a.id, a.positive, a.accident_frame, a.fps, a.n_frames) != \
       (b.id, b.positive, b.accident_frame, b.fps, b.n_frames):
        return False
    for fa, fb in zip(a.frames, b.frames):
        if fa.index != fb.index or len(fa.detections) != len(fb.detections):
            return False
        if not np.array_equal(fa.depth_map, fb.depth_map):
            return False
        if not np.array_equal(fa.dyn_feature, fb.dyn_feature):
            return False
        for da, db in zip(fa.detections, fb.detections):
            if da.label_id != db.label_id or da.score != db.score:
                return False
            if not (np.array_equal(da.box, db.box)
                    and np.array_equal(da.obj_feature, db.obj_feature)
                    and np.array_equal(da.label_feature, db.label_feature)):
                return False
    return True
