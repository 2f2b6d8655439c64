"""Seed-deterministic toy dashcam scenarios.

Each sample is a handful of agents moving at constant velocity (plus
jitter) over a 128 x 128 canvas, with a scalar depth per agent, scripted
occlusions, and a collision label derived by one rule: some pair of
agents overlaps in 2D (IoU >= overlap_thresh) while their depths differ
by less than depth_eps. Depth-confusable negatives reuse the exact 2D
encounter construction of positives and differ only in the depth channel,
so a model without depth features cannot tell them apart.

Object and label features come from fixed random projections seeded by a
package constant, independent of the dataset seed: separately generated
archives share one feature space, like a frozen pretrained encoder.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .data import ArchiveDims, Detection, FrameObservation, VideoSample
from .errors import ScenarioError
from .interaction import iou

ENCODER_SEED = 771203
N_CLASSES = 3  # car, bike, pedestrian
_LANES = (6.0, 20.0, 34.0, 94.0, 108.0, 122.0)


@dataclass
class ScenarioSpec:
    n_agents: int
    n_frames: int
    fps: float
    collision: bool
    depth_confusable: bool
    occlusion_windows: list  # (agent, start, end), 1-based inclusive
    rng_seed: int


@dataclass
class ScenarioDistribution:
    """Sampling distribution over scenario specs plus desk-scale geometry."""

    n_frames: int = 40
    fps: float = 10.0
    canvas: int = 128
    depth_size: int = 16
    raster_size: int = 32
    d1: int = 24
    d2: int = 8
    d_dyn: int = 16
    positive_fraction: float = 0.5
    confusable_fraction: float = 0.5
    occlusion_prob: float = 0.25
    agents_range: tuple = (3, 8)
    depth_eps: float = 0.1
    overlap_thresh: float = 0.3
    y_window: tuple = (25, 38)

    def archive_dims(self):
        return ArchiveDims(d1=self.d1, d2=self.d2, depth_rows=self.depth_size,
                           depth_cols=self.depth_size, d_dyn_in=self.d_dyn,
                           image_h=self.canvas, image_w=self.canvas)


class _Encoder:
    """Frozen feature projections shared by every dataset."""

    def __init__(self, d1, d2):
        rng = np.random.default_rng(np.random.PCG64(ENCODER_SEED))
        self.obj_proj = rng.normal(0.0, 1.0 / np.sqrt(13.0), size=(13, d1))
        self.label_proto = rng.normal(0.0, 1.0, size=(N_CLASSES, d2))

    def obj_feature(self, rng, canvas, box, vel, label):
        x1, y1, x2, y2 = box
        w, h = x2 - x1, y2 - y1
        base = np.array([
            (x1 + x2) / 2.0 / canvas - 0.5,
            (y1 + y2) / 2.0 / canvas - 0.5,
            w / canvas, h / canvas,
            vel[0] / 3.0, vel[1] / 3.0,
            float(np.hypot(*vel)) / 3.0,
            np.sqrt(max(w * h, 0.0)) / canvas,
            min(w, h) / max(w, h),
            1.0,
            float(label == 0), float(label == 1), float(label == 2),
        ])
        return base @ self.obj_proj + rng.normal(0.0, 0.02, size=self.obj_proj.shape[1])

    def label_feature(self, rng, label):
        return self.label_proto[label] + rng.normal(0.0, 0.02, size=self.label_proto.shape[1])


@dataclass
class _Trajectory:
    """Ground truth for one scenario before detections are emitted."""

    boxes: np.ndarray    # [n_agents, n_frames, 4], unclamped
    centers: np.ndarray  # [n_agents, n_frames, 2]
    vels: np.ndarray     # [n_agents, 2]
    depths: np.ndarray   # [n_agents, n_frames]
    labels: np.ndarray   # [n_agents]


def first_collision_frame(boxes, depths, overlap_thresh, depth_eps):
    """1-based first frame where some pair overlaps in 2D and in depth."""
    n_agents, n_frames = depths.shape
    for t in range(n_frames):
        for a in range(n_agents):
            for b in range(a + 1, n_agents):
                if abs(depths[a, t] - depths[b, t]) >= depth_eps:
                    continue
                if iou(boxes[a, t], boxes[b, t]) >= overlap_thresh:
                    return t + 1
    return None


def _max_pair_iou(boxes):
    n_agents, n_frames = boxes.shape[:2]
    best = 0.0
    for t in range(n_frames):
        for a in range(n_agents):
            for b in range(a + 1, n_agents):
                best = max(best, iou(boxes[a, t], boxes[b, t]))
    return best


def _boxes_from(centers, sizes):
    half = sizes / 2.0
    return np.stack([centers[..., 0] - half[0], centers[..., 1] - half[1],
                     centers[..., 0] + half[0], centers[..., 1] + half[1]], axis=-1)


def _lane_agent(rng, dist, lane_y, label):
    t = np.arange(dist.n_frames)
    widths = {0: (16.0, 22.0), 1: (8.0, 12.0), 2: (6.0, 9.0)}[label]
    w = rng.uniform(*widths)
    h = rng.uniform(10.0, 13.0)
    x0 = rng.uniform(10.0, dist.canvas - 10.0)
    vx = rng.uniform(0.5, 1.8) * rng.choice([-1.0, 1.0])
    centers = np.stack([x0 + vx * t + rng.normal(0, 0.3, dist.n_frames),
                        lane_y + rng.normal(0, 0.3, dist.n_frames)], axis=-1)
    z0 = rng.uniform(0.35, 0.9)
    z = np.clip(z0 + rng.uniform(-0.002, 0.002) * t + rng.normal(0, 0.004, dist.n_frames),
                0.3, 0.95)
    return centers, np.array([vx, 0.0]), np.array([w, h]), z


def _encounter_pair(rng, dist, f_star, confusable):
    """Two car-class agents meeting at frame f_star (0-based).

    2D construction is identical for positives and confusables; only the
    depth channel differs (converging vs held apart).
    """
    t = np.arange(dist.n_frames)
    p = rng.uniform(48.0, 80.0, size=2)
    ang = rng.uniform(0.0, 2.0 * np.pi)
    rel = ang + rng.uniform(0.5 * np.pi, 1.5 * np.pi)
    sp_a, sp_b = rng.uniform(0.8, 1.6, size=2)
    v_a = sp_a * np.array([np.cos(ang), np.sin(ang)])
    v_b = sp_b * np.array([np.cos(rel), np.sin(rel)])
    off = rng.uniform(-2.0, 2.0, size=2)
    centers_a = p + v_a * (t - f_star)[:, None] + rng.normal(0, 0.3, (dist.n_frames, 2))
    centers_b = p + off + v_b * (t - f_star)[:, None] + rng.normal(0, 0.3, (dist.n_frames, 2))
    size_a = np.array([rng.uniform(18.0, 24.0), rng.uniform(12.0, 15.0)])
    size_b = np.array([rng.uniform(18.0, 24.0), rng.uniform(12.0, 15.0)])

    z0 = rng.uniform(0.4, 0.55)
    drift = rng.uniform(-0.002, 0.002)
    z_nom = z0 + drift * t
    z_a = np.clip(z_nom + rng.normal(0, 0.004, dist.n_frames), 0.3, 0.95)
    gap_sign = rng.choice([-1.0, 1.0])
    if confusable:
        gap = rng.uniform(0.22, 0.38)
        z_b_nom = z_nom + gap_sign * gap
        if z_b_nom.min() < 0.3 or z_b_nom.max() > 0.95:
            z_b_nom = z_nom - gap_sign * gap
    else:
        # depth gap holds until shortly before the meeting, then closes
        gap0 = gap_sign * rng.uniform(0.28, 0.5)
        conv_len = int(rng.integers(6, 13))
        ramp = np.clip(1.0 - np.maximum(0.0, t - (f_star - conv_len)) / conv_len, 0.0, 1.0)
        z_b_nom = z_nom + gap0 * ramp
    z_b = np.clip(z_b_nom + rng.normal(0, 0.004, dist.n_frames), 0.05, 0.98)
    return (centers_a, v_a, size_a, z_a), (centers_b, v_b, size_b, z_b)


def _build_trajectory(rng, dist, spec):
    kind_encounter = spec.collision or spec.depth_confusable
    n = spec.n_agents
    centers = np.zeros((n, dist.n_frames, 2))
    boxes = np.zeros((n, dist.n_frames, 4))
    vels = np.zeros((n, 2))
    depths = np.zeros((n, dist.n_frames))
    labels = np.zeros(n, dtype=int)

    lanes = list(_LANES)
    rng.shuffle(lanes)
    start = 0
    if kind_encounter:
        f_star = int(rng.integers(dist.y_window[0] + 2, dist.y_window[1] + 1))
        pair = _encounter_pair(rng, dist, f_star, spec.depth_confusable)
        for a, (c, v, size, z) in enumerate(pair):
            centers[a], vels[a], depths[a] = c, v, z
            boxes[a] = _boxes_from(c, size)
            labels[a] = 0
        start = 2
    for a in range(start, n):
        label = int(rng.integers(0, N_CLASSES))
        c, v, size, z = _lane_agent(rng, dist, lanes[a - start], label)
        centers[a], vels[a], depths[a] = c, v, z
        boxes[a] = _boxes_from(c, size)
        labels[a] = label
    return _Trajectory(boxes=boxes, centers=centers, vels=vels, depths=depths, labels=labels)


def _render_depth_map(dist, traj, t):
    size = dist.depth_size
    cell = dist.canvas / size
    rows = np.arange(size) + 0.5
    depth = 0.05 + 0.2 * (rows / size)[:, None] * np.ones((size, size))
    order = np.argsort(traj.depths[:, t])  # nearer (larger) painted last
    for a in order:
        x1, y1, x2, y2 = traj.boxes[a, t]
        c1, c2 = int(np.floor(x1 / cell)), int(np.ceil(x2 / cell))
        r1, r2 = int(np.floor(y1 / cell)), int(np.ceil(y2 / cell))
        r1, c1 = max(0, r1), max(0, c1)
        r2, c2 = min(size, r2), min(size, c2)
        if r2 > r1 and c2 > c1:
            depth[r1:r2, c1:c2] = np.maximum(depth[r1:r2, c1:c2], traj.depths[a, t])
    return depth


def _render_raster(dist, traj, t):
    size = dist.raster_size
    cell = dist.canvas / size
    img = np.zeros((size, size))
    for a in range(traj.boxes.shape[0]):
        x1, y1, x2, y2 = traj.boxes[a, t]
        c1, c2 = int(np.floor(x1 / cell)), int(np.ceil(x2 / cell))
        r1, r2 = int(np.floor(y1 / cell)), int(np.ceil(y2 / cell))
        r1, c1 = max(0, r1), max(0, c1)
        r2, c2 = min(size, r2), min(size, c2)
        if r2 > r1 and c2 > c1:
            img[r1:r2, c1:c2] = 0.4 + 0.2 * traj.labels[a]
    return img


def _dyn_features(rng, dist, traj):
    """Pooled frame-difference statistics of the label-intensity raster."""
    rasters = [_render_raster(dist, traj, t) for t in range(dist.n_frames)]
    g = int(np.sqrt(dist.d_dyn))
    assert g * g == dist.d_dyn, "d_dyn must be a square for grid pooling"
    block = dist.raster_size // g
    out = np.zeros((dist.n_frames, dist.d_dyn))
    for t in range(dist.n_frames):
        diff = np.abs(rasters[t] - rasters[t - 1]) if t > 0 else np.zeros_like(rasters[0])
        pooled = diff.reshape(g, block, g, block).mean(axis=(1, 3))
        out[t] = 4.0 * pooled.reshape(-1) + rng.normal(0, 0.01, dist.d_dyn)
    return out


def _occluded(spec, agent, t):
    for a, start, end in spec.occlusion_windows:
        if a == agent and start - 1 <= t <= end - 1:
            return True
    return False


def _emit_sample(rng, dist, spec, traj, encoder, video_id, y):
    canvas = dist.canvas
    dyn = _dyn_features(rng, dist, traj)
    frames = []
    det_agents = []
    for t in range(dist.n_frames):
        dets = []
        owners = []
        for a in range(spec.n_agents):
            if _occluded(spec, a, t):
                continue
            box = traj.boxes[a, t] + rng.normal(0, 0.5, 4)
            box = np.array([np.clip(box[0], 0, canvas - 1), np.clip(box[1], 0, canvas - 1),
                            np.clip(box[2], 1, canvas), np.clip(box[3], 1, canvas)],
                           dtype=np.float32)
            if box[0] >= box[2] or box[1] >= box[3]:
                continue  # fully left the canvas
            vel = traj.vels[a] + rng.normal(0, 0.1, 2)
            dets.append(Detection(
                box=box, label_id=int(traj.labels[a]),
                score=float(rng.uniform(0.55, 0.98)),
                obj_feature=encoder.obj_feature(rng, canvas, box, vel,
                                                traj.labels[a]).astype(np.float32),
                label_feature=encoder.label_feature(rng, traj.labels[a]).astype(np.float32)))
            owners.append(a)
        depth = np.clip(_render_depth_map(dist, traj, t)
                        + rng.normal(0, 0.01, (dist.depth_size, dist.depth_size)),
                        0.0, None)
        frames.append(FrameObservation(index=t, detections=dets,
                                       depth_map=depth.astype(np.float32),
                                       dyn_feature=dyn[t].astype(np.float32)))
        det_agents.append(owners)
    meta = {
        "kind": ("positive" if spec.collision
                 else "confusable" if spec.depth_confusable else "plain"),
        "boxes": traj.boxes, "depths": traj.depths, "labels": traj.labels,
        "det_agents": det_agents, "occlusions": list(spec.occlusion_windows),
        "n_agents": spec.n_agents,
    }
    return VideoSample(id=video_id, frames=frames, positive=spec.collision,
                       accident_frame=y, fps=dist.fps, meta=meta)


def generate_sample(spec, dist=None, video_id=None):
    """Build one VideoSample from a scenario spec (deterministic in rng_seed)."""
    dist = dist or ScenarioDistribution()
    if spec.collision and spec.n_agents < 2:
        raise ScenarioError("collision requires at least 2 agents, got %d" % spec.n_agents)
    if spec.depth_confusable and spec.n_agents < 2:
        raise ScenarioError("depth-confusable overlap requires at least 2 agents")
    if spec.collision and spec.depth_confusable:
        raise ScenarioError("a sample cannot be both a collision and depth-confusable")
    for a, start, end in spec.occlusion_windows:
        if not (0 <= a < spec.n_agents):
            raise ScenarioError("occlusion window names unknown agent %d" % a)
        if start < 1 or end > spec.n_frames:
            raise ScenarioError("occlusion window (%d, %d) outside [1, %d]"
                                % (start, end, spec.n_frames))
    encoder = _Encoder(dist.d1, dist.d2)
    for attempt in range(60):
        rng = np.random.default_rng(np.random.PCG64(
            np.random.SeedSequence([spec.rng_seed, attempt])))
        traj = _build_trajectory(rng, dist, spec)
        y = first_collision_frame(traj.boxes, traj.depths,
                                  dist.overlap_thresh, dist.depth_eps)
        if spec.collision:
            if y is not None and dist.y_window[0] <= y <= dist.y_window[1]:
                break
        elif spec.depth_confusable:
            if y is None and _max_pair_iou(traj.boxes) >= dist.overlap_thresh:
                break
        else:
            if y is None and _max_pair_iou(traj.boxes) < dist.overlap_thresh:
                break
    else:
        raise ScenarioError("could not realize scenario %r in 60 attempts" % spec)
    vid = video_id or "v%016x" % (spec.rng_seed & 0xFFFFFFFFFFFFFFFF)
    return _emit_sample(rng, dist, spec, traj, encoder, vid, y)


def generate_dataset(dist, count, seed):
    """Draw `count` samples from the scenario distribution, seed-deterministic."""
    if count < 1:
        raise ScenarioError("count must be >= 1, got %d" % count)
    rng = np.random.default_rng(np.random.PCG64(seed))
    n_pos = round(dist.positive_fraction * count)
    n_neg = count - n_pos
    n_conf = round(dist.confusable_fraction * n_neg)
    kinds = (["positive"] * n_pos + ["confusable"] * n_conf
             + ["plain"] * (n_neg - n_conf))
    rng.shuffle(kinds)
    samples = []
    for idx, kind in enumerate(kinds):
        encounter = kind in ("positive", "confusable")
        lo, hi = dist.agents_range
        if not encounter:
            hi = min(hi, len(_LANES))
        else:
            hi = min(hi, len(_LANES) + 2)
        n_agents = int(rng.integers(lo, hi + 1))
        windows = []
        if rng.uniform() < dist.occlusion_prob:
            agent = int(rng.integers(2, n_agents)) if encounter else int(rng.integers(0, n_agents))
            start = int(rng.integers(5, dist.n_frames - 10))
            windows.append((agent, start, start + int(rng.integers(1, 4))))
        spec = ScenarioSpec(n_agents=n_agents, n_frames=dist.n_frames, fps=dist.fps,
                            collision=kind == "positive",
                            depth_confusable=kind == "confusable",
                            occlusion_windows=windows,
                            rng_seed=int(rng.integers(0, 2 ** 62)))
        samples.append(generate_sample(spec, dist, video_id="v%05d" % idx))
    return samples


def occlude(sample, agent, start, end):
    """Copy of the sample with the agent's detections removed in [start, end].

    The window is 1-based inclusive; an empty window (end < start) returns
    an unchanged copy. Ground truth in `meta` is untouched so tests can
    assert against the hidden trajectory.
    """
    meta = sample.meta
    if "det_agents" not in meta:
        raise ValueError("occlude: sample carries no detection ownership metadata")
    if not (0 <= agent < meta["n_agents"]):
        raise ValueError("occlude: unknown agent %r" % agent)
    if start < 1 or start > sample.n_frames or end > sample.n_frames:
        raise ValueError("occlude: window (%r, %r) outside [1, %d]"
                         % (start, end, sample.n_frames))
    out = copy.deepcopy(sample)
    if end < start:
        return out
    for t in range(start - 1, end):
        frame = out.frames[t]
        owners = out.meta["det_agents"][t]
        keep = [j for j, a in enumerate(owners) if a != agent]
        frame.detections = [frame.detections[j] for j in keep]
        out.meta["det_agents"][t] = [owners[j] for j in keep]
    out.meta.setdefault("occlusions", []).append((agent, start, end))
    return out
