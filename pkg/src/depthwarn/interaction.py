"""Per-frame scene graphs: node embedding, distance-kernel spatial
adjacency, occlusion tracking with linear reconstruction, and the dual
graph-convolution interaction features.

Node slots: detected agents occupy the leading slots of an m-slot graph,
reconstructed (occluded) agents fill the following free slots. The
spatial adjacency runs over detected nodes only; the reconstruction
adjacency runs over every pair with at least one reconstructed endpoint.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DimensionError, EmptyGraphError

IOU_MATCH_THRESH = 0.3


@dataclass
class SceneGraph:
    """One frame's graph: m node slots, masks and both adjacencies.

    a_mn sums to 1 over valid (detected) ordered pairs. rec_pairs lists
    the ordered index pairs carrying reconstruction edges; a_rec is only
    materialized on the tape during the forward pass.
    """

    nodes_obj: np.ndarray       # [m x d1] raw object features
    nodes_label: np.ndarray     # [m x d2]
    nodes_depth: np.ndarray     # [m x g*g]
    centers: np.ndarray         # [m x 2] pixels
    valid: np.ndarray           # detected slots
    reconstructed: np.ndarray   # reconstructed slots
    a_mn: np.ndarray            # [m x m]
    rec_pairs: np.ndarray       # [k x 2] ordered pairs, >=1 rec endpoint
    rec_slots: np.ndarray       # indices of reconstructed slots
    rec_pred_centers: np.ndarray  # [r x 2] linear-prediction centers
    rec_theta_in: np.ndarray    # [r x 2*d1] concat(current, last seen) obj feats

    @property
    def occupied(self):
        return self.valid | self.reconstructed


@dataclass
class TrackState:
    """One live track across frames."""

    id: int
    label_id: int
    last_two_centers: list          # most recent last
    last_box: np.ndarray
    last_obj: np.ndarray
    last_label: np.ndarray
    last_depth: np.ndarray          # pooled local depth at last sighting
    frames_since_seen: int = 0


def iou(box_a, box_b):
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def embed_nodes(tape, obj, label, depth, valid, params):
    """[Phi(obj), Phi(label), Phi(depth)] per node; masked rows zero.

    params carries the three independent affine maps (w_obj, b_obj,
    w_label, b_label, w_depth, b_depth), each down to d_e columns.
    """
    if not (obj.shape[0] == label.shape[0] == depth.shape[0] == len(valid)):
        raise DimensionError("embed_nodes: row counts differ (%d, %d, %d, mask %d)"
                             % (obj.shape[0], label.shape[0], depth.shape[0], len(valid)))
    parts = [
        nn.linear_forward(tape, nn.Tensor(obj), params["w_obj"], params["b_obj"]),
        nn.linear_forward(tape, nn.Tensor(label), params["w_label"], params["b_label"]),
        nn.linear_forward(tape, nn.Tensor(depth), params["w_depth"], params["b_depth"]),
    ]
    return nn.zero_rows(tape, nn.concat(tape, parts), valid)


def spatial_adjacency(centers, valid, scale):
    """exp(-d/scale) kernel over valid ordered pairs, normalized globally.

    d is the Euclidean distance between box centers; `scale` is the image
    diagonal so the kernel argument stays O(1). The whole matrix sums
    to 1 over valid pairs (self pairs included).
    """
    valid = np.asarray(valid, dtype=bool)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        raise EmptyGraphError("spatial_adjacency: no valid nodes")
    c = np.asarray(centers, dtype=np.float64)
    m = len(valid)
    a = np.zeros((m, m))
    sub = c[idx]
    diff = sub[:, None, :] - sub[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2)) / scale
    kern = np.exp(-dist)
    a[np.ix_(idx, idx)] = kern / kern.sum()
    return a


def match_tracks(tracks, detections):
    """Greedy same-label IoU matching between live tracks and detections.

    Pairs with IoU >= 0.3 are taken in descending IoU order; ties break
    by (track id, detection index). Returns (matches, unmatched_tracks,
    unmatched_detection_indices) with matches as (track, det_index).
    """
    candidates = []
    for t in tracks:
        for j, det in enumerate(detections):
            if det.label_id != t.label_id:
                continue
            v = iou(t.last_box, det.box)
            if v >= IOU_MATCH_THRESH:
                candidates.append((-v, t.id, j))
    candidates.sort()
    used_tracks, used_dets, matches = set(), set(), []
    by_id = {t.id: t for t in tracks}
    for negv, tid, j in candidates:
        if tid in used_tracks or j in used_dets:
            continue
        used_tracks.add(tid)
        used_dets.add(j)
        matches.append((by_id[tid], j))
    unmatched_tracks = [t for t in tracks if t.id not in used_tracks]
    unmatched_dets = [j for j in range(len(detections)) if j not in used_dets]
    return matches, unmatched_tracks, unmatched_dets


def predict_center(track):
    """Constant-velocity extrapolation from the last two observed centers."""
    cs = track.last_two_centers
    last = np.asarray(cs[-1], dtype=np.float64)
    if len(cs) < 2:
        vel = np.zeros(2)
    else:
        vel = last - np.asarray(cs[-2], dtype=np.float64)
    return last + vel * track.frames_since_seen


@dataclass
class Tracker:
    """Sequential per-video track table feeding the reconstruction path."""

    k_occ: int = 5
    next_id: int = 0
    tracks: list = field(default_factory=list)

    def step(self, detections, depth_rows):
        """Advance one frame; returns tracks to reconstruct this frame.

        depth_rows[j] is detection j's pooled local depth feature. A track
        unseen for more than k_occ frames is dropped, not reconstructed.
        """
        matches, unmatched, new_dets = match_tracks(self.tracks, detections)
        for t, j in matches:
            det = detections[j]
            t.last_two_centers = (t.last_two_centers + [det.center()])[-2:]
            t.last_box = np.array(det.box, dtype=np.float64)
            t.last_obj = det.obj_feature
            t.last_label = det.label_feature
            t.last_depth = depth_rows[j]
            t.frames_since_seen = 0
        reconstruct = []
        survivors = [t for t, _ in matches]
        for t in unmatched:
            t.frames_since_seen += 1
            if t.frames_since_seen <= self.k_occ:
                survivors.append(t)
                reconstruct.append(t)
        for j in new_dets:
            det = detections[j]
            t = TrackState(id=self.next_id, label_id=det.label_id,
                           last_two_centers=[det.center()],
                           last_box=np.array(det.box, dtype=np.float64),
                           last_obj=det.obj_feature, last_label=det.label_feature,
                           last_depth=depth_rows[j])
            self.next_id += 1
            survivors.append(t)
        survivors.sort(key=lambda t: t.id)
        self.tracks = survivors
        reconstruct.sort(key=lambda t: t.id)
        return reconstruct


def reconstruct_occluded(unmatched_tracks):
    """Reconstruction records (center, copied features) for live tracks."""
    out = []
    for t in unmatched_tracks:
        out.append({
            "track_id": t.id,
            "center": predict_center(t),
            "obj": t.last_obj,
            "label": t.last_label,
            "depth": t.last_depth,
        })
    return out


def build_rec_pairs(occupied, reconstructed):
    """Ordered index pairs with at least one reconstructed endpoint."""
    occ = np.flatnonzero(occupied)
    rec = np.asarray(reconstructed, dtype=bool)
    pairs = [(a, b) for a in occ for b in occ if rec[a] or rec[b]]
    return np.asarray(pairs, dtype=np.intp).reshape(-1, 2)


def reconstruction_adjacency(tape, graph, theta_w, theta_b, scale):
    """A_rec on the tape: distance kernel over theta-corrected centers.

    The trainable map theta turns each reconstructed node's concatenated
    (current, last-seen) object features into a 2-vector residual on the
    linear-prediction center. Kernel weights are normalized over the
    reconstruction edge subset only. Returns None when nothing is
    reconstructed (the Eq-style "otherwise" branch: A_rec = 0).
    """
    if graph.rec_slots.size == 0:
        return None
    theta_in = nn.Tensor(graph.rec_theta_in)
    correction = nn.linear_forward(tape, theta_in, theta_w, theta_b)
    corrected = nn.add(tape, correction, nn.Tensor(graph.rec_pred_centers))
    centers = nn.compose_rows(tape, graph.centers, corrected, graph.rec_slots)
    kern = nn.pair_kernel(tape, centers, graph.rec_pairs, scale)
    weights = nn.normalize_sum(tape, kern)
    return nn.scatter_square(tape, weights, graph.rec_pairs, len(graph.valid))


def interaction_features(tape, graph, params, scale, embed_params):
    """Eq-5-style fused interaction vector for one frame: relu([f_int, f_rec]).

    f_int pools a graph convolution over the detected-node spatial graph;
    f_rec pools a second convolution over the reconstruction graph and is
    exactly zero when no node is reconstructed.
    """
    if not graph.valid.any():
        raise EmptyGraphError("interaction_features: no valid nodes")
    nodes = embed_nodes(tape, graph.nodes_obj, graph.nodes_label, graph.nodes_depth,
                        graph.occupied, embed_params)
    conv = nn.graph_conv(tape, nodes, graph.a_mn, params["w_gcn_spatial"], graph.valid)
    f_int = nn.masked_mean_rows(tape, conv, graph.valid)
    a_rec = reconstruction_adjacency(tape, graph, params["w_theta"], params["b_theta"], scale)
    if a_rec is None:
        f_rec = nn.Tensor(np.zeros(params["w_gcn_recon"].value.shape[1]))
    else:
        conv_rec = nn.graph_conv(tape, nodes, a_rec, params["w_gcn_recon"], graph.occupied)
        f_rec = nn.masked_mean_rows(tape, conv_rec, graph.occupied)
    return nn.relu(tape, nn.concat(tape, [f_int, f_rec]))
