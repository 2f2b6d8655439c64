"""Per-agent and whole-frame depth features from precomputed depth maps.

Local features: the agent's box is cut out of the frame depth map and
adaptively average-pooled onto a fixed g x g grid. Global feature: the
flattened map through a trainable affine + ReLU projection.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError


@dataclass
class DepthFeatures:
    """local: [m x g*g] pooled crops (masked rows zero); global_proj: [d_gd]."""

    local: np.ndarray
    global_proj: np.ndarray


def scale_box_to_map(box, image_size, map_size):
    """Map a pixel box onto depth-map grid indices (r1, c1, r2, c2).

    The returned bounds are clamped to the grid and cover every map cell
    the box touches; a box fully outside the image yields an empty range.
    """
    ih, iw = image_size
    mh, mw = map_size
    x1, y1, x2, y2 = (float(v) for v in box)
    c1 = int(np.floor(x1 / iw * mw))
    c2 = int(np.ceil(x2 / iw * mw))
    r1 = int(np.floor(y1 / ih * mh))
    r2 = int(np.ceil(y2 / ih * mh))
    return (max(0, r1), max(0, c1), min(mh, r2), min(mw, c2))


def crop_local_depth(depth_map, box):
    """Sub-matrix of the depth map covered by the clamped (r1, c1, r2, c2) box."""
    h, w = depth_map.shape
    r1, c1, r2, c2 = box
    r1, c1 = max(0, int(r1)), max(0, int(c1))
    r2, c2 = min(h, int(r2)), min(w, int(c2))
    if r2 <= r1 or c2 <= c1:
        raise DimensionError("crop_local_depth: box %r is empty after clamping to %r"
                             % (box, (h, w)))
    return depth_map[r1:r2, c1:c2]


def _edges(size, g):
    # adaptive pooling bounds: window i covers [floor(i*size/g), ceil((i+1)*size/g))
    starts = (np.arange(g) * size) // g
    ends = -((np.arange(1, g + 1) * size) // -g)
    return starts, ends


def pool_local_depth(crop, g):
    """Adaptive average pooling of a crop onto a g x g grid, row-major flat."""
    crop = np.asarray(crop, dtype=np.float64)
    if crop.size == 0:
        raise DimensionError("pool_local_depth: empty crop")
    h, w = crop.shape
    rs, re = _edges(h, g)
    cs, ce = _edges(w, g)
    out = np.empty((g, g))
    for i in range(g):
        for j in range(g):
            out[i, j] = crop[rs[i]:re[i], cs[j]:ce[j]].mean()
    return out.reshape(-1)


def project_global_depth(tape, depth_map, w, b):
    """relu(flatten(depth_map) @ W + b), the trainable global projection."""
    flat = nn.Tensor(np.asarray(depth_map, dtype=np.float64).reshape(1, -1))
    if flat.value.shape[1] != w.value.shape[0]:
        raise DimensionError("project_global_depth: map %r vs weight %r"
                             % (depth_map.shape, w.value.shape))
    out = nn.relu(tape, nn.linear_forward(tape, flat, w, b))
    return nn.row(tape, out, 0)


def local_depth_matrix(depth_map, boxes, valid, image_size, g, m):
    """Pooled local depth rows for up to m agents; invalid rows zero.

    Boxes that fall entirely outside the image leave the slot invalid
    (detector noise, not an error). Returns (matrix [m x g*g], valid).
    """
    mh, mw = depth_map.shape
    out = np.zeros((m, g * g))
    valid = np.array(valid, dtype=bool)
    for j, box in enumerate(boxes):
        if j >= m or not valid[j]:
            continue
        grid_box = scale_box_to_map(box, image_size, (mh, mw))
        r1, c1, r2, c2 = grid_box
        if r2 <= r1 or c2 <= c1:
            valid[j] = False
            continue
        out[j] = pool_local_depth(depth_map[r1:r2, c1:c2], g)
    return out, valid
