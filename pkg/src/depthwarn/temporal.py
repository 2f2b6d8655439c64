"""Frame-level fusion and the causal frame graph.

Each frame's depth/interaction/dynamic features concatenate into one node;
edges run strictly from past to future frames. Attention over the causal
mask (plus self-loops) feeds a scalar head and a logistic squashing into
per-frame accident probabilities.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError


@dataclass
class FrameGraph:
    """node_features: [N x d_node] on the tape; a_tem: strict causal mask."""

    node_features: nn.Tensor
    a_tem: np.ndarray


def fuse_node(tape, f_depth_global, f_int, f_dyn, widths):
    """Concatenate (depth, interaction, dynamic) for one frame."""
    got = (f_depth_global.value.shape[-1], f_int.value.shape[-1], f_dyn.value.shape[-1])
    if got != tuple(widths):
        raise DimensionError("fuse_node: component widths %r, config says %r"
                             % (got, tuple(widths)))
    return nn.concat(tape, [f_depth_global, f_int, f_dyn])


def temporal_adjacency(n, max_lookback=None):
    """Strictly lower-triangular boolean mask: frame i may attend to j < i."""
    if n < 1:
        raise DimensionError("temporal_adjacency: need at least one frame")
    a = np.tril(np.ones((n, n), dtype=bool), k=-1)
    if max_lookback is not None:
        a &= ~np.tril(np.ones((n, n), dtype=bool), k=-(max_lookback + 1))
    return a


def predict_logits(tape, graph, heads, w_out, b_out):
    """Per-frame logits [N x 1] from causal graph attention + scalar head.

    Self-loops are added here so frame 0 has a source; the softmax over an
    empty set would be undefined otherwise.
    """
    allowed = graph.a_tem | np.eye(graph.a_tem.shape[0], dtype=bool)
    att = nn.graph_attention(tape, graph.node_features, allowed, heads)
    return nn.linear_forward(tape, att, w_out, b_out)


def logits_to_probs(logits_value):
    """Stable logistic squashing of raw logit values to (0, 1)."""
    v = np.asarray(logits_value, dtype=np.float64).reshape(-1)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out
