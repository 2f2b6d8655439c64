"""Global dynamic features: causal temporal pooling of the per-frame
archive vectors followed by a trainable affine reduction."""

import numpy as np

from . import nn
from .errors import DimensionError

POOL_WINDOW = 4


def causal_pool(dyn, window=POOL_WINDOW):
    """Mean over frames [i - window + 1, i]; never looks forward."""
    dyn = np.asarray(dyn, dtype=np.float64)
    out = np.empty_like(dyn)
    for i in range(dyn.shape[0]):
        out[i] = dyn[max(0, i - window + 1):i + 1].mean(axis=0)
    return out


def project_dynamic(tape, pooled, w, b):
    """Affine reduction of the pooled dynamic features to d_dyn."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape[-1] != w.value.shape[0]:
        raise DimensionError("project_dynamic: input width %d, weight expects %d"
                             % (pooled.shape[-1], w.value.shape[0]))
    return nn.linear_forward(tape, nn.Tensor(np.atleast_2d(pooled)), w, b)
