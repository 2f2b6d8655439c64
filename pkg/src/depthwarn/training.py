"""Training objective, optimizer loop, scheduler and checkpoints.

Positive videos use the exponentially time-weighted log loss (frames near
the accident cost more when mispredicted); negative videos use plain
cross-entropy against the non-accident class. The loop is an adaptive-
moment gradient descent over shuffled batches with global-norm clipping
and reduce-on-plateau on validation AP.
"""

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import metrics, nn
from .errors import ArchiveError, DimensionError, TrainingDiverged
from .model import AblationFlags

CHECKPOINT_MAGIC = b"PDAC"
CHECKPOINT_VERSION = 1
WEIGHT_UNITS = ("frames", "seconds")


@dataclass
class SchedulerConfig:
    factor: float = 0.5
    patience: int = 3


@dataclass
class TrainConfig:
    learning_rate: float = 0.0001
    batch_size: int = 10
    omega1: float | str = "auto"
    tta_weight_unit: str = "seconds"
    epochs: int = 20
    seed: int = 0
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    grad_clip: float = 5.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.omega1 != "auto" and not (isinstance(self.omega1, (int, float)) and self.omega1 > 0):
            raise ValueError("omega1 must be positive or 'auto'")
        if self.tta_weight_unit not in WEIGHT_UNITS:
            raise ValueError("tta_weight_unit must be one of %r" % (WEIGHT_UNITS,))


def time_weights(n, y, fps, unit="seconds"):
    """exp(-max(0, delta_i)) per frame, delta in frames or seconds."""
    i = np.arange(1, n + 1, dtype=np.float64)
    delta = np.maximum(0.0, y - i)
    if unit == "seconds":
        delta = delta / fps
    elif unit != "frames":
        raise ValueError("unknown weight unit %r" % unit)
    return np.exp(-delta)


def positive_loss(curve, y=None, fps=None, unit="seconds"):
    """Sum_i -exp(-max(0, y-i)) * log(P_i) over the whole curve."""
    y = curve.accident_frame if y is None else y
    fps = curve.fps if fps is None else fps
    if y is None:
        raise ValueError("positive_loss: accident frame missing")
    p = np.asarray(curve.probs, dtype=np.float64)
    if not (0 < y <= p.size):
        raise ValueError("positive_loss: accident frame %r outside [1, %d]" % (y, p.size))
    w = time_weights(p.size, y, fps, unit)
    with np.errstate(divide="ignore"):
        return float(-(w * np.log(p)).sum())


def negative_loss(curve):
    """Sum_i -log(1 - P_i): cross-entropy against the non-accident class."""
    p = np.asarray(curve.probs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return float(-np.log1p(-p).sum())


def resolve_omega1(omega1, n_pos, n_neg):
    if omega1 == "auto":
        if n_neg == 0:
            return 1.0
        return n_pos / n_neg
    return float(omega1)


def total_loss(curves, omega1="auto"):
    """Sum of positive losses plus omega1 times the sum of negative losses."""
    if not curves:
        raise ValueError("total_loss: empty batch")
    n_pos = sum(1 for c in curves if c.positive)
    w = resolve_omega1(omega1, n_pos, len(curves) - n_pos)
    pos = sum(positive_loss(c) for c in curves if c.positive)
    neg = sum(negative_loss(c) for c in curves if not c.positive)
    return pos + w * neg


def tape_video_loss(tape, logits, prep, omega1, unit):
    """The same objective expressed on the tape from raw logits.

    Uses softplus identities (-log sigmoid(z) = softplus(-z)) so extreme
    logits cannot produce log(0).
    """
    if prep.positive:
        w = time_weights(prep.n_frames, prep.accident_frame, prep.fps, unit)
        neg_logit = nn.affine_const(tape, logits, -1.0, 0.0)
        terms = nn.mul_const(tape, nn.softplus(tape, neg_logit), w.reshape(-1, 1))
        return nn.sum_all(tape, terms)
    terms = nn.softplus(tape, logits)
    return nn.mul_const(tape, nn.sum_all(tape, terms), omega1)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment update, beta (0.9, 0.999), eps 1e-8.

    Values snap back to the float32 grid after every step so checkpoints
    round-trip bit exactly.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.snap()


def clip_global_norm(params, max_norm):
    total = np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


class ReduceOnPlateau:
    """Halve (by `factor`) the optimizer's lr when the tracked metric
    stops improving for `patience` epochs; higher metric is better."""

    def __init__(self, optimizer, factor=0.5, patience=3):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def step(self, metric):
        if not np.isfinite(metric):
            return
        if metric > self.best:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale > self.patience:
                self.optimizer.lr *= self.factor
                self.stale = 0


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, epoch, rng_state, extra_config=None):
    """PDAC file: magic, u32 version, u32 header length, JSON header,
    then each parameter as raw little-endian float32."""
    names = sorted(model.params)
    header = {
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "rng_state": rng_state,
        "model_config": asdict(model.cfg),
        "dims": asdict(model.dims),
        "params": [{"name": n, "shape": list(model.params[n].value.shape)} for n in names],
    }
    if extra_config:
        header["train_config"] = extra_config
    blob = json.dumps(header, sort_keys=True).encode()
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
              struct.pack("<I", len(blob)), blob]
    for n in names:
        chunks.append(model.params[n].value.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, model_factory=None):
    """Returns (model, header). model_factory(dims_dict, cfg_dict) builds the
    model; by default the packaged AnticipationModel is used."""
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ArchiveError("%s: bad checkpoint magic %r" % (path, buf[:4]))
    (version,) = struct.unpack("<I", buf[4:8])
    if version != CHECKPOINT_VERSION:
        raise ArchiveError("%s: unsupported checkpoint version %d" % (path, version))
    (hlen,) = struct.unpack("<I", buf[8:12])
    header = json.loads(buf[12:12 + hlen].decode())
    if model_factory is None:
        from .data import ArchiveDims
        from .model import AnticipationModel, ModelConfig

        def model_factory(dims_d, cfg_d):
            return AnticipationModel(ArchiveDims(**dims_d), ModelConfig(**cfg_d), seed=0)

    model = model_factory(header["dims"], header["model_config"])
    off = 12 + hlen
    end = off
    for spec in header["params"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        end = off + 4 * n
        if end > len(buf):
            raise ArchiveError("%s: truncated payload for %r" % (path, spec["name"]))
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(spec["shape"])
        if spec["name"] not in model.params:
            raise ArchiveError("%s: unknown parameter %r" % (path, spec["name"]))
        p = model.params[spec["name"]]
        if list(p.value.shape) != list(spec["shape"]):
            raise DimensionError("%s: parameter %r has shape %r, model expects %r"
                                 % (path, spec["name"], spec["shape"], p.value.shape))
        p.value = arr.astype(np.float64)
        p.zero_grad()
    if end != len(buf):
        raise ArchiveError("%s: %d trailing bytes" % (path, len(buf) - end))
    return model, header


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_ap: float
    val_mtta: float
    lr: float


def stratified_split(samples, val_fraction, seed):
    """Deterministic label-stratified (train, val) index split."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    pos = [i for i, s in enumerate(samples) if s.positive]
    neg = [i for i, s in enumerate(samples) if not s.positive]
    val = []
    for group in (pos, neg):
        if not group:
            continue
        k = max(1, round(val_fraction * len(group))) if len(group) > 1 else 0
        perm = rng.permutation(len(group))
        val.extend(group[i] for i in perm[:k])
    val_set = set(val)
    train = [i for i in range(len(samples)) if i not in val_set]
    return train, sorted(val)


def train(model, samples, config, flags=None, log_fn=None, split_seed=None):
    """Fit the model; returns (epoch_logs, final_lr).

    Archived features are frozen inputs; only model.params update. Raises
    TrainingDiverged when the loss goes non-finite.
    """
    flags = flags or AblationFlags()
    preps = [model.prepare_video(s) for s in samples]
    if split_seed is None:
        split_seed = config.seed
    train_idx, val_idx = stratified_split(samples, config.val_fraction, split_seed)
    n_pos = sum(1 for i in train_idx if samples[i].positive)
    n_neg = len(train_idx) - n_pos
    omega1 = resolve_omega1(config.omega1, n_pos, n_neg)

    params = model.param_list()
    opt = Adam(params, config.learning_rate)
    sched = ReduceOnPlateau(opt, config.scheduler.factor, config.scheduler.patience)
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    logs = []
    for epoch in range(1, config.epochs + 1):
        order = [train_idx[i] for i in rng.permutation(len(train_idx))]
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.zero_grads()
            tape = nn.ComputationTape()
            batch_terms = []
            for i in batch:
                logits = model.forward_video(tape, preps[i], flags)
                batch_terms.append(tape_video_loss(tape, logits, preps[i], omega1,
                                                   config.tta_weight_unit))
            loss = batch_terms[0]
            for term in batch_terms[1:]:
                loss = nn.add(tape, loss, term)
            loss_value = float(loss.value)
            if not np.isfinite(loss_value):
                raise TrainingDiverged("non-finite loss %r at epoch %d (batch start %d)"
                                       % (loss_value, epoch, start))
            tape.backward(loss)
            clip_global_norm(params, config.grad_clip)
            opt.step()
            epoch_loss += loss_value
        val_ap, val_mtta = _validation_metrics(model, preps, val_idx, flags)
        sched.step(val_ap)
        entry = EpochLog(epoch=epoch, loss=epoch_loss, val_ap=val_ap,
                         val_mtta=val_mtta, lr=opt.lr)
        logs.append(entry)
        if log_fn:
            log_fn(entry)
    return logs, opt.lr


def _validation_metrics(model, preps, val_idx, flags):
    curves = [model.predict_prepared(preps[i], flags) for i in val_idx]
    has_pos = any(c.positive for c in curves)
    has_neg = any(not c.positive for c in curves)
    if not (has_pos and has_neg):
        return float("nan"), float("nan")
    points = metrics.pr_curve(curves)
    mtta, _ = metrics.tta_stats(curves)
    return metrics.average_precision(points), mtta
