"""Run configuration: JSON file with data/model/train/eval sections.

Unknown keys are rejected and every value is range-checked, so a typo in
a config fails loudly instead of silently training the wrong model.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .metrics import TTA_CONVENTIONS
from .model import ModelConfig
from .training import SchedulerConfig, TrainConfig

# full-scale widths reported for the original encoders; desk-scale synthetic
# archives use much smaller ones
FULL_SCALE = {
    "d1": 4096,        # object feature width
    "d2": 96,          # label feature width
    "depth_feature": 1024,
    "d_dyn_in": 2048,  # I3D-style global feature width
    "d_e": 512,        # shared embedding width
    "m": 19,           # node slots per frame
}


@dataclass
class DataConfig:
    archive: str = ""
    split_seed: int = 0


@dataclass
class EvalConfig:
    q: float = 0.5
    r0: float = 0.8
    tta_convention: str = "standard"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_RANGES = {
    ("model", "d_e"): (1, 4096),
    ("model", "d_gd"): (1, 8192),
    ("model", "d_int"): (1, 4096),
    ("model", "d_dyn"): (1, 4096),
    ("model", "g"): (1, 64),
    ("model", "m"): (1, 256),
    ("model", "k_occ"): (0, 1000),
    ("model", "heads"): (1, 16),
    ("model", "d_gat"): (1, 4096),
    ("train", "batch_size"): (1, 100000),
    ("train", "epochs"): (1, 100000),
}


def _apply(section_name, obj, values):
    known = set(obj.__dataclass_fields__)
    for key, val in values.items():
        if key not in known:
            raise ConfigError("unknown key %r in section %r (known: %s)"
                              % (key, section_name, ", ".join(sorted(known))))
        if (section_name, key) in _RANGES:
            lo, hi = _RANGES[(section_name, key)]
            if not (isinstance(val, int) and lo <= val <= hi):
                raise ConfigError("%s.%s must be an integer in [%d, %d], got %r"
                                  % (section_name, key, lo, hi, val))
        setattr(obj, key, val)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found: %s" % path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("config %s is not valid JSON: %s" % (path, e)) from e
    return parse_config(raw)


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = RunConfig()
    known = {"data", "model", "train", "eval"}
    for section in raw:
        if section not in known:
            raise ConfigError("unknown config section %r (known: %s)"
                              % (section, ", ".join(sorted(known))))
    try:
        _apply("data", cfg.data, raw.get("data", {}))
        model_values = dict(raw.get("model", {}))
        _apply("model", cfg.model, model_values)
        cfg.model.__post_init__()
        train_values = dict(raw.get("train", {}))
        sched = train_values.pop("scheduler", None)
        _apply("train", cfg.train, train_values)
        if sched is not None:
            sc = SchedulerConfig()
            _apply("train.scheduler", sc, sched)
            cfg.train.scheduler = sc
        cfg.train.__post_init__()
        _apply("eval", cfg.eval, raw.get("eval", {}))
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    if not (0.0 <= cfg.eval.q <= 1.0):
        raise ConfigError("eval.q must be in [0, 1], got %r" % cfg.eval.q)
    if not (0.0 < cfg.eval.r0 <= 1.0):
        raise ConfigError("eval.r0 must be in (0, 1], got %r" % cfg.eval.r0)
    if cfg.eval.tta_convention not in TTA_CONVENTIONS:
        raise ConfigError("eval.tta_convention must be one of %r" % (TTA_CONVENTIONS,))
    ml = cfg.model.max_lookback
    if ml is not None and not (isinstance(ml, int) and ml >= 1):
        raise ConfigError("model.max_lookback must be null or an integer >= 1, got %r" % ml)
    if cfg.train.learning_rate <= 0:
        raise ConfigError("train.learning_rate must be > 0")
    return cfg
