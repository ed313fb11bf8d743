"""Pipeline configuration: one INI-style ``key = value`` file with a section per
phase, plus ``section.key=value`` overrides from the command line.

Every default here is the single source of hyperparameter truth; modules read
their section and never hard-code their own values.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class DataConfig:
    nodes: str = ""
    edges: str = ""
    splits: str = ""
    id_column: str = "id"
    label_column: str = "label"
    sensitive_column: str = "sensitive"
    split_fractions: tuple = (0.5, 0.25, 0.25)


@dataclass
class CondenseConfig:
    rho: float = 0.05
    allocation: str = "marginal"  # marginal | joint
    proxy_steps: int = 200
    proxy_lr: float = 0.01
    proxy_clip: float = 1.0
    proxy_hidden: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    k_sparse: int = 5
    k_dense: int = 0  # 0 -> max(10, ceil(mean degree of the source graph))
    sparse_threshold: int = 20000
    random_coreset: bool = False


@dataclass
class SpectralConfig:
    num_components: int = 32  # clamped to n_syn
    d_enc: int = 64
    heads: int = 4
    which: str = "smallest"  # smallest | largest
    frozen: bool = False


@dataclass
class TrainConfig:
    layers: int = 2
    hidden: int = 64
    dropout: float = 0.5
    epochs: int = 300
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    smoothing: float = 0.1
    curriculum_epochs: int = 40
    disable_fairness: bool = False
    fairness_envelope: float = 1.5
    selection_margin: float = 0.05
    norm_eps: float = 1e-6


@dataclass
class EvalConfig:
    positive_class: int = 1
    group_partition: str = ""  # "raw:bin,raw:bin"; empty -> identity on {0,1}
    seeds: int = 5


@dataclass
class PipelineConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    condense: CondenseConfig = field(default_factory=CondenseConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    SECTIONS = ("data", "condense", "spectral", "train", "evaluate")

    def validate(self) -> "PipelineConfig":
        c, s, t, e = self.condense, self.spectral, self.train, self.evaluate
        _check(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        fr = self.data.split_fractions
        _check(len(fr) == 3 and all(f >= 0 for f in fr) and 0 < sum(fr) <= 1 + 1e-12,
               "data.split_fractions must be three non-negative numbers summing to at most 1")
        _check(0.0 < c.rho < 1.0, f"condense.rho must lie in (0, 1), got {c.rho}")
        _check(c.allocation in ("joint", "marginal"), "condense.allocation must be 'joint' or 'marginal'")
        _check(c.proxy_steps >= 1, "condense.proxy_steps must be >= 1")
        _check(c.proxy_lr >= 0, "condense.proxy_lr must be >= 0")
        _check(c.proxy_clip > 0, "condense.proxy_clip must be > 0")
        _check(c.proxy_hidden >= 1, "condense.proxy_hidden must be >= 1")
        _check(c.k_sparse >= 1 and c.k_dense >= 0, "condense.k_sparse must be >= 1 and k_dense >= 0")
        _check(c.sparse_threshold >= 1, "condense.sparse_threshold must be >= 1")
        _check(s.num_components >= 1, "spectral.num_components must be >= 1")
        _check(s.d_enc >= 2 and s.d_enc % 2 == 0, "spectral.d_enc must be even and >= 2")
        _check(s.heads >= 1 and s.d_enc % s.heads == 0, "spectral.heads must divide spectral.d_enc")
        _check(s.which in ("smallest", "largest"), "spectral.which must be 'smallest' or 'largest'")
        _check(t.layers >= 1 and t.hidden >= 1, "train.layers and train.hidden must be >= 1")
        _check(0.0 <= t.dropout < 1.0, "train.dropout must lie in [0, 1)")
        _check(t.epochs >= 1, "train.epochs must be >= 1")
        _check(0.0 <= t.lr_min <= t.lr_max, "train.lr_min must satisfy 0 <= lr_min <= lr_max")
        _check(t.weight_decay >= 0, "train.weight_decay must be >= 0")
        _check(0.0 <= t.smoothing < 1.0, "train.smoothing must lie in [0, 1)")
        _check(t.curriculum_epochs >= 0, "train.curriculum_epochs must be >= 0")
        _check(t.fairness_envelope >= 1.0, "train.fairness_envelope must be >= 1")
        _check(0.0 <= t.selection_margin <= 1.0, "train.selection_margin must lie in [0, 1]")
        _check(e.seeds >= 1, "evaluate.seeds must be >= 1")
        self.group_partition()
        return self

    def group_partition(self) -> dict | None:
        text = self.evaluate.group_partition.strip()
        if not text:
            return None
        out = {}
        for item in text.split(","):
            try:
                raw, binary = item.split(":")
                out[int(raw)] = int(binary)
            except ValueError:
                raise ConfigError(f"evaluate.group_partition: malformed entry {item!r}") from None
        if set(out.values()) - {0, 1}:
            raise ConfigError("evaluate.group_partition must map onto {0, 1}")
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls(seed=int(d.get("seed", 0)))
        for name in cls.SECTIONS:
            section = getattr(cfg, name)
            for key, value in d.get(name, {}).items():
                _set(section, name, key, value)
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()) -> "PipelineConfig":
        cfg = cls()
        if path:
            parser = configparser.ConfigParser()
            if not parser.read(path, encoding="utf-8"):
                raise ConfigError(f"cannot read config file {path}")
            for name in parser.sections():
                if name == "run":
                    for key, value in parser.items(name):
                        if key != "seed":
                            raise ConfigError(f"unknown key run.{key}")
                        cfg.seed = _coerce(value, int, "run.seed")
                    continue
                if name not in cls.SECTIONS:
                    raise ConfigError(f"unknown config section [{name}]")
                for key, value in parser.items(name):
                    _set(getattr(cfg, name), name, key, value)
            base = Path(path).parent
            for attr in ("nodes", "edges", "splits"):
                value = getattr(cfg.data, attr)
                if value and not Path(value).is_absolute():
                    setattr(cfg.data, attr, str(base / value))
        for item in overrides:
            cfg.override(item)
        return cfg

    def override(self, item: str) -> None:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        dotted = dotted.strip()
        if dotted in ("seed", "run.seed"):
            self.seed = _coerce(value, int, "seed")
            return
        if "." not in dotted:
            raise ConfigError(f"override {item!r} must name a section")
        name, key = dotted.split(".", 1)
        if name not in self.SECTIONS:
            raise ConfigError(f"unknown config section {name!r}")
        _set(getattr(self, name), name, key, value)


def _check(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def _coerce(value, typ, label):
    if not isinstance(value, str):
        if typ is tuple:
            return tuple(float(v) for v in value)
        if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if type(value) is typ:
            return value
        value = str(value)
    text = value.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is tuple:
            return tuple(float(v) for v in text.strip("()[]").split(","))
        return text
    except ValueError:
        raise ConfigError(f"{label}: cannot parse {value!r} as {typ.__name__}") from None


def _set(section, section_name: str, key: str, value) -> None:
    fields = {f.name: f for f in dataclasses.fields(section)}
    if key not in fields:
        raise ConfigError(f"unknown config key {section_name}.{key}")
    default = getattr(type(section)(), key)
    typ = type(default)
    setattr(section, key, _coerce(value, typ, f"{section_name}.{key}"))
