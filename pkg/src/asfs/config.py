"""Run configuration: one YAML file, dotted-path overrides, stable digest."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .data import SyntheticSpec
from .errors import ConfigError
from .harness import DownstreamConfig, PipelineConfig
from .noise import NoiseSpec
from .pretext import PretextConfig
from .selector import MODES, SelectorConfig


@dataclass
class DataConfig:
    csv: str | None = None
    label_column: str | None = "y"
    header: bool = True
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    n_labeled: int = 200
    n_unlabeled: int = 2000
    n_test: int = 1000


@dataclass
class SweepConfig:
    kind: str = "noise"  # noise | budget | cv
    noise: list = field(default_factory=list)  # entries: NoiseSpec dict or list of them
    k_range: list = field(default_factory=lambda: [10, 15, 20, 25, 30])
    budgets: list = field(default_factory=lambda: [100, 300, 1000, 3000])
    modes: list = field(default_factory=lambda: ["full"])
    folds: int = 5
    repeats: int = 5
    share_pretraining: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    seeds: list | None = None
    mode: str = "full"
    k: int = 5
    task: str = "classification"
    data: DataConfig = field(default_factory=DataConfig)
    pretext: PretextConfig = field(default_factory=PretextConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    noise: list = field(default_factory=list)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "runs"

    @property
    def seed_list(self):
        return list(self.seeds) if self.seeds else [self.seed]

    @property
    def noise_specs(self):
        return [NoiseSpec.from_dict(n) for n in self.noise]

    def sweep_noise_settings(self):
        out = []
        for entry in self.sweep.noise:
            if isinstance(entry, list):
                out.append([NoiseSpec.from_dict(e) for e in entry])
            else:
                out.append(NoiseSpec.from_dict(entry))
        return out

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.pretext, self.selector, self.downstream, self.task)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def digest(self) -> str:
        """sha256 over the canonical JSON form, ignoring ``output_dir``."""
        d = self.to_dict()
        d.pop("output_dir", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self, check_paths=True):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.task not in ("classification", "regression"):
            raise ConfigError("task must be classification or regression")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        p, s, dcfg = self.pretext, self.selector, self.downstream
        for name, value in (("pretext.epochs", p.epochs), ("selector.epochs", s.epochs),
                            ("downstream.epochs", dcfg.epochs)):
            if value < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name, value in (("pretext.batch_size", p.batch_size), ("selector.batch_size", s.batch_size),
                            ("downstream.batch_size", dcfg.batch_size), ("selector.hidden", s.hidden)):
            if value < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name, value in (("pretext.learning_rate", p.learning_rate),
                            ("selector.learning_rate", s.learning_rate),
                            ("downstream.learning_rate", dcfg.learning_rate)):
            if not value > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= p.p_m <= 1.0:
            raise ConfigError("pretext.p_m must lie in [0, 1]")
        if p.alpha < 0:
            raise ConfigError("pretext.alpha must be >= 0")
        if s.final_weights not in ("full-pass", "ema"):
            raise ConfigError("selector.final_weights must be full-pass or ema")
        if s.evaluator_input not in ("raw", "reconstruction"):
            raise ConfigError("selector.evaluator_input must be raw or reconstruction")
        if self.sweep.kind not in ("noise", "budget", "cv"):
            raise ConfigError("sweep.kind must be noise, budget or cv")
        for m in self.sweep.modes:
            if m not in MODES:
                raise ConfigError(f"sweep mode {m!r} not in {MODES}")
        data = self.data
        if data.csv is None:
            self.data.synthetic.validate()
        elif check_paths and not Path(data.csv).is_file():
            raise ConfigError(f"data.csv {data.csv!r} does not exist")
        for n in self.noise_specs:
            n.validate()
        for entry in self.sweep_noise_settings():
            for n in entry if isinstance(entry, list) else [entry]:
                n.validate()
        return self


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(name, default, value):
    """Match a scalar to the type of its default. YAML 1.1 reads ``1e3``
    as a string, so numeric strings are converted here."""
    if value is None or default is None:
        return value
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}")
        return value
    if kind in (int, float):
        if isinstance(value, bool):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        try:
            num = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be a number, got {value!r}") from None
        if kind is int:
            if num != int(num):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            return int(num)
        return num
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{name} must be a string, got {value!r}")
    return value


def _build(cls, values: dict, path=""):
    if not isinstance(values, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path or 'config'}")
    kwargs = {}
    defaults = cls()
    for name, value in values.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value or {}, f"{path}{name}.")
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = _coerce(f"{path}{name}", current, value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def from_dict(values: dict) -> RunConfig:
    values = copy.deepcopy(values or {})
    synth = values.get("data", {}).get("synthetic") if isinstance(values.get("data"), dict) else None
    if isinstance(synth, dict) and synth.get("informative") is not None:
        synth["informative"] = tuple(synth["informative"])
    return _build(RunConfig, values)


def set_dotted(values: dict, dotted: str, raw: str):
    """Apply ``a.b.c=value``; the value is parsed as YAML (so 3, 0.1, true, [1, 2] work)."""
    keys = dotted.split(".")
    node = values
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {key} is not a mapping")
    node[keys[-1]] = yaml.safe_load(raw)


def load(path=None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        try:
            values = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        set_dotted(values, key.strip(), raw)
    return from_dict(values)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
