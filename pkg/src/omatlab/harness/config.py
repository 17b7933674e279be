"""Experiment configuration: sectioned ``key = value`` text, defaults, digest.

Every random draw in a study derives its seed from the single master seed
through :func:`omatlab.rng.seed_for` with a stage label, so the master seed
plus this file reproduce a whole study.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..rng import seed_for


class ConfigError(ValueError):
    pass


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _strs(s: str) -> tuple[str, ...]:
    # strategies such as lora(4) contain no commas, so a plain split works
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_PARSERS = {int: int, float: float, str: str.strip, bool: _bool, "floats": _floats, "ints": _ints, "strs": _strs}


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _kind(f) -> object:
    return f.metadata.get("kind", f.type)


@dataclass(frozen=True)
class StudySection:
    seed: int = field(default=0, metadata={"kind": int})
    threads: int = field(default=1, metadata={"kind": int})


@dataclass(frozen=True)
class DataSection:
    n_classes: int = field(default=10, metadata={"kind": int})
    pixel_noise: float = field(default=0.08, metadata={"kind": float})
    train_per_class: int = field(default=200, metadata={"kind": int})
    eval_per_class: int = field(default=50, metadata={"kind": int})
    eval_start: int = field(default=5000, metadata={"kind": int})


@dataclass(frozen=True)
class ZooSection:
    steps: int = field(default=3000, metadata={"kind": int})
    batch_size: int = field(default=128, metadata={"kind": int})
    learning_rate: float = field(default=2e-3, metadata={"kind": float})
    per_class: int = field(default=200, metadata={"kind": int})
    fakes_per_class: int = field(default=200, metadata={"kind": int})


@dataclass(frozen=True)
class DetectorSection:
    archetype: str = field(default="frozen_backbone", metadata={"kind": str})
    widths: tuple = field(default=(64, 1024), metadata={"kind": "ints"})
    epochs: int = field(default=60, metadata={"kind": int})
    learning_rate: float = field(default=1e-2, metadata={"kind": float})
    weight_decay: float = field(default=1e-4, metadata={"kind": float})
    batch_size: int = field(default=64, metadata={"kind": int})
    filter_smoothing: float = field(default=0.9, metadata={"kind": float})


@dataclass(frozen=True)
class AttackSection:
    learning_rate: float = field(default=0.015, metadata={"kind": float})
    max_steps: int = field(default=100, metadata={"kind": int})
    success_threshold: float = field(default=0.5, metadata={"kind": float})
    seeds: int = field(default=200, metadata={"kind": int})
    target_class: int = field(default=0, metadata={"kind": int})
    histogram_bin: int = field(default=5, metadata={"kind": int})


@dataclass(frozen=True)
class HarvestSection:
    per_class: int = field(default=60, metadata={"kind": int})
    budget_factor: int = field(default=50, metadata={"kind": int})


@dataclass(frozen=True)
class OmatSection:
    strategies: tuple = field(default=("head_only", "lora(4)", "full"), metadata={"kind": "strs"})
    epochs: int = field(default=20, metadata={"kind": int})
    weight_decay: float = field(default=1e-4, metadata={"kind": float})
    lr_head_only: float = field(default=3e-4, metadata={"kind": float})
    lr_lora: float = field(default=5e-3, metadata={"kind": float})
    lr_full: float = field(default=1e-3, metadata={"kind": float})
    batch_head_only: int = field(default=128, metadata={"kind": int})
    batch_lora: int = field(default=32, metadata={"kind": int})
    batch_full: int = field(default=128, metadata={"kind": int})
    lambda_base: float = field(default=1.0, metadata={"kind": float})
    lambda_slope: float = field(default=0.2, metadata={"kind": float})
    lambda_cap: float = field(default=3.0, metadata={"kind": float})
    w_val: float = field(default=0.6, metadata={"kind": float})
    w_adv: float = field(default=0.4, metadata={"kind": float})
    lora_dropout: float = field(default=0.1, metadata={"kind": float})


@dataclass(frozen=True)
class ReattackSection:
    strategies: tuple = field(default=("head_only", "lora(4)"), metadata={"kind": "strs"})
    max_steps: int = field(default=250, metadata={"kind": int})
    seeds_per_class: int = field(default=20, metadata={"kind": int})
    seed_base: int = field(default=1_000_000, metadata={"kind": int})


@dataclass(frozen=True)
class PixelSection:
    strategy: str = field(default="lora(4)", metadata={"kind": str})


SECTIONS = {
    "study": StudySection,
    "data": DataSection,
    "zoo": ZooSection,
    "detector": DetectorSection,
    "attack": AttackSection,
    "harvest": HarvestSection,
    "omat": OmatSection,
    "reattack": ReattackSection,
    "pixel": PixelSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    study: StudySection = field(default_factory=StudySection)
    data: DataSection = field(default_factory=DataSection)
    zoo: ZooSection = field(default_factory=ZooSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    attack: AttackSection = field(default_factory=AttackSection)
    harvest: HarvestSection = field(default_factory=HarvestSection)
    omat: OmatSection = field(default_factory=OmatSection)
    reattack: ReattackSection = field(default_factory=ReattackSection)
    pixel: PixelSection = field(default_factory=PixelSection)

    @property
    def master_seed(self) -> int:
        return self.study.seed

    def seed(self, label: str) -> int:
        """Sub-seed for a labelled random operation."""
        return seed_for(self.study.seed, label)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, study=replace(self.study, seed=seed))

    def to_text(self, sections=None) -> str:
        """Canonical text form: sections and keys in declaration order."""
        lines = []
        for name in sections or SECTIONS:
            sec = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(sec):
                lines.append(f"{f.name} = {_format(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def digest(self, sections=None) -> str:
        """SHA-256 of the canonical text (``study.threads`` excluded: it never changes results)."""
        cfg = replace(self, study=replace(self.study, threads=1))
        return hashlib.sha256(cfg.to_text(sections).encode("utf-8")).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    built = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in cp.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            try:
                values[key] = _PARSERS[_kind(known[key])](raw)
            except ValueError as e:
                raise ConfigError(f"[{name}] {key}: {e}") from e
        built[name] = cls(**values)
    cfg = ExperimentConfig(**built)
    validate(cfg)
    return cfg


def load_config(path: Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def validate(cfg: ExperimentConfig) -> None:
    from ..omat.train import parse_strategy

    checks = [
        (1 <= cfg.data.n_classes <= 10, "data.n_classes must be in [1, 10]"),
        (cfg.data.train_per_class >= 1 and cfg.data.eval_per_class >= 1, "data per-class counts must be >= 1"),
        (cfg.detector.archetype in ("frozen_backbone", "mlp"), f"unknown archetype {cfg.detector.archetype!r}"),
        (len(cfg.detector.widths) >= 2, "detector.widths needs an input width and at least one layer"),
        (cfg.attack.max_steps >= 1 and cfg.attack.seeds >= 1, "attack.max_steps and attack.seeds must be >= 1"),
        (0 <= cfg.attack.target_class < cfg.data.n_classes, "attack.target_class outside the class range"),
        (cfg.harvest.per_class >= 1, "harvest.per_class must be >= 1"),
        (cfg.reattack.max_steps >= 1 and cfg.reattack.seeds_per_class >= 1, "reattack budget must be >= 1"),
        (cfg.study.threads >= 1, "study.threads must be >= 1"),
        (cfg.data.pixel_noise >= 0, "data.pixel_noise must be >= 0"),
        (cfg.omat.epochs >= 1, "omat.epochs must be >= 1"),
        (abs(cfg.omat.w_val + cfg.omat.w_adv - 1.0) <= 1e-12, "omat.w_val + omat.w_adv must equal 1"),
        (cfg.omat.lambda_cap >= cfg.omat.lambda_base, "omat.lambda_cap must be >= omat.lambda_base"),
        (len(cfg.omat.strategies) >= 1, "omat.strategies is empty"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    try:
        for s in (*cfg.omat.strategies, *cfg.reattack.strategies, cfg.pixel.strategy):
            parse_strategy(s)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    missing = [s for s in (*cfg.reattack.strategies, cfg.pixel.strategy) if s not in cfg.omat.strategies]
    if missing:
        raise ConfigError(f"strategies {missing} are used downstream but not trained in [omat]")
