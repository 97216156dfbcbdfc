"""Experiment configuration stored as an INI document.

Sections mirror the pipeline stages::

    [experiment]     seed, mode, out
    [learner]        gamma, alpha, epsilon, episodes, beta_train
    [horde]          n_train_goals, episodes_per_goal, replay_updates
    [decomposition]  rank, max_iters, tol, ridge
    [nets]           lr, batch_state_goal, batch_option_action, epochs
    [eval]           episodes, trained_goals, unseen_goals, beta_eval

Floats are written with ``repr`` so a save/load cycle is exact.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .nets import TrainConfig
from .tabular import LearnerConfig

MODES = ("supervised", "rl")


@dataclass(frozen=True)
class HordeSection:
    n_train_goals: int = 25
    episodes_per_goal: int = 2
    replay_updates: int = 20_000


@dataclass(frozen=True)
class DecompositionSection:
    rank: int = 50
    max_iters: int = 500
    tol: float = 1e-6
    ridge: float = 1e-9


@dataclass(frozen=True)
class NetsSection:
    lr: float = 0.05
    batch_state_goal: int = 16
    batch_option_action: int = 2
    epochs: int = 2000


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 10
    trained_goals: int = 5
    unseen_goals: int = 3
    beta_eval: float = 0.5


@dataclass(frozen=True)
class LearnerSection:
    gamma: float = 0.99
    alpha: float = 0.1
    epsilon: float = 0.2
    episodes: int = 500_000
    beta_train: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    mode: str = "supervised"
    out: str = "runs/default"
    learner: LearnerSection = field(default_factory=LearnerSection)
    horde: HordeSection = field(default_factory=HordeSection)
    decomposition: DecompositionSection = field(default_factory=DecompositionSection)
    nets: NetsSection = field(default_factory=NetsSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.horde.n_train_goals < 1 or self.horde.episodes_per_goal < 0:
            raise ValueError("horde sizes must be positive")
        if self.decomposition.rank < 1 or self.decomposition.max_iters < 1:
            raise ValueError("rank and max_iters must be >= 1")
        if self.eval.episodes < 1 or not 0.0 <= self.eval.beta_eval <= 1.0:
            raise ValueError("eval needs >= 1 episode and beta_eval in [0, 1]")
        if self.eval.trained_goals > self.horde.n_train_goals:
            raise ValueError("more trained eval goals than training goals")
        self.learner_config()
        self.train_config()

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "ExperimentConfig":
        """Defaults for a pipeline: 25 goals for supervised, 15 for rl."""
        goals = 25 if mode == "supervised" else 15
        return cls(mode=mode, horde=HordeSection(n_train_goals=goals), **kw)

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(**asdict(self.learner))

    def train_config(self) -> TrainConfig:
        n = self.nets
        return TrainConfig(n.lr, n.batch_state_goal, n.batch_option_action, n.epochs, self.seed)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_SECTIONS = {"learner": LearnerSection, "horde": HordeSection,
             "decomposition": DecompositionSection, "nets": NetsSection, "eval": EvalSection}
_TOP = ("seed", "mode", "out")


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _parse(kind: type, text: str):
    if kind is int:
        return int(text.replace("_", ""))
    if kind is float:
        return float(text)
    return text


def dumps_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["experiment"] = {k: _fmt(getattr(cfg, k)) for k in _TOP}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {f.name: _fmt(getattr(section, f.name)) for f in fields(section)}
    lines = []
    for name in parser.sections():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in parser[name].items())
        lines.append("")
    return "\n".join(lines)


def loads_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    unknown = set(parser.sections()) - set(_SECTIONS) - {"experiment"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    top: dict = {}
    if parser.has_section("experiment"):
        types = {f.name: f.type for f in fields(ExperimentConfig)}
        for key, raw in parser["experiment"].items():
            if key not in _TOP:
                raise ValueError(f"unknown key experiment.{key}")
            top[key] = _parse(int if types[key] in (int, "int") else str, raw)
    mode = top.get("mode", "supervised")
    base = ExperimentConfig.for_mode(mode) if mode in MODES else ExperimentConfig()
    sections = {}
    for name, kind in _SECTIONS.items():
        values = asdict(getattr(base, name))
        if parser.has_section(name):
            types = {f.name: f.type for f in fields(kind)}
            for key, raw in parser[name].items():
                if key not in types:
                    raise ValueError(f"unknown key {name}.{key}")
                t = types[key]
                values[key] = _parse({"int": int, "float": float}.get(t, t), raw)
        sections[name] = kind(**values)
    return ExperimentConfig(**top, **sections)


def load_config(path) -> ExperimentConfig:
    return loads_config(Path(path).read_text())


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(dumps_config(cfg))
