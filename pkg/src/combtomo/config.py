"""Run configuration documents (JSON) with strict key checking."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .cis import DimensionProfile, ProfileError
from .simulator import Perturbation, Scheme
from .tomography import OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass
class ProfileSpec:
    n_steps: int = 2
    d: int = 2
    ancillas: str = "1-2-2"
    n_instruments: int = 12
    n_branches: int = 2
    d_env: int = 1
    n_states: int = 4
    d_ref: int = 1

    def build(self, n_steps: int | None = None, ancillas: str | None = None) -> DimensionProfile:
        return DimensionProfile.uniform(n_steps or self.n_steps, d=self.d, ancillas=ancillas or self.ancillas,
                                        n_instruments=self.n_instruments, n_branches=self.n_branches,
                                        d_env=self.d_env, n_states=self.n_states, d_ref=self.d_ref)


@dataclass
class PerturbationSpec:
    angle: float = 0.5
    axis: str = "x"
    states: list = field(default_factory=lambda: [0])
    unitary_instruments: list = field(default_factory=lambda: [1, 2])
    measurement_instruments: list = field(default_factory=lambda: [0])

    def build(self, angle: float | None = None) -> Perturbation:
        return Perturbation(self.angle if angle is None else angle, self.axis, tuple(self.states),
                            tuple(self.unitary_instruments), tuple(self.measurement_instruments))


@dataclass
class ExperimentSpec:
    max_tuples: int | None = None
    prefix_lengths: list | None = None
    shots: int | None = None
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)

    def scheme(self, seed: int) -> Scheme:
        lengths = tuple(self.prefix_lengths) if self.prefix_lengths else None
        return Scheme(self.max_tuples, lengths, seed)


@dataclass
class PathsSpec:
    model: str | None = None
    nominal: str | None = None
    truth: str | None = None
    dataset: str | None = None


@dataclass
class EvaluateSpec:
    heatmaps: int = 9


@dataclass
class SuiteSpec:
    ancillas: list = field(default_factory=lambda: ["1-2-2", "1-2-3"])
    n_steps: list = field(default_factory=lambda: [2, 3])
    angles: list = field(default_factory=lambda: [0.5, 1.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    methods: list = field(default_factory=lambda: ["full", "iqct"])
    init: str = "prior"
    max_iterations: int = 50000


@dataclass
class BenchmarkSpec:
    ancillas: list = field(default_factory=lambda: ["1-1-1", "1-2-2", "1-3-3", "1-4-4"])
    n_steps: int = 2
    repetitions: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    paths: PathsSpec = field(default_factory=PathsSpec)
    evaluate: EvaluateSpec = field(default_factory=EvaluateSpec)
    suite: SuiteSpec = field(default_factory=SuiteSpec)
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    cfg = _build(RunConfig, doc, "config")
    try:
        cfg.profile.build()
    except (ProfileError, TypeError, ValueError) as exc:
        raise ConfigError(f"config.profile: {exc}") from exc
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)
