"""Pipeline configuration: ``section.key = value`` lines mapped onto dataclasses.

Values are Python literals (numbers, tuples, quoted or bare strings). Angles
are in radians. The run seed feeds every seeded stage, so forest and
selection sections carry no seed of their own.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from treeslam.chain import RULES
from treeslam.errors import InvalidConfig
from treeslam.goicp import PRESETS, BnbConfig, preset
from treeslam.pairs import STRATEGIES, SelectionConfig
from treeslam.sim import ForestSpec, ScanSpec


@dataclass(frozen=True)
class PathSpec:
    waypoints: tuple[tuple[float, float], ...] = ((60.0, 20.0), (120.0, 20.0))
    n_frames: int = 200
    jitter: float = 0.0


@dataclass(frozen=True)
class DriftSpec:
    """Odometry drift injected into the simulated odometry pose file."""

    step_rot_bias: float = math.radians(0.3)
    step_trans_noise: float = 0.05


@dataclass(frozen=True)
class SlamSpec:
    outlier_ratio: float = 0.6
    max_iter: int = 60
    tol: float = 1e-4


@dataclass(frozen=True)
class BnbSpec:
    preset: str = "sparse-uniform"
    overrides: tuple[tuple[str, Any], ...] = ()

    def resolve(self) -> BnbConfig:
        return replace(preset(self.preset), **dict(self.overrides))


@dataclass(frozen=True)
class ImproveSpec:
    strategy: str = "medium_gaps_first"
    rounds: int = 5
    rule: str = "index"
    a: float = 1.0
    b: float = 1.0


@dataclass(frozen=True)
class MetricsSpec:
    eps_fine: float = 0.2
    eps_coarse: float = 10.0
    r_alpha: float = 0.5
    min_points: int = 15
    dimension: bool = False
    worst_frames: int = 0


@dataclass(frozen=True)
class RunSpec:
    seed: int = 0
    threads: int = 1


_SEEDLESS = {"forest", "selection"}


@dataclass(frozen=True)
class PipelineConfig:
    forest: ForestSpec = field(default_factory=ForestSpec)
    scan: ScanSpec = field(default_factory=ScanSpec)
    path: PathSpec = field(default_factory=PathSpec)
    drift: DriftSpec = field(default_factory=DriftSpec)
    slam: SlamSpec = field(default_factory=SlamSpec)
    # patience equal to m: every round works through its whole pair list
    selection: SelectionConfig = field(default_factory=lambda: SelectionConfig(m=40, patience=40))
    bnb: BnbSpec = field(default_factory=BnbSpec)
    improve: ImproveSpec = field(default_factory=ImproveSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    run: RunSpec = field(default_factory=RunSpec)

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def forest_spec(self) -> ForestSpec:
        return replace(self.forest, seed=self.seed)

    @property
    def selection_config(self) -> SelectionConfig:
        return replace(self.selection, seed=self.seed)

    def with_run(self, seed: int | None = None, threads: int | None = None) -> PipelineConfig:
        run = self.run
        if seed is not None:
            run = replace(run, seed=seed)
        if threads is not None:
            run = replace(run, threads=threads)
        return replace(self, run=run)


def _keys(section: str, obj) -> list[str]:
    names = [f.name for f in fields(obj)]
    if section in _SEEDLESS:
        names.remove("seed")
    return names


def _literal(text: str) -> Any:
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{where} must be True or False")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise InvalidConfig(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise InvalidConfig(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        return str(value)
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)):
            raise InvalidConfig(f"{where} must be a tuple")
        return tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
    return value


def _bnb_override(key: str, value: Any) -> tuple[str, Any]:
    base = PRESETS["general"]
    names = {f.name for f in fields(base)}
    if key not in names:
        raise InvalidConfig(f"unknown key bnb.{key}")
    default = getattr(base, key)
    if default is None:
        default = 0.0
    return key, _coerce("bnb", key, value, default)


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    updates: dict[str, dict[str, Any]] = {}
    bnb_overrides: dict[str, Any] = dict(cfg.bnb.overrides)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected 'section.key = value'")
        lhs, rhs = (s.strip() for s in line.split("=", 1))
        if lhs.count(".") != 1:
            raise InvalidConfig(f"line {lineno}: key {lhs!r} must be section.key")
        section, key = lhs.split(".")
        if section not in {f.name for f in fields(PipelineConfig)}:
            raise InvalidConfig(f"line {lineno}: unknown section {section!r}")
        value = _literal(rhs)
        if section == "bnb" and key != "preset":
            k, v = _bnb_override(key, value)
            bnb_overrides[k] = v
            continue
        obj = getattr(cfg, section)
        if key not in _keys(section, obj):
            raise InvalidConfig(f"line {lineno}: unknown key {lhs!r}")
        updates.setdefault(section, {})[key] = _coerce(section, key, value, getattr(obj, key))
    try:
        sections = {name: replace(getattr(cfg, name), **vals) for name, vals in updates.items()}
        out = replace(cfg, **sections)
        out = replace(out, bnb=replace(out.bnb, overrides=tuple(sorted(bnb_overrides.items()))))
        validate(out)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None
    return out


def validate(cfg: PipelineConfig) -> None:
    if cfg.improve.strategy not in STRATEGIES:
        raise InvalidConfig(f"improve.strategy must be one of {STRATEGIES}")
    if cfg.improve.rule not in RULES:
        raise InvalidConfig(f"improve.rule must be one of {RULES}")
    if cfg.improve.rounds < 1:
        raise InvalidConfig("improve.rounds must be at least 1")
    if cfg.bnb.preset not in PRESETS:
        raise InvalidConfig(f"bnb.preset must be one of {sorted(PRESETS)}")
    if cfg.path.n_frames < 2 or len(cfg.path.waypoints) < 2:
        raise InvalidConfig("path needs two waypoints and two frames")
    if cfg.run.threads < 1:
        raise InvalidConfig("run.threads must be at least 1")
    if not 0 <= cfg.scan.dropout < 1 or cfg.scan.max_range <= 0:
        raise InvalidConfig("scan.dropout must lie in [0, 1) and scan.max_range be positive")
    cfg.bnb.resolve()


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def format_config(cfg: PipelineConfig) -> str:
    """Fully resolved config; parsing it back yields an equal config."""
    lines = []
    for sec in fields(PipelineConfig):
        obj = getattr(cfg, sec.name)
        if sec.name == "bnb":
            lines.append(f"bnb.preset = {obj.preset}")
            lines.extend(f"bnb.{k} = {v!r}" for k, v in obj.overrides)
            continue
        for key in _keys(sec.name, obj):
            value = getattr(obj, key)
            lines.append(f"{sec.name}.{key} = {value if isinstance(value, str) else repr(value)}")
    return "\n".join(lines) + "\n"
