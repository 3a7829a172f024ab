"""Pipeline configuration: one INI section per component, keys named after dataclass fields."""
from __future__ import annotations

import configparser
import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .backend.deformation import DeformationConfig
from .backend.solver import GncConfig
from .frontend.integration import FrontendConfig
from .loop_closure import LoopClosureConfig
from .rooms import RoomConfig
from .world_synth import DriftModel, TrajectorySpec, WorldSpec, WorldSpecError


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    keyframe_cadence: int = 20
    loop_closures: bool = True
    use_gt_trajectory: bool = False
    place_merge_threshold: float = 0.4
    interpolation_neighbors: int = 4
    out: str = "out"

    def validate(self) -> None:
        if self.keyframe_cadence < 1:
            raise ValueError("keyframe_cadence must be at least 1")
        if self.place_merge_threshold <= 0 or self.interpolation_neighbors < 1:
            raise ValueError("merge threshold and interpolation neighbors must be positive")


@dataclass
class EvalConfig:
    object_threshold: float = 0.5
    iou_threshold: float = 0.5
    p_at_k: tuple = (1, 5)

    def validate(self) -> None:
        if self.object_threshold <= 0 or not 0 < self.iou_threshold <= 1:
            raise ValueError("object threshold must be positive and IoU threshold in (0, 1]")
        if any(k < 1 for k in self.p_at_k):
            raise ValueError("p@k needs k >= 1")


SECTIONS = {
    "world": WorldSpec,
    "trajectory": TrajectorySpec,
    "drift": DriftModel,
    "frontend": FrontendConfig,
    "rooms": RoomConfig,
    "loop_closure": LoopClosureConfig,
    "deformation": DeformationConfig,
    "gnc": GncConfig,
    "run": RunConfig,
    "evaluation": EvalConfig,
}


@dataclass
class PipelineConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    drift: DriftModel = field(default_factory=DriftModel)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    rooms: RoomConfig = field(default_factory=RoomConfig)
    loop_closure: LoopClosureConfig = field(default_factory=LoopClosureConfig)
    deformation: DeformationConfig = field(default_factory=DeformationConfig)
    gnc: GncConfig = field(default_factory=GncConfig)
    run: RunConfig = field(default_factory=RunConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        for name in SECTIONS:
            part = getattr(self, name)
            check = getattr(part, "validate", None)
            if check is None:
                continue
            try:
                check()
            except (ValueError, WorldSpecError) as e:
                raise ConfigError(f"[{name}] {e}") from None
        if self.drift.sigma_rot < 0 or self.drift.sigma_trans < 0:
            raise ConfigError("[drift] sigmas must be non-negative")


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            if raw.lower() in ("none", ""):
                return None
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and all(isinstance(x, str) for x in default):
                return tuple(items)
            if default and all(isinstance(x, int) for x in default):
                return tuple(int(x) for x in items)
            return tuple(float(x) for x in items)
        if isinstance(default, str):
            return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None
    raise ConfigError(f"{where}: unsupported value type")


def loads(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse INI text; keys it does not mention keep their value from `base` (or the defaults)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    cfg = copy.deepcopy(base) if base is not None else PipelineConfig()
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        part = getattr(cfg, sec)
        names = {f.name: f for f in dataclasses.fields(part)}
        changes = {}
        for key, raw in cp.items(sec):
            if key not in names:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
            changes[key] = _parse(raw, getattr(part, key), f"[{sec}] {key}")
        setattr(cfg, sec, dataclasses.replace(part, **changes))
    cfg.validate()
    return cfg


def load(path, base: PipelineConfig | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return loads(text, base)


def reference_text() -> str:
    return resources.files("scenegraph3d").joinpath("configs/reference.ini").read_text()


def reference() -> PipelineConfig:
    return loads(reference_text())


def dumps(cfg: PipelineConfig) -> str:
    lines = []
    for sec in SECTIONS:
        part = getattr(cfg, sec)
        lines.append(f"[{sec}]")
        for f in dataclasses.fields(part):
            v = getattr(part, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)
