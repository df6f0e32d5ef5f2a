"""Run configuration: a YAML document mapped onto dataclasses.

Every experiment parameter (step budget, dialogue length, cell size, view
geometry, success radius, crop) is a field here so defaults are data rather
than code. ``load_config`` validates everything before any episode runs.
"""

from __future__ import annotations

import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .agents import MissingApiKey, RemoteConfig
from .protocol import EpisodeSpec, Mode
from .world import (
    Crop,
    GenerationFailed,
    GridWorld,
    Heading,
    Pose,
    WorldParams,
    generate_world,
    load_world,
    unique_labels,
)

ALLOWED_C_LENS = (0, 1, 3, 5)
ROLES = ("oa", "ga", "decider", "classifier", "embedder", "probe")
AGENT_ROLES = ("oa", "ga", "decider", "probe")
BACKEND_IDS = ("random", "oracle", "noisy", "scripted", "remote")
CLASSIFIER_IDS = ("rule", "ground_truth", "llm")
EMBEDDER_IDS = ("bow", "sentence-transformer")


class ConfigError(ValueError):
    pass


@dataclass
class WorldsConfig:
    count: int = 20
    width: int = 12
    height: int = 12
    object_count: int = 8
    obstacle_density: float = 0.15
    seed: int = 0
    cell_size: float = 0.25
    # start poses are drawn so the shortest path to the target is at most this (meters);
    # starts always lie outside the success radius
    max_shortest_path: float | None = None
    path: str | None = None


@dataclass
class EpisodeConfig:
    mode: str = "NoComm"
    c_len: int = 0
    k: int = 10
    success_radius: float = 1.0
    fov_half_angle: float = 45.0
    view_range: float = 2.0
    crop: list[int] | None = None
    early_stop: bool = True


@dataclass
class ProbeConfig:
    grid_sizes: list[int] = field(default_factory=lambda: [16, 36, 64, 144])
    poses_per_world: int = 1


@dataclass
class RunConfig:
    worlds: WorldsConfig = field(default_factory=WorldsConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    backends: dict[str, Any] = field(default_factory=lambda: {"oa": "oracle", "ga": "oracle", "decider": "oracle"})
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output_dir: str = "runs"
    parallelism: int = 1
    spl_success: str = "oracle"
    ghost_unit: str = "mention"

    def to_dict(self) -> dict:
        return asdict(self)


def _section(cls, data: Any, name: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from exc


def config_from_dict(data: dict, allow_any_clen: bool = False) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = RunConfig(
        worlds=_section(WorldsConfig, data.get("worlds"), "worlds"),
        episode=_section(EpisodeConfig, data.get("episode"), "episode"),
        backends=dict(data.get("backends") or RunConfig().backends),
        probe=_section(ProbeConfig, data.get("probe"), "probe"),
        output_dir=str(data.get("output_dir", "runs")),
        parallelism=int(data.get("parallelism", 1)),
        spl_success=str(data.get("spl_success", "oracle")),
        ghost_unit=str(data.get("ghost_unit", "mention")),
    )
    validate(cfg, allow_any_clen)
    return cfg


def load_config(path: str | Path, allow_any_clen: bool = False) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(data, allow_any_clen)


def validate(cfg: RunConfig, allow_any_clen: bool = False) -> None:
    ep = cfg.episode
    try:
        mode = Mode(ep.mode)
    except ValueError:
        raise ConfigError(f"unknown mode {ep.mode!r}; expected one of {[m.value for m in Mode]}") from None
    if not allow_any_clen and ep.c_len not in ALLOWED_C_LENS:
        raise ConfigError(f"c_len={ep.c_len} not in {ALLOWED_C_LENS} (pass --allow-any-clen to override)")
    if ep.c_len < 0:
        raise ConfigError("c_len must be >= 0")
    if (ep.c_len == 0) == mode.communicates:
        raise ConfigError(f"mode {mode} requires {'c_len >= 1' if mode.communicates else 'c_len = 0'}")
    if ep.k < 1:
        raise ConfigError("k must be >= 1")
    if ep.success_radius < 0:
        raise ConfigError("success_radius must be >= 0")
    if not 0 < ep.fov_half_angle <= 180 or ep.view_range <= 0:
        raise ConfigError("fov_half_angle must be in (0, 180] and view_range > 0")
    if ep.crop is not None and (len(ep.crop) != 4 or ep.crop[2] < 1 or ep.crop[3] < 1):
        raise ConfigError("crop must be [x, y, width, height] with positive size")
    w = cfg.worlds
    if w.path is None:
        if w.count < 1 or w.width < 2 or w.height < 2 or w.cell_size <= 0:
            raise ConfigError("worlds need count >= 1, width/height >= 2 and cell_size > 0")
        if not 0 <= w.obstacle_density < 1:
            raise ConfigError("obstacle_density must be in [0, 1)")
    elif not Path(w.path).exists():
        raise ConfigError(f"world path {w.path} does not exist")
    if cfg.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    if cfg.spl_success not in ("oracle", "final"):
        raise ConfigError("spl_success must be 'oracle' or 'final'")
    if cfg.ghost_unit not in ("mention", "type"):
        raise ConfigError("ghost_unit must be 'mention' or 'type'")
    for role in ("oa", "ga", "decider"):
        if role not in cfg.backends:
            raise ConfigError(f"backends.{role} is required")
    unknown = set(cfg.backends) - set(ROLES)
    if unknown:
        raise ConfigError(f"unknown backend roles: {sorted(unknown)}")
    for role in AGENT_ROLES:
        if role in cfg.backends:
            _check_backend(cfg.backends[role], f"backends.{role}")
    if "classifier" in cfg.backends:
        cid = _spec_id(cfg.backends["classifier"], "backends.classifier")
        if cid not in CLASSIFIER_IDS:
            raise ConfigError(f"backends.classifier: unknown id {cid!r}; expected one of {CLASSIFIER_IDS}")
        if cid == "llm":
            _check_backend((cfg.backends["classifier"].get("params") or {}).get("backend"),
                           "backends.classifier.params.backend")
    if "embedder" in cfg.backends:
        eid = _spec_id(cfg.backends["embedder"], "backends.embedder")
        if eid not in EMBEDDER_IDS:
            raise ConfigError(f"backends.embedder: unknown id {eid!r}; expected one of {EMBEDDER_IDS}")
    for g in cfg.probe.grid_sizes:
        if g < 1 or int(g ** 0.5) ** 2 != g:
            raise ConfigError(f"probe grid size {g} is not a perfect square")
    check_api_keys(cfg)


def _spec_id(spec: Any, where: str) -> str:
    if isinstance(spec, str):
        return spec
    if isinstance(spec, dict) and isinstance(spec.get("id"), str):
        if not isinstance(spec.get("params") or {}, dict):
            raise ConfigError(f"{where}.params must be a mapping")
        return spec["id"]
    raise ConfigError(f"{where} must be an id or a mapping with an 'id'")


def _check_backend(spec: Any, where: str) -> None:
    bid = _spec_id(spec, where)
    if bid not in BACKEND_IDS:
        raise ConfigError(f"{where}: unknown backend id {bid!r}; expected one of {BACKEND_IDS}")
    base = (spec.get("params") or {}).get("base") if isinstance(spec, dict) else None
    if base is not None:
        _check_backend(base, f"{where}.params.base")
    if bid == "remote" and "endpoint_url" not in (spec.get("params") or {} if isinstance(spec, dict) else {}):
        raise ConfigError(f"{where}: remote backend needs params.endpoint_url")


def _remote_params(spec: Any) -> list[dict]:
    """Remote-backend param dicts nested anywhere in a backend spec."""
    if isinstance(spec, str) or not isinstance(spec, dict):
        return []
    params = spec.get("params") or {}
    found = [params] if spec.get("id") == "remote" else []
    return found + _remote_params(params.get("base")) + _remote_params(params.get("backend"))


def check_api_keys(cfg: RunConfig) -> None:
    for spec in cfg.backends.values():
        for params in _remote_params(spec):
            var = params.get("api_key_env_var_name", RemoteConfig.api_key_env_var_name)
            if not os.environ.get(var):
                raise MissingApiKey(var)


# --- worlds and episodes ---------------------------------------------------------


def build_worlds(cfg: RunConfig) -> list[GridWorld]:
    w = cfg.worlds
    if w.path is not None:
        p = Path(w.path)
        files = sorted(p.glob("*.world")) if p.is_dir() else [p]
        if not files:
            raise ConfigError(f"no .world files under {p}")
        return [load_world(f) for f in files]
    worlds = []
    seed = w.seed
    # some seeds cannot host a valid episode; skip them deterministically
    while len(worlds) < w.count:
        if seed - w.seed > 50 * w.count + 100:
            raise GenerationFailed("too many unusable world seeds")
        params = WorldParams(w.width, w.height, w.object_count, w.obstacle_density, seed, w.cell_size)
        seed += 1
        try:
            world = generate_world(params)
        except GenerationFailed:
            continue
        if _episode_start(world, w.max_shortest_path, cfg.episode.success_radius) is not None:
            worlds.append(world)
    return worlds


def _episode_start(world: GridWorld, max_path: float | None, min_path: float = 0.0) -> tuple[str, Pose] | None:
    """Deterministic (target, start pose) for a world whose shortest path lies in
    (``min_path``, ``max_path``], or None if the world has no such pair."""
    rng = random.Random(f"episode:{world.seed}")
    labels = unique_labels(world)
    rng.shuffle(labels)
    for label in labels:
        field_ = world.distance_field(world.target_region(label))
        cells = sorted(c for c, d in field_.items() if d > 0 and world.is_free(c)
                       and d * world.cell_size > min_path + 1e-9
                       and (max_path is None or d * world.cell_size <= max_path + 1e-9))
        if world.spawn.cell in cells and max_path is None:
            return label, world.spawn
        if cells:
            cell = rng.choice(cells)
            return label, Pose(cell[0], cell[1], Heading(rng.randrange(4)))
    return None


def build_specs(cfg: RunConfig, worlds: list[GridWorld]) -> list[EpisodeSpec]:
    ep = cfg.episode
    crop = Crop(*ep.crop) if ep.crop else None
    specs = []
    for i, world in enumerate(worlds):
        start = _episode_start(world, cfg.worlds.max_shortest_path, ep.success_radius)
        if start is None:
            raise ConfigError(f"world {world.name} has no usable target/start pair")
        label, pose = start
        spec = EpisodeSpec(world, pose, label, Mode(ep.mode), ep.k, ep.c_len, ep.success_radius,
                           seed=world.seed * 1000 + i, fov_half_angle=ep.fov_half_angle,
                           view_range=ep.view_range, crop=crop, early_stop=ep.early_stop,
                           episode_id=f"ep-{i:04d}")
        spec.validate()
        specs.append(spec)
    return specs
