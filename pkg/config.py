"""
Pipeline Configuration
One versioned YAML file resolves into a tree of dataclasses. Parsing is strict:
unknown keys and out-of-range values are rejected with the dotted key name.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional

import yaml

from errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
PROMPT_MODES = ("full", "no-annotation", "camera-params", "scene-description")


@dataclass
class ExtractConfig:
    """Cloud fusion, alignment and object extraction"""

    stride: int = 1
    voxel_size: float = 0.05
    min_points_per_voxel: int = 3
    min_voxels_per_object: int = 8
    floor_categories: List[str] = field(default_factory=lambda: ["floor"])
    wall_categories: List[str] = field(default_factory=lambda: ["wall"])
    structural_categories: List[str] = field(default_factory=lambda: ["floor", "wall", "ceiling"])
    round_categories: List[str] = field(default_factory=lambda: ["round table", "trash bin"])
    residual_threshold: float = 0.5
    closing_iterations: int = 2
    reference_heights: Dict[str, float] = field(
        default_factory=lambda: {"ceiling": 2.4, "countertop": 0.9, "desk": 0.75, "door": 2.0}
    )
    absolute_height_categories: List[str] = field(default_factory=lambda: ["ceiling"])


@dataclass
class AnnotateConfig:
    """Occlusion tolerance policy and marker style"""

    min_tolerance: float = 0.1
    diagonal_fraction: float = 0.5
    marker_radius: int = 5
    label_padding: int = 2
    marker_color: List[int] = field(default_factory=lambda: [255, 32, 32])
    text_color: List[int] = field(default_factory=lambda: [255, 255, 255])
    box_color: List[int] = field(default_factory=lambda: [0, 0, 0])


@dataclass
class PromptConfig:
    mode: str = "full"
    precision: int = 2
    include_polygon: bool = False


@dataclass
class QueryConfig:
    """Chat endpoint, model and retry policy; the key itself only comes from the environment"""

    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    max_images: int = 8
    temperature: float = 0.0
    timeout: float = 60.0
    max_attempts: int = 4
    backoff_base: float = 1.0
    max_tokens: int = 1024
    concurrency: int = 4
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class PathsConfig:
    work_dir: str = "work"
    cache_dir: str = "work/cache"


@dataclass
class PipelineConfig:
    version: int = CONFIG_VERSION
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    annotate: AnnotateConfig = field(default_factory=AnnotateConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    query: QueryConfig = field(default_factory=QueryConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON of the resolved config"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_type(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {value!r}")
        return dict(value)
    return value


def _build(cls, raw: Dict[str, Any], prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key: {prefix}{key}")
    instance = cls()
    for name, value in raw.items():
        default = getattr(instance, name)
        if is_dataclass(default):
            setattr(instance, name, _build(type(default), value, f"{prefix}{name}."))
        else:
            setattr(instance, name, _check_type(f"{prefix}{name}", value, default))
    return instance


def _require(condition: bool, key: str, message: str):
    if not condition:
        raise ConfigError(f"{key}: {message}")


def validate(config: PipelineConfig) -> PipelineConfig:
    _require(config.version == CONFIG_VERSION, "version", f"unsupported version {config.version}")

    e = config.extract
    _require(e.stride >= 1, "extract.stride", "must be >= 1")
    _require(0 < e.voxel_size <= 1.0, "extract.voxel_size", "must be in (0, 1] meters")
    _require(e.min_points_per_voxel >= 1, "extract.min_points_per_voxel", "must be >= 1")
    _require(e.min_voxels_per_object >= 1, "extract.min_voxels_per_object", "must be >= 1")
    _require(e.residual_threshold > 0, "extract.residual_threshold", "must be positive")
    _require(e.closing_iterations >= 0, "extract.closing_iterations", "must be >= 0")
    _require(bool(e.floor_categories), "extract.floor_categories", "must not be empty")
    for category, height in e.reference_heights.items():
        _require(isinstance(height, (int, float)) and height > 0,
                 f"extract.reference_heights.{category}", "must be a positive height")

    a = config.annotate
    _require(a.min_tolerance >= 0, "annotate.min_tolerance", "must be >= 0")
    _require(0 <= a.diagonal_fraction <= 1, "annotate.diagonal_fraction", "must be in [0, 1]")
    _require(a.marker_radius >= 1, "annotate.marker_radius", "must be >= 1")
    for name in ("marker_color", "text_color", "box_color"):
        color = getattr(a, name)
        _require(len(color) == 3 and all(isinstance(c, int) and 0 <= c <= 255 for c in color),
                 f"annotate.{name}", "must be three integers in [0, 255]")

    p = config.prompt
    _require(p.mode in PROMPT_MODES, "prompt.mode", f"must be one of {', '.join(PROMPT_MODES)}")
    _require(0 <= p.precision <= 6, "prompt.precision", "must be in [0, 6]")

    q = config.query
    _require(q.max_attempts >= 1, "query.max_attempts", "must be >= 1")
    _require(q.timeout > 0, "query.timeout", "must be positive")
    _require(q.max_images >= 1, "query.max_images", "must be >= 1")
    _require(q.backoff_base >= 0, "query.backoff_base", "must be >= 0")
    _require(q.concurrency >= 1, "query.concurrency", "must be >= 1")
    _require(0 <= q.temperature <= 2, "query.temperature", "must be in [0, 2]")
    return config


def config_from_dict(raw: Dict[str, Any]) -> PipelineConfig:
    if "version" not in raw:
        raise ConfigError("version: missing (expected version: 1)")
    return validate(_build(PipelineConfig, raw, ""))


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """Resolve the pipeline config; no path means all defaults"""
    if path is None:
        return validate(PipelineConfig())
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config file is not valid YAML: {e}")
    config = config_from_dict(raw if raw is not None else {})
    logger.info(f"Loaded config {path} ({config.config_hash()[:12]})")
    return config


def dump_config(config: PipelineConfig, path: str):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True)
