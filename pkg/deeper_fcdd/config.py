"""Define the run configuration and its layered resolution."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
import hashlib
from importlib import resources
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

from deeper_fcdd.backbone import BackboneSpec
from deeper_fcdd.const import (
    DEFAULT_ADAM_EPSILON,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_EPOCHS,
    DEFAULT_FAST_TRUNCATE,
    DEFAULT_HISTOGRAM_BINS,
    DEFAULT_INPUT_SIZE,
    DEFAULT_LEAKY_ALPHA,
    DEFAULT_LR,
    DEFAULT_OVERLAY_ALPHA,
    DEFAULT_QUARTILE,
    DEFAULT_SPLIT_RATIO,
    SPLITS,
)
from deeper_fcdd.errors import ConfigError
from deeper_fcdd.heatmap import UPSAMPLE_MODES
from deeper_fcdd.metrics import CALIBRATION_RULES
from deeper_fcdd.objective import SCORE_REDUCTIONS
from deeper_fcdd.synthetic import SyntheticSpec

PATH_FIELDS = ("data_root", "output_dir", "hazard_sidecar")
PRECISIONS = ("float64", "float32")
RANGE_SCOPES = ("batch", "image")
PROFILE_NAMES = ("default", "desk", "aider")


@dataclass(frozen=True)
class RunConfig:  # pylint: disable=too-many-instance-attributes
    """Define every knob of a run; defaults are the full-scale training protocol."""

    backbone: Union[str, dict[str, Any]] = "cnn-desk"
    input_size: tuple[int, int] = DEFAULT_INPUT_SIZE
    in_channels: int = 3
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_ADAM_EPSILON
    split_ratio: tuple[float, float, float] = DEFAULT_SPLIT_RATIO
    seed: int = 0
    score_reduction: str = "sum"
    delta: Optional[float] = None
    upsample_mode: str = "reference"
    truncate: float = DEFAULT_FAST_TRUNCATE
    quartile: float = DEFAULT_QUARTILE
    range_scope: str = "batch"
    leaky_alpha: float = DEFAULT_LEAKY_ALPHA
    calibration: str = "max_f1"
    precision: str = "float64"
    class_filter: Optional[str] = None
    score_split: str = "test"
    workers: int = 1
    deterministic: bool = False
    cache_images: bool = False
    histogram_bins: int = DEFAULT_HISTOGRAM_BINS
    overlay_alpha: float = DEFAULT_OVERLAY_ALPHA
    data_root: Optional[str] = None
    output_dir: str = "runs"
    hazard_sidecar: Optional[str] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self) -> None:
        """Validate every field."""
        checks = (
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}"),
            (self.lr >= 0, f"lr must be >= 0, got {self.lr}"),
            (0 <= self.beta1 < 1, f"beta1 must lie in [0, 1), got {self.beta1}"),
            (0 <= self.beta2 < 1, f"beta2 must lie in [0, 1), got {self.beta2}"),
            (self.epsilon > 0, f"epsilon must be > 0, got {self.epsilon}"),
            (
                len(self.input_size) == 2,
                f"input_size needs (h, w), got {self.input_size}",
            ),
            (
                self.in_channels in (1, 3),
                f"in_channels must be 1 or 3, got {self.in_channels}",
            ),
            (
                len(self.split_ratio) == 3,
                f"split_ratio needs 3 parts, got {self.split_ratio}",
            ),
            (
                self.score_reduction in SCORE_REDUCTIONS,
                f"score_reduction must be one of {SCORE_REDUCTIONS}",
            ),
            (
                self.delta is None or self.delta > 0,
                f"delta must be > 0, got {self.delta}",
            ),
            (
                self.upsample_mode in UPSAMPLE_MODES,
                f"upsample_mode must be one of {UPSAMPLE_MODES}",
            ),
            (self.truncate > 0, f"truncate must be > 0, got {self.truncate}"),
            (
                0 < self.quartile <= 1,
                f"quartile must lie in (0, 1], got {self.quartile}",
            ),
            (
                self.range_scope in RANGE_SCOPES,
                f"range_scope must be one of {RANGE_SCOPES}",
            ),
            (
                self.leaky_alpha >= 0,
                f"leaky_alpha must be >= 0, got {self.leaky_alpha}",
            ),
            (
                self.calibration in CALIBRATION_RULES,
                f"calibration must be one of {CALIBRATION_RULES}",
            ),
            (self.precision in PRECISIONS, f"precision must be one of {PRECISIONS}"),
            (self.score_split in SPLITS, f"score_split must be one of {SPLITS}"),
            (self.workers >= 1, f"workers must be >= 1, got {self.workers}"),
            (self.histogram_bins >= 1, "histogram_bins must be >= 1"),
            (
                0 <= self.overlay_alpha <= 1,
                f"overlay_alpha must lie in [0, 1], got {self.overlay_alpha}",
            ),
        )
        for valid, message in checks:
            if not valid:
                raise ConfigError(message)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """Create a config from a plain dict; unknown keys are rejected."""
        names = {item.name for item in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")

        values = dict(data)
        for key in ("input_size", "split_ratio"):
            if key in values:
                values[key] = tuple(values[key])
        if "synthetic" in values and not isinstance(values["synthetic"], SyntheticSpec):
            values["synthetic"] = SyntheticSpec.from_dict(values["synthetic"] or {})
        try:
            return cls(**values)
        except TypeError as err:
            raise ConfigError(f"Invalid config value: {err}") from err

    def as_dict(self) -> dict[str, Any]:
        """Return the JSON form."""
        data: dict[str, Any] = {}
        for item in fields(self):
            value = getattr(self, item.name)
            if isinstance(value, SyntheticSpec):
                value = value.as_dict()
            elif isinstance(value, tuple):
                value = list(value)
            data[item.name] = value
        return data

    @property
    def digest(self) -> str:
        """Return the SHA-256 of the canonical JSON form without path fields."""
        data = {
            key: value
            for key, value in self.as_dict().items()
            if key not in PATH_FIELDS
        }
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @property
    def output_path(self) -> Path:
        """Return the output directory."""
        return Path(self.output_dir)

    def backbone_spec(self) -> BackboneSpec:
        """Return the backbone spec this config selects."""
        return BackboneSpec.from_config(
            self.backbone,
            input_size=self.input_size,
            in_channels=self.in_channels,
            leaky_alpha=self.leaky_alpha,
        )

    def write(self, directory: Union[str, Path, None] = None) -> Path:
        """Echo the resolved config as config.json into a directory."""
        path = Path(directory or self.output_dir) / "config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True)
        path.write_text(text + "\n", encoding="utf-8")
        return path


def load_profile(name: str) -> dict[str, Any]:
    """Return the raw values of a shipped profile."""
    if name not in PROFILE_NAMES:
        raise ConfigError(
            f"Unknown profile '{name}'; choose from {list(PROFILE_NAMES)}"
        )
    source = resources.files("deeper_fcdd").joinpath("profiles", f"{name}.json")
    return json.loads(source.read_text(encoding="utf-8"))


def load_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """Return the raw values of a user JSON config."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"Cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"Config {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    return data


def parse_override(item: str) -> tuple[str, Any]:
    """Return (key, value) of a ``key=value`` override.

    Values parse as JSON; anything that is not JSON stays text.
    """
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"Override '{item}' is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _merge(base: dict[str, Any], layer: Mapping[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in layer.items():
        nested = isinstance(value, Mapping) and isinstance(merged.get(key), Mapping)
        if nested and key != "backbone":
            merged[key] = _merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def _nest(key: str, value: Any) -> dict[str, Any]:
    head, _, rest = key.partition(".")
    return {head: _nest(rest, value) if rest else value}


def resolve_config(
    *,
    profile: Optional[str] = None,
    config_path: Union[str, Path, None] = None,
    flags: Optional[Mapping[str, Any]] = None,
    overrides: Iterable[str] = (),
) -> RunConfig:
    """Return the config layered as defaults, profile, file, flags, then overrides."""
    data: dict[str, Any] = {}
    if profile is not None:
        data = _merge(data, load_profile(profile))
    if config_path is not None:
        data = _merge(data, load_config_file(config_path))
    if flags:
        given = {key: value for key, value in flags.items() if value is not None}
        data = _merge(data, given)
    for item in overrides:
        data = _merge(data, _nest(*parse_override(item)))
    return RunConfig.from_dict(data)
