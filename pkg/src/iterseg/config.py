"""Flat key-value run configuration.

The file format is one `key = value` per line, UTF-8, with `#` comments
and blank lines ignored. Every key has a default, so the empty string
parses to the default config. render_config() emits the effective
config in canonical form; parsing that text back yields an equal
RunConfig, and re-rendering reproduces it byte for byte (the form the
run manifest embeds).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .data import DatasetSpec, SceneConfig
from .engine import StageSchedule
from .errors import ConfigError
from .model import ArchDescriptor


@dataclass(frozen=True)
class RunConfig:
    # architecture
    patch_size: int = 64
    heatmap_size: int = 32
    num_categories: int = 4
    block_channels: tuple[int, ...] = (16, 32, 64)
    block_strides: tuple[int, ...] = (2, 2, 2)
    head_width: int = 64
    # training schedule
    num_stages: int = 3
    stage_steps: tuple[int, ...] = (3000, 3000, 2000)
    batch_size: int = 16
    learning_rate: float = 1e-3
    momentum: float = 0.9
    # dataset generation
    num_scenes: int = 360
    scene_size: int = 128
    min_instances: int = 2
    max_instances: int = 6
    abut_rate: float = 0.6
    noise_sigma: float = 6.0
    color_jitter: float = 10.0
    min_visible_fraction: float = 0.4
    val_fraction: float = 0.2
    jitter_count: int = 1
    # inference and evaluation
    infer_iterations: int = 3
    ap_iou_thresholds: tuple[float, ...] = (0.5, 0.7)
    box_nms_threshold: float = 0.7
    region_nms_threshold: float = 0.3
    use_superpixels: bool = True
    superpixel_count: int = 200
    slic_iterations: int = 10
    slic_compactness: float = 10.0
    # seeds
    seed: int = 0
    data_seed: int = 0

    def arch(self) -> ArchDescriptor:
        return ArchDescriptor(
            patch_size=self.patch_size,
            heatmap_size=self.heatmap_size,
            num_categories=self.num_categories,
            block_channels=self.block_channels,
            block_strides=self.block_strides,
            head_width=self.head_width,
        )

    def schedule(self) -> StageSchedule:
        return StageSchedule(
            num_stages=self.num_stages,
            stage_steps=self.stage_steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
        )

    def scene_config(self) -> SceneConfig:
        return SceneConfig(
            scene_size=self.scene_size,
            num_categories=self.num_categories,
            min_instances=self.min_instances,
            max_instances=self.max_instances,
            abut_rate=self.abut_rate,
            noise_sigma=self.noise_sigma,
            color_jitter=self.color_jitter,
            min_visible_fraction=self.min_visible_fraction,
        )

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            scene=self.scene_config(),
            num_scenes=self.num_scenes,
            val_fraction=self.val_fraction,
            jitter_count=self.jitter_count,
            patch_size=self.patch_size,
            heatmap_size=self.heatmap_size,
        )


def _field_kinds() -> dict[str, str]:
    kinds = {}
    for f in fields(RunConfig):
        default = getattr(RunConfig, f.name)
        if isinstance(default, bool):
            kinds[f.name] = "bool"
        elif isinstance(default, int):
            kinds[f.name] = "int"
        elif isinstance(default, float):
            kinds[f.name] = "float"
        elif isinstance(default, tuple):
            kinds[f.name] = ("floats" if isinstance(default[0], float)
                             else "ints")
        else:
            raise AssertionError(f"unhandled config field type: {f.name}")
    return kinds


_KINDS = _field_kinds()


def _render_value(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "int":
        return str(value)
    if kind == "float":
        return repr(float(value))
    return ", ".join(str(v) if kind == "ints" else repr(float(v))
                     for v in value)


def _parse_value(kind: str, text: str, key: str):
    text = text.strip()
    try:
        if kind == "bool":
            if text not in ("true", "false"):
                raise ValueError(f"expected true or false, got {text!r}")
            return text == "true"
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ValueError("expected a comma-separated list")
        if kind == "ints":
            return tuple(int(t) for t in items)
        return tuple(float(t) for t in items)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc


def render_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_render_value(_KINDS[f.name], getattr(cfg, f.name))}"
             for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse config text; `overrides` (already-typed values) win over it."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, "
                              f"got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _KINDS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(_KINDS[key], val, key)
    if overrides:
        for key, val in overrides.items():
            if key not in _KINDS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = val
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(encoding="utf-8"), overrides)
