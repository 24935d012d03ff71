"""Pipeline configuration: a flat ``key = value`` file with ``[section]`` headers.

Every key is optional and falls back to the desk-scale defaults below;
unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .geometry import DepthBinning, SceneVolumeSpec
from .losses import LossWeights
from .metrics import CategoryPartition
from .scene import SceneOptions

PYRAMID_STRIDES = (4, 2)
MODES = ("inference", "train")


@dataclass(frozen=True)
class VolumeSection:
    preset: str = "desk"


@dataclass(frozen=True)
class CameraSection:
    width: int = 64
    height: int = 48
    fx: float = 40.0
    fy: float = 40.0
    mount_height: float = 1.0


@dataclass(frozen=True)
class SceneSection:
    partition: str = "desk"
    min_objects: int = 2
    max_objects: int = 6
    sidewalks: bool = True
    wall: bool = True


@dataclass(frozen=True)
class ModelSection:
    channels: int = 16


@dataclass(frozen=True)
class DepthSection:
    d_min: float = 0.2
    d_max: float = 6.6
    bins: int = 16
    stride: int = 4


@dataclass(frozen=True)
class QueriesSection:
    n_ins: int = 32
    block: int = 2
    patch: int = 4


@dataclass(frozen=True)
class DecoderSection:
    layers: int = 3
    heights: int = 8
    n_sel: int = 2
    mask_ratio: float = 0.3
    points: int = 4


@dataclass(frozen=True)
class LossSection:
    lambda_ssc: float = 1.0
    lambda_aug: float = 1.0
    lambda_height: float = 5.0
    lambda_depth: float = 0.01


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    mode: str = "inference"


@dataclass(frozen=True)
class PipelineConfig:
    volume: VolumeSection = field(default_factory=VolumeSection)
    camera: CameraSection = field(default_factory=CameraSection)
    scene: SceneSection = field(default_factory=SceneSection)
    model: ModelSection = field(default_factory=ModelSection)
    depth: DepthSection = field(default_factory=DepthSection)
    queries: QueriesSection = field(default_factory=QueriesSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    loss: LossSection = field(default_factory=LossSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        validate(self)

    @property
    def spec(self) -> SceneVolumeSpec:
        return SceneVolumeSpec.preset(self.volume.preset)

    @property
    def binning(self) -> DepthBinning:
        return DepthBinning(self.depth.d_min, self.depth.d_max, self.depth.bins)

    @property
    def partition(self) -> CategoryPartition:
        return CategoryPartition.preset(self.scene.partition)

    @property
    def loss_weights(self) -> LossWeights:
        s = self.loss
        return LossWeights(s.lambda_ssc, s.lambda_aug, s.lambda_height, s.lambda_depth)

    @property
    def scene_options(self) -> SceneOptions:
        c, s = self.camera, self.scene
        return SceneOptions(c.width, c.height, c.fx, c.fy, c.mount_height,
                            s.min_objects, s.max_objects, sidewalks=s.sidewalks, wall=s.wall)

    @property
    def train(self) -> bool:
        return self.run.mode == "train"

    def with_overrides(self, seed: int | None = None, mode: str | None = None) -> "PipelineConfig":
        run = self.run
        if seed is not None:
            run = replace(run, seed=seed)
        if mode is not None:
            run = replace(run, mode=mode)
        return replace(self, run=run)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            out.append(f"[{f.name}]")
            for k, v in asdict(getattr(self, f.name)).items():
                out.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
            out.append("")
        return "\n".join(out)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: PipelineConfig) -> None:
    try:
        spec = cfg.spec
        cfg.binning
        partition = cfg.partition
    except (ConfigError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    nx, ny, _ = spec.dims
    q, d, cam = cfg.queries, cfg.decoder, cfg.camera
    _require(cfg.model.channels > 0 and cfg.model.channels % 4 == 0,
             f"channels {cfg.model.channels} must be a positive multiple of 4")
    _require(q.block > 0 and nx % q.block == 0 and ny % q.block == 0,
             f"block size {q.block} does not divide the {nx}x{ny} BEV grid")
    _require(0 < q.n_ins <= (nx // q.block) * (ny // q.block),
             f"n_ins {q.n_ins} exceeds the number of voting blocks")
    _require(q.patch > 0 and q.patch & (q.patch - 1) == 0, f"patch {q.patch} is not a power of two")
    _require(nx % q.patch == 0 and ny % q.patch == 0, f"patch {q.patch} does not divide {nx}x{ny}")
    _require(nx % 2 == 0 and ny % 2 == 0, "BEV extents must be even")
    top = max(PYRAMID_STRIDES)
    _require(cam.width % top == 0 and cam.height % top == 0,
             f"image size must be divisible by {top}")
    _require((cam.width // top) % q.patch == 0 and (cam.height // top) % q.patch == 0,
             f"patch {q.patch} does not divide the coarsest image level")
    _require(cfg.depth.stride in PYRAMID_STRIDES,
             f"frustum stride must match a pyramid level {PYRAMID_STRIDES}")
    _require(d.layers >= 1, "decoder needs at least one layer")
    _require(1 <= d.n_sel <= d.heights, f"n_sel {d.n_sel} must lie in [1, {d.heights}]")
    _require(0 <= d.mask_ratio < 1, f"mask_ratio {d.mask_ratio} must lie in [0, 1)")
    _require(d.points >= 1, "deformable attention needs at least one sample point")
    _require(cfg.run.mode in MODES, f"mode must be one of {MODES}")
    _require(0 <= cfg.scene.min_objects <= cfg.scene.max_objects, "object count range is empty")
    _require(partition.num_classes >= 2, "need at least two classes")
    _require(min(cfg.loss.lambda_ssc, cfg.loss.lambda_aug, cfg.loss.lambda_height,
                 cfg.loss.lambda_depth) >= 0, "loss weights must be non-negative")


def _convert(raw: str, kind, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {f.name: f for f in fields(PipelineConfig)}
    built = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        cls = sections[name].default_factory
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            kind = {"int": int, "float": float, "str": str, "bool": bool}[known[key].type]
            values[key] = _convert(raw, kind, f"[{name}] {key}")
        built[name] = cls(**values)
    return PipelineConfig(**built)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
