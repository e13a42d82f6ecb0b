"""
Pipeline configuration: one dataclass per section, defaults from config.py.

A config document is JSON with optional top-level sections data, mapkit,
synthnet, objectives, trainer, proggan and evalharness. Anything left out
keeps its default, so an empty document is a valid configuration.
"""
import hashlib
import json
import os
import typing
from dataclasses import asdict, dataclass, field, fields, replace

import config
from lesionsynth.errors import ConfigError, InvalidArgumentError
from lesionsynth.evalharness import EvalSettings
from lesionsynth.objectives import LossWeights
from lesionsynth.proggan import PGANConfig
from lesionsynth.synthnet import DiscriminatorConfig, GeneratorConfig
from lesionsynth.trainer import TrainingConfig

SUPERPIXEL_SOURCES = ("archive", "slic")


@dataclass
class DataSettings:
    root: str = config.DATA_ROOT
    output_folder: str = config.OUTPUT_FOLDER
    test_fraction: float = config.TEST_FRACTION
    label_file: str = config.LABEL_FILE
    test_manifest: str = ""  # empty: the test split of the ingested dataset
    pgan_manifest: str = ""  # path,label CSV of a separate PGAN corpus; empty: the train split

    def validate(self):
        if not 0 <= self.test_fraction < 1:
            raise InvalidArgumentError(f"test_fraction must lie in [0, 1), got {self.test_fraction}",
                                       field="test_fraction")
        if not self.output_folder:
            raise InvalidArgumentError("output_folder must not be empty", field="output_folder")

    def resolved_root(self):
        return self.root or os.environ.get(config.DATA_ENV_VAR, "")


@dataclass
class MapkitSettings:
    width: int = config.MAP_WIDTH
    height: int = config.MAP_HEIGHT
    mask_threshold: int = config.MASK_THRESHOLD
    superpixel_source: str = config.SUPERPIXEL_SOURCE
    id_weights: list = field(default_factory=lambda: list(config.SUPERPIXEL_ID_WEIGHTS))
    slic_segments: int = config.SLIC_SEGMENTS
    slic_compactness: float = config.SLIC_COMPACTNESS
    slic_max_iter: int = config.SLIC_MAX_ITER
    workers: int = config.PREPARE_WORKERS

    def validate(self):
        for name in ("width", "height", "slic_segments", "slic_compactness", "slic_max_iter", "workers"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}", field=name)
        if not 0 <= self.mask_threshold < 255:
            raise InvalidArgumentError(f"mask_threshold must lie in [0, 255), got {self.mask_threshold}",
                                       field="mask_threshold")
        if self.superpixel_source not in SUPERPIXEL_SOURCES:
            raise InvalidArgumentError(f"superpixel_source must be one of {SUPERPIXEL_SOURCES}",
                                       field="superpixel_source")
        if len(self.id_weights) != 3 or any(type(w) is not int or w <= 0 for w in self.id_weights):
            raise InvalidArgumentError(f"id_weights must be three positive integers, got {self.id_weights}",
                                       field="id_weights")


@dataclass
class SynthnetSettings:
    gen_base_channels: int = config.GEN_BASE_CHANNELS
    gen_num_downsamples: int = config.GEN_NUM_DOWNSAMPLES
    gen_num_residual_blocks: int = config.GEN_NUM_RESIDUAL_BLOCKS
    disc_base_channels: int = config.DISC_BASE_CHANNELS
    disc_num_layers: int = config.DISC_NUM_LAYERS
    disc_num_scales: int = config.DISC_NUM_SCALES

    def validate(self):
        for name in ("gen_base_channels", "disc_base_channels", "disc_num_layers", "disc_num_scales"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}", field=name)
        for name in ("gen_num_downsamples", "gen_num_residual_blocks"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0, got {getattr(self, name)}", field=name)

    def generator_config(self, input_channels):
        return GeneratorConfig(input_channels=input_channels, base_channels=self.gen_base_channels,
                               num_downsamples=self.gen_num_downsamples,
                               num_residual_blocks=self.gen_num_residual_blocks)

    def discriminator_config(self, input_channels):
        return DiscriminatorConfig(input_channels=input_channels, base_channels=self.disc_base_channels,
                                   num_layers=self.disc_num_layers, num_scales=self.disc_num_scales)


@dataclass
class PipelineConfig:
    data: DataSettings = field(default_factory=DataSettings)
    mapkit: MapkitSettings = field(default_factory=MapkitSettings)
    synthnet: SynthnetSettings = field(default_factory=SynthnetSettings)
    objectives: LossWeights = field(default_factory=LossWeights)
    trainer: TrainingConfig = field(default_factory=TrainingConfig)
    proggan: PGANConfig = field(default_factory=PGANConfig)
    evalharness: EvalSettings = field(default_factory=EvalSettings)

    def fingerprint(self):
        return fingerprint(self)

    def with_overrides(self, seed=None, out=None, data=None):
        """Applies command-line overrides; the seed reaches every seeded section."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, trainer=replace(cfg.trainer, seed=seed), proggan=replace(cfg.proggan, seed=seed),
                          evalharness=replace(cfg.evalharness, seed=seed))
        if out is not None:
            cfg = replace(cfg, data=replace(cfg.data, output_folder=out))
        if data is not None:
            cfg = replace(cfg, data=replace(cfg.data, root=data))
        return cfg


def fingerprint(cfg: PipelineConfig):
    canonical = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_value(value, expected, key_path):
    """Type-checks one value; ints are accepted for floats, bools never pass as numbers."""
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(key_path, f"expected a boolean, got {type(value).__name__}")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key_path, f"expected an integer, got {type(value).__name__}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key_path, f"expected a number, got {type(value).__name__}")
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            raise ConfigError(key_path, f"expected a string, got {type(value).__name__}")
        return value
    if expected is list:
        if not isinstance(value, list):
            raise ConfigError(key_path, f"expected a list, got {type(value).__name__}")
        return list(value)
    raise ConfigError(key_path, f"unsupported setting type {expected}")


def _build_section(cls, document, section):
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError(section, "expected a mapping")
    hints = typing.get_type_hints(cls)
    known = [f.name for f in fields(cls)]
    for key in document:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
    values = {key: _check_value(value, hints[key], f"{section}.{key}") for key, value in document.items()}
    try:
        obj = cls(**values)
        if hasattr(obj, "validate"):
            obj.validate()
    except InvalidArgumentError as exc:
        raise ConfigError(f"{section}.{exc.field}" if exc.field else section, str(exc)) from exc
    return obj


def _check_cross_section(cfg: PipelineConfig):
    for name in ("width", "height"):
        if getattr(cfg.trainer, name) != getattr(cfg.mapkit, name):
            raise ConfigError(f"trainer.{name}", f"must equal mapkit.{name} ({getattr(cfg.mapkit, name)})")
    divisor = 2 ** cfg.synthnet.gen_num_downsamples
    for name in ("width", "height"):
        if getattr(cfg.trainer, name) % divisor:
            raise ConfigError(f"trainer.{name}", f"must be divisible by {divisor} (2**gen_num_downsamples)")
    for position, name in enumerate(cfg.evalharness.specs):
        if not isinstance(name, str):
            raise ConfigError(f"evalharness.specs[{position}]", "expected a composition name")


def config_from_dict(document):
    """Builds and validates a PipelineConfig from a parsed document."""
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError("", "config document must be a mapping of sections")
    sections = {f.name: f for f in fields(PipelineConfig)}
    for key in document:
        if key not in sections:
            raise ConfigError(key, "unknown section")
    hints = typing.get_type_hints(PipelineConfig)
    built = {name: _build_section(hints[name], document.get(name), name) for name in sections}
    cfg = PipelineConfig(**built)
    _check_cross_section(cfg)
    return cfg


def parse_config(path=None):
    """
    Reads a JSON config document; a missing path or an empty file yields all defaults.

    Raises:
        ConfigError: Unknown key, wrong type or constraint violation, naming the dotted key path.
    """
    if path is None:
        return config_from_dict({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("", f"cannot read config file {path}: {exc}") from exc
    if not text.strip():
        return config_from_dict({})
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(document)
