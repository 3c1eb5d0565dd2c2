"""JSON configuration loading with strict validation.

Config files are JSON objects whose sections mirror the module configs
(corpus, frame_model, train_frame, decoder, arbitrator, train_arbitrator,
pipeline, sweep).  Missing sections and missing keys take defaults; unknown
keys and duplicate keys are rejected; every value range check names the
offending key.  All randomness descends from the single root seed: sections
that do not set their own seed derive one from it at fixed offsets.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import ConfigError, ParseError
from .arbitrator import ArbitratorConfig
from .corpus import GenConfig
from .firstpass import DecoderSim, FrameModelConfig
from .nnkit import TrainConfig
from .pipeline import PipelineConfig
from .sweep import SweepGrids

_TUPLE_FIELDS = {"hidden_dims", "t_ep", "eos_scale", "t_arb", "first_pass"}


def _load_json(path):
    def reject_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                raise ParseError(f"{path}: duplicate key {key!r}")
            seen[key] = value
        return seen

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        data = json.loads(text, object_pairs_hook=reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return data


def _build_section(cls, data: dict, section: str):
    """Instantiate a config dataclass from a dict, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(
            f"unknown key {sorted(unknown)[0]!r} in section {section!r}"
        )
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc
    if hasattr(obj, "validate"):
        obj.validate()
    return obj


@dataclass
class RootConfig:
    seed: int = 0
    corpus: GenConfig = field(default_factory=GenConfig)
    frame_model: FrameModelConfig = field(default_factory=FrameModelConfig)
    train_frame: TrainConfig = field(default_factory=TrainConfig)
    decoder: DecoderSim = field(default_factory=DecoderSim)
    arbitrator: ArbitratorConfig = field(default_factory=ArbitratorConfig)
    train_arbitrator: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    sweep: SweepGrids = field(default_factory=SweepGrids)


_SECTIONS = {
    "corpus": GenConfig,
    "frame_model": FrameModelConfig,
    "train_frame": TrainConfig,
    "decoder": DecoderSim,
    "arbitrator": ArbitratorConfig,
    "train_arbitrator": TrainConfig,
    "pipeline": PipelineConfig,
    "sweep": SweepGrids,
}

# Seed offsets applied when a section does not pin its own seed.
_SEED_OFFSETS = {"corpus": 0, "train_frame": 1, "decoder": 2, "train_arbitrator": 3}


def parse_config(path, seed_override: int | None = None) -> RootConfig:
    """Load, validate and seed-resolve a configuration file."""
    data = _load_json(path)
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} at top level")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if seed_override is not None:
        seed = seed_override
    sections = {}
    explicit_seeds = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be a JSON object")
        explicit_seeds[name] = "seed" in raw
        sections[name] = _build_section(cls, raw, name)
    config = RootConfig(seed=seed, **sections)

    for name, offset in _SEED_OFFSETS.items():
        if not explicit_seeds[name]:
            getattr(config, name).seed = seed + offset
    if not explicit_seeds["frame_model"]:
        config.frame_model.seed = config.train_frame.seed
    if not explicit_seeds["arbitrator"]:
        config.arbitrator.seed = config.train_arbitrator.seed
    return config


@dataclass
class SweepSpec:
    """Inputs of one sweep run: fixed artifacts plus the grids."""

    corpus: str = ""
    frame_model: str = ""
    arbitrator: str = ""
    first_pass: tuple = ("both",)
    guardrail_frames: int = 58
    decoder: DecoderSim = field(default_factory=DecoderSim)
    grids: SweepGrids = field(default_factory=SweepGrids)

    def validate(self) -> None:
        from .pipeline import FIRST_PASS_MODES

        if not self.corpus:
            raise ConfigError("sweep spec requires a corpus path")
        if not self.frame_model:
            raise ConfigError("sweep spec requires a frame_model checkpoint path")
        if not self.arbitrator:
            raise ConfigError("sweep spec requires an arbitrator checkpoint path")
        if not self.first_pass:
            raise ConfigError("first_pass list must be non-empty")
        for fp in self.first_pass:
            if fp not in FIRST_PASS_MODES:
                raise ConfigError(f"unknown first_pass mode {fp!r}")
        if self.guardrail_frames < 1:
            raise ConfigError("guardrail_frames must be >= 1")
        self.grids.validate()


def parse_sweep_spec(path) -> SweepSpec:
    data = _load_json(path)
    names = {f.name for f in dataclasses.fields(SweepSpec)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in sweep spec")
    grids_raw = data.pop("grids", {})
    if not isinstance(grids_raw, dict):
        raise ConfigError("sweep spec 'grids' must be a JSON object")
    grids = _build_section(SweepGrids, grids_raw, "grids")
    decoder_raw = data.pop("decoder", {})
    if not isinstance(decoder_raw, dict):
        raise ConfigError("sweep spec 'decoder' must be a JSON object")
    decoder = _build_section(DecoderSim, decoder_raw, "decoder")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    spec = SweepSpec(grids=grids, decoder=decoder, **kwargs)
    spec.validate()
    return spec
