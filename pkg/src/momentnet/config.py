"""Run configuration: defaults, flat key=value config files, CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

OUTPUT_DIR_ENV = "MOMENTNET_OUTDIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AblationFlags:
    """Independent switches for the guidance losses, the relevance multiply,
    and the denoising stage."""

    intra: bool = True
    inter: bool = True
    token: bool = True
    relevance_mul: bool = True
    cdd: bool = True

    def label(self) -> str:
        on = [name for name in ("intra", "inter", "token", "relevance_mul", "cdd")
              if getattr(self, name)]
        return "+".join(on) if on else "none"


@dataclass(frozen=True)
class RunConfig:
    # data
    train_corpus: str = "data/train.jsonl"
    val_corpus: str = "data/val.jsonl"
    # model
    dim: int = 64
    heads: int = 4
    localizer_depth: int = 2
    downsample_factor: int = 4        # reference-grid stride r
    offset_kernel: int = 3            # local conv width l
    depthwise_offsets: bool = True
    drop_path: float = 0.1
    # losses
    gamma: float = 2.0
    intra_weight: float = 0.1
    inter_weight: float = 0.1
    token_weight: float = 0.1
    focal_weight: float = 1.0
    l1_weight: float = 1.0
    iou_weight: float = 1.0
    temperature: float = 1.0
    cross_sample_negatives: bool = False
    # optimization
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    seed: int = 7
    # decoding
    nms_threshold: float = 0.7
    # ablation
    use_intra: bool = True
    use_inter: bool = True
    use_token: bool = True
    use_relevance: bool = True
    use_cdd: bool = True

    def validate(self) -> None:
        weights = {
            "intra_weight": self.intra_weight,
            "inter_weight": self.inter_weight,
            "token_weight": self.token_weight,
            "focal_weight": self.focal_weight,
            "l1_weight": self.l1_weight,
            "iou_weight": self.iou_weight,
        }
        for name, value in weights.items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.downsample_factor < 1:
            raise ConfigError("downsample_factor must be >= 1")
        if self.offset_kernel % 2 == 0:
            raise ConfigError("offset_kernel must be odd")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigError("drop_path must be in [0, 1)")
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise ConfigError("nms_threshold must be in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")

    def flags(self) -> AblationFlags:
        return AblationFlags(
            intra=self.use_intra,
            inter=self.use_inter,
            token=self.use_token,
            relevance_mul=self.use_relevance,
            cdd=self.use_cdd,
        )

    def with_flags(self, flags: AblationFlags) -> "RunConfig":
        return dataclasses.replace(
            self,
            use_intra=flags.intra,
            use_inter=flags.inter,
            use_token=flags.token,
            use_relevance=flags.relevance_mul,
            use_cdd=flags.cdd,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def coerce_value(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {name}")
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean for {name}: {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {kind} for {name}: {raw!r}") from exc
    return raw


def load_config_file(path) -> dict[str, str]:
    """Parse a flat `key = value` file; blank lines and # comments ignored."""
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, value = stripped.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def build_config(file_entries: dict[str, str] | None = None,
                 overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults, overlaid with a config file, overlaid with explicit overrides."""
    values: dict[str, object] = {}
    for name, raw in (file_entries or {}).items():
        values[name] = coerce_value(name, raw)
    for name, value in (overrides or {}).items():
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {name}")
        values[name] = value
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg
