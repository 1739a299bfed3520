"""Model and run configuration, plus the flat ``key = value`` file format.

Unknown keys in a config file are hard errors so typos in sweeps fail
loudly instead of silently training the default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

HEAD_ACTIVATIONS = ("relu", "selu")
SOFTMAX_AXES = ("output_caps", "input_caps")
TRUNCATION_SIDES = ("first", "last")
VARIANTS = ("bgcapsule", "bigru_maxpool", "cnn_capsule")


@dataclass
class ModelConfig:
    """Every architectural and training hyperparameter.

    Defaults are desk-scale where that differs from the published
    setup; ``paper_scale()`` restores the full-size values.
    """

    max_len: int = 200
    embed_dim: int = 300
    bigru_sizes: list[int] = field(default_factory=lambda: [256, 200])
    caps_dim: int = 20
    primary_caps_per_pos: int = 1
    routed_caps: int = 10
    routed_caps_dim: int = 20
    routing_iters: int = 3
    dense_hidden: int = 128
    class_count: int = 2
    dropout: float = 0.25
    batch_size: int = 32
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    head_activation: str = "relu"
    softmax_axis: str = "output_caps"
    embed_trainable: bool = False
    share_pair_weights: bool = True
    truncate_keep: str = "first"

    def validate(self) -> "ModelConfig":
        positive = (
            "max_len", "embed_dim", "caps_dim", "primary_caps_per_pos", "routed_caps",
            "routed_caps_dim", "routing_iters", "dense_hidden", "class_count",
            "batch_size", "epochs",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if len(self.bigru_sizes) != 2 or any(s < 1 for s in self.bigru_sizes):
            raise ConfigError(f"bigru_sizes needs two positive sizes, got {self.bigru_sizes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.head_activation not in HEAD_ACTIVATIONS:
            raise ConfigError(f"head_activation must be one of {HEAD_ACTIVATIONS}")
        if self.softmax_axis not in SOFTMAX_AXES:
            raise ConfigError(f"softmax_axis must be one of {SOFTMAX_AXES}")
        if self.truncate_keep not in TRUNCATION_SIDES:
            raise ConfigError(f"truncate_keep must be one of {TRUNCATION_SIDES}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()


def paper_scale() -> ModelConfig:
    """The published training setup (batch 1000, full widths)."""
    return ModelConfig(batch_size=1000, epochs=20)


@dataclass
class AblationConfig:
    """Which architecture variant to build, plus its knobs."""

    variant: str = "bgcapsule"
    cnn_filter_widths: list[int] = field(default_factory=lambda: [3, 4, 5])
    cnn_filter_count: int = 304  # per width; 3 * 304 = 912 channels
    pool_window: int = 4

    def validate(self) -> "AblationConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.cnn_filter_widths or any(w < 1 for w in self.cnn_filter_widths):
            raise ConfigError(f"cnn_filter_widths must be positive, got {self.cnn_filter_widths}")
        if self.cnn_filter_count < 1:
            raise ConfigError(f"cnn_filter_count must be >= 1, got {self.cnn_filter_count}")
        if self.pool_window < 1:
            raise ConfigError(f"pool_window must be >= 1, got {self.pool_window}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AblationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ablation keys: {sorted(unknown)}")
        return cls(**data).validate()


def _parse_value(field_type, raw: str, key: str):
    raw = raw.strip()
    if field_type == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    if field_type == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if field_type == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    if field_type.startswith("list"):
        try:
            return [int(part) for part in raw.split(",") if part.strip()]
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from exc
    return raw


def load_config_file(path) -> ModelConfig:
    """Parse a flat ``key = value`` file into a ModelConfig."""
    type_by_name = {f.name: f.type for f in fields(ModelConfig)}
    values: dict = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {stripped!r}")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in type_by_name:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            values[key] = _parse_value(str(type_by_name[key]), raw, key)
    return ModelConfig.from_dict(values)


def save_config_file(config: ModelConfig, path) -> None:
    lines = []
    for f in fields(ModelConfig):
        value = getattr(config, f.name)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
