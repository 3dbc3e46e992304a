"""Model and training configuration, plus the flat ``key = value`` config file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .numerics import is_power_of_two

LOSS_MODES = ("seu", "dice", "bce")
TEXT_MODES = ("on", "off_inference", "off_training")
ARCH_MODES = ("full", "ssmix_linear", "crossattn_add")
NORM_KINDS = ("layer", "batch")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 64)
    d_text: int = 32
    max_tokens: int = 12
    heads: int = 4
    shuffle_factor: int = 4
    pool_kernel: int = 3
    out_classes: int = 2
    ssmix_expand: int = 2
    ssmix_state: int = 8
    ssmix_kernel: int = 3
    modab_all_stages: bool = False
    # False bypasses fusion entirely (F := X); used by "Training w/o MoDAB"
    modab: bool = True
    arch: str = "full"
    crb_norm: str = "layer"
    init_seed: int = 0
    text_seed: int = 1234

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        self.validate()

    def validate(self) -> None:
        h = self.image_size
        if not is_power_of_two(h) or h < 32:
            raise ConfigurationError(f"image_size must be a power of two >= 32, got {h}")
        if len(self.channels) != 4 or min(self.channels) < 1:
            raise ConfigurationError(f"channels needs four positive stage widths, got {self.channels}")
        if self.shuffle_factor * self.stage_sizes[0] != h:
            raise ConfigurationError(
                f"shuffle_factor={self.shuffle_factor} times the first-stage extent "
                f"{self.stage_sizes[0]} must equal image_size={h}")
        if self.pool_kernel % 2 == 0 or self.pool_kernel < 1:
            raise ConfigurationError(f"pool_kernel must be odd, got {self.pool_kernel}")
        if self.ssmix_kernel % 2 == 0:
            raise ConfigurationError(f"ssmix_kernel must be odd, got {self.ssmix_kernel}")
        if self.ssmix_expand < 1 or self.ssmix_state < 1 or self.heads < 1:
            raise ConfigurationError("ssmix_expand, ssmix_state and heads must be >= 1")
        if self.out_classes < 2:
            raise ConfigurationError("out_classes must be >= 2")
        if self.arch not in ARCH_MODES:
            raise ConfigurationError(f"arch must be one of {ARCH_MODES}, got {self.arch!r}")
        if self.crb_norm not in NORM_KINDS:
            raise ConfigurationError(f"crb_norm must be one of {NORM_KINDS}, got {self.crb_norm!r}")

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        """Spatial extent of stages 1..4: H/4, H/8, H/16, H/32."""
        return tuple(self.image_size // 2 ** (i + 2) for i in range(4))


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-4
    lr_min: float = 1e-6
    t_max: int = 200
    max_epochs: int = 200
    min_epochs: int = 20
    patience: int = 20
    batch_size: int = 8
    weight_decay: float = 0.01
    seed: int = 0
    loss: str = "seu"
    text_mode: str = "on"
    lambda_f: float = 0.3
    lambda_e: float = 0.1

    def __post_init__(self):
        if self.lr_min > self.lr0:
            raise ConfigurationError(f"lr_min={self.lr_min} exceeds lr0={self.lr0}")
        if self.min_epochs > self.max_epochs:
            raise ConfigurationError(f"min_epochs={self.min_epochs} exceeds max_epochs={self.max_epochs}")
        if self.loss not in LOSS_MODES:
            raise ConfigurationError(f"loss must be one of {LOSS_MODES}, got {self.loss!r}")
        if self.text_mode not in TEXT_MODES:
            raise ConfigurationError(f"text_mode must be one of {TEXT_MODES}, got {self.text_mode!r}")
        if self.batch_size < 1 or self.t_max < 1 or self.patience < 0:
            raise ConfigurationError("batch_size and t_max must be >= 1, patience >= 0")
        if not (self.lambda_f >= 0 and self.lambda_e >= 0):
            raise ConfigurationError("loss weights must be finite and nonnegative")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def with_overrides(self, **kw) -> "RunConfig":
        model_keys = {f.name for f in fields(ModelConfig)}
        mk = {k: v for k, v in kw.items() if k in model_keys}
        tk = {k: v for k, v in kw.items() if k not in model_keys}
        return RunConfig(replace(self.model, **mk), replace(self.train, **tk))


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace("(", "").replace(")", "").split(",") if p.strip())
        return raw.strip('"').strip("'")
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    defaults = {**asdict(ModelConfig()), **asdict(TrainConfig())}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, defaults[key])
    return RunConfig().with_overrides(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: RunConfig) -> str:
    lines = []
    for section in (cfg.model, cfg.train):
        for k, v in asdict(section).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
