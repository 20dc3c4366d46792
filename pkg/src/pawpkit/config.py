"""Run configuration: a flat, human-readable YAML key-value file.

Defaults reproduce the reference experimental setup: four pooled
resolutions, 210 selected features, 50 uncertainty bins, the four-point
C grid with 10-fold cross-validation, and 5 temporal test partitions.
A snapshot of the effective configuration is written into every run
directory for provenance.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

ALLOWED_RESOLUTIONS = (16, 32, 64, 128)


@dataclass
class RunConfig:
    manifest: str = ""
    landmarks: str = ""
    template_landmarks: str = ""
    output_dir: str = "run_output"
    resolutions: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    variance_ratio: float = 0.97
    top_k: int = 210
    bin_count: int = 50
    c_grid: list[float] = field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0])
    cv_folds: int = 10
    test_parts: int = 5
    train_fraction: float = 0.8
    include_trimodal_late: bool = False
    balanced_class_weights: bool = False
    seed: int = 0

    def validate(self) -> "RunConfig":
        if not self.resolutions:
            raise ConfigError("resolutions must not be empty")
        for res in self.resolutions:
            if res not in ALLOWED_RESOLUTIONS:
                raise ConfigError(
                    f"resolution {res} not supported (choose from {ALLOWED_RESOLUTIONS})"
                )
        if len(set(self.resolutions)) != len(self.resolutions):
            raise ConfigError("duplicate resolutions")
        if not 0.0 < self.variance_ratio <= 1.0:
            raise ConfigError(f"variance_ratio must be in (0, 1], got {self.variance_ratio}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.bin_count < 2:
            raise ConfigError(f"bin_count must be >= 2, got {self.bin_count}")
        if not self.c_grid or any(c <= 0 for c in self.c_grid):
            raise ConfigError("c_grid must be a non-empty list of positive values")
        if self.cv_folds < 2:
            raise ConfigError(f"cv_folds must be >= 2, got {self.cv_folds}")
        if self.test_parts < 1:
            raise ConfigError(f"test_parts must be >= 1, got {self.test_parts}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        return self

    def require_inputs(self) -> "RunConfig":
        for name in ("manifest", "landmarks", "template_landmarks"):
            if not getattr(self, name):
                raise ConfigError(f"config is missing the {name!r} path")
        return self


def load_config(path) -> RunConfig:
    """Read a YAML config; relative paths resolve against the file's folder."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping of keys to values")
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
    try:
        config = RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in ("manifest", "landmarks", "template_landmarks", "output_dir"):
        value = getattr(config, name)
        if value and not Path(value).is_absolute():
            setattr(config, name, str((path.parent / value).resolve()))
    return config.validate()


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(
        yaml.safe_dump(asdict(config), sort_keys=True, default_flow_style=False),
        encoding="utf-8",
    )
