"""
Run configuration: textual key=value settings validated with pydantic.
"""
from pathlib import Path
from typing import Dict, Iterable, Union
import logging

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.a3c.schemas import TrainConfig
from app.cli.exceptions import UsageError
from app.config import EnvConfig
from app.env.types import ObservationSpec
from app.net.architecture import ArchitectureSpec, Variant

logger = logging.getLogger(__name__)

NONE_VALUES = ("none", "null", "")


class RunConfig(BaseModel):
    """Everything one command needs; training keys are forwarded to TrainConfig."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    minigame: str = Field(..., description="Minigame name")
    arch: Variant = Field("baseline", description="Architecture variant")
    seed: int = Field(0, description="Run seed")
    output: Path = Field(Path("runs"), description="Run directory")
    training: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator("minigame")
    @classmethod
    def known_minigame(cls, value: str) -> str:
        if value not in EnvConfig.MINIGAMES:
            raise ValueError(f"unknown minigame '{value}' (choose from {', '.join(EnvConfig.MINIGAMES)})")
        return value

    @property
    def obs_spec(self) -> ObservationSpec:
        return ObservationSpec(resolution=self.training.resolution)

    @property
    def arch_spec(self) -> ArchitectureSpec:
        return ArchitectureSpec(variant=self.arch, obs_spec=self.obs_spec)

    @classmethod
    def from_settings(cls, settings: Dict[str, str]) -> "RunConfig":
        """
        Build from flat key=value settings; training keys go to TrainConfig.

        Raises:
            UsageError: Naming the offending key for unknown keys or bad values
        """
        run: Dict[str, object] = {}
        training: Dict[str, object] = {}
        for key, value in settings.items():
            if isinstance(value, str) and value.strip().lower() in NONE_VALUES:
                value = None
            (training if key in TrainConfig.model_fields else run)[key] = value
        try:
            return cls(**run, training=TrainConfig(**training))
        except ValidationError as e:
            raise UsageError(describe_validation_error(e)) from None

    def to_settings(self) -> Dict[str, str]:
        """Flat key=value view; from_settings(to_settings()) reproduces the config."""
        flat = {
            "minigame": self.minigame,
            "arch": self.arch,
            "seed": str(self.seed),
            "output": str(self.output),
        }
        for key, value in self.training.model_dump().items():
            flat[key] = "none" if value is None else repr(value) if isinstance(value, float) else str(value)
        return dict(sorted(flat.items()))

    def with_overrides(self, **changes) -> "RunConfig":
        settings = self.to_settings()
        settings.update({key: str(value) for key, value in changes.items()})
        return RunConfig.from_settings(settings)


def describe_validation_error(error: ValidationError) -> str:
    problems = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "config"
        if item["type"] == "extra_forbidden":
            problems.append(f"{key}: unknown key")
        else:
            problems.append(f"{key}: {item['msg']}")
    return "; ".join(problems)


def parse_assignment(text: str) -> tuple:
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise UsageError(f"Expected KEY=VALUE, got '{text}'")
    return key, value.strip()


def parse_settings(lines: Iterable[str], source: str = "config") -> Dict[str, str]:
    """key=value lines; blank lines and '#' comments are ignored."""
    settings: Dict[str, str] = {}
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            key, value = parse_assignment(line)
        except UsageError:
            raise UsageError(f"{source}:{number}: expected key=value, got '{line}'") from None
        settings[key] = value
    return settings


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"Cannot read config file {path}: {e}") from e
    return parse_settings(text.splitlines(), source=str(path))


def write_config_echo(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={value}" for key, value in config.to_settings().items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Config echoed to {path}")
    return path
