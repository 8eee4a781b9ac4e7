import hashlib
import os
import tomllib
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from app.core.errors import UsageError
from app.core.storage import canonical_json
from app.services.prompting import Strategy
from app.services.tasks import TaskKind

load_dotenv()


class Settings:
    # Endpoint auth
    API_KEY: Optional[str] = os.getenv("KGR_API_KEY")
    REQUEST_TIMEOUT: float = float(os.getenv("KGR_REQUEST_TIMEOUT", 60))

    # Directories
    CACHE_DIR: str = os.getenv("KGR_CACHE_DIR", ".kgr_cache")
    OUTPUT_DIR: str = os.getenv("KGR_OUTPUT_DIR", "output")

    # Logging
    LOG_LEVEL: str = os.getenv("KGR_LOG_LEVEL", "INFO")

    # Mock endpoint
    MOCK_HOST: str = os.getenv("KGR_MOCK_HOST", "127.0.0.1")
    MOCK_PORT: int = int(os.getenv("KGR_MOCK_PORT", 8000))


settings = Settings()

# Used only when a model entry lists no strategies of its own.
DEFAULT_STRATEGIES: Dict[str, List[Strategy]] = {
    "text-davinci-003": [Strategy.MULTI_STEP],
    "davinci": [Strategy.MULTI_STEP],
    "chatgpt": [Strategy.SINGLE_STEP, Strategy.SINGLE_STEP_AUTOCOT],
    "gpt-3.5-turbo": [Strategy.SINGLE_STEP, Strategy.SINGLE_STEP_AUTOCOT],
    "gpt-4": [Strategy.SINGLE_STEP],
}


class KgPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    triples: Path
    ontology: Path


class TaskFiles(BaseModel):
    model_config = ConfigDict(extra="forbid")

    files: List[Path] = Field(default_factory=list)
    labels: Optional[Path] = None


class TrialCounts(BaseModel):
    model_config = ConfigDict(extra="forbid")

    relation: int = Field(10, ge=1)
    cpg: int = Field(5, ge=1)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    model: Optional[str] = None
    url: Optional[str] = None
    strategies: List[Strategy] = Field(default_factory=list)
    temperature: float = 0.0
    max_tokens: int = Field(512, ge=1)

    @property
    def model_id(self) -> str:
        return self.model or self.name

    def resolved_strategies(self) -> List[Strategy]:
        if self.strategies:
            return list(self.strategies)
        for key in (self.name.lower(), self.model_id.lower()):
            if key in DEFAULT_STRATEGIES:
                return list(DEFAULT_STRATEGIES[key])
        return [Strategy.SINGLE_STEP]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kg: KgPaths
    tasks: TaskFiles = Field(default_factory=TaskFiles)
    trials: TrialCounts = Field(default_factory=TrialCounts)
    models: List[ModelConfig] = Field(default_factory=list)
    seed: Optional[int] = None
    cache_dir: Path = Path(settings.CACHE_DIR)
    output_dir: Path = Path(settings.OUTPUT_DIR)
    max_in_flight: int = Field(4, ge=1)
    replay_only: bool = False

    _source_hash: str = PrivateAttr(default="")

    @property
    def config_hash(self) -> str:
        if self._source_hash:
            return self._source_hash
        return hashlib.sha256(canonical_json(self.model_dump(mode="json")).encode("utf-8")).hexdigest()

    def trials_for(self, kind: TaskKind) -> int:
        if kind is TaskKind.CONTEXTUAL_PATH_GENERATION:
            return self.trials.cpg
        return self.trials.relation

    def require_seed(self) -> int:
        if self.seed is None:
            raise UsageError("A seed is required for sampling: pass --seed or set `seed` in the config file.")
        return self.seed

    def model_named(self, name: str) -> ModelConfig:
        for entry in self.models:
            if entry.name == name:
                return entry
        known = ", ".join(entry.name for entry in self.models) or "none"
        raise UsageError(f"Unknown model '{name}'. Configured models: {known}.")


def _resolve(base: Path, value: Path) -> Path:
    return value if value.is_absolute() else (base / value)


def load_run_config(path: Path) -> RunConfig:
    """
    Load a TOML run configuration.

    Relative paths are resolved against the config file's directory. The
    config hash is taken over the file's parsed content, before resolution,
    so it does not depend on where the repository is checked out.
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"Cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"Config file {path} is not valid TOML: {exc}") from exc

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise UsageError(f"Config file {path} is invalid:\n{exc}") from exc

    base = path.parent
    config.kg.triples = _resolve(base, config.kg.triples)
    config.kg.ontology = _resolve(base, config.kg.ontology)
    config.tasks.files = [_resolve(base, item) for item in config.tasks.files]
    if config.tasks.labels is not None:
        config.tasks.labels = _resolve(base, config.tasks.labels)
    if "cache_dir" in raw:
        config.cache_dir = _resolve(base, config.cache_dir)
    if "output_dir" in raw:
        config.output_dir = _resolve(base, config.output_dir)

    config._source_hash = hashlib.sha256(canonical_json(raw).encode("utf-8")).hexdigest()
    return config
