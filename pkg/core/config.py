import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml

from core.encoding.table_encoder import FORMAT_NAMES, TableFormat
from core.profiles import lookup_profile, resolve_dataset_name
from core.vector.metrics import METRIC_KINDS
from utils.error_handler import ConfigurationError
from utils.logger import config_logger as logger

# Every key accepted in a config file; printed by --help
CONFIG_KEYS: Dict[str, str] = {
    "dataset": "Dataset abbreviation (AF, AWR, ...) or UEA problem name",
    "data_dir": "Directory holding <Name>_TRAIN.ts / <Name>_TEST.ts, directly or in a <Name>/ subdirectory",
    "card_dir": "Fallback directory searched for <Name>_card.json",
    "metric": "Retrieval distance: ed, sed, man or dtw",
    "dtw_window": "Sakoe-Chiba radius for dtw (absent = unconstrained)",
    "k": "Number of nearest-neighbor examples in the prompt (0 = pure zero-shot)",
    "normalize": "z-normalize series per channel before retrieval distances",
    "negatives.count": "Contrastive negatives per prompt (0 = off)",
    "negatives.k_clusters": "K-means cluster count, an integer or 'classes'",
    "negatives.seed": "K-means seed (defaults to seed)",
    "negatives.raw_space": "Cluster raw values instead of per-channel z-normalized values",
    "negatives.max_iters": "Upper bound on Lloyd iterations",
    "format": "Table serialization: dfloader, markdown, json or html",
    "precision": "Decimal places in serialized numbers",
    "ensemble.temperatures": "One inference path per temperature",
    "ensemble.backends": "Optional list of model ids; one path per (model, temperature)",
    "backend.type": "Completion backend: mock or http",
    "backend.url": "Chat-completion endpoint (env TT_API_URL)",
    "backend.api_key": "Bearer key (env TT_API_KEY)",
    "backend.model": "Model id sent with every request (env TT_MODEL)",
    "backend.max_tokens": "Generation limit per completion",
    "backend.timeout": "Per-request timeout in seconds",
    "backend.max_in_flight": "Concurrent requests per backend",
    "backend.max_attempts": "Attempts per request, including the first",
    "backend.retry_base_seconds": "First backoff delay; doubles per retry",
    "backend.context_budget": "Token estimate above which a warning is logged (0 = off)",
    "magic_words": "Append the incentive sentence to every prompt",
    "seed": "Global seed",
    "parallelism": "Samples classified concurrently",
    "out": "Root of the results directory tree",
    "resume": "Skip samples already present in records.jsonl",
    "allow_placeholder_card": "Use generic context text when a dataset has no card",
    "allow_zero_shot": "Permit k = 0 with the mock backend",
    "dump_prompts": "Write every rendered prompt under prompts/",
    "ablation.time_column": "Include the time column in tables",
    "ablation.channel_names": "Use card channel names (off: x1..xm, no channel descriptions)",
    "ablation.context": "Include the context block",
    "ablation.decomposition": "Include the numbered task decomposition",
    "logging.level": "Log level",
    "logging.file": "Log file path (empty disables file logging)",
}

ENV_KEYS = {"TT_API_URL": "backend.url", "TT_API_KEY": "backend.api_key", "TT_MODEL": "backend.model"}

DEFAULT_TEMPERATURES = [0.0, 0.25, 0.5, 0.75, 1.0]


@dataclass
class BackendConfig:
    type: str = "mock"
    url: str = ""
    api_key: str = ""
    model: str = ""
    max_tokens: int = 1024
    timeout: float = 120.0
    max_in_flight: int = 4
    max_attempts: int = 3
    retry_base_seconds: float = 1.0
    context_budget: int = 0

    def __post_init__(self):
        """Validate backend configuration"""
        if self.type not in ("mock", "http"):
            raise ConfigurationError(f"Invalid backend type: '{self.type}'. Valid options: mock, http")
        if self.max_tokens <= 0:
            raise ConfigurationError(f"backend.max_tokens must be positive, got {self.max_tokens}")
        if self.timeout <= 0:
            raise ConfigurationError(f"backend.timeout must be positive, got {self.timeout}")
        if self.max_in_flight < 1 or self.max_attempts < 1:
            raise ConfigurationError("backend.max_in_flight and backend.max_attempts must be >= 1")


@dataclass
class NegativesConfig:
    count: int = 0
    k_clusters: Union[int, str] = "classes"
    seed: Optional[int] = None
    raw_space: bool = False
    max_iters: int = 100

    def __post_init__(self):
        if self.count < 0:
            raise ConfigurationError(f"negatives.count must be >= 0, got {self.count}")
        if self.k_clusters != "classes" and not (isinstance(self.k_clusters, int) and self.k_clusters > 0):
            raise ConfigurationError(f"negatives.k_clusters must be a positive integer or 'classes', got {self.k_clusters!r}")
        if self.max_iters <= 0:
            raise ConfigurationError(f"negatives.max_iters must be positive, got {self.max_iters}")


@dataclass
class EnsembleConfig:
    temperatures: List[float] = field(default_factory=lambda: list(DEFAULT_TEMPERATURES))
    backends: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.temperatures:
            raise ConfigurationError("ensemble.temperatures must not be empty")
        self.temperatures = [float(t) for t in self.temperatures]
        if any(not 0.0 <= t <= 2.0 for t in self.temperatures):
            raise ConfigurationError(f"temperatures must lie in [0, 2], got {self.temperatures}")
        self.backends = [str(b) for b in self.backends]


@dataclass
class AblationConfig:
    time_column: bool = True
    channel_names: bool = True
    context: bool = True
    decomposition: bool = True


@dataclass
class LoggingConfig:
    level: str = "INFO"
    file: str = "logs/seriestable.log"

    def __post_init__(self):
        if self.level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigurationError(f"Invalid logging.level: {self.level}")
        self.level = self.level.upper()


@dataclass
class RunConfig:
    dataset: str = ""
    data_dir: str = "data"
    card_dir: str = "data/cards"
    metric: str = "man"
    dtw_window: Optional[int] = None
    k: int = 3
    normalize: bool = False
    negatives: NegativesConfig = field(default_factory=NegativesConfig)
    format: str = "dfloader"
    precision: int = 4
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    magic_words: bool = False
    seed: int = 0
    parallelism: int = 4
    out: str = "runs"
    resume: bool = False
    allow_placeholder_card: bool = False
    allow_zero_shot: bool = False
    dump_prompts: bool = False
    ablation: AblationConfig = field(default_factory=AblationConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def __post_init__(self):
        """Validate run configuration"""
        self.metric = str(self.metric).lower()
        self.format = str(self.format).lower()
        if self.metric not in METRIC_KINDS:
            raise ConfigurationError(f"Invalid metric: '{self.metric}'. Valid options: {', '.join(METRIC_KINDS)}")
        if self.dtw_window is not None:
            if self.metric != "dtw":
                raise ConfigurationError(f"dtw_window is only valid with metric 'dtw', not '{self.metric}'")
            if self.dtw_window < 0:
                raise ConfigurationError(f"dtw_window must be >= 0, got {self.dtw_window}")
        if self.k < 0:
            raise ConfigurationError(f"k must be >= 0, got {self.k}")
        if self.format not in FORMAT_NAMES:
            raise ConfigurationError(f"Invalid format: '{self.format}'. Valid options: {', '.join(FORMAT_NAMES)}")
        if self.precision < 1:
            raise ConfigurationError(f"precision must be >= 1, got {self.precision}")
        if self.parallelism < 1:
            raise ConfigurationError(f"parallelism must be >= 1, got {self.parallelism}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        data = dict(data)
        sections = {
            'negatives': NegativesConfig,
            'ensemble': EnsembleConfig,
            'backend': BackendConfig,
            'ablation': AblationConfig,
            'logging': LoggingConfig,
        }
        try:
            for name, section in sections.items():
                data[name] = section(**(data.get(name) or {}))
            return cls(**data)
        except TypeError as e:
            raise ConfigurationError(f"Invalid configuration: {e}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def negatives_seed(self) -> int:
        return self.negatives.seed if self.negatives.seed is not None else self.seed

    @property
    def table_format(self) -> TableFormat:
        return TableFormat(self.format, self.precision)

    def result_fields(self) -> Dict[str, Any]:
        """Every field that can change a prediction"""
        negatives = asdict(self.negatives)
        negatives['seed'] = self.negatives_seed
        return {
            'dataset': self.dataset,
            'metric': self.metric,
            'dtw_window': self.dtw_window,
            'k': self.k,
            'normalize': self.normalize,
            'negatives': negatives,
            'format': self.format,
            'precision': self.precision,
            'ensemble': asdict(self.ensemble),
            'backend': {'type': self.backend.type, 'model': self.backend.model,
                        'max_tokens': self.backend.max_tokens},
            'magic_words': self.magic_words,
            'seed': self.seed,
            'ablation': asdict(self.ablation),
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.result_fields(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]

    def echo(self) -> Dict[str, Any]:
        """Config as written into reports; the API key is never echoed"""
        data = self.to_dict()
        data['backend']['api_key'] = "***" if self.backend.api_key else ""
        return data


def default_config() -> Dict[str, Any]:
    return RunConfig().to_dict()


def deep_merge(base_dict: Dict[str, Any], update_dict: Mapping[str, Any]) -> Dict[str, Any]:
    """Deep merge two dictionaries in place"""
    for key, value in update_dict.items():
        if key in base_dict and isinstance(base_dict[key], dict) and isinstance(value, dict):
            deep_merge(base_dict[key], value)
        else:
            base_dict[key] = value
    return base_dict


def flatten_keys(data: Mapping[str, Any], prefix: str = "") -> List[str]:
    keys = []
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and dotted not in CONFIG_KEYS:
            keys.extend(flatten_keys(value, f"{dotted}."))
        else:
            keys.append(dotted)
    return keys


def nest(dotted: Mapping[str, Any]) -> Dict[str, Any]:
    """{'backend.model': 'x'} -> {'backend': {'model': 'x'}}"""
    nested: Dict[str, Any] = {}
    for key, value in dotted.items():
        parts = key.split('.')
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


class ConfigManager:
    """Config file loader (YAML; JSON files load unchanged)"""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = Path(config_path) if config_path else None
        self._config: Dict[str, Any] = {}
        if self.config_path is not None:
            self.load_config()

    def load_config(self):
        """Load configuration from file"""
        if not self.config_path.exists():
            raise ConfigurationError(f"Config file not found: {self.config_path}")
        try:
            with open(self.config_path, 'r', encoding='utf-8') as file:
                loaded = yaml.safe_load(file)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Syntax error in {self.config_path}: {e}")
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{self.config_path}: top level must be a mapping")
        self._config = loaded

        issues = self.validate_config()
        if issues:
            raise ConfigurationError(f"{self.config_path}: " + "; ".join(issues))

    @property
    def config(self) -> Dict[str, Any]:
        return self._config

    def get(self, key: str, default=None):
        """Get configuration value by key (supports dot notation)"""
        value = self._config
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def validate_config(self) -> List[str]:
        """Validate configuration and return list of issues found"""
        issues = []
        for key in flatten_keys(self._config):
            if key not in CONFIG_KEYS:
                issues.append(f"Unknown config key: '{key}'")
        return issues


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    environ = os.environ if environ is None else environ
    return nest({key: environ[var] for var, key in ENV_KEYS.items() if environ.get(var)})


def resolve_run_config(dataset: Optional[str] = None, config_path: Optional[str] = None,
                       flags: Optional[Mapping[str, Any]] = None,
                       environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Layer global defaults, the dataset profile, the config file, the environment and the
    command-line flags (dot-notation keys), later layers winning.
    """
    file_config = ConfigManager(config_path).config if config_path else {}
    flag_config = nest({k: v for k, v in (flags or {}).items() if v is not None})

    name = dataset or flag_config.get('dataset') or file_config.get('dataset')
    if not name:
        raise ConfigurationError("No dataset given (--dataset or 'dataset' in the config file)")

    merged = default_config()
    profile = lookup_profile(name)
    if profile is not None:
        deep_merge(merged, profile.as_overrides())
        logger.debug(f"Applied {profile.abbreviation} profile: {profile.as_overrides()}")
    deep_merge(merged, copy.deepcopy(file_config))
    deep_merge(merged, env_overrides(environ))
    deep_merge(merged, flag_config)
    merged['dataset'] = resolve_dataset_name(name)
    return RunConfig.from_dict(merged)
