#!/usr/bin/env python3
"""
Run configuration for trawlwatch
Layers built-in defaults, the YAML config file, environment variables and CLI overrides
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import psutil
import yaml

try:
    from dotenv import load_dotenv
except ImportError:
    load_dotenv = None

from ..errors import ConfigError
from ..models.em import EmConfig
from ..models.gaussian_hmm import DIMENSIONS, SPEED
from ..models.thresholds import ThresholdConfig

METHODS = ("dmkmg", "threshold", "dmarp")
GROUPINGS = ("all", "vessel", "trip")
DECODERS = ("viterbi", "posterior")
ENV_PREFIX = "TRAWLWATCH_"


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("true", "1", "yes", "on")


@dataclass
class TrajectoryConfig:
    """Trip segmentation and kinematic derivation"""
    gap_threshold_hours: float = 24.0
    max_gap_hours: float = 4.0
    use_reported_speed: bool = False

    def __post_init__(self):
        if self.gap_threshold_hours <= 0:
            raise ConfigError(f"gap_threshold_hours must be positive, got {self.gap_threshold_hours}")
        if self.max_gap_hours <= 0:
            raise ConfigError(f"max_gap_hours must be positive, got {self.max_gap_hours}")


@dataclass
class ModelConfig:
    """Which sub-model to fit: method x K x grouping x dimension"""
    method: str = "dmkmg"
    k: int = 3
    grouping: str = "all"
    dimension: str = SPEED
    decoder: str = "viterbi"
    per_coordinate_rho: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}' (expected one of {', '.join(METHODS)})")
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"Unknown grouping '{self.grouping}' (expected one of {', '.join(GROUPINGS)})")
        if self.dimension not in DIMENSIONS:
            raise ConfigError(f"Unknown dimension '{self.dimension}' (expected one of {', '.join(DIMENSIONS)})")
        if self.decoder not in DECODERS:
            raise ConfigError(f"Unknown decoder '{self.decoder}' (expected one of {', '.join(DECODERS)})")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2 (labelling needs at least two components), got {self.k}")


@dataclass
class ThresholdSettings:
    """Manual speed band; unset bounds mean calibrate from the data"""
    lo: Optional[float] = None
    hi: Optional[float] = None

    def __post_init__(self):
        if (self.lo is None) != (self.hi is None):
            raise ConfigError("thresholds need both lo and hi, or neither")
        if self.lo is not None:
            self.to_config()

    def to_config(self) -> Optional[ThresholdConfig]:
        if self.lo is None:
            return None
        try:
            return ThresholdConfig(lo=float(self.lo), hi=float(self.hi))
        except ValueError as e:
            raise ConfigError(str(e))


@dataclass
class EffortConfig:
    cell_degrees: float = 0.05
    bbox: Optional[List[float]] = None   # lat_min, lat_max, lon_min, lon_max

    def __post_init__(self):
        if self.cell_degrees <= 0:
            raise ConfigError(f"cell_degrees must be positive, got {self.cell_degrees}")
        if self.bbox is not None:
            if len(self.bbox) != 4:
                raise ConfigError(f"bbox needs lat_min, lat_max, lon_min, lon_max, got {self.bbox}")
            lat_min, lat_max, lon_min, lon_max = (float(v) for v in self.bbox)
            if not (lat_max > lat_min and lon_max > lon_min):
                raise ConfigError(f"degenerate bbox: {self.bbox}")


@dataclass
class LoggingConfig:
    level: str = "INFO"
    file: Optional[str] = None
    max_size_mb: int = 10
    backup_count: int = 5


@dataclass
class RunConfig:
    """Complete run configuration"""
    em: EmConfig = field(default_factory=EmConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    thresholds: ThresholdSettings = field(default_factory=ThresholdSettings)
    effort: EffortConfig = field(default_factory=EffortConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    jobs: int = 1
    seed: int = 0


def default_jobs() -> int:
    return psutil.cpu_count(logical=True) or 1


# environment variable suffix -> (section, key, parser)
ENV_VARIABLES: Dict[str, Tuple[str, str, Callable[[str], Any]]] = {
    "SEED": ("em", "seed", int),
    "MAX_ITER": ("em", "max_iter", int),
    "TOL": ("em", "tol", float),
    "N_RESTARTS": ("em", "n_restarts", int),
    "MIN_VARIANCE": ("em", "min_variance", float),
    "GAP_THRESHOLD_HOURS": ("trajectory", "gap_threshold_hours", float),
    "MAX_GAP_HOURS": ("trajectory", "max_gap_hours", float),
    "USE_REPORTED_SPEED": ("trajectory", "use_reported_speed", _as_bool),
    "METHOD": ("model", "method", str),
    "K": ("model", "k", int),
    "GROUPING": ("model", "grouping", str),
    "DIMENSION": ("model", "dimension", str),
    "DECODER": ("model", "decoder", str),
    "CELL_DEGREES": ("effort", "cell_degrees", float),
    "JOBS": ("runtime", "jobs", int),
    "LOG_LEVEL": ("logging", "level", str),
    "LOG_FILE": ("logging", "file", str),
}


class ConfigManager:
    """
    Manages run configuration from multiple sources:
    - Built-in defaults
    - YAML configuration file (with ${VAR:default} substitution)
    - Environment variables prefixed TRAWLWATCH_ (a .env file is loaded when present)
    - Command-line overrides
    """

    def __init__(self, config_file: Optional[str] = None, load_env_file: bool = True):
        self.logger = logging.getLogger(__name__)

        if load_env_file and load_dotenv:
            env_file = Path.cwd() / ".env"
            if env_file.exists():
                load_dotenv(env_file)
                self.logger.info(f"Loaded environment from: {env_file}")

        project_root = Path(__file__).parent.parent.parent
        self.explicit_file = config_file is not None
        self.config_file = config_file or str(project_root / "config" / "trawlwatch_config.yaml")
        self.config: Optional[RunConfig] = None

        self.defaults = {
            "em": asdict(EmConfig()),
            "trajectory": asdict(TrajectoryConfig()),
            "model": asdict(ModelConfig()),
            "thresholds": {"lo": None, "hi": None},
            "effort": {"cell_degrees": 0.05, "bbox": None},
            "runtime": {"jobs": None},
            "logging": asdict(LoggingConfig()),
        }

    def load_config(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """Load configuration from all sources; overrides use the same nested layout"""
        config_dict = self._deep_copy_dict(self.defaults)

        file_config = self._load_config_file()
        if file_config:
            config_dict = self._merge_configs(config_dict, file_config)

        env_config = self._load_env_config()
        config_dict = self._merge_configs(config_dict, env_config)

        if overrides:
            config_dict = self._merge_configs(config_dict, self._drop_unset(overrides))

        try:
            jobs = config_dict["runtime"].get("jobs")
            jobs = default_jobs() if jobs in (None, "", 0) else int(jobs)
            if jobs < 1:
                raise ConfigError(f"jobs must be >= 1, got {jobs}")

            em = EmConfig.from_mapping(config_dict["em"])
            self.config = RunConfig(
                em=em,
                trajectory=TrajectoryConfig(
                    gap_threshold_hours=float(config_dict["trajectory"]["gap_threshold_hours"]),
                    max_gap_hours=float(config_dict["trajectory"]["max_gap_hours"]),
                    use_reported_speed=_as_bool(config_dict["trajectory"]["use_reported_speed"]),
                ),
                model=ModelConfig(
                    method=str(config_dict["model"]["method"]),
                    k=int(config_dict["model"]["k"]),
                    grouping=str(config_dict["model"]["grouping"]),
                    dimension=str(config_dict["model"]["dimension"]),
                    decoder=str(config_dict["model"]["decoder"]),
                    per_coordinate_rho=_as_bool(config_dict["model"]["per_coordinate_rho"]),
                ),
                thresholds=ThresholdSettings(
                    lo=self._optional_float(config_dict["thresholds"].get("lo")),
                    hi=self._optional_float(config_dict["thresholds"].get("hi")),
                ),
                effort=EffortConfig(
                    cell_degrees=float(config_dict["effort"]["cell_degrees"]),
                    bbox=config_dict["effort"].get("bbox"),
                ),
                logging=LoggingConfig(**config_dict["logging"]),
                jobs=jobs,
                seed=em.seed,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            self.logger.error(f"Failed to create configuration: {e}")
            raise ConfigError(f"Invalid configuration: {e}")

        self._log_config_summary()
        return self.config

    @staticmethod
    def _optional_float(value) -> Optional[float]:
        return None if value in (None, "") else float(value)

    def _load_config_file(self) -> Optional[Dict[str, Any]]:
        if not os.path.exists(self.config_file):
            if self.explicit_file:
                raise ConfigError(f"Config file not found: {self.config_file}")
            self.logger.debug(f"Config file not found: {self.config_file}")
            return None

        try:
            with open(self.config_file, "r") as f:
                config = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Failed to load config file {self.config_file}: {e}")
        if not isinstance(config, dict):
            raise ConfigError(f"Config file {self.config_file} must hold a mapping")

        config = self._process_env_vars(config)
        unknown = set(config) - set(self.defaults)
        if unknown:
            raise ConfigError(f"Unknown config sections: {', '.join(sorted(unknown))}")
        self.logger.info(f"Loaded config from: {self.config_file}")
        return config

    def _load_env_config(self) -> Dict[str, Any]:
        env_config: Dict[str, Dict[str, Any]] = {}
        for suffix, (section, key, parse) in ENV_VARIABLES.items():
            raw = os.getenv(ENV_PREFIX + suffix)
            if raw is None or raw == "":
                continue
            try:
                env_config.setdefault(section, {})[key] = parse(raw)
            except ValueError:
                raise ConfigError(f"Invalid value for {ENV_PREFIX + suffix}: '{raw}'")

        if env_config:
            self.logger.info("Loaded configuration from environment variables")
        return env_config

    def _process_env_vars(self, config: Any) -> Any:
        """Substitute ${VAR} and ${VAR:default} string values"""
        if isinstance(config, dict):
            return {key: self._process_env_vars(value) for key, value in config.items()}
        if isinstance(config, list):
            return [self._process_env_vars(item) for item in config]
        if isinstance(config, str) and config.startswith("${") and config.endswith("}"):
            env_expr = config[2:-1]
            if ":" in env_expr:
                env_name, default_value = env_expr.split(":", 1)
                return yaml.safe_load(os.getenv(env_name.strip(), default_value.strip()))
            env_value = os.getenv(env_expr.strip())
            if env_value is None:
                raise ConfigError(f"Required environment variable not set: {env_expr}")
            return yaml.safe_load(env_value)
        return config

    def _drop_unset(self, overrides: Dict[str, Any]) -> Dict[str, Any]:
        result = {}
        for key, value in overrides.items():
            if isinstance(value, dict):
                nested = self._drop_unset(value)
                if nested:
                    result[key] = nested
            elif value is not None:
                result[key] = value
        return result

    def _merge_configs(self, base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        result = self._deep_copy_dict(base)
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value
        return result

    def _deep_copy_dict(self, d: Dict[str, Any]) -> Dict[str, Any]:
        result = {}
        for key, value in d.items():
            if isinstance(value, dict):
                result[key] = self._deep_copy_dict(value)
            elif isinstance(value, list):
                result[key] = list(value)
            else:
                result[key] = value
        return result

    def _log_config_summary(self):
        if not self.config:
            return
        cfg = self.config
        self.logger.debug("Configuration Summary:")
        self.logger.debug(f"  Method: {cfg.model.method} (K={cfg.model.k}, grouping={cfg.model.grouping}, "
                          f"dimension={cfg.model.dimension}, decoder={cfg.model.decoder})")
        self.logger.debug(f"  EM: max_iter={cfg.em.max_iter}, tol={cfg.em.tol}, restarts={cfg.em.n_restarts}, "
                          f"min_variance={cfg.em.min_variance}, seed={cfg.em.seed}")
        self.logger.debug(f"  Trajectory: gap={cfg.trajectory.gap_threshold_hours} h, "
                          f"max_gap={cfg.trajectory.max_gap_hours} h")
        self.logger.debug(f"  Jobs: {cfg.jobs}")


def load_em_config(path: str) -> EmConfig:
    """EM settings from a YAML file, either flat or under an `em:` section"""
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Failed to load EM config {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"EM config {path} must hold a mapping")
    return EmConfig.from_mapping(data.get("em", data))
