"""
Pipeline configuration for turnover-forest

Defaults, then an optional JSON file, then TURNOVER_* environment
variables (a .env file is honoured), then dotted command-line overrides
such as ``--forest.n_trees 50``. A master seed fans out to every nested
seed through derive_seed.
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from dotenv import load_dotenv

from baselines import GdConfig
from boruta import BorutaConfig
from data_model import DEFAULT_BINS, DomainError, TurnoverBins
from forest import TreeParams
from ingestion import DEFAULT_EXCLUSIONS, SplitConfig
from seeding import derive_seed, validate_seed

logger = logging.getLogger(__name__)

ENV_WORKDIR = "TURNOVER_WORKDIR"
ENV_WORKERS = "TURNOVER_WORKERS"
ENV_SEED = "TURNOVER_SEED"


class ConfigError(DomainError):
    """The configuration file or an override is unusable."""


@dataclass(frozen=True)
class PipelineConfig:
    input_csv: Optional[str] = None
    workdir: str = "work"
    split: SplitConfig = field(default_factory=SplitConfig)
    bins: TurnoverBins = DEFAULT_BINS
    boruta: BorutaConfig = field(default_factory=BorutaConfig)
    forest: TreeParams = field(default_factory=TreeParams)
    n_trees: int = 500
    forest_seed: int = 0
    gd: GdConfig = field(default_factory=GdConfig)
    feature_exclusions: Tuple[str, ...] = DEFAULT_EXCLUSIONS
    use_boruta_selection: bool = True
    include_tentative: bool = False
    extra_features: Tuple[str, ...] = ()
    workers: int = 1
    record_timing: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be at least 1, got {self.n_trees}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        validate_seed(self.forest_seed)
        object.__setattr__(self, "feature_exclusions", tuple(self.feature_exclusions))
        object.__setattr__(self, "extra_features", tuple(self.extra_features))

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Re-seed every stream coherently from one master seed."""
        seed = validate_seed(seed)
        return replace(
            self,
            split=replace(self.split, seed=derive_seed(seed, "split")),
            boruta=replace(self.boruta, seed=derive_seed(seed, "boruta")),
            forest_seed=derive_seed(seed, "forest"),
            gd=replace(self.gd, seed=derive_seed(seed, "gd")),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_csv": self.input_csv,
            "workdir": self.workdir,
            "split": {
                "train_fraction": self.split.train_fraction,
                "seed": self.split.seed,
                "strategy": self.split.strategy,
            },
            "bins": self.bins.to_dict(),
            "boruta": {
                "max_iterations": self.boruta.max_iterations,
                "alpha": self.boruta.alpha,
                "multiple_testing": self.boruta.multiple_testing,
                "n_trees_per_iteration": self.boruta.n_trees_per_iteration,
                "seed": self.boruta.seed,
                "forest_params": self.boruta.forest_params.to_dict(),
            },
            "forest": dict(self.forest.to_dict(), n_trees=self.n_trees, seed=self.forest_seed),
            "gd": {
                "learning_rate": self.gd.learning_rate,
                "epochs": self.gd.epochs,
                "l2": self.gd.l2,
                "batch": self.gd.batch,
                "seed": self.gd.seed,
            },
            "feature_exclusions": list(self.feature_exclusions),
            "use_boruta_selection": self.use_boruta_selection,
            "include_tentative": self.include_tentative,
            "extra_features": list(self.extra_features),
            "workers": self.workers,
            "record_timing": self.record_timing,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged = deep_merge(DEFAULTS, data)
        try:
            boruta = dict(merged["boruta"])
            forest = dict(merged["forest"])
            return cls(
                input_csv=None if merged["input_csv"] is None else str(merged["input_csv"]),
                workdir=str(merged["workdir"]),
                split=SplitConfig(
                    train_fraction=float(merged["split"]["train_fraction"]),
                    seed=int(merged["split"]["seed"]),
                    strategy=str(merged["split"]["strategy"]),
                ),
                bins=TurnoverBins.from_dict(merged["bins"]),
                boruta=BorutaConfig(
                    max_iterations=int(boruta["max_iterations"]),
                    alpha=float(boruta["alpha"]),
                    multiple_testing=str(boruta["multiple_testing"]),
                    n_trees_per_iteration=int(boruta["n_trees_per_iteration"]),
                    seed=int(boruta["seed"]),
                    forest_params=TreeParams.from_dict(boruta["forest_params"]),
                ),
                forest=TreeParams.from_dict(forest),
                n_trees=int(forest["n_trees"]),
                forest_seed=int(forest["seed"]),
                gd=GdConfig(
                    learning_rate=float(merged["gd"]["learning_rate"]),
                    epochs=int(merged["gd"]["epochs"]),
                    l2=float(merged["gd"]["l2"]),
                    batch=merged["gd"]["batch"],
                    seed=int(merged["gd"]["seed"]),
                ),
                feature_exclusions=tuple(merged["feature_exclusions"]),
                use_boruta_selection=bool(merged["use_boruta_selection"]),
                include_tentative=bool(merged["include_tentative"]),
                extra_features=tuple(merged["extra_features"]),
                workers=int(merged["workers"]),
                record_timing=bool(merged["record_timing"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc


DEFAULTS: Dict[str, Any] = PipelineConfig().to_dict()


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override_value(text: str) -> Any:
    """JSON literal when it parses (numbers, true/false, null, lists), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: Mapping[str, Any], overrides: Sequence[Tuple[str, str]]) -> Dict[str, Any]:
    """Apply ``("forest.n_trees", "50")`` style overrides to a config dict."""
    result = copy.deepcopy(dict(data))
    for dotted, raw in overrides:
        keys = dotted.split(".")
        node: Dict[str, Any] = result
        defaults: Any = DEFAULTS
        for key in keys[:-1]:
            if not isinstance(defaults, Mapping) or key not in defaults:
                raise ConfigError(f"unknown config key {dotted!r}")
            defaults = defaults[key]
            node = node.setdefault(key, {})
        if not isinstance(defaults, Mapping) or keys[-1] not in defaults:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[keys[-1]] = parse_override_value(raw)
    return result


def env_overrides() -> Tuple[Dict[str, Any], Optional[int]]:
    load_dotenv()
    values: Dict[str, Any] = {}
    if os.environ.get(ENV_WORKDIR):
        values["workdir"] = os.environ[ENV_WORKDIR]
    if os.environ.get(ENV_WORKERS):
        try:
            values["workers"] = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
    seed = None
    if os.environ.get(ENV_SEED):
        try:
            seed = int(os.environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    return values, seed


def load_config(
    path: Optional[str] = None,
    overrides: Sequence[Tuple[str, str]] = (),
    seed: Optional[int] = None,
) -> PipelineConfig:
    """Resolve defaults, file, environment, dotted overrides and seed, in that order."""
    data: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a JSON object")

    from_env, env_seed = env_overrides()
    data = deep_merge(data, from_env)
    data = apply_overrides(data, overrides)
    cfg = PipelineConfig.from_dict(data)

    master = seed if seed is not None else env_seed
    if master is not None:
        try:
            cfg = cfg.with_seed(master)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    logger.debug("effective config: %s", cfg.to_dict())
    return cfg
