"""Numerical defaults and their JSON config file (~/.isotorus/config.json)."""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional

from isotorus import IsotorusValidationError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_DIR = os.path.expanduser("~/.isotorus")
DEFAULT_CONFIG_FILE = os.path.join(DEFAULT_CONFIG_DIR, "config.json")


@dataclass(frozen=True)
class Settings:
    """
    Numerical knobs shared by the library and the CLI.

    Values here are only defaults: every library function also takes the
    corresponding keyword argument explicitly.
    """

    tol: float = 1e-12  # equilibrium residual tolerance
    max_iterations: int = 200  # damped Newton iteration cap
    quad_nodes: int = 256  # Gauss-Chebyshev nodes per band/gap
    atom_budget: int = 2**22
    discretize_start: int = 64  # first node count per band
    discretize_cap: int = 2**18  # last node count per band
    discretize_tol: float = 1e-12  # node doubling stops below this change
    sidelobe_db: float = 120.0
    window_min_len: int = 4001
    window_spacing_factor: float = 16.0
    refine_steps: int = 3
    condition_cap: float = 1e12
    lag_count: int = 8
    fit_residual_tol: float = 1e-3
    reorth_memory_mb: int = 256
    base_nodes: int = 4  # nodes of mu_0 when approximating the balanced measure
    seed: int = 20150101

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "Settings":
        if not isinstance(config, dict):
            raise IsotorusValidationError("Config must be a JSON object.")
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for key, value in config.items():
            if key not in known:
                logger.warning(f"Ignoring unknown config key '{key}'")
                continue
            field_type = type(known[key].default)
            try:
                values[key] = field_type(value)
            except (TypeError, ValueError) as e:
                raise IsotorusValidationError(
                    f"Config key '{key}' expects {field_type.__name__}, got {value!r}"
                ) from e
        return cls(**values)

    @classmethod
    def from_config_file(cls, config_path: str) -> "Settings":
        try:
            with open(config_path, "r") as cf:
                config = json.load(cf)
        except FileNotFoundError as e:
            raise IsotorusValidationError(f"Config file not found: {config_path}") from e
        except json.JSONDecodeError as e:
            raise IsotorusValidationError(
                f"Error parsing config file {config_path}: {e}"
            ) from e
        return cls.from_dict(config)

    @classmethod
    def load(cls, config_path: Optional[str] = None) -> "Settings":
        """
        Loads settings from an explicit path, else from the default config file
        if it exists, else returns the built-in defaults.

        An explicit path must be valid; a broken default file is only warned about.
        """
        if config_path:
            logger.info(f"Loading configuration from specified file: {config_path}")
            return cls.from_config_file(config_path)
        if os.path.exists(DEFAULT_CONFIG_FILE):
            try:
                return cls.from_config_file(DEFAULT_CONFIG_FILE)
            except IsotorusValidationError as e:
                logger.warning(f"Error loading config file {DEFAULT_CONFIG_FILE}: {e}")
        return cls()

    def write(self, config_path: str = DEFAULT_CONFIG_FILE) -> str:
        config_dir = os.path.dirname(os.path.abspath(config_path))
        os.makedirs(config_dir, exist_ok=True)
        with open(config_path, "w") as cf:
            json.dump(self.to_dict(), cf, indent=2)
        return config_path
