from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigurationError, UnsupportedDegreeError


DATA_DIR = Path(__file__).resolve().parents[1] / "data"
DB_PATH = DATA_DIR / "hdg_results.db"

VARIANTS = ("A", "B", "C")
SUPPORTED_DEGREES = (0, 1, 2, 3)

IC_MODES = {
    "l2": "l2_projection",
    "l2_projection": "l2_projection",
    "elliptic": "elliptic_projection",
    "elliptic_projection": "elliptic_projection",
}


@dataclass(frozen=True)
class DegreeConfig:
    """Variant and degree of an Interpolatory HDG method.

    ``ell`` is the degree of the scalar space W_h: k+1, k and k-1 for the
    A, B and C variants. The stabilization parameter is 1/h_K on each
    element.
    """

    variant: str
    k: int

    def __post_init__(self) -> None:
        variant = str(self.variant).upper()
        object.__setattr__(self, "variant", variant)
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.k not in SUPPORTED_DEGREES:
            raise UnsupportedDegreeError(f"k={self.k} not supported, expected one of {SUPPORTED_DEGREES}")
        if variant == "C" and self.k < 1:
            raise ConfigurationError("variant C is only defined for k >= 1")

    @property
    def ell(self) -> int:
        return {"A": self.k + 1, "B": self.k, "C": self.k - 1}[self.variant]

    @property
    def post_degree(self) -> int:
        return self.k + 1

    @property
    def assembly_exactness(self) -> int:
        return 2 * (self.k + 1) + 1

    @property
    def face_exactness(self) -> int:
        return 2 * (self.k + 1)

    @property
    def error_exactness(self) -> int:
        return 2 * (self.k + 1) + 6

    @staticmethod
    def tau(h_K: float) -> float:
        return 1.0 / h_K

    def label(self) -> str:
        return f"HDG ({self.variant}), k={self.k}"


def parse_dt_policy(policy: str) -> Tuple[str, Optional[float]]:
    policy = policy.strip().lower()
    if policy in ("h", "dt=h"):
        return "h", None
    if policy in ("h2", "h^2", "dt=h^2", "dt=h2"):
        return "h2", None
    if policy.startswith("fixed:"):
        try:
            value = float(policy.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigurationError(f"bad fixed time step in {policy!r}") from exc
        if not value > 0:
            raise ConfigurationError("fixed time step must be positive")
        return "fixed", value
    raise ConfigurationError(f"unknown dt policy {policy!r}, expected h, h2 or fixed:VAL")


@dataclass(frozen=True)
class TimeConfig:
    T: float = 1.0
    dt_policy: str = "h"
    tol: float = 1e-10
    max_iter: int = 50
    ic_mode: str = "l2_projection"
    newton: bool = False
    output_times: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.T < 0:
            raise ConfigurationError("final time T must be non-negative")
        parse_dt_policy(self.dt_policy)
        if self.ic_mode not in IC_MODES:
            raise ConfigurationError(f"unknown initial-condition mode {self.ic_mode!r}")
        object.__setattr__(self, "ic_mode", IC_MODES[self.ic_mode])
        if not self.tol > 0:
            raise ConfigurationError("nonlinear tolerance must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        object.__setattr__(self, "output_times", tuple(sorted(float(t) for t in self.output_times)))

    def nominal_dt(self, mesh_size: float) -> float:
        """Time step before adjustment; ``mesh_size`` is h/sqrt(2)."""
        kind, value = parse_dt_policy(self.dt_policy)
        if kind == "h":
            return mesh_size
        if kind == "h2":
            return mesh_size**2
        return float(value)

    def resolve_steps(self, mesh_size: float) -> Tuple[int, float]:
        dt = self.nominal_dt(mesh_size)
        if self.T == 0:
            return 0, dt
        steps = max(1, int(round(self.T / dt)))
        return steps, self.T / steps


@dataclass(frozen=True)
class Settings:
    threads: int
    log_level: str
    db_path: Path


def default_db_path(dotenv_path: Optional[Path] = None) -> Path:
    """Results database named by HDG_DB_PATH, falling back to data/hdg_results.db."""
    load_dotenv(dotenv_path=dotenv_path, override=False)
    return Path(os.environ.get("HDG_DB_PATH", "").strip() or DB_PATH)


def get_settings(dotenv_path: Optional[Path] = None) -> Settings:
    load_dotenv(dotenv_path=dotenv_path, override=False)
    raw_threads = os.environ.get("HDG_THREADS", "").strip()
    if raw_threads:
        try:
            threads = int(raw_threads)
        except ValueError as exc:
            raise ConfigurationError(f"HDG_THREADS must be an integer, got {raw_threads!r}") from exc
        if threads < 1:
            raise ConfigurationError("HDG_THREADS must be at least 1")
    else:
        threads = os.cpu_count() or 1
    return Settings(
        threads=threads,
        log_level=os.environ.get("HDG_LOG_LEVEL", "INFO").upper(),
        db_path=default_db_path(dotenv_path),
    )


def load_config_file(path: Path) -> Dict[str, str]:
    """Read ``key = value`` lines; keys are normalized to flag names with underscores."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    values = dotenv_values(path)
    return {key.strip().lstrip("-").replace("-", "_").lower(): value for key, value in values.items() if value is not None}


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
