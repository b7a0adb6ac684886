"""
Experiment configuration.

Files are flat ``section.key = value`` lines (dotenv syntax), nested into a
pydantic model tree. Unknown sections or keys are errors.

Seed / output directory priority:
1) explicit CLI flag
2) environment variable (SEED, HAWKES_OUT_DIR)
3) config file value
4) safe default
"""
import hashlib
import logging
import math
import os
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PrivateAttr, ValidationError, field_validator

from engine.simulator import SimulationSettings
from model.hawkes_model import HawkesModel
from model.kernel_toolkit import Kernel
from model.mark_model import MarkDistribution, MarkFunction, MarkModel, Nonlinearity, NonlinearityFamily
from utils.errors import ConfigurationError
from utils.seeding import MASK64

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0
DEFAULT_OUT_DIR = "results"


def _split(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


FloatList = Annotated[List[float], BeforeValidator(_split)]
IntList = Annotated[List[int], BeforeValidator(_split)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelSection(_Section):
    family: Literal["zero", "exponential", "erlang", "tabulated"] = "exponential"
    a: float = 0.0
    beta: float = 1.0
    path: Optional[str] = None
    tail_tol: float = 1e-8
    tail_mass: float = 0.0

    def build(self, base_dir: Path) -> Kernel:
        if self.family == "zero":
            return Kernel.exponential(0.0, 1.0)
        if self.family == "exponential":
            return Kernel.exponential(self.a, self.beta, self.tail_tol)
        if self.family == "erlang":
            return Kernel.erlang(self.a, self.beta, self.tail_tol)
        if not self.path:
            raise ConfigurationError("kernel.family = tabulated needs kernel.path")
        path = Path(self.path)
        return Kernel.from_csv(path if path.is_absolute() else base_dir / path, self.tail_tol, self.tail_mass)


class MarksSection(_Section):
    distribution: Literal["constant", "uniform", "exponential", "discrete"] = "constant"
    c: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    rate: float = 1.0
    values: FloatList = Field(default_factory=list)
    probs: FloatList = Field(default_factory=list)
    b: Literal["one", "identity", "square", "affine_clamp"] = "one"
    b_slope: float = 1.0
    b_intercept: float = 0.0
    b_cap: Optional[float] = None
    g: Literal["one", "identity", "square", "affine_clamp"] = "one"
    g_slope: float = 1.0
    g_intercept: float = 0.0
    g_cap: Optional[float] = None

    @staticmethod
    def _function(kind: str, slope: float, intercept: float, cap: Optional[float]) -> MarkFunction:
        if kind == "affine_clamp":
            return MarkFunction.affine_clamp(slope, intercept, cap)
        return {"one": MarkFunction.one, "identity": MarkFunction.identity, "square": MarkFunction.square}[kind]()

    def build(self) -> MarkModel:
        if self.distribution == "constant":
            dist = MarkDistribution.constant(self.c)
        elif self.distribution == "uniform":
            dist = MarkDistribution.uniform(self.lo, self.hi)
        elif self.distribution == "exponential":
            dist = MarkDistribution.exponential(self.rate)
        else:
            dist = MarkDistribution.discrete(self.values, self.probs)
        return MarkModel(
            distribution=dist,
            b_fn=self._function(self.b, self.b_slope, self.b_intercept, self.b_cap),
            g_fn=self._function(self.g, self.g_slope, self.g_intercept, self.g_cap),
        )


class NonlinearitySection(_Section):
    family: Literal["linear", "relu", "sigmoid", "softplus"] = "linear"
    mu: float = 1.0
    epsilon: float = 0.0
    level: float = 1.0
    scale: float = 1.0

    def build(self) -> Nonlinearity:
        return Nonlinearity(NonlinearityFamily(self.family), self.mu, self.epsilon, self.level, self.scale)


class ExperimentSection(_Section):
    t_grid: FloatList = Field(default_factory=lambda: [50.0, 200.0, 800.0])
    n_rule: Literal["power", "fixed"] = "power"
    n: int = 16
    n_grid: IntList = Field(default_factory=lambda: [8, 16, 32, 64])
    replicas: int = 2000
    seed: Optional[int] = None
    quad_step: Optional[float] = None
    audit_step: Optional[float] = None
    resolvent_step: float = 1e-3
    resolvent_tail_tol: float = 1e-8
    sigma2_replicas: int = 200
    sigma2_horizon: float = 2000.0
    sigma2_burn_in: Optional[float] = None
    sigma2_tol: float = 0.05
    bootstrap: int = 200

    @field_validator("t_grid")
    @classmethod
    def _increasing(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("t_grid must not be empty")
        if any(t <= 0.0 for t in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("t_grid must be positive and strictly increasing")
        return value

    @field_validator("n_grid")
    @classmethod
    def _positive_n(cls, value: List[int]) -> List[int]:
        if not value or any(n < 1 for n in value):
            raise ValueError("n_grid entries must be >= 1")
        return value

    @field_validator("replicas")
    @classmethod
    def _enough_replicas(cls, value: int) -> int:
        if value < 100:
            raise ValueError("replicas must be >= 100")
        return value

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and not 0 <= value <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return value

    def n_for(self, T: float) -> int:
        """power rule: n = floor(T^{2/5}) + 1, fixed rule: n."""
        if self.n_rule == "fixed":
            return self.n
        return int(math.floor(T**0.4)) + 1


class MalliavinSection(_Section):
    u: float = 5.0
    x: float = 1.0
    lags: FloatList = Field(default_factory=lambda: [0.25 * k for k in range(1, 21)])
    replicas: int = 5000
    pairs: int = 100
    progeny_horizon: float = 200.0


class SimulationSection(_Section):
    segment: float = 1.0
    block_length: float = 25.0
    strip_height: float = 1.0
    max_events: int = 10_000_000

    def settings(self, record_candidates: bool = True) -> SimulationSettings:
        return SimulationSettings(
            segment=self.segment,
            block_length=self.block_length,
            strip_height=self.strip_height,
            max_events=self.max_events,
            record_candidates=record_candidates,
        )


class OutputSection(_Section):
    dir: Optional[str] = None


class ExperimentConfig(_Section):
    kernel: KernelSection = Field(default_factory=KernelSection)
    marks: MarksSection = Field(default_factory=MarksSection)
    nonlinearity: NonlinearitySection = Field(default_factory=NonlinearitySection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    malliavin: MalliavinSection = Field(default_factory=MalliavinSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    output: OutputSection = Field(default_factory=OutputSection)

    source: Optional[str] = None
    sha256: Optional[str] = None
    master_seed: int = DEFAULT_SEED
    output_dir: str = DEFAULT_OUT_DIR

    _model: Optional[HawkesModel] = PrivateAttr(default=None)

    def model(self) -> HawkesModel:
        """The validated model (raises StabilityViolation / ModelValidationError)."""
        if self._model is None:
            base_dir = Path(self.source).parent if self.source else Path.cwd()
            self._model = HawkesModel(
                kernel=self.kernel.build(base_dir),
                marks=self.marks.build(),
                h=self.nonlinearity.build(),
            )
        return self._model


def _nest(flat: Dict[str, Optional[str]]) -> Dict[str, Dict[str, str]]:
    nested: Dict[str, Dict[str, str]] = {}
    for key, value in flat.items():
        if value is None:
            raise ConfigurationError(f"config key {key!r} has no value")
        section, dot, name = key.partition(".")
        if not dot or not name:
            raise ConfigurationError(f"config key {key!r} must look like section.key")
        nested.setdefault(section.strip(), {})[name.strip()] = value
    return nested


def _resolve_seed(cli_seed: Optional[int], file_seed: Optional[int]) -> int:
    if cli_seed is not None:
        return cli_seed
    env_seed = os.getenv("SEED")
    if env_seed:
        try:
            return int(env_seed) & MASK64
        except ValueError as exc:
            raise ConfigurationError(f"SEED environment variable is not an integer: {env_seed!r}") from exc
    if file_seed is not None:
        return file_seed
    return DEFAULT_SEED


def _resolve_out_dir(cli_out: Optional[str], file_out: Optional[str]) -> str:
    return cli_out or os.getenv("HAWKES_OUT_DIR") or file_out or DEFAULT_OUT_DIR


def parse_config(
    flat: Dict[str, Optional[str]],
    source: Optional[str] = None,
    sha256: Optional[str] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    validate_model: bool = True,
) -> ExperimentConfig:
    """Build an ExperimentConfig from flat dotted keys."""
    nested = _nest(flat)
    try:
        cfg = ExperimentConfig.model_validate(nested)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigurationError(f"invalid configuration: {problems}") from exc

    cfg.source = source
    cfg.sha256 = sha256
    cfg.master_seed = _resolve_seed(seed, cfg.experiment.seed)
    cfg.output_dir = _resolve_out_dir(out_dir, cfg.output.dir)
    if validate_model:
        model = cfg.model()
        logger.info("model validated: rho = %.6g", model.rho)
    return cfg


def load_config(
    path: Optional[str] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    validate_model: bool = True,
) -> ExperimentConfig:
    """Read a config file (or defaults when ``path`` is None)."""
    if path is None:
        return parse_config({}, seed=seed, out_dir=out_dir, validate_model=validate_model)
    file = Path(path)
    if not file.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    raw = file.read_bytes()
    flat = dotenv_values(file)
    return parse_config(
        dict(flat),
        source=str(file),
        sha256=hashlib.sha256(raw).hexdigest(),
        seed=seed,
        out_dir=out_dir,
        validate_model=validate_model,
    )
