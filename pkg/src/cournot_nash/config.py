"""Run configuration: JSON schema, parsing with full error lists, overrides and problem building."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    ValidationError,
    model_validator,
)

from .dykstra import DykstraConfig
from .errors import CournotNashError, InvalidConfigError
from .model import (
    CongestionSpec,
    ProbabilityVector,
    ProblemSpec,
    TwoPopulationSpec,
    build_grid,
    cell_volume,
    gaussian_mixture,
    interaction_kernel,
    power_cost,
    power_potential,
    uniform_measure,
)
from .prox_ops import NewtonConfig
from .schemes import SchemeConfig


class ConfigError(InvalidConfigError):
    """All problems found in a configuration, one ``path: message`` string each."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Coord = Union[float, list[float]]
Bounds = Union[tuple[float, float], list[tuple[float, float]]]


class Domain(_Section):
    dim: Literal[1, 2] = 1
    bounds: Bounds = (0.0, 5.0)
    n: int = Field(50, ge=2)

    @model_validator(mode="after")
    def _check(self):
        pairs = [self.bounds] if isinstance(self.bounds, tuple) else self.bounds
        if isinstance(self.bounds, list) and len(pairs) != self.dim:
            raise ValueError(f"bounds needs one (lo, hi) pair per axis ({self.dim})")
        for lo, hi in pairs:
            if not lo < hi:
                raise ValueError("bounds must satisfy lo < hi")
        return self


class GaussianComponent(_Section):
    center: Coord
    stdev: PositiveFloat
    mass: PositiveFloat = 1.0


class GaussianMixture(_Section):
    kind: Literal["gaussian_mixture"]
    components: list[GaussianComponent] = Field(min_length=1)


class Uniform(_Section):
    kind: Literal["uniform"]
    support: Optional[tuple[float, float]] = None


class FromFile(_Section):
    """CSV with a header; the ``weight`` column (or the last one) is read."""

    kind: Literal["file"]
    path: str


Measure = Annotated[Union[GaussianMixture, Uniform, FromFile], Field(discriminator="kind")]


class Cost(_Section):
    p: PositiveFloat = 2.0


class Congestion(_Section):
    kind: Literal["none", "power", "entropy", "log_barrier"] = "power"
    exponent: float = 2.0
    coeff: PositiveFloat = 1.0
    # evaluate on densities nu_j / (density_unit * cell volume) instead of masses
    density: bool = False
    density_unit: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "power" and not self.exponent > 1:
            raise ValueError("power congestion needs exponent > 1")
        return self


class Interaction(_Section):
    scale: NonNegativeFloat = 0.0
    exponent: PositiveFloat = 2.0


class Potential(_Section):
    center: Coord = 0.0
    exponent: PositiveFloat = 2.0
    coeff: float = 0.0
    signed: bool = False


class Tolerances(_Section):
    outer: PositiveFloat = 1e-8
    nu: PositiveFloat = 1e-7
    marginal: PositiveFloat = 1e-8
    newton: PositiveFloat = 1e-11
    max_cycles: int = Field(20000, ge=1)
    max_outer: int = Field(5000, ge=1)


class SecondPopulation(_Section):
    """Second population; cost and epsilon default to the first population's."""

    mu: Measure
    cost: Optional[Cost] = None
    epsilon: Optional[PositiveFloat] = None
    shared_congestion: Congestion = Congestion(kind="power", exponent=4.0)


class Sweep(_Section):
    parameter: str = Field(min_length=1)
    values: list[Union[float, str]] = Field(min_length=1)


def _default_mu():
    return GaussianMixture(kind="gaussian_mixture",
                           components=[GaussianComponent(center=1.5, stdev=0.5)])


class RunConfig(_Section):
    """Everything needed for one solve or sweep.

    The defaults form a small convex demo: 50 points on [0, 5], quadratic cost
    and congestion, a weak quadratic interaction (sum phi^2 < 1) and a
    quadratic potential centred at 2.5.
    """

    domain: Domain = Domain()
    mu: Measure = Field(default_factory=_default_mu)
    cost: Cost = Cost()
    congestion: Congestion = Congestion()
    interaction: Interaction = Interaction(scale=1e-3, exponent=2.0)
    potential: Potential = Potential(center=2.5, exponent=2.0, coeff=1.0)
    epsilon: PositiveFloat = 0.5
    scheme: Literal["implicit", "semi_implicit"] = "semi_implicit"
    tolerances: Tolerances = Tolerances()
    two_population: Optional[SecondPopulation] = None
    output: str = "out"
    gamma_threshold: PositiveFloat = 1e-6
    sweep: Optional[Sweep] = None

    @model_validator(mode="after")
    def _check(self):
        if self.two_population is not None and self.scheme != "semi_implicit":
            raise ValueError("two-population runs use the semi_implicit scheme")
        if self.potential.signed and self.domain.dim != 1:
            raise ValueError("signed potentials are only defined in 1D")
        return self


# -- text <-> config ----------------------------------------------------------------


def _loc(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (("." if out else "") + str(p))
    return out or "<root>"


def _format_errors(exc: ValidationError):
    lines = []
    for e in exc.errors():
        # drop union-branch tags so paths read like the document's keys
        loc = [p for p in e["loc"] if not (isinstance(p, str) and ("[" in p or p in
               ("gaussian_mixture", "uniform", "file", "tuple[float, float]")))]
        lines.append(f"{_loc(loc)}: {e['msg']}")
    return lines


def from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(["<root>: configuration must be a JSON object"])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON document; empty text gives the default demo."""
    if not text.strip():
        return RunConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    return from_dict(data)


def to_dict(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")


def serialize(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2)


BUNDLED = ("default", "fig1", "fig1_eps", "fig2_implicit", "fig1d1", "fig1d2", "fig1d3",
           "fig5", "fig1_2pop", "fig2_2pop")


def bundled_text(name: str) -> str:
    return resources.files("cournot_nash").joinpath("configs", f"{name}.json").read_text()


def load_config(path_or_name: str | None) -> RunConfig:
    """Read a config file, or a bundled config by name (e.g. ``fig1``)."""
    if path_or_name is None:
        return RunConfig()
    path = Path(path_or_name)
    if path.exists():
        return parse_config(path.read_text())
    if path_or_name in BUNDLED:
        return parse_config(bundled_text(path_or_name))
    raise ConfigError([f"<root>: no such config file or bundled config {path_or_name!r}"])


# -- overrides and sweeps -------------------------------------------------------------


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(data: dict, dotted: str, value) -> dict:
    """Copy of ``data`` with ``dotted`` (e.g. ``cost.p``) set to ``value``."""
    out = copy.deepcopy(data)
    keys = dotted.split(".")
    node = out
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError([f"{dotted}: {k!r} is not a section"])
        node = nxt
    node[keys[-1]] = value
    return out


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``key=value`` strings; values are read as JSON when possible."""
    data = to_dict(cfg)
    errors = []
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            errors.append(f"{item}: override must look like key=value")
            continue
        data = set_path(data, key.strip(), _coerce(raw.strip()))
    if errors:
        raise ConfigError(errors)
    return from_dict(data)


def sweep_points(cfg: RunConfig):
    """Configs for every sweep value (each without a sweep section)."""
    if cfg.sweep is None:
        raise ConfigError(["sweep: this configuration has no sweep section"])
    base = to_dict(cfg)
    base["sweep"] = None
    out = []
    for v in cfg.sweep.values:
        out.append((v, from_dict(set_path(base, cfg.sweep.parameter, v))))
    return out


# -- building problems --------------------------------------------------------------------


def _measure(spec, X) -> ProbabilityVector:
    if spec.kind == "gaussian_mixture":
        return gaussian_mixture(X, [(c.center, c.stdev, c.mass) for c in spec.components])
    if spec.kind == "uniform":
        return uniform_measure(X, spec.support)
    text = Path(spec.path).read_text().splitlines()
    header = [h.strip() for h in text[0].split(",")]
    col = header.index("weight") if "weight" in header else len(header) - 1
    w = np.array([float(line.split(",")[col]) for line in text[1:] if line.strip()])
    if len(w) != len(X):
        raise InvalidConfigError(f"{spec.path}: {len(w)} weights for a grid of {len(X)} points")
    return ProbabilityVector.normalized(X, w)


def _congestion(spec: Congestion, X) -> CongestionSpec:
    cell = spec.density_unit * cell_volume(X) if spec.density else 1.0
    return CongestionSpec(spec.kind, spec.exponent, spec.coeff, cell)


def build_problem(cfg: RunConfig):
    """ProblemSpec, or TwoPopulationSpec when a second population is configured."""
    try:
        d = cfg.domain
        X = build_grid(d.bounds, d.n, d.dim)
        mu = _measure(cfg.mu, X)
        pot = cfg.potential
        problem = ProblemSpec(
            X=X,
            Y=X,
            mu=mu,
            cost=power_cost(X, X, cfg.cost.p),
            congestion=_congestion(cfg.congestion, X),
            interaction=interaction_kernel(X, cfg.interaction.scale, cfg.interaction.exponent),
            potential=power_potential(X, pot.center, pot.exponent, pot.coeff, pot.signed),
            epsilon=cfg.epsilon,
        )
        if cfg.two_population is None:
            return problem
        tp = cfg.two_population
        second = problem.replace(
            mu=_measure(tp.mu, X),
            cost=power_cost(X, X, tp.cost.p) if tp.cost is not None else problem.cost,
            epsilon=tp.epsilon if tp.epsilon is not None else cfg.epsilon,
        )
        return TwoPopulationSpec(problem, second, _congestion(tp.shared_congestion, X))
    except OSError as exc:
        raise InvalidConfigError(str(exc)) from exc
    except CournotNashError:
        raise


def scheme_config(cfg: RunConfig) -> SchemeConfig:
    t = cfg.tolerances
    return SchemeConfig(
        scheme=cfg.scheme,
        outer_tol=t.outer,
        max_outer=t.max_outer,
        dykstra=DykstraConfig(tol_nu=t.nu, tol_marginal=t.marginal, max_cycles=t.max_cycles),
        newton=NewtonConfig(tol=t.newton),
    )
