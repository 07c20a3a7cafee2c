"""Run configuration: a TOML file of key blocks, validated up front.

Every block is optional and falls back to the defaults below.  Unknown keys
are rejected so that typos surface as errors rather than silent defaults.
``SCBF_SEED`` in the environment overrides ``seeds.master_seed``.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .control import ControlSet, CostSpec, StrategyClass, enstrophy_cost_spec
from .dynamics import TrajectoryConfig
from .errors import SCBFError
from .noise import CovarianceSpec
from .operators import PhysicalParams
from .spectral_core import SpectralGrid, VelocityField, load_snapshot, random_field

__all__ = ["ConfigError", "RunConfig", "load_config", "SCHEMA_VERSION"]

SCHEMA_VERSION = "scbf-report/1"
_CRIT_TOL = 1e-12


class ConfigError(SCBFError, ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class GridBlock:
    dim: int = 2
    N: int = 32
    L: float = 1.0


@dataclass
class ParamsBlock:
    mu: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    r: float = 4.0


@dataclass
class NoiseBlock:
    sigma: float = 0.5
    decay_s: float = 5.0


@dataclass
class TimeBlock:
    t0: float = 0.0
    T: float = 0.1
    dt: float = 0.01
    record_every: int = 1


@dataclass
class InitBlock:
    kind: str = "random"  # zero | random | mode | snapshot
    h_norm: float = 0.5
    width: float = 4.0  # Gaussian spectral envelope for kind = random; 0 for flat
    seed: int = 0
    k: list = field(default_factory=lambda: [1, 0])
    amplitude: list = field(default_factory=lambda: [0.0, 1.0])
    phase: float = 0.0
    path: str = ""


@dataclass
class ControlBlock:
    R_ball: float = 1.0
    # Each candidate is {k, amplitude, phase, norm}; zero is always added.
    candidates: list = field(
        default_factory=lambda: [
            {"k": [1, 0], "amplitude": [0.0, 1.0], "norm": 1.0},
            {"k": [1, 0], "amplitude": [0.0, -1.0], "norm": 1.0},
        ]
    )


@dataclass
class CostBlock:
    kind: str = "enstrophy"
    discount_lambda: float = 0.0


@dataclass
class SimulateBlock:
    n_paths: int = 4
    forcing: int = -1  # candidate index used as constant control, -1 for none


@dataclass
class EnergyBlock:
    n_paths: int = 200


@dataclass
class CtsdepBlock:
    n_seeds: int = 5
    perturbation: float = 0.1


@dataclass
class ValueBlock:
    n_paths: int = 200
    knots: list = field(default_factory=lambda: [0.0, 0.05, 0.1])
    allowed: list = field(default_factory=list)  # candidate indices; empty means all


@dataclass
class DppBlock:
    eta: float = 0.05
    outer_paths: int = 50
    inner_paths: int = 20


@dataclass
class VerifyBlock:
    n_samples: int = 20


@dataclass
class SeedsBlock:
    master_seed: int = 0


@dataclass
class OutputBlock:
    directory: str = "scbf_out"
    formats: list = field(default_factory=lambda: ["json", "csv"])


_BLOCKS = {
    "grid": GridBlock,
    "params": ParamsBlock,
    "noise": NoiseBlock,
    "time": TimeBlock,
    "init": InitBlock,
    "control": ControlBlock,
    "cost": CostBlock,
    "simulate": SimulateBlock,
    "energy": EnergyBlock,
    "ctsdep": CtsdepBlock,
    "value": ValueBlock,
    "dpp": DppBlock,
    "verify": VerifyBlock,
    "seeds": SeedsBlock,
    "output": OutputBlock,
}


def _coerce(path: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(path, f"expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    return value


def _build_block(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    block = cls()
    known = {f.name for f in fields(cls)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
        setattr(block, key, _coerce(f"{name}.{key}", getattr(block, key), value))
    return block


@dataclass
class RunConfig:
    grid: GridBlock = field(default_factory=GridBlock)
    params: ParamsBlock = field(default_factory=ParamsBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    time: TimeBlock = field(default_factory=TimeBlock)
    init: InitBlock = field(default_factory=InitBlock)
    control: ControlBlock = field(default_factory=ControlBlock)
    cost: CostBlock = field(default_factory=CostBlock)
    simulate: SimulateBlock = field(default_factory=SimulateBlock)
    energy: EnergyBlock = field(default_factory=EnergyBlock)
    ctsdep: CtsdepBlock = field(default_factory=CtsdepBlock)
    value: ValueBlock = field(default_factory=ValueBlock)
    dpp: DppBlock = field(default_factory=DppBlock)
    verify: VerifyBlock = field(default_factory=VerifyBlock)
    seeds: SeedsBlock = field(default_factory=SeedsBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    warnings: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict, env: dict | None = None) -> "RunConfig":
        cfg = cls()
        for name, value in raw.items():
            if name not in _BLOCKS:
                raise ConfigError(name, "unknown block")
            setattr(cfg, name, _build_block(name, _BLOCKS[name], value))
        env = os.environ if env is None else env
        if env.get("SCBF_SEED", "") != "":
            try:
                cfg.seeds.master_seed = int(env["SCBF_SEED"])
            except ValueError:
                raise ConfigError("SCBF_SEED", f"not an integer: {env['SCBF_SEED']!r}") from None
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("warnings")
        return d

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        g, p, n, t = self.grid, self.params, self.noise, self.time
        if g.dim not in (2, 3):
            raise ConfigError("grid.dim", f"must be 2 or 3, got {g.dim}")
        if g.N < 4 or g.N % 2:
            raise ConfigError("grid.N", f"must be an even integer >= 4, got {g.N}")
        if not g.L > 0:
            raise ConfigError("grid.L", f"must be positive, got {g.L}")
        for key in ("mu", "alpha", "beta"):
            if not getattr(p, key) > 0:
                raise ConfigError(f"params.{key}", "must be positive")
        if p.r < 3:
            raise ConfigError("params.r", f"absorption exponent must be >= 3, got {p.r}")
        if p.r == 3 and 2 * p.beta * p.mu < 1 - _CRIT_TOL:
            raise ConfigError(
                "params", f"r = 3 needs 2 beta mu >= 1, got 2 beta mu = {2 * p.beta * p.mu}"
            )
        if n.sigma < 0:
            raise ConfigError("noise.sigma", "must be nonnegative")
        try:
            self.trajectory_config()
        except SCBFError as exc:
            raise ConfigError("time", str(exc)) from None
        if self.init.kind not in ("zero", "random", "mode", "snapshot"):
            raise ConfigError("init.kind", f"unknown initial condition {self.init.kind!r}")
        if self.cost.kind not in ("enstrophy", "custom"):
            raise ConfigError("cost.kind", f"must be enstrophy or custom, got {self.cost.kind!r}")
        if self.cost.kind == "custom":
            raise ConfigError("cost.kind", "custom costs are available through the Python API only")
        if self.cost.discount_lambda < 0:
            raise ConfigError("cost.discount_lambda", "must be nonnegative")
        if not self.control.R_ball > 0:
            raise ConfigError("control.R_ball", "must be positive")
        for i, c in enumerate(self.control.candidates):
            if not isinstance(c, dict) or not {"k", "amplitude"} <= set(c):
                raise ConfigError(f"control.candidates[{i}]", "needs keys k and amplitude")
            extra = set(c) - {"k", "amplitude", "phase", "norm"}
            if extra:
                raise ConfigError(f"control.candidates[{i}].{sorted(extra)[0]}", "unknown key")
            if c.get("norm", self.control.R_ball) > self.control.R_ball * (1 + 1e-12):
                raise ConfigError(f"control.candidates[{i}].norm", "exceeds control.R_ball")
        knots = self.value.knots
        if len(knots) < 2 or any(b <= a for a, b in zip(knots, knots[1:])):
            raise ConfigError("value.knots", "need at least two increasing knots")
        if abs(knots[0] - t.t0) > 1e-12 or abs(knots[-1] - t.T) > 1e-12:
            raise ConfigError("value.knots", "first and last knot must equal time.t0 and time.T")
        if not any(abs(self.dpp.eta - k) <= 1e-12 for k in knots):
            raise ConfigError("dpp.eta", "must be one of value.knots")
        for path, v in (
            ("simulate.n_paths", self.simulate.n_paths),
            ("value.n_paths", self.value.n_paths),
            ("energy.n_paths", self.energy.n_paths),
            ("dpp.outer_paths", self.dpp.outer_paths),
            ("dpp.inner_paths", self.dpp.inner_paths),
            ("verify.n_samples", self.verify.n_samples),
            ("ctsdep.n_seeds", self.ctsdep.n_seeds),
        ):
            if v < 1:
                raise ConfigError(path, "must be at least 1")
        n_cands = len(self.control.candidates) + 1
        for i, a in enumerate(self.value.allowed):
            if isinstance(a, bool) or not isinstance(a, int) or not 0 <= a < n_cands:
                raise ConfigError(f"value.allowed[{i}]", f"not a candidate index below {n_cands}")
        if self.seeds.master_seed < 0:
            raise ConfigError("seeds.master_seed", "must be nonnegative")
        if not -1 <= self.simulate.forcing < n_cands:
            raise ConfigError("simulate.forcing", "not a candidate index")
        self.warnings = []
        if n.sigma > 0 and not n.decay_s > g.dim + 2:
            self.warnings.append(
                f"noise.decay_s = {n.decay_s} <= dim + 2: Tr(A^(1/2) Q A^(1/2)) diverges as N grows"
            )
        if g.dim == 3 and p.r >= 5:
            self.warnings.append(
                "dim = 3 with r >= 5: value-function existence theory does not cover this regime"
            )

    # -- builders -----------------------------------------------------------

    def spectral_grid(self) -> SpectralGrid:
        return SpectralGrid(self.grid.dim, self.grid.N, self.grid.L)

    def physical_params(self) -> PhysicalParams:
        p = self.params
        return PhysicalParams(p.mu, p.alpha, p.beta, p.r)

    def covariance(self) -> CovarianceSpec:
        return CovarianceSpec(self.noise.decay_s, self.noise.sigma)

    def trajectory_config(self, **over) -> TrajectoryConfig:
        t = self.time
        kw = dict(t0=t.t0, T=t.T, dt=t.dt, record_every=t.record_every)
        kw.update(over)
        return TrajectoryConfig(params=self.physical_params(), cov=self.covariance(), **kw)

    def initial_field(self, grid: SpectralGrid | None = None) -> VelocityField:
        grid = grid or self.spectral_grid()
        i = self.init
        if i.kind == "zero":
            return VelocityField.zeros(grid)
        if i.kind == "random":
            width = i.width if i.width > 0 else None
            return random_field(grid, np.random.default_rng(i.seed), h_norm=i.h_norm, width=width)
        if i.kind == "mode":
            return VelocityField.single_mode(grid, i.k, i.amplitude, i.phase)
        u = load_snapshot(i.path)
        grid.check_same(u.grid)
        return u

    def control_set(self, grid: SpectralGrid | None = None) -> ControlSet:
        grid = grid or self.spectral_grid()
        R = self.control.R_ball
        cands = [VelocityField.zeros(grid)]
        for i, c in enumerate(self.control.candidates):
            try:
                u = VelocityField.single_mode(grid, c["k"], c["amplitude"], c.get("phase", 0.0))
            except (SCBFError, ValueError, IndexError) as exc:
                raise ConfigError(f"control.candidates[{i}]", str(exc)) from None
            nrm = u.h_norm()
            if nrm == 0:
                raise ConfigError(f"control.candidates[{i}]", "candidate vanishes on this grid")
            cands.append(u * (c.get("norm", R) / nrm))
        return ControlSet(tuple(cands), R * (1 + 1e-12))

    def cost_spec(self) -> CostSpec:
        return enstrophy_cost_spec(self.control.R_ball, self.cost.discount_lambda)

    def strategy_class(self, n_candidates: int) -> StrategyClass:
        allowed = self.value.allowed or None
        return StrategyClass.enumerate(self.value.knots, n_candidates, allowed)


def load_config(path: str | Path | None, env: dict | None = None) -> RunConfig:
    """Parse a TOML file (or use all defaults when ``path`` is ``None``)."""
    if path is None:
        return RunConfig.from_dict({}, env)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML syntax error: {exc}") from None
    return RunConfig.from_dict(raw, env)
