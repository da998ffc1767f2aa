"""JSON run-configuration schema shared by the CLI subcommands."""
from __future__ import annotations

import json
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .bounds import TheoryParams
from .model import PRESET_EULER, PRESETS, PideProblem, make_preset
from .oracle import OracleConfig
from .sde_sim import EulerConfig
from .splitting import DEFAULT_SCHEDULE, SgdConfig, SplittingConfig


class ConfigError(ValueError):
    """Config file could not be parsed or validated."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConstantSpec(_Strict):
    constant: float


class ModelSection(_Strict):
    preset: Literal["bs_default", "merton_default", "vasicek_cc", "expvg_cc"]
    overrides: dict[str, float] = Field(default_factory=dict)
    nonlinearity: Union[Literal["preset", "zero"], ConstantSpec] = "preset"
    terminal: Union[Literal["preset", "identity"], ConstantSpec] = "preset"


class EulerSection(_Strict):
    N: Optional[int] = Field(default=None, ge=1)
    delta: Optional[float] = Field(default=None, gt=0, lt=1)
    m_comp: Optional[int] = Field(default=None, ge=1)


class NetSection(_Strict):
    K: Union[Literal["min(d,2000)"], int] = "min(d,2000)"
    activation: Literal["tanh"] = "tanh"
    depth: int = Field(default=1, ge=1)

    @field_validator("K")
    @classmethod
    def _positive(cls, v):
        if isinstance(v, int) and v < 1:
            raise ValueError("K must be >= 1")
        return v


class TrainSection(_Strict):
    J: int = Field(default=500, ge=2)
    epochs: int = Field(default=2000, ge=1)
    lr_schedule: list[tuple[int, float]] = Field(default_factory=lambda: [list(p) for p in DEFAULT_SCHEDULE])
    minibatch: Optional[int] = Field(default=None, ge=1)
    warm_start: bool = True
    streaming: bool = False


class OracleSection(_Strict):
    kind: Literal["mc_terminal", "picard"] = "mc_terminal"
    d: Optional[int] = Field(default=None, ge=1)
    samples: int = Field(default=100_000, ge=2)
    picard_iters: int = Field(default=3, ge=0, le=4)
    grid_N: Optional[int] = Field(default=None, ge=1)
    inner_samples: int = Field(default=8, ge=1)
    seed: Optional[int] = Field(default=None, ge=0)


class TheorySection(_Strict):
    L: float = Field(gt=0)
    L1: float = Field(gt=0)
    L2: float = Field(gt=0)
    C_eta: float = Field(gt=0)
    T: float = Field(gt=0)
    p: float = Field(gt=0)
    q: float = Field(gt=0)
    d: int = Field(ge=1)
    xi_second_moment: float = Field(ge=0)
    xi_q_moment: float = Field(ge=0)


class BudgetSection(_Strict):
    N: int = Field(ge=1)
    delta: float = Field(gt=0, lt=1)
    m_comp: int = Field(ge=1)
    K: int = Field(ge=1)
    J: int = Field(ge=1)
    theta: float = Field(gt=0)
    epsilon_uat: float = Field(default=0.0, ge=0)


class SelectSection(_Strict):
    epsilon_target: float = Field(gt=0, lt=1)
    K: int = Field(ge=1)


class RunConfig(_Strict):
    model: Optional[ModelSection] = None
    dims: list[int] = Field(default_factory=lambda: [1])
    method: Literal["random", "deterministic", "both"] = "random"
    euler: EulerSection = Field(default_factory=EulerSection)
    net: NetSection = Field(default_factory=NetSection)
    train: TrainSection = Field(default_factory=TrainSection)
    truncation_theta: Optional[float] = Field(default=None, gt=0)
    runs: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0)
    output: str = "results"
    dump_paths: bool = False
    save_nets: bool = False
    oracle: Optional[OracleSection] = None
    theory: Optional[TheorySection] = None
    budget: Optional[BudgetSection] = None
    select: Optional[SelectSection] = None

    @field_validator("dims")
    @classmethod
    def _dims(cls, v):
        if not v or any(d < 1 for d in v):
            raise ValueError("dims must be a non-empty list of positive integers")
        return v

    # -- builders ---------------------------------------------------------
    def problem(self, d: int) -> PideProblem:
        if self.model is None:
            raise ConfigError("config has no 'model' section")
        prob = make_preset(self.model.preset, d, **dict(self.model.overrides))
        nl, term = self.model.nonlinearity, self.model.terminal
        if nl == "zero":
            prob = prob.replace(f=lambda t, x, v: np.zeros_like(np.asarray(v, dtype=float)))
        elif isinstance(nl, ConstantSpec):
            c = nl.constant
            prob = prob.replace(f=lambda t, x, v: np.full(np.shape(v), c))
        if term == "identity":
            prob = prob.replace(g=lambda x: np.asarray(x, dtype=float)[..., 0])
        elif isinstance(term, ConstantSpec):
            g0 = term.constant
            prob = prob.replace(g=lambda x: np.full(np.shape(x)[:-1], g0))
        return prob

    def euler_config(self) -> EulerConfig:
        preset = PRESET_EULER[self.model.preset] if self.model else dict(N=12, delta=0.1, m_comp=200)
        e = self.euler
        return EulerConfig(
            N=e.N if e.N is not None else preset["N"],
            delta=e.delta if e.delta is not None else preset["delta"],
            m_comp=e.m_comp if e.m_comp is not None else preset["m_comp"],
            J=self.train.J,
        )

    def splitting_config(self, method: str, seed: int) -> SplittingConfig:
        sgd = None
        if method == "deterministic":
            sgd = SgdConfig(epochs=self.train.epochs, minibatch=self.train.minibatch,
                            schedule=tuple((int(a), float(b)) for a, b in self.train.lr_schedule))
        K = None if self.net.K == "min(d,2000)" else int(self.net.K)
        return SplittingConfig(method=method, euler=self.euler_config(), K=K,
                               truncation_theta=self.truncation_theta, sgd=sgd, runs=self.runs,
                               master_seed=seed, depth=self.net.depth,
                               warm_start=self.train.warm_start, streaming=self.train.streaming,
                               activation=self.net.activation)

    def oracle_config(self) -> OracleConfig:
        o = self.oracle or OracleSection()
        e = self.euler_config()
        return OracleConfig(samples=o.samples, picard_iters=o.picard_iters,
                            grid_N=o.grid_N if o.grid_N is not None else 8 * e.N,
                            seed=o.seed if o.seed is not None else self.seed,
                            inner_samples=o.inner_samples, delta=e.delta, m_comp=e.m_comp)

    def theory_params(self) -> TheoryParams:
        if self.theory is None:
            raise ConfigError("config has no 'theory' section")
        return TheoryParams(**self.theory.model_dump())


def model_id(preset: str) -> int:
    return sorted(PRESETS).index(preset)


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid config:\n" + "\n".join(lines)


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
