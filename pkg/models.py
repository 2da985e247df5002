from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Optional, List, Dict
from pathlib import Path
from enum import Enum

import pandas as pd


class Application(str, Enum):
    DENOISE = "denoise"
    INPAINT = "inpaint"
    OPTFLOW = "optflow"
    WAVELETINPAINT = "waveletinpaint"


class DecompMode(str, Enum):
    SEQUENTIAL = "seq"
    PARALLEL = "par"


class RunMode(str, Enum):
    SEQUENTIAL = "seq"
    PARALLEL = "par"
    GLOBAL = "global"
    COMPARE = "compare"


class SurrogateNesting(str, Enum):
    INNER = "inner"  # surrogate inside the decomposition
    OUTER = "outer"  # decomposition inside a global surrogate loop


class OperatorKind(str, Enum):
    IDENTITY = "identity"
    MASK = "mask"
    FLOW = "pointwise_flow"
    WAVELET = "composed_wavelet"


class StencilDirection(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


# Energy logging
class TraceEntry(BaseModel):
    k: float
    energy: float


class EnergyTrace(BaseModel):
    entries: List[TraceEntry] = Field(default_factory=list)

    def record(self, k: float, energy: float):
        """Append one (k, energy) sample"""
        self.entries.append(TraceEntry(k=float(k), energy=float(energy)))

    @property
    def energies(self) -> List[float]:
        return [entry.energy for entry in self.entries]

    @property
    def ks(self) -> List[float]:
        return [entry.k for entry in self.entries]

    @property
    def final_energy(self) -> float:
        return self.entries[-1].energy

    def is_monotone(self, slack: float = 1e-12) -> bool:
        """True if no logged energy exceeds its predecessor by more than slack"""
        values = self.energies
        return all(b <= a + slack for a, b in zip(values, values[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"k": self.ks, "energy": self.energies})

    def to_csv(self, path):
        """Write the trace as `k,energy` rows"""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


# Solver controls
class SolveControl(BaseModel):
    tau: Optional[float] = None  # None selects 1/(4d ||B^-1||)
    max_iters: int = 100
    tol: Optional[float] = None  # stop when the energy decrease drops below tol
    log_energy: bool = True
    log_every: int = 1
    k_scale: float = 1.0  # trace index k = n / k_scale

    @field_validator("tau")
    @classmethod
    def tau_positive(cls, v):
        if v is not None and v <= 0:
            raise ValueError("tau must be positive")
        return v

    @field_validator("max_iters", "log_every")
    @classmethod
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("k_scale")
    @classmethod
    def scale_positive(cls, v):
        if v <= 0:
            raise ValueError("k_scale must be positive")
        return v


class SurrogateConfig(BaseModel):
    tau: Optional[float] = None  # None selects 1.05 ||B^-1||
    n_sur: int = 1
    inner_iters: int = 10

    @field_validator("n_sur", "inner_iters")
    @classmethod
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v


class DDConfig(BaseModel):
    mode: DecompMode = DecompMode.SEQUENTIAL
    sigma: float = 1.0
    rho: float = 1.0  # threshold used by approximate-minimizer assertions
    outer_iters: int = 20
    inner_iters: int = 10
    n_sur: int = 0  # 0 = direct local solve
    tau_sur: Optional[float] = None
    nesting: SurrogateNesting = SurrogateNesting.INNER
    workers: int = 1

    @field_validator("sigma", "rho")
    @classmethod
    def unit_interval(cls, v):
        if not 0 < v <= 1:
            raise ValueError("must lie in (0, 1]")
        return v

    @field_validator("inner_iters", "workers")
    @classmethod
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("outer_iters", "n_sur")
    @classmethod
    def non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    def surrogate(self) -> SurrogateConfig:
        """Surrogate settings for the inner iteration"""
        return SurrogateConfig(tau=self.tau_sur, n_sur=max(self.n_sur, 1), inner_iters=self.inner_iters)


class CorruptionSettings(BaseModel):
    seed: int = 42
    noise_var: float = 0.01
    mask_prob: float = 0.5

    @field_validator("noise_var")
    @classmethod
    def non_negative(cls, v):
        if v < 0:
            raise ValueError("noise variance must be non-negative")
        return v

    @field_validator("mask_prob")
    @classmethod
    def probability(cls, v):
        if not 0 <= v <= 1:
            raise ValueError("probability must lie in [0, 1]")
        return v


# Per-application model parameters (lambda, beta)
APPLICATION_DEFAULTS: Dict[Application, Dict[str, float]] = {
    Application.DENOISE: {"lam": 0.1, "beta": 0.0},
    Application.INPAINT: {"lam": 0.05, "beta": 0.01},
    Application.OPTFLOW: {"lam": 0.01, "beta": 0.01},
    Application.WAVELETINPAINT: {"lam": 0.05, "beta": 0.01},
}


class RunConfig(BaseModel):
    app: Application
    input: Path
    input2: Optional[Path] = None
    output: Path
    corrupted_output: Optional[Path] = None
    lam: Optional[float] = None
    beta: Optional[float] = None
    mode: RunMode = RunMode.SEQUENTIAL
    mx: int = 2
    my: int = 2
    overlap: int = 5
    sigma: Optional[float] = None  # None selects the largest admissible value
    outer_iters: int = 20
    inner_iters: int = 10
    nsur: Optional[int] = None
    tau_sur: Optional[float] = None
    nesting: SurrogateNesting = SurrogateNesting.INNER
    workers: int = 1
    seed: int = 42
    noise_var: float = 0.01
    mask_prob: float = 0.5
    energy_csv: Optional[Path] = None
    layout_csv: Optional[Path] = None

    @field_validator("lam", "beta", "noise_var")
    @classmethod
    def non_negative(cls, v):
        if v is not None and v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("mask_prob")
    @classmethod
    def probability(cls, v):
        if not 0 <= v <= 1:
            raise ValueError("probability must lie in [0, 1]")
        return v

    @field_validator("overlap", "mx", "my", "outer_iters", "inner_iters", "workers")
    @classmethod
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("nsur")
    @classmethod
    def nsur_non_negative(cls, v):
        if v is not None and v < 0:
            raise ValueError("nsur must be non-negative")
        return v

    @model_validator(mode="after")
    def check_sigma(self):
        if self.sigma is not None:
            limit = 1.0 / (self.mx * self.my) if self.mode == RunMode.PARALLEL else 1.0
            if not 0 < self.sigma <= limit + 1e-15:
                raise ValueError(f"sigma must lie in (0, {limit:g}] for mode {self.mode.value}")
        return self

    @property
    def lam_value(self) -> float:
        return self.lam if self.lam is not None else APPLICATION_DEFAULTS[self.app]["lam"]

    @property
    def beta_value(self) -> float:
        return self.beta if self.beta is not None else APPLICATION_DEFAULTS[self.app]["beta"]

    @property
    def nsur_value(self) -> int:
        if self.nsur is not None:
            return self.nsur
        return 1 if self.app == Application.WAVELETINPAINT else 0

    def sigma_for(self, mode: DecompMode, subdomains: int) -> float:
        """Explicit sigma, or the largest value the mode admits"""
        if self.sigma is not None and self.mode in (RunMode.SEQUENTIAL, RunMode.PARALLEL):
            return self.sigma
        return 1.0 / subdomains if mode == DecompMode.PARALLEL else 1.0

    def corruption(self) -> CorruptionSettings:
        return CorruptionSettings(seed=self.seed, noise_var=self.noise_var, mask_prob=self.mask_prob)

    def dd_config(self, mode: DecompMode, subdomains: int) -> DDConfig:
        return DDConfig(
            mode=mode,
            sigma=self.sigma_for(mode, subdomains),
            outer_iters=self.outer_iters,
            inner_iters=self.inner_iters,
            n_sur=self.nsur_value,
            tau_sur=self.tau_sur,
            nesting=self.nesting,
            workers=self.workers,
        )


# Run results
class RunSummary(BaseModel):
    app: Application
    mode: RunMode
    final_energy: float
    artifacts: List[Path] = Field(default_factory=list)
    elapsed_seconds: float = 0.0
