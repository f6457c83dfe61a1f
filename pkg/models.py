# --- START OF FILE models.py ---
import math
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import CONFIG
from smoothing import SmoothingSpec


def _reaches(lo, hi, offset, period):
    """Whether offset + k * period lies in [lo, hi] for some integer k."""
    k = math.ceil((lo - offset) / period)
    return offset + k * period <= hi


class SignalSpec(BaseModel):
    """Time-varying coefficient: constant, base + amp*sin(...) or base + amp*|cos(...)|."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["constant", "sinusoid", "abs_cosine"] = "constant"
    base: float
    amplitude: float = 0.0
    phase: float = 0.0
    angular_rate: float = 0.0

    def value(self, t):
        if self.kind == "constant":
            return self.base
        arg = self.phase + self.angular_rate * t
        if self.kind == "sinusoid":
            return self.base + self.amplitude * math.sin(arg)
        return self.base + self.amplitude * abs(math.cos(arg))

    def sample(self, times):
        """Values at an array of times, computed in one numpy pass."""
        times = np.asarray(times, dtype=float)
        if self.kind == "constant":
            return np.full(times.shape, self.base)
        arg = self.phase + self.angular_rate * times
        if self.kind == "sinusoid":
            return self.base + self.amplitude * np.sin(arg)
        return self.base + self.amplitude * np.abs(np.cos(arg))

    def minimum_on(self, T, t0=0.0):
        """Exact minimum over [t0, T]: endpoints plus any interior trough.

        Troughs are taken in closed form (base - |amplitude| for a sinusoid,
        base or base + amplitude for |cos|) so sin/cos roundoff cannot lift a
        zero crossing above zero.
        """
        low = min(self.value(t0), self.value(T))
        if self.kind == "constant" or self.angular_rate == 0.0 or self.amplitude == 0.0:
            return low
        lo, hi = sorted((self.phase + self.angular_rate * t0, self.phase + self.angular_rate * T))
        if self.kind == "sinusoid":
            trough_arg = 1.5 * math.pi if self.amplitude > 0 else 0.5 * math.pi
            if _reaches(lo, hi, trough_arg, 2.0 * math.pi):
                low = min(low, self.base - abs(self.amplitude))
        else:
            # |cos| is 0 at pi/2 + k pi and 1 at k pi
            trough_arg = 0.5 * math.pi if self.amplitude > 0 else 0.0
            if _reaches(lo, hi, trough_arg, math.pi):
                low = min(low, self.base + min(self.amplitude, 0.0))
        return low

    def check_positive(self, T, label, assumption):
        low = self.minimum_on(T)
        if not low > 0:
            raise ValueError(
                f"{label}(t) must be strictly positive on [0, {T}] (assumption {assumption}); "
                f"minimum is {low:.6g}"
            )


def _check_horizon(T):
    if not T > 0:
        raise ValueError(f"horizon is empty: T must be > 0, got {T}")


class InventoryParams(BaseModel):
    """Storage-design instance; defaults are the first case study."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: SignalSpec = SignalSpec(
        kind="sinusoid", base=15.0, amplitude=4.5, phase=0.2 * math.pi, angular_rate=4.1 * math.pi
    )
    beta: SignalSpec = SignalSpec(kind="constant", base=2.5)
    a: float = Field(default=0.6, gt=0)
    C_h: float = Field(default=3.0, ge=0)
    C_s: float = Field(default=40.0, ge=0)
    C_h_T: float = Field(default=6.0, ge=0)
    C_s_T: float = Field(default=410.0, ge=0)
    sigma: float = Field(default=0.0, ge=0)
    T: float = 1.0
    x0: float = 0.0
    y0: Optional[float] = None
    smoothing: SmoothingSpec = SmoothingSpec(kind="linear", delta=0.01)

    @model_validator(mode="after")
    def _check(self):
        _check_horizon(self.T)
        self.alpha.check_positive(self.T, "alpha", "B.1")
        self.beta.check_positive(self.T, "beta", "B.1")
        if self.y0 is not None and self.y0 < self.x0:
            raise ValueError(f"y0={self.y0} must be >= x0={self.x0}")
        return self

    @property
    def start_peak(self):
        return self.x0 if self.y0 is None else self.y0


class QueueParams(BaseModel):
    """Fluid-queue instance with service rate (alpha + x) u."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: SignalSpec = SignalSpec(
        kind="abs_cosine",
        base=1.0,
        amplitude=1.0,
        phase=1.5 * math.pi,
        angular_rate=1.7 * math.pi / 3000.0,
    )
    rho: float = Field(default=0.0, ge=0)
    sigma: float = Field(default=0.0, ge=0)
    beta: float = Field(default=14.0, ge=0)
    eta: float = Field(default=1.0, ge=0)
    mu_id: float = Field(default=11.5, gt=0)
    u_bar: float = Field(default=0.9, gt=0)
    T: float = 1.0
    x0: float = Field(default=0.0, ge=0)
    y0: Optional[float] = None
    smoothing: SmoothingSpec = SmoothingSpec(kind="linear", delta=0.2)

    @model_validator(mode="after")
    def _check(self):
        _check_horizon(self.T)
        self.alpha.check_positive(self.T, "alpha", "C.1")
        if self.y0 is not None and self.y0 < self.x0:
            raise ValueError(f"y0={self.y0} must be >= x0={self.x0}")
        return self

    @property
    def start_peak(self):
        return self.x0 if self.y0 is None else self.y0


class SolverSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_steps: int = Field(default_factory=lambda: CONFIG.DEFAULT_N_STEPS, ge=1)
    max_iterations: int = Field(default_factory=lambda: CONFIG.MAX_ITERATIONS, ge=1)
    tolerance: float = Field(default_factory=lambda: CONFIG.TOLERANCE, gt=0)
    relaxation: float = Field(default_factory=lambda: CONFIG.RELAXATION, gt=0, le=1)
    anderson_depth: int = Field(default_factory=lambda: CONFIG.ANDERSON_DEPTH, ge=0)
    u_init: Literal["midpoint", "zero"] = "midpoint"
    costate_terminal_mode: Literal["paper_literal", "gradient_consistent"] = "paper_literal"
    # indicator-dynamics sweeps are not expected to settle
    dn_max_iterations: int = Field(default=500, ge=1)

    def to_fbs_config(self, T, t0=0.0, u_init=None, max_iterations=None):
        from fbs_solver import FbsConfig
        from grid_ode import make_grid

        return FbsConfig(
            grid=make_grid(t0, T, self.n_steps),
            max_iterations=self.max_iterations if max_iterations is None else max_iterations,
            tolerance=self.tolerance,
            relaxation=self.relaxation,
            anderson_depth=self.anderson_depth,
            u_init=self.u_init if u_init is None else u_init,
            costate_terminal_mode=self.costate_terminal_mode,
        )


class OracleSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_segments: int = Field(default=4, ge=1)
    n_levels: int = Field(default=9, ge=2)
    n_steps: int = Field(default=240, ge=1)
    criterion: Literal["total_smoothed", "total_exact"] = "total_smoothed"


RunKind = Literal["solve", "sweep_sigma", "pareto", "oracle_compare", "dn_compare", "match_utilization"]

SWEEP_KINDS = ("sweep_sigma", "pareto", "dn_compare")


class RunConfig(BaseModel):
    """One CLI run: which application, which experiment and every setting it uses."""

    model_config = ConfigDict(extra="forbid")

    application: Literal["inventory", "queue"]
    run_kind: RunKind = "solve"
    params: Union[InventoryParams, QueueParams]
    solver: SolverSettings = Field(default_factory=SolverSettings)
    oracle: OracleSettings = Field(default_factory=OracleSettings)
    sweep_values: List[float] = Field(default_factory=list)
    rho_values: Optional[List[float]] = None
    target_utilization: float = Field(default=26.10, gt=0)
    output_dir: str = Field(default_factory=lambda: CONFIG.OUTPUT_DIR)

    @model_validator(mode="before")
    @classmethod
    def _select_params(cls, data):
        if isinstance(data, dict) and isinstance(data.get("params", {}), dict):
            data = dict(data)
            raw = data.get("params", {})
            if data.get("application") == "inventory":
                data["params"] = InventoryParams.model_validate(raw)
            elif data.get("application") == "queue":
                data["params"] = QueueParams.model_validate(raw)
        return data

    @field_validator("sweep_values", "rho_values")
    @classmethod
    def _non_negative_weights(cls, values):
        if values is not None and any(v < 0 for v in values):
            raise ValueError("weights must be nonnegative")
        return values

    @model_validator(mode="after")
    def _check_kind(self):
        expected = InventoryParams if self.application == "inventory" else QueueParams
        if not isinstance(self.params, expected):
            raise ValueError(f"params do not describe a {self.application} instance")
        if self.run_kind in SWEEP_KINDS and not self.sweep_values:
            raise ValueError(f"run_kind '{self.run_kind}' needs a non-empty sweep_values list")
        if self.run_kind in ("pareto", "match_utilization") and self.application != "queue":
            raise ValueError(f"run_kind '{self.run_kind}' only applies to the queue application")
        if self.run_kind == "dn_compare" and self.application != "inventory":
            raise ValueError("run_kind 'dn_compare' only applies to the inventory application")
        return self

    @property
    def congestion_weights(self):
        return self.rho_values if self.rho_values else self.sweep_values

    def echo(self):
        return self.model_dump(mode="json")

# --- END OF FILE models.py ---
