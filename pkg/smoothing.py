import logging
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

# e^{-gamma*delta^2} above this leaves a visible jump at d = -delta.
GAUSSIAN_EDGE_WARN = 0.01


class SmoothingSpec(BaseModel):
    """Which running-max smoother is in force.

    ``linear`` ramps from 0 at d = -delta to 1 at d = 0; ``gaussian_band`` uses
    exp(-gamma d^2) on the band and needs ``gamma``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["linear", "gaussian_band"] = "linear"
    delta: float = Field(gt=0)
    gamma: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_gamma(self):
        if self.kind == "gaussian_band":
            if self.gamma is None:
                raise ValueError("gaussian_band smoothing requires gamma")
            edge = math.exp(-self.gamma * self.delta ** 2)
            if edge > GAUSSIAN_EDGE_WARN:
                logger.warning(
                    f"Gaussian smoothing is discontinuous at d=-delta: "
                    f"exp(-gamma*delta^2)={edge:.4g} with gamma={self.gamma}, delta={self.delta}"
                )
        elif self.gamma is not None:
            raise ValueError("gamma is only used by gaussian_band smoothing")
        return self


def psi(spec: SmoothingSpec, d):
    """Smoothed indicator of d >= 0; 0 below the band, 1 above zero."""
    if d > 0:
        return 1.0
    if d < -spec.delta:
        return 0.0
    if spec.kind == "linear":
        return 1.0 + d / spec.delta
    return math.exp(-spec.gamma * d * d)


def dpsi_dd(spec: SmoothingSpec, d):
    # closed band; kinks take the band-interior one-sided value
    if d > 0 or d < -spec.delta:
        return 0.0
    if spec.kind == "linear":
        return 1.0 / spec.delta
    return -2.0 * spec.gamma * d * math.exp(-spec.gamma * d * d)


def on_band(spec: SmoothingSpec, d):
    return -spec.delta <= d <= 0.0


def psi_array(spec: SmoothingSpec, d):
    """psi applied elementwise to an array of gaps."""
    d = np.asarray(d, dtype=float)
    if spec.kind == "linear":
        inside = 1.0 + d / spec.delta
    else:
        inside = np.exp(-spec.gamma * d * d)
    return np.where(d > 0, 1.0, np.where(d < -spec.delta, 0.0, inside))
