"""Weekly SIR dynamics.

The infectious curve is advanced one season-week at a time with a single
fourth-order Runge-Kutta step per week. Week index 1 holds the initial
condition ``(s0, i0, r0)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

S0_DEFAULT = 0.9
T_DEFAULT = 35

# compartments may drift this far outside [0, 1] before we call it a blow-up
_SLACK = 1e-8


class SirSolverError(ArithmeticError):
    """Raised when the RK4 recursion leaves the unit interval."""


class Designation(enum.Enum):
    EPIDEMIC = "epidemic"
    NON_EPIDEMIC = "non-epidemic"


@dataclass(frozen=True)
class SirParams:
    """Initial conditions and rates of one SIR curve.

    ``r0`` is derived as ``1 - s0 - i0`` and ``gamma`` as ``rho * beta``.
    """

    s0: float
    i0: float
    beta: float
    rho: float

    def __post_init__(self):
        vals = (self.s0, self.i0, self.beta, self.rho)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite SIR parameter in {vals}")
        if not 0.0 <= self.s0 <= 1.0:
            raise ValueError(f"s0 must lie in [0, 1], got {self.s0}")
        if not 0.0 <= self.i0 <= 1.0 - self.s0:
            raise ValueError(f"i0 must lie in [0, 1 - s0], got {self.i0}")
        if self.beta <= 0.0 or self.rho <= 0.0:
            raise ValueError("beta and rho must be positive")

    @property
    def r0(self) -> float:
        return 1.0 - self.s0 - self.i0

    @property
    def gamma(self) -> float:
        return self.rho * self.beta


@dataclass(frozen=True)
class SirTrajectory:
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    params: SirParams = field(repr=False)

    def __len__(self):
        return len(self.i)

    @property
    def peak_week(self) -> int:
        """1-based week of the infectious maximum (earliest on ties)."""
        return int(np.argmax(self.i)) + 1


class RkStage(NamedTuple):
    kS1: float
    kS2: float
    kS3: float
    kS4: float
    kI1: float
    kI2: float
    kI3: float
    kI4: float
    kR1: float
    kR2: float
    kR3: float
    kR4: float


def rk4_stages(state, beta, gamma, h=1.0) -> RkStage:
    """Stage increments of one RK4 step, exposed for inspection."""
    s, i, _ = state
    b, g = beta * h, gamma * h
    kS1 = -b * s * i
    kI1 = b * s * i - g * i
    kR1 = g * i
    s2, i2 = s + 0.5 * kS1, i + 0.5 * kI1
    kS2 = -b * s2 * i2
    kI2 = b * s2 * i2 - g * i2
    kR2 = g * i2
    s3, i3 = s + 0.5 * kS2, i + 0.5 * kI2
    kS3 = -b * s3 * i3
    kI3 = b * s3 * i3 - g * i3
    kR3 = g * i3
    s4, i4 = s + kS3, i + kI3
    kS4 = -b * s4 * i4
    kI4 = b * s4 * i4 - g * i4
    kR4 = g * i4
    return RkStage(kS1, kS2, kS3, kS4, kI1, kI2, kI3, kI4, kR1, kR2, kR3, kR4)


@njit(cache=True)
def _sir_step(s, i, r, beta, gamma, h):
    b = beta * h
    g = gamma * h
    kS1 = -b * s * i
    kI1 = b * s * i - g * i
    kR1 = g * i
    s2 = s + 0.5 * kS1
    i2 = i + 0.5 * kI1
    kS2 = -b * s2 * i2
    kI2 = b * s2 * i2 - g * i2
    kR2 = g * i2
    s3 = s + 0.5 * kS2
    i3 = i + 0.5 * kI2
    kS3 = -b * s3 * i3
    kI3 = b * s3 * i3 - g * i3
    kR3 = g * i3
    s4 = s + kS3
    i4 = i + kI3
    kS4 = -b * s4 * i4
    kI4 = b * s4 * i4 - g * i4
    kR4 = g * i4
    return (
        s + (kS1 + 2.0 * kS2 + 2.0 * kS3 + kS4) / 6.0,
        i + (kI1 + 2.0 * kI2 + 2.0 * kI3 + kI4) / 6.0,
        r + (kR1 + 2.0 * kR2 + 2.0 * kR3 + kR4) / 6.0,
    )


@njit(cache=True)
def _clamp(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit(cache=True)
def _sir_path(s0, i0, r0, beta, gamma, substeps, out):
    """Fill ``out`` (3, T) with the weekly path; return 0 or the failing week."""
    T = out.shape[1]
    s, i, r = s0, i0, r0
    out[0, 0] = s
    out[1, 0] = i
    out[2, 0] = r
    h = 1.0 / substeps
    for t in range(1, T):
        for _ in range(substeps):
            s, i, r = _sir_step(s, i, r, beta, gamma, h)
        for v in (s, i, r):
            if not (v >= -1e-8 and v <= 1.0 + 1e-8):
                return t + 1
        s = _clamp(s)
        i = _clamp(i)
        r = _clamp(r)
        out[0, t] = s
        out[1, t] = i
        out[2, t] = r
    return 0


def _check_state(values):
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("NaN in SIR state or rates")


def rk4_step(state, beta, gamma, h=1.0):
    """Advance ``(s, i, r)`` by one RK4 step of length ``h`` weeks."""
    _check_state((*state, beta, gamma))
    s, i, r = state
    return _sir_step(float(s), float(i), float(r), float(beta), float(gamma), float(h))


def solve_sir(params: SirParams, T: int = T_DEFAULT, substeps: int = 1) -> SirTrajectory:
    """Solve the SIR system on season-weeks ``1..T``.

    Parameters
    ----------
    params : SirParams
        Initial conditions and rates; week 1 holds ``(s0, i0, r0)``.
    T : int
        Number of weeks.
    substeps : int
        RK4 steps per week. The model uses 1; larger values exist for
        step-size checks.

    Raises
    ------
    SirSolverError
        If a compartment leaves ``[-1e-8, 1 + 1e-8]``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    out = np.empty((3, T))
    bad = _sir_path(params.s0, params.i0, params.r0, params.beta, params.gamma,
                    int(substeps), out)
    if bad:
        raise SirSolverError(f"SIR recursion left [0, 1] at week {bad} for {params}")
    return SirTrajectory(out[0], out[1], out[2], params)


def classify_epidemic(params: SirParams) -> Designation:
    # ties go to non-epidemic
    if params.s0 > params.rho:
        return Designation.EPIDEMIC
    return Designation.NON_EPIDEMIC
