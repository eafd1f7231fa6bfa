"""Exact SGD stability analysis on a one-dimensional quadratic model.

The model is a per-example quadratic loss along a single direction:
``L(psi) = (1/(2N)) * sum_i H_i * (psi - psi_star)^2``, so the per-example
gradient is ``H_i * (psi - psi_star)``, the full-batch curvature is
``mean(H_i)`` and the curvature spread is the population variance of H_i.
Minibatches are drawn without replacement, which makes the one-step
second-moment multiplier of the recursion exactly

    (1 - eta * lambda)^2 + s^2 * eta^2 * (N - S) / (S * (N - 1)).

SGD along this direction is stable iff that expression is <= 1; the first
point where it equals 1 is the break-even point. With the coupling
``s^2 = alpha * lambda / psi^2`` the break-even curvature has the closed
form ``(2 - (alpha/psi^2) * eta * (N-S)/(S*(N-1))) / eta``, degenerating to
``2/eta`` for full-batch gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateOffsetError, InvalidParamsError
from .rng import make_rng

STABLE = "stable"
BREAKEVEN = "breakeven"
UNSTABLE = "unstable"

BREAKEVEN_BAND = 1e-12
PHASE_DIAGRAM_BAND = 1e-9
INCREASING = "increasing_from_stable"
DECREASING = "decreasing_from_unstable"


@dataclass(frozen=True)
class QuadraticModel:
    """Per-example curvatures with an optional minimum offset and coupling."""

    curvatures: np.ndarray
    psi_star: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.curvatures, dtype=np.float64)
        object.__setattr__(self, "curvatures", h)
        if h.ndim != 1 or h.size < 2:
            raise InvalidParamsError("need at least 2 per-example curvatures")
        if not np.all(np.isfinite(h)):
            raise InvalidParamsError("curvatures must be finite")
        if float(np.mean(h)) <= 0.0:
            raise InvalidParamsError("mean curvature must be positive")

    @property
    def n(self) -> int:
        return self.curvatures.size

    @property
    def lambda_h(self) -> float:
        return float(np.mean(self.curvatures))

    @property
    def s_squared(self) -> float:
        # population variance (divide by N): exactly what the finite-population
        # correction in the stability condition is derived with
        return float(np.var(self.curvatures))


@dataclass(frozen=True)
class SgdSetting:
    eta: float
    batch_size: int

    def __post_init__(self):
        # eta == 0 is admitted as the degenerate boundary (constant trajectory,
        # multiplier exactly 1); training configs require strictly positive rates
        if not (self.eta >= 0.0 and np.isfinite(self.eta)):
            raise InvalidParamsError("learning rate must be >= 0 and finite")
        if self.batch_size < 1:
            raise InvalidParamsError("batch size must be >= 1")


def noise_factor(batch_size: int, n: int) -> float:
    """Finite-population variance factor (N-S)/(S*(N-1)) of a without-
    replacement sample mean."""
    if not 1 <= batch_size <= n:
        raise InvalidParamsError(f"batch size {batch_size} outside [1, {n}]")
    if batch_size == n:
        return 0.0
    return (n - batch_size) / (batch_size * (n - 1))


def stability_lhs_scalar(lambda_h: float, s_squared: float, eta: float, batch_size: int, n: int) -> float:
    """One-step second-moment multiplier of the SGD recursion.

    Accepts eta == 0 (multiplier exactly 1) so phase-diagram grids can
    include the boundary.
    """
    return (1.0 - eta * lambda_h) ** 2 + s_squared * eta * eta * noise_factor(batch_size, n)


def stability_lhs(model: QuadraticModel, setting: SgdSetting) -> float:
    """Stability condition left-hand side; stable iff <= 1, break-even at 1."""
    return stability_lhs_scalar(model.lambda_h, model.s_squared, setting.eta, setting.batch_size, model.n)


def is_breakeven(lhs: float, band: float = BREAKEVEN_BAND) -> bool:
    return abs(lhs - 1.0) <= band


@dataclass(frozen=True)
class SimulationResult:
    trajectory: np.ndarray  # psi values, trajectory[0] == psi0
    diverged: bool


def simulate_sgd(
    model: QuadraticModel,
    setting: SgdSetting,
    psi0: float,
    steps: int,
    seed: int,
    divergence_threshold: float = 1e12,
) -> SimulationResult:
    """Run the projected SGD recursion, sampling each batch without
    replacement. The run truncates as diverged once |psi - psi_star|
    exceeds the threshold."""
    if steps < 1:
        raise InvalidParamsError("steps must be >= 1")
    n = model.n
    s = setting.batch_size
    if s > n:
        raise InvalidParamsError(f"batch size {s} exceeds example count {n}")
    rng = make_rng(seed)
    h = model.curvatures
    psi = float(psi0)
    out = np.empty(steps + 1)
    out[0] = psi
    for t in range(1, steps + 1):
        if s == n:
            hbar = model.lambda_h
        else:
            idx = rng.choice(n, size=s, replace=False)
            hbar = float(np.mean(h[idx]))
        psi = psi - setting.eta * hbar * (psi - model.psi_star)
        out[t] = psi
        if abs(psi - model.psi_star) > divergence_threshold:
            return SimulationResult(trajectory=out[: t + 1].copy(), diverged=True)
    return SimulationResult(trajectory=out, diverged=False)


def ensemble_second_moments(
    model: QuadraticModel,
    setting: SgdSetting,
    psi0: float,
    steps: int,
    n_traj: int,
    seed: int,
) -> np.ndarray:
    """Mean of (psi - psi_star)^2 over an ensemble at every step.

    Vectorized over trajectories; batches are drawn without replacement per
    trajectory per step. numpy's pairwise summation in ``mean`` keeps the
    reduction order-insensitive at the stated tolerances.
    """
    if steps < 1 or n_traj < 1:
        raise InvalidParamsError("steps and n_traj must be >= 1")
    n = model.n
    s = setting.batch_size
    rng = make_rng(seed)
    dev = np.full(n_traj, float(psi0) - model.psi_star)
    out = np.empty(steps + 1)
    out[0] = float(np.mean(dev * dev))
    h = model.curvatures
    for t in range(1, steps + 1):
        if s == n:
            hbar = model.lambda_h
        else:
            u = rng.random((n_traj, n))
            idx = np.argpartition(u, s - 1, axis=1)[:, :s]
            hbar = np.mean(h[idx], axis=1)
        dev = dev * (1.0 - setting.eta * hbar)
        out[t] = float(np.mean(dev * dev))
    return out


def fit_growth_rate(second_moments: np.ndarray) -> float:
    """Least-squares slope of log(mean square) against the step index."""
    y = np.log(np.asarray(second_moments, dtype=np.float64))
    if not np.all(np.isfinite(y)):
        raise InvalidParamsError("second moments must be positive and finite")
    x = np.arange(y.size, dtype=np.float64)
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


@dataclass(frozen=True)
class BreakevenCurvature:
    value: float
    # the formula can yield a non-positive curvature, meaning no stable
    # positive curvature exists for these hyperparameters; flagged, not an error
    no_stable_curvature: bool


def breakeven_curvature_closed_form(
    eta: float, batch_size: int, n: int, alpha: float, psi: float
) -> BreakevenCurvature:
    """Curvature at which the stability multiplier equals 1, under the
    coupling s^2 = alpha * lambda / psi^2. Degenerates to 2/eta when
    batch_size == n or alpha == 0."""
    if eta <= 0.0:
        raise InvalidParamsError("learning rate must be positive")
    if psi == 0.0:
        raise DegenerateOffsetError("offset psi must be nonzero")
    value = (2.0 - (alpha / (psi * psi)) * eta * noise_factor(batch_size, n)) / eta
    return BreakevenCurvature(value=value, no_stable_curvature=value <= 0.0)


@dataclass(frozen=True)
class GrowthSchedule:
    """Multiplicative curvature growth/decay with a matched offset rule.

    Each step multiplies the curvature by ``rho`` (> 1 when increasing from a
    stable start, < 1 when decreasing from an unstable one). The offset moves
    by the step magnitude ``r = max(rho, 1/rho)``: towards the minimum
    (psi / r) while stable, away from it (psi * r) while unstable.
    """

    direction: str
    lambda0: float
    rho: float
    psi0: float

    def __post_init__(self):
        if self.direction not in (INCREASING, DECREASING):
            raise InvalidParamsError(f"unknown direction {self.direction!r}")
        if self.lambda0 <= 0.0:
            raise InvalidParamsError("initial curvature must be positive")
        if self.psi0 == 0.0:
            raise InvalidParamsError("initial offset must be nonzero")
        if self.rho == 1.0 or self.rho <= 0.0:
            raise InvalidParamsError("rho must be positive and != 1")
        if self.direction == INCREASING and self.rho < 1.0:
            raise InvalidParamsError("increasing schedule needs rho > 1")
        if self.direction == DECREASING and self.rho > 1.0:
            raise InvalidParamsError("decreasing schedule needs rho < 1")


@dataclass(frozen=True)
class GrowthResult:
    lambda_max: float
    lambda_at_flip: Optional[float]
    psi_at_stop: float
    step_of_breakeven: Optional[int]
    flipped: bool


def run_growth_dynamics(
    setting: SgdSetting,
    schedule: GrowthSchedule,
    alpha: float,
    n: int,
    max_steps: int = 1_000_000,
) -> GrowthResult:
    """Iterate the curvature/offset schedule until the stability predicate
    flips (stable -> unstable for increasing schedules, the reverse for
    decreasing ones). Stability is evaluated with the coupled noise
    s^2 = alpha * lambda / psi^2. If max_steps is exhausted without a flip
    the result reports flipped=False rather than raising."""

    def stable(lam: float, psi: float) -> bool:
        s2 = alpha * lam / (psi * psi)
        return stability_lhs_scalar(lam, s2, setting.eta, setting.batch_size, n) <= 1.0

    lam = schedule.lambda0
    psi = schedule.psi0
    start_stable = stable(lam, psi)
    if schedule.direction == INCREASING and not start_stable:
        raise InvalidParamsError("increasing schedule must start stable")
    if schedule.direction == DECREASING and start_stable:
        raise InvalidParamsError("decreasing schedule must start unstable")

    r = max(schedule.rho, 1.0 / schedule.rho)
    lam_max = lam
    state = start_stable
    for step in range(1, max_steps + 1):
        psi = psi / r if state else psi * r
        lam = lam * schedule.rho
        lam_max = max(lam_max, lam)
        state = stable(lam, psi)
        if state != start_stable:
            return GrowthResult(
                lambda_max=lam_max,
                lambda_at_flip=lam,
                psi_at_stop=psi,
                step_of_breakeven=step,
                flipped=True,
            )
    return GrowthResult(
        lambda_max=lam_max,
        lambda_at_flip=None,
        psi_at_stop=psi,
        step_of_breakeven=None,
        flipped=False,
    )


def classify_lhs(lhs: float, band: float = PHASE_DIAGRAM_BAND) -> str:
    if abs(lhs - 1.0) <= band:
        return BREAKEVEN
    return STABLE if lhs < 1.0 else UNSTABLE


def phase_diagram(
    etas: np.ndarray, batch_sizes: np.ndarray, model: QuadraticModel
) -> list[list[str]]:
    """Classify every (batch size, learning rate) cell of the grid.

    Rows follow ``batch_sizes``, columns follow ``etas``. Learning rate 0 is
    allowed and sits exactly on the break-even boundary.
    """
    etas = np.asarray(etas, dtype=np.float64)
    batch_sizes = np.asarray(batch_sizes, dtype=np.int64)
    if etas.size == 0 or batch_sizes.size == 0:
        raise InvalidParamsError("grids must be nonempty")
    if np.any(etas < 0):
        raise InvalidParamsError("learning rates must be >= 0")
    lam, s2, n = model.lambda_h, model.s_squared, model.n
    return [
        [classify_lhs(stability_lhs_scalar(lam, s2, float(eta), int(s), n)) for eta in etas]
        for s in batch_sizes
    ]
