import logging
import math
import numbers
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

logger = logging.getLogger(__name__)


PENALTY_KINDS = frozenset(["ours", "log"])
QUADRATURE_RULES = frozenset(["midpoint", "trapezoid"])


@dataclass(frozen=True)
class BarrierSpec:
    """All barrier, safety and step-control constants of the solver.

    Defaults follow the published experiments where they exist (x0, L2, eta,
    mu, eps_d); the remaining ones are standard interior-point choices.
    """

    x0: float = 1e-3
    d0: float = 1e-3
    mu: float = 1e-2
    L2: float = 1e-4
    eta: float = 1 / 7
    eps_mu: float = 1e-6
    eps_d: float = 1e-4
    gamma: float = 0.5
    c_wolfe: float = 1e-4
    alpha0: float = 1.0
    eps_alpha: float = 1e-4
    eps_alpha_floor: float = 1e-10
    beta_min: float = 1e-6
    beta_max: float = 1e6

    def __post_init__(self):
        validate_barrier_spec(self)


def validate_barrier_spec(spec: BarrierSpec):
    """Validate the barrier constants against the requirements of the convergence theory."""
    for name in spec.__dataclass_fields__:
        value = getattr(spec, name)
        if not isinstance(value, numbers.Real) or not math.isfinite(value):
            raise ValueError(f"'{name}' must be a finite number, got {value!r}.")

    if spec.x0 <= 0:
        raise ValueError(f"'x0' must be positive, got {spec.x0}.")
    if spec.d0 < 0:
        raise ValueError(f"'d0' must be non-negative, got {spec.d0}.")
    if spec.mu <= 0:
        raise ValueError(f"'mu' must be positive, got {spec.mu}.")
    if spec.L2 <= 0:
        raise ValueError(f"'L2' must be positive, got {spec.L2}.")
    # Finite termination and optimality need eta < 1/6.
    if not (0 < spec.eta < 1 / 6):
        raise ValueError(f"'eta' must lie in (0, 1/6), got {spec.eta}.")
    if spec.eps_mu <= 0 or spec.eps_d <= 0:
        raise ValueError("'eps_mu' and 'eps_d' must be positive.")
    for name in ("gamma", "c_wolfe"):
        if not (0 < getattr(spec, name) < 1):
            raise ValueError(f"'{name}' must lie in (0, 1), got {getattr(spec, name)}.")
    if spec.alpha0 <= 0 or spec.eps_alpha <= 0:
        raise ValueError("'alpha0' and 'eps_alpha' must be positive.")
    if not (0 <= spec.eps_alpha_floor <= spec.eps_alpha):
        raise ValueError("'eps_alpha_floor' must lie in [0, eps_alpha].")
    if not (0 < spec.beta_min <= spec.beta_max):
        raise ValueError("Hessian bounds must satisfy 0 < beta_min <= beta_max.")

    return True


def penalty(x, spec: BarrierSpec):
    """Locally supported barrier (x0 - x)^3 / x^4 on (0, x0] and its first two derivatives.

    Accepts scalars or arrays. Non-positive arguments are outside the barrier
    domain and return an infinite value.
    """
    x = np.asarray(x, dtype=float)
    x0 = spec.x0
    inside = x > 0
    support = inside & (x < x0)
    safe = np.where(support, x, x0)

    gap = x0 - safe
    value = gap**3 / safe**4
    first = -(gap**2) * (4 * x0 - safe) / safe**5
    second = 2 * gap * (10 * x0**2 - 8 * x0 * safe + safe**2) / safe**6

    value = np.where(support, value, 0.0)
    first = np.where(support, first, 0.0)
    second = np.where(support, second, 0.0)

    value = np.where(inside, value, math.inf)
    first = np.where(inside, first, -math.inf)
    second = np.where(inside, second, math.inf)
    return value[()], first[()], second[()]


def log_penalty(x):
    """The conventional -log(x) barrier, kept as a negative control."""
    x = np.asarray(x, dtype=float)
    inside = x > 0
    safe = np.where(inside, x, 1.0)
    value = np.where(inside, -np.log(safe), math.inf)
    first = np.where(inside, -1 / safe, -math.inf)
    second = np.where(inside, 1 / safe**2, math.inf)
    return value[()], first[()], second[()]


def _penalty_value(x, kind: str, spec: BarrierSpec):
    if kind == "ours":
        return penalty(x, spec)[0]
    elif kind == "log":
        return log_penalty(x)[0]
    raise ValueError(f"Unsupported {kind=}, must be one of {PENALTY_KINDS}.")


@dataclass(frozen=True)
class PenaltyGrowthReport:
    """x * P(x) sampled along x = x0 * 2^-n, n = 1..samples."""

    kind: str
    grid: np.ndarray
    products: np.ndarray
    monotone: bool
    threshold: float
    exceeds_threshold: bool

    @property
    def satisfied(self) -> bool:
        return self.monotone and self.exceeds_threshold


def assumption3_check(
    spec: BarrierSpec, samples: int, kind: str = "ours", threshold: float = 1e6
) -> PenaltyGrowthReport:
    """Check that x * P(x) grows without bound as x shrinks to zero.

    The product must increase strictly along the geometric grid and end above
    `threshold`. The clamped barrier gives x * P(x) = (x0 - x)^3 / x^3; the log
    barrier gives -x log(x), which tends to zero and fails.
    """
    if samples < 2:
        raise ValueError(f"'samples' must be at least 2, got {samples}.")

    exponents = np.arange(1, samples + 1)
    grid = spec.x0 * np.power(2.0, -exponents)
    products = grid * np.asarray(_penalty_value(grid, kind, spec))
    monotone = bool(np.all(np.diff(products) > 0))
    exceeds = bool(products[-1] > threshold)

    logger.debug(f"Penalty growth check for {kind=}: {monotone=}, last={products[-1]:.3e}")
    return PenaltyGrowthReport(kind, grid, products, monotone, threshold, exceeds)


def quadrature_penalty_integral(
    distance_profile: Callable[[np.ndarray], np.ndarray],
    interval: tuple[float, float],
    penalty_kind: str,
    resolution: int,
    spec: BarrierSpec | None = None,
    rule: str = "midpoint",
) -> float:
    """Integrate P(dist(t) - d0) over an interval by quadrature.

    Diagnostic only: the solver never evaluates this integral. The profile
    must accept an array of times. The midpoint rule is the default since
    trapezoid nodes may land on the instant where the distance reaches d0.
    """
    if spec is None:
        spec = BarrierSpec(d0=0.0)
    if rule not in QUADRATURE_RULES:
        raise ValueError(f"Unsupported {rule=}, must be one of {QUADRATURE_RULES}.")
    if resolution < 1:
        raise ValueError(f"'resolution' must be a positive integer, got {resolution}.")

    t0, t1 = interval
    if rule == "midpoint":
        step = (t1 - t0) / resolution
        times = t0 + (np.arange(resolution) + 0.5) * step
        gaps = np.asarray(distance_profile(times), dtype=float) - spec.d0
        return float(np.sum(_penalty_value(gaps, penalty_kind, spec)) * step)

    times = np.linspace(t0, t1, resolution + 1)
    gaps = np.asarray(distance_profile(times), dtype=float) - spec.d0
    return float(trapezoid(_penalty_value(gaps, penalty_kind, spec), times))
