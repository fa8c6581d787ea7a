"""Radial-limit homogenization f_M and its certified error bounds.

g(r) = f(r theta; x) / r^M is evaluated on a geometric radius ladder until
the successive differences plateau; the theoretical tail p_a(r ||theta||)/r^M
at the last radius certifies how far the plateau can sit from the true limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .poly import NonnegPoly

DEFAULT_R0 = 4.0
DEFAULT_GROWTH = 2.0
DEFAULT_MAX_STAGES = 40
REL_TOL = 1e-12
ABS_TOL = 1e-14


@dataclass
class HomogenizationEstimate:
    value: float
    radii: List[float]
    residuals: List[float]               # successive |g(r_{k+1}) - g(r_k)|
    certified_tolerance: float           # p_a(r ||theta||) / r^M at the last radius
    converged: bool

    @property
    def estimator_tolerance(self) -> float:
        last_res = self.residuals[-1] if self.residuals else 0.0
        return self.certified_tolerance + last_res


def _radial_ladder(eval_at, M: int, pa, theta_norm: float,
                   r0: float, growth: float, max_stages: int) -> HomogenizationEstimate:
    radii, values, residuals = [], [], []
    r = r0
    for _ in range(max_stages):
        try:
            g = eval_at(r)
        except (OverflowError, FloatingPointError):
            break
        if not np.all(np.isfinite(g)):
            break                          # overflow back-off: keep the last finite stage
        radii.append(r)
        values.append(g)
        if len(values) >= 2:
            residuals.append(float(np.max(np.abs(values[-1] - values[-2]))))
            if residuals[-1] < REL_TOL * float(np.max(np.abs(values[-1]))) + ABS_TOL:
                break
        r *= growth
    if not values:
        raise RuntimeError("no finite radial stage; model overflows at r0 already")
    tail = pa.eval(radii[-1] * theta_norm) / radii[-1] ** M if pa is not None else 0.0
    converged = bool(residuals) and residuals[-1] <= max(tail, REL_TOL * (1.0 + float(np.max(np.abs(values[-1])))) + ABS_TOL)
    return HomogenizationEstimate(value=values[-1], radii=radii, residuals=residuals,
                                  certified_tolerance=float(tail), converged=converged)


def estimate_fM(model, theta, x, M: int, pa, r0: float = DEFAULT_R0,
                growth: float = DEFAULT_GROWTH,
                max_stages: int = DEFAULT_MAX_STAGES) -> HomogenizationEstimate:
    """Estimate f_M(theta; x) = lim f(r theta; x) / r^M along a geometric ladder."""
    theta = np.asarray(theta, dtype=float)
    nrm = float(np.linalg.norm(theta))
    if nrm <= 0.0:
        raise ValueError("need a nonzero parameter point")

    def eval_at(r):
        return np.float64(model.forward(r * theta, x)) / r ** M

    est = _radial_ladder(eval_at, M, pa, nrm, r0, growth, max_stages)
    est.value = float(est.value)
    return est


def estimate_gradM(model, theta, x, M: int, pa=None, r0: float = DEFAULT_R0,
                   growth: float = DEFAULT_GROWTH,
                   max_stages: int = DEFAULT_MAX_STAGES) -> np.ndarray:
    """(grad f)_M = lim grad f(r theta; x) / r^{M-1}; the gradient of f_M when
    the weak-homogeneous-gradient assumption holds."""
    theta = np.asarray(theta, dtype=float)
    nrm = float(np.linalg.norm(theta))
    if nrm <= 0.0:
        raise ValueError("need a nonzero parameter point")

    def eval_at(r):
        return np.asarray(model.grad_params(r * theta, x), dtype=float) / r ** (M - 1)

    est = _radial_ladder(eval_at, M - 1 if M > 1 else 1, pa, nrm, r0, growth, max_stages)
    return np.asarray(est.value, dtype=float)


@dataclass
class ErrorBoundReport:
    max_residual: float
    samples: int

    @property
    def ok(self) -> bool:
        return self.max_residual <= 0.0


def check_error_bound(model, theta_samples: Sequence, x, M: int, pa) -> ErrorBoundReport:
    """Max over samples of |f - f_M_hat| - p_a(||theta||) - estimator tolerance."""
    worst = -math.inf
    count = 0
    for theta in theta_samples:
        theta = np.asarray(theta, dtype=float)
        est = estimate_fM(model, theta, x, M, pa)
        f = model.forward(theta, x)
        nrm = float(np.linalg.norm(theta))
        worst = max(worst, abs(f - est.value) - pa.eval(nrm) - est.estimator_tolerance)
        count += 1
    return ErrorBoundReport(max_residual=worst, samples=count)


def block_homogenize(block, w, z, m_param: int, m_input: int,
                     r0: float = DEFAULT_R0, growth: float = DEFAULT_GROWTH,
                     max_stages: int = DEFAULT_MAX_STAGES) -> np.ndarray:
    """Two-radius limit s_M(w; z) = lim s(r1 w; r2 z) / (r1^{M1} r2^{M2}),
    taken along the diagonal r1 = r2 = r."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)

    def eval_at(r):
        return np.asarray(block.forward(r * w, r * z), dtype=float) / r ** (m_param + m_input)

    est = _radial_ladder(eval_at, max(m_param + m_input, 1), None,
                         max(float(np.linalg.norm(w)), 1.0), r0, growth, max_stages)
    if not est.converged and est.residuals and est.residuals[-1] > 1e-6:
        raise RuntimeError("blockwise homogenization did not plateau")
    return np.asarray(est.value, dtype=float)


def blockwise_homogenize(blocks, theta, x, orders) -> float:
    """Compose per-block homogenizations s^1_M o ... o s^L_M (outermost first).

    `blocks` and `orders` follow the NetworkModel convention (outermost
    first); slices of theta are taken per block.
    """
    theta = np.asarray(theta, dtype=float)
    off = 0
    slices = []
    for b in blocks:
        slices.append(slice(off, off + b.n_params))
        off += b.n_params
    z = np.asarray(x, dtype=float)
    for b, sl, od in zip(reversed(blocks), reversed(slices), reversed(list(orders))):
        z = block_homogenize(b, theta[sl], z, od.m_param, od.m_input)
    out = np.asarray(z).ravel()
    if out.size != 1:
        raise ValueError("composed network must end in a scalar")
    return float(out[0])


def separability_scale(fM_margin: float, pa, M: int, n: int, slack: float,
                       theta_norm: float = 1.0) -> float:
    """Smallest scale c with gamma' c^M >= 2 p_a(c ||theta'||) + log n + slack.

    Geometric sweep first, then bisection against the previous grid point.
    Finite because deg p_a <= M - 1 < M.
    """
    if fM_margin <= 0.0:
        raise ValueError("homogenized margin must be positive to separate")
    if slack <= 0.0:
        raise ValueError("slack must be positive")

    def satisfied(c):
        return fM_margin * c ** M >= 2.0 * pa.eval(c * theta_norm) + math.log(n) + slack

    lo, hi = None, 1e-6
    for _ in range(400):
        if satisfied(hi):
            break
        lo, hi = hi, hi * 1.5
    else:
        raise RuntimeError("no separating scale found; p_a degree too high?")
    if lo is None:
        return hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if satisfied(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class LeadingComponentReport:
    min_homog_margin: float
    per_sample: List[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.min_homog_margin > 0.0


def leading_component_positive(model, theta_s, data, M: int, pa) -> LeadingComponentReport:
    """Check min_j y_j f_M_hat(theta_s; x_j) > 0 at a separable point."""
    vals = []
    for xi, yi in zip(data.X, data.y):
        est = estimate_fM(model, theta_s, xi, M, pa)
        vals.append(float(yi) * est.value)
    return LeadingComponentReport(min_homog_margin=min(vals), per_sample=vals)
