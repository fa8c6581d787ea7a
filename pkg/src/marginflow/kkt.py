"""Approximate-KKT residuals for the normalized max-margin problem.

The direction theta/rho of a separable trajectory is tested against the
first-order conditions of  min ||theta||^2 / 2  s.t.  y_i f_M(theta; x_i) >= 1.
All multipliers come from a softmax over homogenized margins, so nothing here
exponentiates a large margin directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .homogenize import estimate_fM, estimate_gradM


def _softmax(neg_margins):
    z = np.asarray(neg_margins, dtype=float)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def homogenized_margins(model, theta, data, M: int, pa) -> np.ndarray:
    """y_i f_M_hat(theta; x_i) for each sample."""
    vals = []
    for xi, yi in zip(data.X, data.y):
        vals.append(float(yi) * estimate_fM(model, theta, xi, M, pa).value)
    return np.asarray(vals)


def homogenized_grads(model, theta, data, M: int, use_fd: bool = False,
                      fd_h: float = 1e-6) -> np.ndarray:
    """Rows g_i = grad f_M_hat(theta; x_i).

    By default the radial limit of the exact gradient is used (valid under
    the weak homogeneous-gradient assumption); use_fd falls back to central
    differences of the homogenized value itself.
    """
    theta = np.asarray(theta, dtype=float)
    if not use_fd:
        return np.stack([estimate_gradM(model, theta, xi, M) for xi in data.X])
    rows = []
    h = fd_h * (1.0 + float(np.linalg.norm(theta)))
    for xi in data.X:
        g = np.empty(theta.size)
        for j in range(theta.size):
            e = np.zeros(theta.size)
            e[j] = h
            g[j] = (estimate_fM(model, theta + e, xi, M, None).value
                    - estimate_fM(model, theta - e, xi, M, None).value) / (2.0 * h)
        rows.append(g)
    return np.stack(rows)


@dataclass
class KktReport:
    beta: float                       # cos angle between theta and h_M direction
    eps: float                        # stationarity level sqrt(2) B sqrt(1 - beta)
    delta: float                      # complementarity level n B^2 (1 + 2 p_a(rho)) / (M margin)
    lambdas: np.ndarray               # multipliers at the rescaled point
    B_const: float                    # smoothed-margin constant Gamma_tilde(theta_s)^{-1/M}
    B_now: float                      # same constant from the current point
    fM_min: float                     # min_i y_i f_M_hat(theta; x_i)
    rescaled_point_norm: float        # ||theta|| / fM_min^{1/M}
    stationarity_residual: float      # ||theta_hat - sum lambda_i y_i g_i_hat|| direct check
    complementarity_residual: float   # sum lambda_i |y_i f_M(theta_hat; x_i) - 1| direct check
    feasible: bool                    # all rescaled margins >= 1 - small slack
    margins_rescaled: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def ok(self) -> bool:
        return (self.feasible and self.stationarity_residual <= self.eps + 1e-6
                and self.complementarity_residual <= self.delta + 1e-6)


def kkt_diagnostics(model, theta, data, M: int, pa,
                    gamma_tilde_s: Optional[float] = None,
                    gamma_tilde_now: Optional[float] = None,
                    use_fd: bool = False) -> KktReport:
    """Full approximate-KKT audit at one trajectory point.

    gamma_tilde_s is the smoothed margin at the first separable record (the
    constant the bounds are stated with); when omitted the current smoothed
    margin stands in for it.
    """
    theta = np.asarray(theta, dtype=float)
    rho = float(np.linalg.norm(theta))
    if rho <= 0.0:
        raise ValueError("need a nonzero parameter point")

    fbar = homogenized_margins(model, theta, data, M, pa)
    fmin = float(fbar.min())
    if fmin <= 0.0:
        raise ValueError("homogenized margins must be positive (point not separable)")
    n = fbar.size

    grads = homogenized_grads(model, theta, data, M, use_fd=use_fd)
    w = _softmax(-fbar)
    h = (w[:, None] * data.y[:, None] * grads).sum(axis=0)
    h_norm = float(np.linalg.norm(h))
    if h_norm <= 0.0:
        raise ValueError("degenerate softmax direction")
    beta = float(theta @ h) / (rho * h_norm)

    if gamma_tilde_now is None:
        gamma_tilde_now = fmin / rho ** M
    if gamma_tilde_s is None:
        gamma_tilde_s = gamma_tilde_now
    B_const = gamma_tilde_s ** (-1.0 / M)
    B_now = gamma_tilde_now ** (-1.0 / M)

    eps = math.sqrt(2.0) * B_const * math.sqrt(max(1.0 - beta, 0.0))
    delta = n * B_const ** 2 * (1.0 + 2.0 * pa.eval(rho)) / (M * fmin)

    # everything below is the direct check at the rescaled point
    scale = fmin ** (1.0 / M)
    theta_hat = theta / scale
    rescaled_norm = rho / scale
    lambdas = fmin ** (1.0 - 2.0 / M) * rho * w / h_norm
    margins_rescaled = fbar / fmin

    # grad f_M is (M-1)-homogeneous along rays, so rescale the rows too
    grads_hat = grads / scale ** (M - 1)
    stat = float(np.linalg.norm(theta_hat - (lambdas[:, None] * data.y[:, None]
                                             * grads_hat).sum(axis=0)))
    comp = float(np.sum(lambdas * np.abs(margins_rescaled - 1.0)))
    feasible = bool(np.all(margins_rescaled >= 1.0 - 1e-9))

    return KktReport(beta=beta, eps=eps, delta=delta, lambdas=lambdas,
                     B_const=B_const, B_now=B_now, fM_min=fmin,
                     rescaled_point_norm=rescaled_norm,
                     stationarity_residual=stat,
                     complementarity_residual=comp,
                     feasible=feasible,
                     margins_rescaled=margins_rescaled)


def stationarity_identity(report: KktReport, rho: float, M: int) -> float:
    """The closed form fmin^{-1/M} rho sqrt(2 - 2 beta), which the direct
    stationarity residual must match when the multipliers exactly collapse
    the softmax direction onto the unit sphere."""
    return (report.fM_min ** (-1.0 / M) * rho
            * math.sqrt(max(2.0 - 2.0 * report.beta, 0.0)))
