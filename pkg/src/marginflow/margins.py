"""Margin and link-function diagnostics, all computed from log_loss.

The log-domain identity phi(G) = phi(L) - p_a(rho) for the modified loss
G = e^{p_a(rho)} L means no exponentiated-loss path ever exists here; every
quantity stays finite while L underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import LossEval, loss_grad


def link_phi(log_loss: float, n: int) -> float:
    """phi(L) = log(1/(n L)) = -log n - log L."""
    return -math.log(n) - log_loss


def link_Phi(phi_val: float) -> float:
    """Phi = log(phi) - 2/phi, increasing on (0, inf).

    The margin built from Phi is only monotone-certified once phi exceeds 2;
    values at or below that boundary are still computed (the caller flags the
    regime). phi <= 0 has no meaning and is rejected.
    """
    if phi_val <= 0.0:
        raise ValueError("link_Phi needs phi > 0")
    return math.log(phi_val) - 2.0 / phi_val


def normalized_margin(state: LossEval, rho: float, M: int) -> float:
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    return state.min_margin / rho ** M


def smoothed_margin(state: LossEval, rho: float, M: int) -> float:
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    n = len(state.per_sample_margins)
    return link_phi(state.log_loss, n) / rho ** M


def gf_margin(state: LossEval, rho: float, pa, M: int) -> float:
    """(phi(L) - p_a(rho)) / rho^M."""
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    n = len(state.per_sample_margins)
    return (link_phi(state.log_loss, n) - pa.eval(rho)) / rho ** M


def gd_margin(state: LossEval, rho: float, pa_gd, M: int):
    """exp(Phi(G)) / rho^M with G = e^{p_a(rho)} L.

    Returns (value, certified): certified is False outside G < 1/(n e^2),
    where the value is reported anyway but Phi is not monotone-safe. The
    value is None when phi(G) <= 0 (G >= 1/n), where Phi is undefined.
    """
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    n = len(state.per_sample_margins)
    phi_g = link_phi(state.log_loss, n) - pa_gd.eval(rho)
    if phi_g <= 0.0:
        return None, False
    return math.exp(link_Phi(phi_g)) / rho ** M, phi_g > 2.0


def epsilon_t(state: LossEval, rho: float, pa, M: int) -> float:
    """Multiplicative sandwich error (log n + p_a(rho)) / (phi(L) - p_a(rho)).

    Only meaningful under strong separability; a nonpositive denominator
    signals the caller is outside that regime.
    """
    n = len(state.per_sample_margins)
    denom = link_phi(state.log_loss, n) - pa.eval(rho)
    if denom <= 0.0:
        raise ValueError("separability violated: phi(L) <= p_a(rho)")
    return (math.log(n) + pa.eval(rho)) / denom


def radial_speed(model, theta, data) -> float:
    """v = <grad L, -theta>; positive after separability (norm keeps growing)."""
    g, _, _ = loss_grad(model, theta, data)
    return float(g @ (-np.asarray(theta, dtype=float)))


def radial_speed_bracket(state: LossEval, rho: float, p, M: int):
    """Bounds M L phi(L) - p'(rho) L <= v <= M L log(1/L) + p'(rho) L.

    Evaluated in the raw domain; when L underflows both sides are 0 and the
    bracket is vacuous, which is the honest answer at double precision.
    """
    n = len(state.per_sample_margins)
    L = state.loss
    dp = p.derivative().eval(rho)
    lo = (M * link_phi(state.log_loss, n) - dp) * L
    hi = (M * (-state.log_loss) + dp) * L
    return lo, hi


@dataclass
class MarginSnapshot:
    gamma: float
    gamma_tilde: float
    gamma_bar: float
    gamma_hat: Optional[float]
    gamma_hat_certified: bool
    eps_t: Optional[float]
    phi_L: float
    Phi_G: Optional[float]
    pa_rho: float
    sep: bool


def snapshot(state: LossEval, rho: float, M: int, pa, pa_gd=None) -> MarginSnapshot:
    """All margin quantities at one record; eps_t is missing (None), not 0,
    before separability."""
    n = len(state.per_sample_margins)
    phi_l = link_phi(state.log_loss, n)
    pa_rho = float(pa.eval(rho))
    sep = state.log_loss < -pa_rho - math.log(n)
    g_hat, certified, phi_G = None, False, None
    if pa_gd is not None:
        g_hat, certified = gd_margin(state, rho, pa_gd, M)
        pg = phi_l - pa_gd.eval(rho)
        phi_G = link_Phi(pg) if pg > 0 else None
    return MarginSnapshot(
        gamma=normalized_margin(state, rho, M),
        gamma_tilde=gf_margin(state, rho, pa, M),
        gamma_bar=smoothed_margin(state, rho, M),
        gamma_hat=g_hat,
        gamma_hat_certified=certified,
        eps_t=epsilon_t(state, rho, pa, M) if sep else None,
        phi_L=phi_l,
        Phi_G=phi_G,
        pa_rho=pa_rho,
        sep=sep)


def check_monotone(values, tol: float = 1e-10):
    """Indices where a supposedly nondecreasing sequence drops by more than tol."""
    vals = [v for v in values if v is not None]
    return [i for i in range(1, len(vals)) if vals[i] < vals[i - 1] - tol]


def check_sandwich(snap: MarginSnapshot, tol: float = 1e-9):
    """gamma_tilde <= gamma_bar <= gamma <= (1 + eps_t) gamma_tilde after separability."""
    if not snap.sep or snap.eps_t is None:
        return True
    s = tol * (1.0 + abs(snap.gamma))
    return (snap.gamma_tilde <= snap.gamma_bar + s
            and snap.gamma_bar <= snap.gamma + s
            and snap.gamma <= (1.0 + snap.eps_t) * snap.gamma_tilde + s)
