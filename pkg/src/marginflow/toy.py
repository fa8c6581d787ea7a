"""Two-layer leaky-ReLU toy model with an exactly balanced reduced flow.

f(theta; x) = w1.x + w2.x + a1 phi(w1.x) - a2 phi(-w2.x), phi leaky ReLU.
Starting from w1 = w2 = 0, a1 = a2 = 0 the flow stays on the symmetric
manifold w1 = w2 = w, a1 = a2 = a, where f = (2 + 2 c_L a) w.x with
c_L = (1 + alpha_L) / 2, and the quantity (a + 1/c_L)^2 - ||w||^2 - 1/c_L^2
is conserved (it vanishes identically from the zero start).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import (CHECKPOINT_FACTOR, MIN_STEP, Trajectory, _record,
                       detect_separability_gf)
from .engine import Dataset, ToyTwoLayerModel, loss_grad
from .poly import NonnegPoly, build_pa_gd, build_pa_gf

# f = (2 + 2 c_L a) w.x with rho^2 = 2||w||^2 + 2a^2 gives the clean
# order-2 envelope p(x) = x^2 / sqrt(2), whose offset is p_a(x) = sqrt(2) x.
TOY_ENV_P = NonnegPoly((0.0, 0.0, 1.0 / math.sqrt(2.0)))
# gradient and value envelope: ||grad f|| <= sqrt(2) + 2 sqrt(2) rho <= q'(rho)
# and |f| <= 2 rho + rho^2 <= q(rho) with q = 2x + sqrt(2) x^2
TOY_ENV_Q = NonnegPoly((0.0, 2.0, math.sqrt(2.0)))
TOY_M = 2


@dataclass
class ToyConfig:
    d: int = 2
    n: int = 8
    gamma_star: float = 0.5           # hard-margin width of the planted dataset
    alpha_l: float = 0.5              # leaky-ReLU negative slope
    rk_tolerance: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.gamma_star < 1.0:
            raise ValueError("gamma_star must lie in (0, 1)")
        if not 0.0 < self.alpha_l <= 1.0:
            raise ValueError("alpha_l must lie in (0, 1]")
        if self.n % 2 != 0:
            raise ValueError("mirrored construction needs even n")

    @property
    def c_l(self) -> float:
        return 0.5 * (1.0 + self.alpha_l)


def gen_symmetric_dataset(config: ToyConfig, seed: int = 0) -> Dataset:
    """n/2 positives with x.e1 in [gamma_star, 1] and ||x|| <= 1, each
    mirrored through the origin with flipped label. Linearly separable by
    w* = e1 with margin gamma_star, and exactly balanced under x -> -x."""
    rng = np.random.default_rng(seed)
    half = config.n // 2
    X = np.zeros((half, config.d))
    for i in range(half):
        x1 = rng.uniform(config.gamma_star, 1.0)
        rest = rng.standard_normal(config.d - 1)
        rnorm = np.linalg.norm(rest)
        cap = math.sqrt(max(1.0 - x1 * x1, 0.0))
        if rnorm > 0:
            rest = rest / rnorm * rng.uniform(0.0, cap)
        X[i, 0] = x1
        X[i, 1:] = rest
    Xall = np.vstack([X, -X])
    yall = np.concatenate([np.ones(half), -np.ones(half)])
    return Dataset(X=Xall, y=yall)


def embed_theta(w, a: float) -> np.ndarray:
    """Lift reduced coordinates (w, a) to the full parameter (w, w, a, a)."""
    w = np.asarray(w, dtype=float)
    return np.concatenate([w, w, [a, a]])


def reduced_forward(w, a: float, x, c_l: float) -> float:
    return (2.0 + 2.0 * c_l * a) * float(np.asarray(w) @ np.asarray(x))


def reduced_rhs(w, a: float, data: Dataset, c_l: float):
    """Negative loss gradient in the reduced (w, a) chart."""
    n = len(data.y)
    dw = np.zeros_like(w)
    da = 0.0
    for xi, yi in zip(data.X, data.y):
        z = float(w @ xi)
        f = (2.0 + 2.0 * c_l * a) * z
        e = math.exp(-yi * f)
        dw += e * (1.0 + c_l * a) * yi * xi
        da += e * c_l * yi * z
    return dw / n, da / n


def balancing_residual(theta, c_l: float, d: int) -> float:
    """(a + 1/c_L)^2 - ||w||^2 - 1/c_L^2 on the embedded point; conserved
    along the reduced flow and zero from the zero start."""
    theta = np.asarray(theta, dtype=float)
    w = theta[:d]
    a = float(theta[2 * d])
    return (a + 1.0 / c_l) ** 2 - float(w @ w) - 1.0 / c_l ** 2


def _rk4(w, a, h, data, c_l):
    k1w, k1a = reduced_rhs(w, a, data, c_l)
    k2w, k2a = reduced_rhs(w + 0.5 * h * k1w, a + 0.5 * h * k1a, data, c_l)
    k3w, k3a = reduced_rhs(w + 0.5 * h * k2w, a + 0.5 * h * k2a, data, c_l)
    k4w, k4a = reduced_rhs(w + h * k3w, a + h * k3a, data, c_l)
    return (w + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w),
            a + h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a))


def run_reduced_ode(data: Dataset, config: ToyConfig, horizon: float,
                    record_factor: float = CHECKPOINT_FACTOR) -> Trajectory:
    """Integrate the reduced flow with step-doubled RK4 and log full
    diagnostics through the embedded two-layer model.

    Error control compares one h step against two h/2 steps; the difference
    over 15 estimates the local error of the finer solution, which is the
    one accepted.
    """
    model = ToyTwoLayerModel(config.d, config.alpha_l)
    pa = build_pa_gf(TOY_ENV_P, TOY_M)
    pa_gd = build_pa_gd(TOY_ENV_P, TOY_M)
    c_l = config.c_l

    w = np.zeros(config.d)
    a = 0.0
    t = 0.0
    zeta = 0.0
    prev_dir = None
    traj = Trajectory(metadata={
        "mode": "gf", "reduced": True, "horizon": horizon, "M": TOY_M,
        "p": list(TOY_ENV_P.coeffs), "c_l": c_l,
        "gamma_star": config.gamma_star, "alpha_l": config.alpha_l,
    })

    def diag(t_now, w_now, a_now, zeta_now):
        theta = embed_theta(w_now, a_now)
        g, _, ev = loss_grad(model, theta, data)
        rho = float(np.linalg.norm(theta))
        sep = detect_separability_gf(ev, rho, pa) if rho > 1e-12 else False
        return _record(t_now, theta, ev, g, TOY_M, pa, pa_gd, "gf", sep, zeta_now)

    traj.records.append(diag(t, w, a, zeta))
    next_record = 1e-3
    h = 1e-3
    while t < horizon:
        h = min(h, horizon - t, next_record * (record_factor - 1.0) + 1e-12)
        h = max(h, MIN_STEP)
        while True:
            w_big, a_big = _rk4(w, a, h, data, c_l)
            w_half, a_half = _rk4(w, a, 0.5 * h, data, c_l)
            w_fine, a_fine = _rk4(w_half, a_half, 0.5 * h, data, c_l)
            err = (math.hypot(float(np.linalg.norm(w_fine - w_big)),
                              a_fine - a_big)) / 15.0
            scale = config.rk_tolerance * (1.0 + math.hypot(float(np.linalg.norm(w)), a))
            if err <= scale or h <= MIN_STEP:
                break
            h *= 0.5
            if h < MIN_STEP:
                raise RuntimeError(f"reduced-ODE step collapse at t={t}")
        # arc-length of the unit direction, via embedded chords
        theta_new = embed_theta(w_fine, a_fine)
        if float(np.linalg.norm(theta_new)) > 1e-12:
            nd = theta_new / float(np.linalg.norm(theta_new))
            if prev_dir is not None:
                zeta += float(np.linalg.norm(nd - prev_dir))
            prev_dir = nd
        w, a = w_fine, a_fine
        t += h
        if err > 0:
            h *= min(2.0, max(0.2, 0.9 * (scale / max(err, 1e-300)) ** 0.2))
        else:
            h *= 2.0
        if t >= next_record or t >= horizon:
            traj.records.append(diag(t, w, a, zeta))
            while next_record <= t:
                next_record *= record_factor
    return traj


def loss_upper_bound(T: float, gamma_star: float) -> float:
    """L(T) <= (1 + log^2 T / (4 gamma*^2)) / T along the reduced flow."""
    return (1.0 + math.log(T) ** 2 / (4.0 * gamma_star ** 2)) / T


def norm_growth_onset(gamma_star: float) -> float:
    """t0 after which the norm growth bounds below apply."""
    g = 4.0 / gamma_star
    return max(16.0, (g * math.log(g)) ** 4)


def norm_lower_bound(t: float, c_l: float) -> float:
    """||w_t||^2 c_L^2 + 1 >= log t / 16 for t >= t0, returned as the
    right-hand side."""
    return math.log(t) / 16.0


def norm_upper_bound(t: float, gamma_star: float, w_t0_norm: float) -> float:
    """||w_t|| <= (4/gamma* + 1) sqrt(log t) + ||w_{t0}|| for t >= t0."""
    return (4.0 / gamma_star + 1.0) * math.sqrt(math.log(t)) + w_t0_norm


@dataclass
class ToyBoundReport:
    loss_margin: float         # min over checked records of bound - loss
    norm_lower_margin: float   # min of (||w||^2 c_L^2 + 1) - log(t)/16, t >= t0
    norm_upper_margin: float   # min of bound - ||w||, t >= t0
    t0: float
    checked: int

    @property
    def ok(self) -> bool:
        return (self.loss_margin >= 0.0 and self.norm_lower_margin >= 0.0
                and self.norm_upper_margin >= 0.0)


def check_toy_bounds(traj: Trajectory, config: ToyConfig) -> ToyBoundReport:
    """Audit the three reduced-flow bounds against a logged trajectory."""
    c_l = config.c_l
    t0 = norm_growth_onset(config.gamma_star)
    d = config.d

    loss_margin = math.inf
    lower_margin = math.inf
    upper_margin = math.inf
    w_t0_norm = None
    checked = 0
    for r in traj.records:
        if r.t <= 1.0:
            continue
        checked += 1
        loss_margin = min(loss_margin,
                          loss_upper_bound(r.t, config.gamma_star) - math.exp(r.log_loss))
        if r.t >= t0 and r.theta is not None:
            wn = float(np.linalg.norm(r.theta[:d]))
            if w_t0_norm is None:
                w_t0_norm = wn
            lower_margin = min(lower_margin,
                               wn * wn * c_l * c_l + 1.0 - norm_lower_bound(r.t, c_l))
            upper_margin = min(upper_margin,
                               norm_upper_bound(r.t, config.gamma_star, w_t0_norm) - wn)
    if w_t0_norm is None:
        lower_margin = upper_margin = math.inf   # horizon below t0: vacuous
    return ToyBoundReport(loss_margin=loss_margin, norm_lower_margin=lower_margin,
                          norm_upper_margin=upper_margin, t0=t0, checked=checked)
