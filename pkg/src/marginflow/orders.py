"""Near-(M, N)-homogeneity order calculus for blocks and their compositions.

Descriptors carry orders plus envelope polynomials, never tensor shapes;
shape compatibility is the engine's business. Envelope outputs of the
composition rules are valid upper bounds but deliberately loose -- the split
bound t(a*b) <= t(a) * u(b) (u = support indicator of t) replaces the
tightest possible factorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .poly import NonnegPoly

_X = NonnegPoly.x()
_ONE = NonnegPoly((1.0,))
_ZERO = NonnegPoly.zero()


@dataclass(frozen=True)
class OrderDescriptor:
    """Orders (m_param, m_input) with envelopes p, q (parameter side) and r, t (input side)."""

    m_param: int
    m_input: int
    env_p: NonnegPoly = _ZERO
    env_q: NonnegPoly = _ONE
    env_r: NonnegPoly = _ZERO
    env_t: NonnegPoly = _ONE

    def __post_init__(self):
        if self.m_param < 0 or self.m_input < 0:
            raise ValueError("orders must be nonnegative integers")
        if self.m_param + self.m_input < 1:
            raise ValueError("m_param + m_input >= 1 is required")
        for name, env, bound in (("env_p", self.env_p, self.m_param),
                                 ("env_q", self.env_q, self.m_param),
                                 ("env_r", self.env_r, self.m_input),
                                 ("env_t", self.env_t, self.m_input)):
            if env.degree > bound and not env.is_zero():
                raise ValueError(f"deg {name} = {env.degree} exceeds order bound {bound}")

    @property
    def orders(self):
        return (self.m_param, self.m_input)

    def as_dict(self):
        return {
            "m_param": self.m_param,
            "m_input": self.m_input,
            "env_p": list(self.env_p.coeffs),
            "env_q": list(self.env_q.coeffs),
            "env_r": list(self.env_r.coeffs),
            "env_t": list(self.env_t.coeffs),
        }


@dataclass(frozen=True)
class BlockKind:
    """Catalog tag; `activation`/`power` only apply to perceptron blocks."""

    tag: str
    activation: Optional[str] = None
    power: int = 1
    d_in: int = 1
    d_out: int = 1

    KNOWN = ("linear", "perceptron", "pooling", "conv", "residual",
             "swiglu", "linear_attention", "relu_attention")

    def __post_init__(self):
        if self.tag not in self.KNOWN:
            raise ValueError(f"unknown block kind {self.tag!r}")
        if self.tag == "perceptron":
            if self.power < 1:
                raise ValueError("perceptron power must be >= 1")
            if self.activation is None:
                raise ValueError("perceptron needs an activation name")


# activation value bound |phi(z)| <= |z| + c; one entry per supported activation
_ACT_OFFSET = {
    "relu": 0.0,
    "leaky_relu": 0.0,
    "softplus": math.log(2.0),
    "gelu": 0.0,
    "swish": 0.0,
    "silu": 0.0,
}


def activation_power_order(activation: str, k: int) -> OrderDescriptor:
    """phi^k as a parameter-free near-(0, k)-homogeneous map.

    The Euler defect |phi'(z) z - phi(z)| is globally bounded by 1 for every
    activation in the catalog (it vanishes identically for ReLU and leaky
    ReLU), so the input residual of phi^k is at most k (|z| + c)^{k-1}.
    """
    if activation not in _ACT_OFFSET:
        raise ValueError(f"unknown activation {activation!r}")
    c = _ACT_OFFSET[activation]
    # gelu and swish derivatives overshoot 1 (max about 1.13 and 1.10), so the
    # envelope slope needs headroom; relu/leaky/softplus have |phi'| <= 1
    slope = 1.2 if activation in ("gelu", "swish", "silu") else 1.0
    shifted = NonnegPoly((c + 1.0, 1.0))        # x + c + 1
    t = _ONE
    for _ in range(k):
        t = t * shifted
    t = t * slope
    r = t                                        # r' >= k (x + c + 1)^{k-1} dominates the defect
    exact = activation in ("relu", "leaky_relu")  # phi'(z) z = phi(z) identically
    env_p = _ZERO if exact else NonnegPoly((4.0 * k,))
    return OrderDescriptor(m_param=0, m_input=k, env_p=env_p, env_q=_ONE,
                           env_r=r, env_t=t)


def catalog_order(kind: BlockKind) -> OrderDescriptor:
    """Orders and envelope polynomials for the block catalog."""
    if kind.tag == "linear":
        sqrt_din = math.sqrt(max(kind.d_in, 1))
        sqrt_dout = math.sqrt(max(kind.d_out, 1))
        return OrderDescriptor(
            m_param=1, m_input=1,
            env_p=_X, env_q=_X,
            env_r=_X,
            env_t=NonnegPoly((sqrt_din + sqrt_dout, sqrt_dout)))
    if kind.tag == "perceptron":
        # linear-over-activation composition convention: the layer contributes
        # order 1 in its own parameters and multiplies the input order by k,
        # which is what makes the network-order formula reproduce the MLP cases
        lin = catalog_order(BlockKind("linear", d_in=kind.d_in, d_out=kind.d_out))
        act = activation_power_order(kind.activation, kind.power)
        return compose_orders(lin, act)
    if kind.tag in ("pooling", "conv", "residual"):
        return OrderDescriptor(m_param=0, m_input=1, env_p=_ZERO, env_q=_ONE,
                               env_r=_ZERO, env_t=NonnegPoly((1.0, 1.0)))
    if kind.tag == "swiglu":
        # tensor product of a swish branch (1,1) and a plain affine branch (1,1)
        branch = compose_orders(activation_power_order("swish", 1),
                                catalog_order(BlockKind("linear", d_in=kind.d_in,
                                                        d_out=kind.d_out)))
        affine = catalog_order(BlockKind("linear", d_in=kind.d_in, d_out=kind.d_out))
        return tensor_orders(branch, affine)
    if kind.tag == "linear_attention":
        return OrderDescriptor(
            m_param=2, m_input=3,
            env_p=NonnegPoly((2.0, 2.0, 2.0)),
            env_q=NonnegPoly((1.0, 1.0, 1.0)),
            env_r=NonnegPoly((0.0, 4.0, 0.0, 2.0)),
            env_t=NonnegPoly((1.0, 1.0, 0.0, 1.0)))
    if kind.tag == "relu_attention":
        return OrderDescriptor(
            m_param=4, m_input=3,
            env_p=NonnegPoly((4.0, 4.0, 0.0, 0.0, 2.0)),
            env_q=NonnegPoly((1.0, 1.0, 0.0, 0.0, 1.0)),
            env_r=NonnegPoly((0.0, 6.0, 0.0, 2.0)),
            env_t=NonnegPoly((1.0, 1.0, 0.0, 1.0)))
    raise ValueError(f"unknown block kind {kind.tag!r}")


def compose_orders(outer: OrderDescriptor, inner: OrderDescriptor) -> OrderDescriptor:
    """Orders (M1 + M2*M3, M2*M4) for outer(theta1; inner(theta2; x)).

    Envelope algebra follows the composition proof: every occurrence of
    ||inner output|| is bounded by q_in(rho) t_in(x) and the product split
    uses support indicators.
    """
    M1, M2 = outer.m_param, outer.m_input
    M3, M4 = inner.m_param, inner.m_input
    p1, q1, r1, t1 = outer.env_p, outer.env_q, outer.env_r, outer.env_t
    p2, q2, r2, t2 = inner.env_p, inner.env_q, inner.env_r, inner.env_t
    dp1, dq1, dr1, dt1 = p1.derivative(), q1.derivative(), r1.derivative(), t1.derivative()
    dp2, dq2, dr2, dt2 = p2.derivative(), q2.derivative(), r2.derivative(), t2.derivative()

    r1q2, dr1q2 = r1.compose(q2), dr1.compose(q2)
    t1q2, dt1q2 = t1.compose(q2), dt1.compose(q2)
    ind_r1t2 = r1.support_indicator().compose(t2)
    ind_dr1t2 = dr1.support_indicator().compose(t2)
    ind_t1t2 = t1.support_indicator().compose(t2)
    ind_dt1t2 = dt1.support_indicator().compose(t2)

    # parameter-side Euler residual: rho bracket (deg <= M1 + M2*M3 - 1) goes
    # under p_s', x bracket (deg <= M2*M4) under r_s
    p_param = (dp1 * r1q2) + (float(M3) * (p1 * dr1q2)) + (q1 * dt1q2 * dp2)
    r_param = ind_r1t2 + ind_dr1t2 + (ind_dt1t2 * r2)
    # input-side Euler residual: rho part under p_s, x part under r_s'
    p_input = (float(M4) * (p1 * dr1q2)) + (q1 * dt1q2 * p2)
    r_input = (ind_dr1t2 + ind_dt1t2 * dr2).antiderivative()

    p_s = p_param.antiderivative().coeff_max(p_input)
    r_s = r_param.coeff_max(r_input)

    # (B2) parameter Jacobian, (B2) input Jacobian, and the (B3) value bound
    q_param = (dq1 * t1q2) + (q1 * dt1q2 * dq2)
    t_param = ind_t1t2 + (ind_dt1t2 * t2)
    q_input = q1 * dt1q2 * q2
    t_input = (ind_dt1t2 * dt2).antiderivative()
    q_value = q1 * t1q2
    t_value = ind_t1t2

    q_s = q_param.antiderivative().coeff_max(q_input).coeff_max(q_value)
    t_s = t_param.coeff_max(t_input).coeff_max(t_value)

    return OrderDescriptor(m_param=M1 + M2 * M3, m_input=M2 * M4,
                           env_p=p_s, env_q=q_s, env_r=r_s, env_t=t_s)


def tensor_orders(a: OrderDescriptor, b: OrderDescriptor) -> OrderDescriptor:
    """Orders add componentwise; envelopes multiply."""
    p_s = ((a.env_q * b.env_p.derivative()) + (b.env_q * a.env_p.derivative())).antiderivative()
    p_s = p_s.coeff_max(a.env_q * b.env_p + b.env_q * a.env_p)
    r_s = (a.env_t * b.env_r) + (b.env_t * a.env_r)
    r_s = r_s.coeff_max(((a.env_t * b.env_r.derivative())
                         + (b.env_t * a.env_r.derivative())).antiderivative())
    sqrt2 = math.sqrt(2.0)
    q_s = sqrt2 * (a.env_q * b.env_q)
    t_s = sqrt2 * (a.env_t * b.env_t)
    return OrderDescriptor(m_param=a.m_param + b.m_param,
                           m_input=a.m_input + b.m_input,
                           env_p=p_s, env_q=q_s, env_r=r_s, env_t=t_s)


def sum_orders(a: OrderDescriptor, b: OrderDescriptor) -> OrderDescriptor:
    """Componentwise max of orders; envelope sum."""
    return OrderDescriptor(m_param=max(a.m_param, b.m_param),
                           m_input=max(a.m_input, b.m_input),
                           env_p=a.env_p + b.env_p,
                           env_q=a.env_q + b.env_q,
                           env_r=a.env_r + b.env_r,
                           env_t=a.env_t + b.env_t)


def linear_map_order(a: OrderDescriptor, op_norm: float = 1.0) -> OrderDescriptor:
    """A fixed linear map after the block preserves the orders; p and q pick up its norm."""
    if op_norm < 0:
        raise ValueError("operator norm bound must be nonnegative")
    return OrderDescriptor(m_param=a.m_param, m_input=a.m_input,
                           env_p=op_norm * a.env_p, env_q=op_norm * a.env_q,
                           env_r=a.env_r, env_t=a.env_t)


def network_order(blocks: Sequence[OrderDescriptor]) -> OrderDescriptor:
    """Orders of s^1 o s^2 o ... o s^L, outermost first.

    Exact integer formula: M1 = sum_j M1^j * prod_{i<j} M2^i, M2 = prod_j M2^j;
    equals the left fold of compose_orders, which also carries the envelopes.
    """
    if not blocks:
        raise ValueError("block list must be nonempty")
    m1, m2 = 0, 1
    for d in blocks:
        m1 += m2 * d.m_param
        m2 *= d.m_input
    folded = blocks[0]
    for d in blocks[1:]:
        folded = compose_orders(folded, d)
    if (folded.m_param, folded.m_input) != (m1, m2):
        raise AssertionError("fold of compose_orders disagrees with the closed formula")
    return folded


@dataclass(frozen=True)
class ResidualReport:
    """Max residuals of a sampled certificate check; nonpositive means no violation found."""

    max_a1: float
    max_a2: float
    max_a3: float
    samples: int

    # families where the conditions hold with equality leave rounding noise
    TOL = 1e-9

    @property
    def ok(self) -> bool:
        return max(self.max_a1, self.max_a2, self.max_a3) <= self.TOL


def verify_near_homogeneity(model, data, M: int, p: NonnegPoly, q: NonnegPoly,
                            samples: int = 100, radius: float = 3.0,
                            seed: int = 0) -> ResidualReport:
    """Sampled check of the single-argument near-M-homogeneity conditions.

    (A1) |<grad f, theta> - M f| <= p'(||theta||)
    (A2) ||grad f|| <= q'(||theta||)
    (A3) |f| <= q(||theta||)

    Reported as "no violation found on N samples", never as proof.
    """
    if p.degree > M and not p.is_zero():
        raise ValueError("deg p must be <= M")
    if q.degree > M and not q.is_zero():
        raise ValueError("deg q must be <= M")
    rng = np.random.default_rng(seed)
    dp, dq = p.derivative(), q.derivative()
    a1 = a2 = a3 = -math.inf
    for _ in range(samples):
        theta = rng.standard_normal(model.dim)
        nrm = np.linalg.norm(theta)
        if nrm > 0:
            theta *= (radius * rng.random() ** (1.0 / model.dim)) / nrm
        rho = float(np.linalg.norm(theta))
        for x in data.points():
            f = model.forward(theta, x)
            g = model.grad_params(theta, x)
            a1 = max(a1, abs(float(g @ theta) - M * f) - dp.eval(rho))
            a2 = max(a2, float(np.linalg.norm(g)) - dq.eval(rho))
            a3 = max(a3, abs(f) - q.eval(rho))
    return ResidualReport(max_a1=a1, max_a2=a2, max_a3=a3, samples=samples)


@dataclass(frozen=True)
class DualResidualReport:
    max_b1_param: float
    max_b1_input: float
    max_b2_param: float
    max_b2_input: float
    max_b3: float
    samples: int

    TOL = 1e-9

    @property
    def ok(self) -> bool:
        return max(self.max_b1_param, self.max_b1_input,
                   self.max_b2_param, self.max_b2_input, self.max_b3) <= self.TOL


def verify_dual_homogeneity(block, order: OrderDescriptor, samples: int = 100,
                            radius_theta: float = 2.0, radius_x: float = 2.0,
                            seed: int = 0) -> DualResidualReport:
    """Sampled check of the two-argument conditions with the four-envelope products.

    (B1) |<J_theta, theta> - M1 s| <= p'(rho) r(||x||),
         |<J_x, x> - M2 s|        <= p(rho) r'(||x||)
    (B2) ||J_theta|| <= q'(rho) t(||x||), ||J_x|| <= q(rho) t'(||x||)
    (B3) ||s|| <= q(rho) t(||x||)
    """
    rng = np.random.default_rng(seed)
    p, q, r, t = order.env_p, order.env_q, order.env_r, order.env_t
    dp, dq, dr, dt = p.derivative(), q.derivative(), r.derivative(), t.derivative()
    M1, M2 = order.m_param, order.m_input
    b1p = b1x = b2p = b2x = b3 = -math.inf
    has_params = block.n_params > 0
    for _ in range(samples):
        w = (radius_theta * rng.uniform(0.1, 1.0) * _unit(rng, block.n_params)
             if has_params else np.zeros(0))
        x = radius_x * rng.uniform(0.1, 1.0) * _unit(rng, block.d_in)
        rho, xn = float(np.linalg.norm(w)), float(np.linalg.norm(x))
        s = block.forward(w, x)
        jw, jx = _full_jacobians(block, w, x)
        if has_params:
            b1p = max(b1p, float(np.linalg.norm(jw @ w - M1 * s)) - dp.eval(rho) * r.eval(xn))
            b2p = max(b2p, float(np.linalg.norm(jw, 2)) - dq.eval(rho) * t.eval(xn))
        else:
            b1p = max(b1p, float(np.linalg.norm(M1 * np.asarray(s))))
            b2p = max(b2p, 0.0)
        b1x = max(b1x, float(np.linalg.norm(jx @ x - M2 * s)) - p.eval(rho) * dr.eval(xn))
        b2x = max(b2x, float(np.linalg.norm(jx, 2)) - q.eval(rho) * dt.eval(xn))
        b3 = max(b3, float(np.linalg.norm(s)) - q.eval(rho) * t.eval(xn))
    return DualResidualReport(max_b1_param=b1p, max_b1_input=b1x,
                              max_b2_param=b2p, max_b2_input=b2x,
                              max_b3=b3, samples=samples)


def _unit(rng, n):
    v = rng.standard_normal(n)
    nv = np.linalg.norm(v)
    return v / nv if nv > 0 else np.eye(n)[0]


def _full_jacobians(block, w, x):
    """Assemble dense Jacobians from the block's VJP, one cotangent basis row at a time."""
    d_out = block.d_out
    jw = np.zeros((d_out, block.n_params))
    jx = np.zeros((d_out, block.d_in))
    for i in range(d_out):
        u = np.zeros(d_out)
        u[i] = 1.0
        gw, gx = block.vjp(w, x, u)
        jw[i] = gw
        jx[i] = gx
    return jw, jx
