"""Composed block networks, exact parameter gradients, and the exponential loss.

No autodiff tape: each block ships a hand-derived VJP (vector-Jacobian
product) for both its parameters and its input. Activation kinks use the
right-derivative selection everywhere (value 1 for ReLU at 0), recorded in
run metadata by the dynamics module.

All loss-level diagnostics are carried in the log domain so trajectories
survive L ~ 1e-300 regimes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

KINK_CONVENTION = "right-derivative"

_erf = np.vectorize(math.erf)


# ---------------------------------------------------------------------------
# activations, value + right-derivative

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def act_value(name, z, alpha=0.01):
    z = np.asarray(z, dtype=float)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z >= 0, z, alpha * z)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    if name == "gelu":
        return 0.5 * z * (1.0 + _erf(z / math.sqrt(2.0)))   # exact erf form
    if name in ("swish", "silu"):
        return z * _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def act_deriv(name, z, alpha=0.01):
    z = np.asarray(z, dtype=float)
    if name == "relu":
        return np.where(z >= 0, 1.0, 0.0)        # right derivative at the kink
    if name == "leaky_relu":
        return np.where(z >= 0, 1.0, alpha)
    if name == "softplus":
        return _sigmoid(z)
    if name == "gelu":
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        return 0.5 * (1.0 + _erf(z / math.sqrt(2.0))) + z * pdf
    if name in ("swish", "silu"):
        s = _sigmoid(z)
        return s + z * s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# blocks

class Block:
    """Forward map plus parameter/input Jacobian actions on flat vectors."""

    d_in: int
    d_out: int
    n_params: int

    def forward(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, w: np.ndarray, x: np.ndarray, u: np.ndarray):
        """Return (u^T ds/dw, u^T ds/dx)."""
        raise NotImplementedError


class LinearBlock(Block):
    """s(A, b; x) = A x + b. Parameters flattened as [A.ravel(), b]."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        self.d_in, self.d_out, self.bias = d_in, d_out, bias
        self.n_params = d_in * d_out + (d_out if bias else 0)

    def _unpack(self, w):
        A = w[: self.d_in * self.d_out].reshape(self.d_out, self.d_in)
        b = w[self.d_in * self.d_out:] if self.bias else 0.0
        return A, b

    def forward(self, w, x):
        A, b = self._unpack(w)
        return A @ x + b

    def vjp(self, w, x, u):
        A, _ = self._unpack(w)
        gA = np.outer(u, x).ravel()
        gw = np.concatenate([gA, u]) if self.bias else gA
        return gw, A.T @ u


class ActPowBlock(Block):
    """Elementwise phi(z)^k; no parameters."""

    def __init__(self, activation: str, power: int, dim: int, alpha: float = 0.01):
        self.activation, self.power, self.alpha = activation, power, alpha
        self.d_in = self.d_out = dim
        self.n_params = 0

    def forward(self, w, x):
        return act_value(self.activation, x, self.alpha) ** self.power

    def vjp(self, w, x, u):
        v = act_value(self.activation, x, self.alpha)
        d = act_deriv(self.activation, x, self.alpha)
        if self.power == 1:
            gx = u * d
        else:
            gx = u * self.power * v ** (self.power - 1) * d
        return np.zeros(0), gx


class AvgPoolBlock(Block):
    """Mean over the input vector; stand-in for pooling layers."""

    def __init__(self, dim: int):
        self.d_in, self.d_out, self.n_params = dim, 1, 0

    def forward(self, w, x):
        return np.array([np.mean(x)])

    def vjp(self, w, x, u):
        return np.zeros(0), np.full(self.d_in, u[0] / self.d_in)


class ResidualBlock(Block):
    """x + inner(x); requires inner.d_in == inner.d_out."""

    def __init__(self, inner: Block):
        if inner.d_in != inner.d_out:
            raise ValueError("residual wrapping needs matching dimensions")
        self.inner = inner
        self.d_in = self.d_out = inner.d_in
        self.n_params = inner.n_params

    def forward(self, w, x):
        return x + self.inner.forward(w, x)

    def vjp(self, w, x, u):
        gw, gx = self.inner.vjp(w, x, u)
        return gw, gx + u


class SwigluBlock(Block):
    """Swish_beta(W x + b) * (V x + c), elementwise; params [W, b, V, c]."""

    def __init__(self, d_in: int, d_out: int, beta: float = 1.0):
        self.d_in, self.d_out, self.beta = d_in, d_out, beta
        self._m = d_in * d_out
        self.n_params = 2 * (self._m + d_out)

    def _unpack(self, w):
        m, d = self._m, self.d_out
        W = w[:m].reshape(d, self.d_in)
        b = w[m:m + d]
        V = w[m + d:2 * m + d].reshape(d, self.d_in)
        c = w[2 * m + d:]
        return W, b, V, c

    def forward(self, w, x):
        W, b, V, c = self._unpack(w)
        z1 = W @ x + b
        z2 = V @ x + c
        return z1 * _sigmoid(self.beta * z1) * z2

    def vjp(self, w, x, u):
        W, b, V, c = self._unpack(w)
        z1 = W @ x + b
        z2 = V @ x + c
        s = _sigmoid(self.beta * z1)
        sw = z1 * s                                   # swish value
        dsw = s + self.beta * z1 * s * (1.0 - s)      # swish derivative
        du1 = u * z2 * dsw
        du2 = u * sw
        gW = np.outer(du1, x).ravel()
        gV = np.outer(du2, x).ravel()
        gx = W.T @ du1 + V.T @ du2
        return np.concatenate([gW, du1, gV, du2]), gx


class LinearAttentionBlock(Block):
    """H + W_pv H (H^T W_kq H) / ctx for token matrix H (d x ctx), flattened."""

    def __init__(self, d: int, ctx: int):
        self.d, self.ctx = d, ctx
        self.d_in = self.d_out = d * ctx
        self.n_params = 2 * d * d

    def _unpack(self, w, x):
        d = self.d
        W1 = w[:d * d].reshape(d, d)
        W2 = w[d * d:].reshape(d, d)
        H = x.reshape(d, self.ctx)
        return W1, W2, H

    def forward(self, w, x):
        W1, W2, H = self._unpack(w, x)
        A = H.T @ W2 @ H / self.ctx
        return (H + W1 @ H @ A).ravel()

    def vjp(self, w, x, u):
        W1, W2, H = self._unpack(w, x)
        U = u.reshape(self.d, self.ctx)
        A = H.T @ W2 @ H / self.ctx
        B = (W1 @ H).T @ U
        gW1 = (U @ A.T @ H.T).ravel()
        gW2 = (H @ B @ H.T).ravel() / self.ctx
        gH = U + W1.T @ U @ A.T + (W2 @ H @ B.T + W2.T @ H @ B) / self.ctx
        return np.concatenate([gW1, gW2]), gH.ravel()


class ReluAttentionBlock(Block):
    """H + P V H relu(H^T K Q H / (sqrt(d) ctx)); params [P, V, K, Q]."""

    def __init__(self, d: int, ctx: int):
        self.d, self.ctx = d, ctx
        self.d_in = self.d_out = d * ctx
        self.n_params = 4 * d * d
        self.scale = math.sqrt(d) * ctx

    def _unpack(self, w, x):
        d = self.d
        mats = [w[i * d * d:(i + 1) * d * d].reshape(d, d) for i in range(4)]
        return mats, x.reshape(d, self.ctx)

    def forward(self, w, x):
        (P, V, K, Q), H = self._unpack(w, x)
        S = H.T @ K @ Q @ H / self.scale
        return (H + P @ V @ H @ np.maximum(S, 0.0)).ravel()

    def vjp(self, w, x, u):
        (P, V, K, Q), H = self._unpack(w, x)
        U = u.reshape(self.d, self.ctx)
        C = K @ Q
        S = H.T @ C @ H / self.scale
        R = np.maximum(S, 0.0)
        VH = V @ H
        gP = U @ (VH @ R).T
        gV = P.T @ U @ (H @ R).T
        B = (P @ VH).T @ U
        Bt = B * (S >= 0)                 # right derivative at the kink
        HBH = H @ Bt @ H.T / self.scale
        gK = HBH @ Q.T
        gQ = K.T @ HBH
        gH = (U + (P @ V).T @ U @ R.T
              + (C @ H @ Bt.T + C.T @ H @ Bt) / self.scale)
        gw = np.concatenate([gP.ravel(), gV.ravel(), gK.ravel(), gQ.ravel()])
        return gw, gH.ravel()


# ---------------------------------------------------------------------------
# models

class NetworkModel:
    """Ordered composition of blocks, outermost first; scalar output required
    for the loss-level operations."""

    def __init__(self, blocks: Sequence[Block]):
        if not blocks:
            raise ValueError("need at least one block")
        for outer, inner in zip(blocks, blocks[1:]):
            if outer.d_in != inner.d_out:
                raise ValueError(
                    f"dimension mismatch: inner d_out={inner.d_out}, outer d_in={outer.d_in}")
        self.blocks = list(blocks)
        self.slices: List[slice] = []
        off = 0
        for b in blocks:
            self.slices.append(slice(off, off + b.n_params))
            off += b.n_params
        self.dim = off
        self.d_in = blocks[-1].d_in

    @property
    def scalar_output(self) -> bool:
        return self.blocks[0].d_out == 1

    def _forward_trace(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        vals = [np.asarray(x, dtype=float)]
        for b, sl in zip(reversed(self.blocks), reversed(self.slices)):
            vals.append(np.asarray(b.forward(theta[sl], vals[-1]), dtype=float))
        return vals  # vals[k] is the input to block L-1-k; vals[-1] is the output

    def forward(self, theta, x) -> float:
        out = self._forward_trace(theta, x)[-1]
        if out.size != 1:
            raise ValueError("scalar output required; compose a pooling or linear head")
        return float(out.ravel()[0])

    def forward_vector(self, theta, x) -> np.ndarray:
        return self._forward_trace(theta, x)[-1]

    def grad_params(self, theta, x) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        vals = self._forward_trace(theta, x)
        if vals[-1].size != 1:
            raise ValueError("scalar output required")
        grad = np.zeros(self.dim)
        u = np.ones(1)
        # walk outermost -> innermost; vals holds inputs innermost-first
        for i, (b, sl) in enumerate(zip(self.blocks, self.slices)):
            xin = vals[len(self.blocks) - 1 - i]
            gw, u = b.vjp(theta[sl], xin, u)
            grad[sl] = gw
        return grad


class ScalarPowerModel:
    """f(theta) = theta^M + M |theta|^{M-1} on a single scalar parameter.

    The input is ignored; the sample only contributes its label. This is the
    counter-example family showing strong separability is not optional.
    """

    def __init__(self, M: int = 3):
        if M < 2:
            raise ValueError("M >= 2 required")
        self.M = M
        self.dim = 1
        self.d_in = 1

    def forward(self, theta, x) -> float:
        t = float(np.asarray(theta).ravel()[0])
        return t ** self.M + self.M * abs(t) ** (self.M - 1)

    def grad_params(self, theta, x) -> np.ndarray:
        t = float(np.asarray(theta).ravel()[0])
        M = self.M
        sign = 1.0 if t >= 0 else -1.0            # right derivative at 0
        if M == 2:
            g = 2.0 * t + 2.0 * sign
        else:
            g = M * t ** (M - 1) + M * (M - 1) * abs(t) ** (M - 2) * sign
        return np.array([g])


class ToyTwoLayerModel:
    """f(theta; x) = w1.x + w2.x + a1 phi(w1.x) - a2 phi(-w2.x), leaky ReLU phi.

    Parameters flatten as [w1, w2, a1, a2]; dim = 2 d + 2.
    """

    def __init__(self, d: int, alpha_l: float = 0.5):
        self.d, self.alpha_l = d, alpha_l
        self.dim = 2 * d + 2
        self.d_in = d
        self.weak_gradient = True   # gradient homogenizes along rays

    def _unpack(self, theta):
        d = self.d
        return theta[:d], theta[d:2 * d], float(theta[2 * d]), float(theta[2 * d + 1])

    def _phi(self, z):
        return z if z >= 0 else self.alpha_l * z

    def _dphi(self, z):
        return 1.0 if z >= 0 else self.alpha_l

    def forward(self, theta, x) -> float:
        w1, w2, a1, a2 = self._unpack(np.asarray(theta, dtype=float))
        z1 = float(w1 @ x)
        z2 = float(w2 @ x)
        return z1 + z2 + a1 * self._phi(z1) - a2 * self._phi(-z2)

    def grad_params(self, theta, x) -> np.ndarray:
        w1, w2, a1, a2 = self._unpack(np.asarray(theta, dtype=float))
        x = np.asarray(x, dtype=float)
        z1 = float(w1 @ x)
        z2 = float(w2 @ x)
        gw1 = (1.0 + a1 * self._dphi(z1)) * x
        gw2 = (1.0 + a2 * self._dphi(-z2)) * x
        return np.concatenate([gw1, gw2, [self._phi(z1)], [-self._phi(-z2)]])


# ---------------------------------------------------------------------------
# dataset and loss

@dataclass
class Dataset:
    X: np.ndarray   # (n, d)
    y: np.ndarray   # (n,), labels in {-1, +1}

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if self.X.shape[0] < 1:
            raise ValueError("need at least one sample")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be +-1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def points(self):
        for i in range(self.n):
            yield self.X[i]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x{j + 1}" for j in range(self.d)] + ["y"])
            for xi, yi in zip(self.X, self.y):
                wr.writerow(list(xi) + [int(yi)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "y":
            raise ValueError("last CSV column must be y")
        arr = np.array([[float(v) for v in row] for row in body])
        return cls(X=arr[:, :-1], y=arr[:, -1])


def _logsumexp(a):
    a = np.asarray(a, dtype=float)
    m = np.max(a)
    if not np.isfinite(m):
        return m
    return float(m + math.log(np.sum(np.exp(a - m))))


@dataclass
class LossEval:
    loss: float
    log_loss: float
    per_sample_margins: np.ndarray
    min_margin: float

    def __post_init__(self):
        # phi(L) <= min margin <= log(1/L), checked on every construction
        n = len(self.per_sample_margins)
        phi = -math.log(n) - self.log_loss
        tol = 1e-9 * (1.0 + abs(self.min_margin))
        if not (phi - tol <= self.min_margin <= -self.log_loss + tol):
            raise AssertionError(
                f"margin bracket violated: phi={phi}, min={self.min_margin}, "
                f"log(1/L)={-self.log_loss}")


def margins(model, theta, data: Dataset) -> np.ndarray:
    return np.array([yi * model.forward(theta, xi)
                     for xi, yi in zip(data.X, data.y)])


def loss(model, theta, data: Dataset) -> LossEval:
    m = margins(model, theta, data)
    log_l = _logsumexp(-m) - math.log(data.n)
    return LossEval(loss=float(np.exp(log_l)) if log_l < 700 else math.inf,
                    log_loss=log_l,
                    per_sample_margins=m,
                    min_margin=float(np.min(m)))


def loss_grad(model, theta, data: Dataset):
    """Gradient of the empirical exponential risk.

    Returns (grad, weights, eval) where weights are the softmax-normalized
    e^{-margin_i} / (n L) factors; grad = -L * sum_i weights_i y_i grad f_i.
    """
    ev = loss(model, theta, data)
    m = ev.per_sample_margins
    w = np.exp(-m - _logsumexp(-m))
    acc = np.zeros(model.dim)
    for wi, xi, yi in zip(w, data.X, data.y):
        if wi == 0.0:
            continue
        acc += wi * yi * model.grad_params(theta, xi)
    return -ev.loss * acc, w, ev


@dataclass
class HessianProbeReport:
    max_ratio: float
    directions: int

    @property
    def ok(self) -> bool:
        return self.max_ratio <= 1.0


def hessian_bound_probe(model, theta, data: Dataset, directions: int, A: float,
                        M: int, h: float = 1e-4, seed: int = 0) -> HessianProbeReport:
    """Central-difference directional second derivatives of f against
    A (rho^{M-2} + 1), or A alone when M = 1."""
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta, dtype=float)
    rho = float(np.linalg.norm(theta))
    bound = A if M == 1 else A * (rho ** (M - 2) + 1.0)
    worst = 0.0
    for _ in range(directions):
        u = rng.standard_normal(model.dim)
        u /= np.linalg.norm(u)
        for x in data.points():
            d2 = (model.forward(theta + h * u, x) - 2.0 * model.forward(theta, x)
                  + model.forward(theta - h * u, x)) / (h * h)
            worst = max(worst, abs(d2) / bound)
    return HessianProbeReport(max_ratio=worst, directions=directions)
