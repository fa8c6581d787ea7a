"""Nonnegative-coefficient polynomials and the p_a offset constructions.

Coefficients are stored lowest degree first: coeffs[i] multiplies x**i.
All polynomials here live on [0, inf); evaluation rejects negative inputs.
Coefficients are plain doubles -- every downstream check carries an explicit
tolerance, so exact rational arithmetic would buy nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def _trimmed(coeffs):
    out = [float(c) for c in coeffs]
    while len(out) > 1 and out[-1] == 0.0:
        out.pop()
    if not out:
        out = [0.0]
    return tuple(out)


@dataclass(frozen=True)
class NonnegPoly:
    """Univariate polynomial with nonnegative coefficients."""

    coeffs: tuple = (0.0,)

    def __post_init__(self):
        coeffs = _trimmed(self.coeffs)
        for c in coeffs:
            if c < 0.0 or not math.isfinite(c):
                raise ValueError(f"coefficient {c} must be a finite nonnegative real")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        # degree of the zero polynomial is 0 by convention
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0):
            raise ValueError("polynomial domain is [0, inf)")
        # Horner, lowest degree first means iterate reversed
        acc = np.zeros_like(x)
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return float(acc) if acc.ndim == 0 else acc

    def derivative(self) -> "NonnegPoly":
        if len(self.coeffs) == 1:
            return NonnegPoly((0.0,))
        return NonnegPoly(tuple((i + 1) * c for i, c in enumerate(self.coeffs[1:])))

    def antiderivative(self) -> "NonnegPoly":
        """Antiderivative with zero constant term."""
        return NonnegPoly((0.0,) + tuple(c / (i + 1) for i, c in enumerate(self.coeffs)))

    def __add__(self, other: "NonnegPoly") -> "NonnegPoly":
        a, b = self.coeffs, other.coeffs
        n = max(len(a), len(b))
        return NonnegPoly(tuple(
            (a[i] if i < len(a) else 0.0) + (b[i] if i < len(b) else 0.0)
            for i in range(n)))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            if other < 0:
                raise ValueError("scale must be nonnegative")
            return NonnegPoly(tuple(c * other for c in self.coeffs))
        out = [0.0] * (len(self.coeffs) + len(other.coeffs) - 1)
        for i, a in enumerate(self.coeffs):
            for j, b in enumerate(other.coeffs):
                out[i + j] += a * b
        return NonnegPoly(tuple(out))

    __rmul__ = __mul__

    def compose(self, inner: "NonnegPoly") -> "NonnegPoly":
        """self(inner(x)); stays nonnegative-coefficient."""
        acc = NonnegPoly((0.0,))
        for c in reversed(self.coeffs):
            acc = acc * inner + NonnegPoly((c,))
        return acc

    def support_indicator(self) -> "NonnegPoly":
        """u(x) = sum of x^i over the support of self.

        For a, b >= 0: self(a*b) <= self(a) * u(b), the split bound used by the
        envelope composition rules.
        """
        return NonnegPoly(tuple(1.0 if c > 0 else 0.0 for c in self.coeffs))

    def coeff_max(self, other: "NonnegPoly") -> "NonnegPoly":
        a, b = self.coeffs, other.coeffs
        n = max(len(a), len(b))
        return NonnegPoly(tuple(
            max(a[i] if i < len(a) else 0.0, b[i] if i < len(b) else 0.0)
            for i in range(n)))

    def to_json(self) -> str:
        # serialized as a JSON array of coefficients, lowest degree first
        return json.dumps(list(self.coeffs))

    @classmethod
    def from_json(cls, s: str) -> "NonnegPoly":
        return cls(tuple(json.loads(s)))

    @classmethod
    def zero(cls) -> "NonnegPoly":
        return cls((0.0,))

    @classmethod
    def x(cls) -> "NonnegPoly":
        return cls((0.0, 1.0))


@dataclass(frozen=True)
class PiecewisePoly:
    """Piecewise polynomial over [0, inf); pieces are closed-open intervals."""

    pieces: tuple = field(default_factory=lambda: ((0.0, math.inf, NonnegPoly.zero()),))

    def __post_init__(self):
        pieces = tuple((float(lo), float(hi), p) for lo, hi, p in self.pieces)
        if pieces[0][0] != 0.0 or pieces[-1][1] != math.inf:
            raise ValueError("pieces must cover [0, inf)")
        for (lo, hi, _), (lo2, _, _) in zip(pieces, pieces[1:]):
            if hi != lo2:
                raise ValueError("pieces must tile without gaps or overlap")
        object.__setattr__(self, "pieces", pieces)

    def piece_at(self, x: float) -> NonnegPoly:
        for lo, hi, p in self.pieces:
            if lo <= x < hi:
                return p
        return self.pieces[-1][2]

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(xs < 0.0):
            raise ValueError("polynomial domain is [0, inf)")
        out = np.empty_like(xs)
        for lo, hi, p in self.pieces:
            mask = (xs >= lo) & (xs < hi)
            if mask.any():
                out[mask] = p.eval(xs[mask])
        return float(out[0]) if np.asarray(x).ndim == 0 else out

    def derivative(self) -> "PiecewisePoly":
        return PiecewisePoly(tuple((lo, hi, p.derivative()) for lo, hi, p in self.pieces))

    def breakpoint_jumps(self):
        """|left limit - right value| at each interior breakpoint."""
        jumps = []
        for (_, hi, left), (_, _, right) in zip(self.pieces, self.pieces[1:]):
            jumps.append((hi, abs(left.eval(hi) - right.eval(hi))))
        return jumps

    def is_continuous(self, tol: float = 1e-12) -> bool:
        return all(j <= tol * (1.0 + abs(self.eval(x))) for x, j in self.breakpoint_jumps())

    def to_json(self) -> str:
        return json.dumps([[lo, None if math.isinf(hi) else hi, list(p.coeffs)]
                           for lo, hi, p in self.pieces])

    @classmethod
    def from_json(cls, s: str) -> "PiecewisePoly":
        raw = json.loads(s)
        return cls(tuple((lo, math.inf if hi is None else hi, NonnegPoly(tuple(c)))
                         for lo, hi, c in raw))


def build_pa_gf(p: NonnegPoly, M: int) -> NonnegPoly:
    """Offset polynomial for gradient flow.

    p_a(x) = sum_{i=1}^{M-1} (i+1) a_{i+1} / (M-i) * x^i + a_1 / (M - 1/2),
    where p(x) = sum a_i x^i. Requires deg p <= M.
    """
    if M < 1:
        raise ValueError("M must be a positive integer")
    if p.degree > M and not p.is_zero():
        raise ValueError(f"deg p = {p.degree} exceeds M = {M}")
    a = list(p.coeffs) + [0.0] * (M + 1 - len(p.coeffs))
    out = [0.0] * max(M, 1)
    out[0] = a[1] / (M - 0.5)
    for i in range(1, M):
        out[i] = (i + 1) * a[i + 1] / (M - i)
    return NonnegPoly(tuple(out))


def build_pa_gd(p: NonnegPoly, M: int) -> PiecewisePoly:
    """Offset for gradient descent: two branches for M >= 2, constant for M = 1.

    On [0, 1) the linear term of the GF construction is replaced by
    (2 a_2 / (M-1)) * (x^2 + 1) / 2, which keeps the defining inequality
    strict near the origin.
    """
    if M < 1:
        raise ValueError("M must be a positive integer")
    if p.degree > M and not p.is_zero():
        raise ValueError(f"deg p = {p.degree} exceeds M = {M}")
    a = list(p.coeffs) + [0.0] * (M + 1 - len(p.coeffs))
    if M == 1:
        const = NonnegPoly((a[1] / (M - 0.5),))
        return PiecewisePoly(((0.0, math.inf, const),))
    upper = build_pa_gf(p, M)
    c1 = 2.0 * a[2] / (M - 1)
    low = list(upper.coeffs) + [0.0] * max(0, 3 - len(upper.coeffs))
    low[1] = 0.0                     # drop the linear term ...
    low[0] += c1 / 2.0               # ... and add c1 * (x^2 + 1) / 2
    low[2] += c1 / 2.0
    lower = NonnegPoly(tuple(low))
    return PiecewisePoly(((0.0, 1.0, lower), (1.0, math.inf, upper)))


def default_grid() -> np.ndarray:
    """256 log-spaced points in [1e-3, 1e3] plus 0 and 1 (covers both GD branches)."""
    g = np.logspace(-3.0, 3.0, 256)
    return np.unique(np.concatenate([[0.0, 1.0], g]))


SCALED_TOL = 1e-12


@dataclass(frozen=True)
class PaInequalityReport:
    max_residual: float          # raw worst value of p_a'(x) x + p'(x) - M p_a(x)
    max_scaled_residual: float   # same, divided by the magnitude of the terms
    worst_x: float
    n_points: int

    @property
    def ok(self) -> bool:
        # the analytic residual is <= 0; at large x the three terms reach 1e9
        # and cancellation leaves noise of order eps * scale, so certification
        # is relative to the term magnitude
        return self.max_scaled_residual <= SCALED_TOL


def check_pa_inequality(p: NonnegPoly, M: int, grid=None, variant: str = "gf") -> PaInequalityReport:
    """Max over the grid of p_a'(x) x + p'(x) - M p_a(x); nonpositive certifies."""
    if grid is None:
        grid = default_grid()
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0.0):
        raise ValueError("grid points must be nonnegative")
    if variant == "gf":
        pa = build_pa_gf(p, M)
    elif variant == "gd":
        pa = build_pa_gd(p, M)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    dp = p.derivative()
    dpa = pa.derivative()
    t1 = dpa.eval(grid) * grid
    t2 = dp.eval(grid)
    t3 = M * pa.eval(grid)
    res = np.atleast_1d(t1 + t2 - t3)
    scale = np.atleast_1d(np.abs(t1) + np.abs(t2) + np.abs(t3)) + 1.0
    scaled = res / scale
    k = int(np.argmax(scaled))
    return PaInequalityReport(max_residual=float(np.max(res)),
                              max_scaled_residual=float(scaled[k]),
                              worst_x=float(grid[k]), n_points=len(grid))
