"""Preset scalar function families with exact derivative stacks.

Model coefficients (drift, jump rate, jump amplitude factors, jump size
bounds, measure densities) are built from a closed catalogue of families.
Each family evaluates its own derivatives of every order analytically, so
assumption audits and the inverse-map calculus never see finite-difference
noise.  All evaluations broadcast over numpy arrays.

The jump amplitude h(y, z) is a sum of separable terms f(y) * g(z)
(`JumpAmplitude`), which covers every model this toolkit ships, including the
degenerate rate-one counterexample with an indicator z-factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .calculus import _compose_values
from .errors import ContractError

_STACK_MAX = 16  # hard cap on requested derivative order


def _as_array(x):
    return np.asarray(x, dtype=float)


class Function1D:
    """One scalar function with analytic derivatives of every order.

    ``smooth_order`` is the largest derivative order that is globally
    continuous (None means infinitely smooth); audits refuse to certify
    smoothness budgets beyond it.
    """

    smooth_order: int | None = None

    def value(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, l: int):  # pragma: no cover - abstract
        raise NotImplementedError

    def stack(self, x, order: int) -> np.ndarray:
        """Derivatives 0..order, order axis first."""
        if order < 0 or order > _STACK_MAX:
            raise ContractError(f"stack order {order} outside [0, {_STACK_MAX}]")
        x = _as_array(x)
        return np.stack([_as_array(self.derivative(x, l)) for l in range(order + 1)])

    @property
    def is_zero(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"family": type(self).__name__}


@dataclass(frozen=True)
class Affine(Function1D):
    """a0 + a1 * x."""

    a0: float
    a1: float = 0.0

    def derivative(self, x, l: int):
        x = _as_array(x)
        if l == 0:
            return self.a0 + self.a1 * x
        if l == 1:
            return np.full_like(x, self.a1)
        return np.zeros_like(x)

    @property
    def is_zero(self) -> bool:
        return self.a0 == 0.0 and self.a1 == 0.0

    def describe(self) -> dict:
        return {"family": "affine", "a0": self.a0, "a1": self.a1}


def constant(c: float) -> Affine:
    return Affine(float(c), 0.0)


@dataclass(frozen=True)
class Sinusoidal(Function1D):
    """amp * sin(freq * x + phase)."""

    amp: float
    freq: float = 1.0
    phase: float = 0.0

    def derivative(self, x, l: int):
        x = _as_array(x)
        return self.amp * self.freq**l * np.sin(self.freq * x + self.phase + l * np.pi / 2.0)

    def describe(self) -> dict:
        return {"family": "sinusoidal", "amp": self.amp, "freq": self.freq, "phase": self.phase}


@dataclass(frozen=True)
class ExpDecay(Function1D):
    """amp * exp(-rate * x)."""

    amp: float
    rate: float = 1.0

    def derivative(self, x, l: int):
        x = _as_array(x)
        return self.amp * (-self.rate) ** l * np.exp(-self.rate * x)

    def describe(self) -> dict:
        return {"family": "exp_decay", "amp": self.amp, "rate": self.rate}


@dataclass(frozen=True)
class InversePower(Function1D):
    """amp * (offset + x) ** (-power), the half-line power-law tail."""

    amp: float
    power: float
    offset: float = 1.0

    def derivative(self, x, l: int):
        x = _as_array(x)
        coef = self.amp
        for j in range(l):
            coef *= -self.power - j
        return coef * (self.offset + x) ** (-self.power - l)

    def describe(self) -> dict:
        return {
            "family": "inverse_power",
            "amp": self.amp,
            "power": self.power,
            "offset": self.offset,
        }


@dataclass(frozen=True)
class IsoPower(Function1D):
    """amp * (1 + x**2) ** (-power / 2): a smooth whole-line power law."""

    amp: float
    power: float

    def derivative(self, x, l: int):
        x = _as_array(x)
        inner = np.zeros((l + 1,) + x.shape)
        inner[0] = 1.0 + x * x
        if l >= 1:
            inner[1] = 2.0 * x
        if l >= 2:
            inner[2] = 2.0
        u = inner[0]
        expo = -self.power / 2.0
        outer = np.empty_like(inner)
        coef = self.amp
        for r in range(l + 1):
            outer[r] = coef * u ** (expo - r)
            coef *= expo - r
        return _compose_values(outer, inner)[l]

    def describe(self) -> dict:
        return {"family": "iso_power", "amp": self.amp, "power": self.power}


@lru_cache(maxsize=None)
def _hermite_coeffs(l: int) -> tuple[float, ...]:
    """Coefficients of the l-th physicists' Hermite polynomial."""
    if l == 0:
        return (1.0,)
    if l == 1:
        return (0.0, 2.0)
    prev2 = np.array(_hermite_coeffs(l - 2))
    prev1 = np.array(_hermite_coeffs(l - 1))
    out = np.zeros(l + 1)
    out[1:] += 2.0 * prev1
    out[: l - 1] -= 2.0 * (l - 1) * prev2
    return tuple(out)


@dataclass(frozen=True)
class GaussBump(Function1D):
    """amp * exp(-((x - center) / width) ** 2)."""

    amp: float
    center: float = 0.0
    width: float = 1.0

    def derivative(self, x, l: int):
        x = _as_array(x)
        u = (x - self.center) / self.width
        herm = np.polynomial.polynomial.polyval(u, _hermite_coeffs(l))
        return self.amp * (-1.0 / self.width) ** l * herm * np.exp(-u * u)

    def describe(self) -> dict:
        return {
            "family": "gauss_bump",
            "amp": self.amp,
            "center": self.center,
            "width": self.width,
        }


@lru_cache(maxsize=None)
def _tanh_poly(l: int) -> tuple[float, ...]:
    """Coefficients (in t = tanh) of the polynomial P_l with
    d^l/dx^l tanh(x) = P_l(tanh(x)); P_0 = t, P_{l+1} = P_l'(t) (1 - t^2)."""
    if l == 0:
        return (0.0, 1.0)
    prev = np.array(_tanh_poly(l - 1))
    dp = np.polynomial.polynomial.polyder(prev)
    out = np.polynomial.polynomial.polysub(dp, np.polynomial.polynomial.polymul(dp, (0.0, 0.0, 1.0)))
    return tuple(out)


@dataclass(frozen=True)
class TanhSigmoid(Function1D):
    """amp * tanh(rate * x)."""

    amp: float
    rate: float = 1.0

    def derivative(self, x, l: int):
        x = _as_array(x)
        t = np.tanh(self.rate * x)
        val = np.polynomial.polynomial.polyval(t, _tanh_poly(l))
        return self.amp * self.rate**l * val

    def describe(self) -> dict:
        return {"family": "tanh", "amp": self.amp, "rate": self.rate}


@dataclass(frozen=True)
class StretchedExp(Function1D):
    """amp * exp(-rate * (offset + x) ** power)."""

    amp: float
    rate: float
    power: float
    offset: float = 1.0

    def derivative(self, x, l: int):
        x = _as_array(x)
        base = self.offset + x
        inner = np.empty((l + 1,) + x.shape)
        coef = -self.rate
        for r in range(l + 1):
            inner[r] = coef * base ** (self.power - r)
            coef *= self.power - r
        ev = self.amp * np.exp(inner[0])
        outer = np.stack([ev for _ in range(l + 1)])
        return _compose_values(outer, inner)[l]

    def describe(self) -> dict:
        return {
            "family": "stretched_exp",
            "amp": self.amp,
            "rate": self.rate,
            "power": self.power,
            "offset": self.offset,
        }


@dataclass(frozen=True)
class Indicator(Function1D):
    """Sharp indicator of [lo, hi); not smooth, derivative treated as zero.

    Only legitimate where z-regularity is irrelevant (simulation, slope and
    boundedness audits); smoothness certificates refuse it.
    """

    lo: float
    hi: float
    amp: float = 1.0

    smooth_order = -1

    def derivative(self, x, l: int):
        x = _as_array(x)
        if l == 0:
            return self.amp * ((x >= self.lo) & (x < self.hi)).astype(float)
        return np.zeros_like(x)

    def describe(self) -> dict:
        return {"family": "indicator", "lo": self.lo, "hi": self.hi, "amp": self.amp}


@lru_cache(maxsize=None)
def smoothstep_coefficients(order: int) -> tuple[float, ...]:
    """Polynomial coefficients of the degree 2*order+1 smoothstep on [0, 1].

    S(0) = 0, S(1) = 1, derivatives 1..order vanish at both ends, and
    S(1 - x) = 1 - S(x).
    """
    if order < 0:
        raise ContractError("smoothstep order must be >= 0")
    coeffs = np.zeros(2 * order + 2)
    for j in range(order + 1):
        coeffs[order + 1 + j] = comb(order + j, j) * comb(2 * order + 1, order - j) * (-1.0) ** j
    return tuple(coeffs)


def _smoothstep_derivative(u, order: int, l: int):
    """l-th derivative of the smoothstep of the given order, evaluated on
    u clipped to [0, 1] (callers mask the outside)."""
    poly = np.polynomial.polynomial.polyder(smoothstep_coefficients(order), l) if l else smoothstep_coefficients(order)
    return np.polynomial.polynomial.polyval(u, poly)


@dataclass(frozen=True)
class SmoothstepBump(Function1D):
    """Plateau bump: 0 outside [lo, hi], amp on [lo+ramp, hi-ramp], joined by
    smoothstep ramps of width ramp; globally C^order."""

    lo: float
    hi: float
    ramp: float = 1.0
    order: int = 3
    amp: float = 1.0

    def __post_init__(self):
        if self.hi - self.lo < 2.0 * self.ramp:
            raise ContractError("bump interval shorter than its two ramps")

    def derivative(self, x, l: int):
        x0 = _as_array(x)
        x = np.atleast_1d(x0)
        out = np.zeros_like(x)
        up = (x >= self.lo) & (x < self.lo + self.ramp)
        down = (x > self.hi - self.ramp) & (x <= self.hi)
        if np.any(up):
            u = (x[up] - self.lo) / self.ramp
            out[up] = self.amp * _smoothstep_derivative(u, self.order, l) / self.ramp**l
        if np.any(down):
            u = (self.hi - x[down]) / self.ramp
            out[down] = (
                self.amp * (-1.0) ** l * _smoothstep_derivative(u, self.order, l) / self.ramp**l
            )
        if l == 0:
            plateau = (x >= self.lo + self.ramp) & (x <= self.hi - self.ramp)
            out[plateau] = self.amp
        return out.reshape(x0.shape)

    @property
    def smooth_order(self) -> int:  # type: ignore[override]
        return self.order

    def describe(self) -> dict:
        return {
            "family": "smoothstep_bump",
            "lo": self.lo,
            "hi": self.hi,
            "ramp": self.ramp,
            "order": self.order,
            "amp": self.amp,
        }


class Tabulated(Function1D):
    """Natural cubic spline through tabulated nodes.

    Smooth to second order; derivatives above three vanish piecewise.  Useful
    for measured coefficients at low smoothness budgets.
    """

    smooth_order = 2

    def __init__(self, xs, ys):
        from scipy.interpolate import CubicSpline

        xs = _as_array(xs)
        ys = _as_array(ys)
        if xs.ndim != 1 or xs.size < 4 or xs.shape != ys.shape:
            raise ContractError("tabulated preset needs >= 4 matching nodes")
        self._xs = xs
        self._ys = ys
        self._spline = CubicSpline(xs, ys, bc_type="natural")

    def derivative(self, x, l: int):
        x = _as_array(x)
        if l > 3:
            return np.zeros_like(x)
        if l == 0:
            return _as_array(self._spline(x))
        return _as_array(self._spline.derivative(l)(x))

    def describe(self) -> dict:
        return {
            "family": "tabulated",
            "xs": [float(v) for v in self._xs],
            "ys": [float(v) for v in self._ys],
        }


class FunctionSum(Function1D):
    """Pointwise sum of functions."""

    def __init__(self, *parts: Function1D):
        if not parts:
            raise ContractError("empty function sum")
        self.parts = tuple(parts)

    def derivative(self, x, l: int):
        x = _as_array(x)
        out = np.zeros_like(x)
        for p in self.parts:
            out = out + p.derivative(x, l)
        return out

    @property
    def smooth_order(self) -> int | None:  # type: ignore[override]
        orders = [p.smooth_order for p in self.parts]
        finite = [o for o in orders if o is not None]
        return min(finite) if finite else None

    @property
    def is_zero(self) -> bool:
        return all(p.is_zero for p in self.parts)

    def describe(self) -> dict:
        return {"family": "sum", "parts": [p.describe() for p in self.parts]}


class FunctionProduct(Function1D):
    """Pointwise product of two functions (Leibniz stacks)."""

    def __init__(self, left: Function1D, right: Function1D):
        self.left = left
        self.right = right

    def derivative(self, x, l: int):
        x = _as_array(x)
        out = np.zeros_like(x)
        for j in range(l + 1):
            out = out + comb(l, j) * self.left.derivative(x, j) * self.right.derivative(x, l - j)
        return out

    @property
    def smooth_order(self) -> int | None:  # type: ignore[override]
        orders = [self.left.smooth_order, self.right.smooth_order]
        finite = [o for o in orders if o is not None]
        return min(finite) if finite else None

    @property
    def is_zero(self) -> bool:
        return self.left.is_zero or self.right.is_zero

    def describe(self) -> dict:
        return {"family": "product", "parts": [self.left.describe(), self.right.describe()]}


class JumpAmplitude:
    """Jump amplitude h(y, z) as a sum of separable terms f_j(y) * g_j(z).

    Provides the mixed derivative stacks the calculus and kernel layers need:
    pure y-derivatives 0..k+1 and pure z-derivatives 0..k+1.
    """

    def __init__(self, terms):
        terms = tuple((fy, gz) for fy, gz in terms)
        if not terms:
            raise ContractError("jump amplitude needs at least one term")
        self.terms = terms

    def value(self, y, z):
        return self.dy(y, z, 0)

    def dy(self, y, z, l: int):
        """l-th derivative in the state variable."""
        y = _as_array(y)
        z = _as_array(z)
        out = None
        for fy, gz in self.terms:
            piece = fy.derivative(y, l) * gz.value(z)
            out = piece if out is None else out + piece
        return out

    def dz(self, y, z, l: int):
        """l-th derivative in the mark variable."""
        y = _as_array(y)
        z = _as_array(z)
        out = None
        for fy, gz in self.terms:
            piece = fy.value(y) * gz.derivative(z, l)
            out = piece if out is None else out + piece
        return out

    def y_stack(self, y, z, order: int) -> np.ndarray:
        y = _as_array(y)
        z = _as_array(z)
        shape = np.broadcast_shapes(y.shape, z.shape)
        out = np.zeros((order + 1,) + shape)
        for l in range(order + 1):
            out[l] = self.dy(y, z, l)
        return out

    def z_stack(self, y, z, order: int) -> np.ndarray:
        y = _as_array(y)
        z = _as_array(z)
        shape = np.broadcast_shapes(y.shape, z.shape)
        out = np.zeros((order + 1,) + shape)
        for l in range(order + 1):
            out[l] = self.dz(y, z, l)
        return out

    @property
    def smooth_order_y(self) -> int | None:
        orders = [fy.smooth_order for fy, _ in self.terms]
        finite = [o for o in orders if o is not None]
        return min(finite) if finite else None

    @property
    def smooth_order_z(self) -> int | None:
        orders = [gz.smooth_order for _, gz in self.terms]
        finite = [o for o in orders if o is not None]
        return min(finite) if finite else None

    def describe(self) -> dict:
        return {
            "terms": [
                {"y": fy.describe(), "z": gz.describe()} for fy, gz in self.terms
            ]
        }
