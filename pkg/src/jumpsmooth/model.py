"""Model container and assumption audits for the jump dynamics.

A model is a drift b, a state-dependent jump rate gamma, a jump amplitude
h(y, z), a dominating jump-size bound eta(z), and a mark measure q(dz) on a
one-dimensional support.  The dynamics move the state by b between jumps and
by h(y, z) at the marks of a Poisson measure thinned at rate gamma(y).

Three audits gate everything downstream:

* `check_A` - smoothness budget: derivatives of b and gamma up to order k are
  finite on the audit grid, every y-derivative of h up to order k is dominated
  by eta, and eta is integrable (orders 1 and p) against q.
* `check_S` - slope condition: 1 + dh/dy >= c0 > 0, so the post-jump map is
  strictly increasing and invertible.
* `check_B` - inversion budget for the regularizing kernels: the rate-scaled
  integral of |dh/dz|^(-2k) over the growing mark windows stays below
  C (1 + |y|^p) e^(theta n).

Audits are grid-based by design: reports carry the witness points so a failed
certificate is reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateKernelError, InvalidModelError
from .presets import Affine, Function1D, JumpAmplitude, constant


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    return str(obj)


@dataclass(frozen=True)
class QuadratureSpec:
    """Panelled Gauss-Legendre budget for mark-space integrals.

    ``nodes`` is the total node count split over ``panels`` equal panels;
    ``horizon`` truncates infinite supports (defaults to a multiple of the
    largest declared truncation).
    """

    nodes: int = 256
    panels: int = 8
    horizon: float | None = None


def gauss_panels(lo: float, hi: float, nodes: int = 256, panels: int = 8):
    """Gauss-Legendre nodes and weights on [lo, hi] split into equal panels."""
    from scipy.special import roots_legendre

    if not (hi > lo):
        raise ContractError(f"empty quadrature interval [{lo}, {hi}]")
    panels = max(1, int(panels))
    per = max(2, int(math.ceil(nodes / panels)))
    x, w = roots_legendre(per)
    edges = np.linspace(lo, hi, panels + 1)
    zs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        zs.append(0.5 * (a + b) + half * x)
        ws.append(half * w)
    return np.concatenate(zs), np.concatenate(ws)


@dataclass(frozen=True)
class JumpMeasureSpec:
    """Mark measure q(dz): support interval, Lebesgue density, truncations.

    ``support`` may be half-infinite or the whole line.  ``truncations`` are
    increasing positive extents measured from the finite endpoint (or from 0
    on the whole line): the i-th truncation G_i is the support cut to that
    extent, and carries finite q-mass.  ``endpoint`` is the state-dependent
    start a(y) of the window where q dominates Lebesgue measure; it defaults
    to the finite endpoint of the support.
    """

    support: tuple[float, float]
    density: Function1D = field(default_factory=lambda: constant(1.0))
    truncations: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0)
    endpoint: Function1D | None = None

    def __post_init__(self):
        lo, hi = self.support
        if not (hi > lo):
            raise ContractError("mark support must be a nonempty interval")
        if math.isinf(lo) and math.isinf(hi):
            pass
        elif math.isinf(lo) == math.isinf(hi):
            raise ContractError("mark support must be half-infinite or the whole line")
        ext = tuple(float(t) for t in self.truncations)
        if not ext or any(t <= 0 for t in ext) or any(
            b <= a for a, b in zip(ext[:-1], ext[1:])
        ):
            raise ContractError("truncations must be positive and strictly increasing")
        object.__setattr__(self, "truncations", ext)

    @property
    def orientation(self) -> str:
        lo, hi = self.support
        if math.isinf(lo) and math.isinf(hi):
            return "both"
        return "right" if math.isinf(hi) else "left"

    @property
    def anchor(self) -> float:
        """Finite endpoint of the support (0 on the whole line)."""
        lo, hi = self.support
        if self.orientation == "right":
            return lo
        if self.orientation == "left":
            return hi
        return 0.0

    def endpoint_fn(self) -> Function1D:
        return self.endpoint if self.endpoint is not None else constant(self.anchor)

    def trunc_interval(self, i: int) -> tuple[float, float]:
        """Finite interval of the i-th truncation (1-based index)."""
        if not (1 <= i <= len(self.truncations)):
            raise ContractError(
                f"truncation index {i} outside 1..{len(self.truncations)}"
            )
        ext = self.truncations[i - 1]
        if self.orientation == "right":
            return (self.anchor, self.anchor + ext)
        if self.orientation == "left":
            return (self.anchor - ext, self.anchor)
        return (-ext, ext)

    def interval_mass(self, lo: float, hi: float, nodes: int = 512, panels: int = 16) -> float:
        z, w = gauss_panels(lo, hi, nodes, panels)
        rho = np.asarray(self.density.value(z), dtype=float)
        if np.any(rho < 0):
            raise InvalidModelError("mark density is negative inside the support")
        return float(np.sum(w * rho))

    def trunc_mass(self, i: int) -> float:
        lo, hi = self.trunc_interval(i)
        return self.interval_mass(lo, hi)

    def quad_horizon(self, spec: QuadratureSpec) -> float:
        if spec.horizon is not None:
            return float(spec.horizon)
        return max(40.0, 4.0 * self.truncations[-1])

    def describe(self) -> dict:
        return {
            "support": [self.support[0], self.support[1]],
            "density": self.density.describe(),
            "truncations": list(self.truncations),
            "endpoint": self.endpoint_fn().describe(),
        }


@dataclass(frozen=True)
class CoefficientSet:
    """All coefficients of one model plus its audit window.

    ``k`` is the smoothness budget (derivative stacks run to k+1), ``p`` the
    polynomial weight power used by the audits, ``c0_tol`` the smallest
    admissible slope of the post-jump map.  The audit window is the y-range
    on which grid audits (sup bounds for rates, drift, slopes) are taken.
    """

    b: Function1D
    gamma: Function1D
    h: JumpAmplitude
    eta: Function1D
    q: JumpMeasureSpec
    k: int = 2
    p: float = 2.0
    c0_tol: float = 1e-8
    y_window: tuple[float, float] = (-10.0, 10.0)
    audit_points: int = 241
    label: str = ""

    def __post_init__(self):
        if self.k < 1 or self.k > 6:
            raise ContractError("smoothness budget k must be in 1..6")
        if self.p < 1:
            raise ContractError("weight power p must be >= 1")
        if not (self.y_window[1] > self.y_window[0]):
            raise ContractError("empty audit window")

    def y_audit_grid(self) -> np.ndarray:
        return np.linspace(self.y_window[0], self.y_window[1], self.audit_points)

    def z_audit_grid(self, i: int | None = None) -> np.ndarray:
        if i is None:
            i = len(self.q.truncations)
        lo, hi = self.q.trunc_interval(i)
        pad = 1e-9 * max(1.0, abs(hi - lo))
        return np.linspace(lo + pad, hi, self.audit_points)

    def _grid_sup(self, fn: Function1D, order: int, tag: str) -> float:
        grid = self.y_audit_grid()
        vals = np.asarray(fn.derivative(grid, order), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = grid[~np.isfinite(vals)][0]
            raise InvalidModelError(f"{tag} derivative {order} non-finite at y={bad!r}")
        return float(np.max(np.abs(vals)))

    def b_sup(self) -> float:
        return self._grid_sup(self.b, 0, "drift")

    def b_prime_sup(self) -> float:
        return self._grid_sup(self.b, 1, "drift")

    def gamma_sup(self) -> float:
        return self._grid_sup(self.gamma, 0, "jump rate")

    def gamma_inf(self) -> float:
        grid = self.y_audit_grid()
        vals = np.asarray(self.gamma.value(grid), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = grid[~np.isfinite(vals)][0]
            raise InvalidModelError(f"jump rate non-finite at y={bad!r}")
        return float(np.min(vals))

    def min_drift_index(self) -> int:
        """Smallest admissible drift surrogate index i0 = 2 sup|b'| (>= 1)."""
        return max(1, int(math.ceil(2.0 * self.b_prime_sup() - 1e-12)))

    def describe(self) -> dict:
        return {
            "label": self.label,
            "k": self.k,
            "p": self.p,
            "c0_tol": self.c0_tol,
            "y_window": list(self.y_window),
            "b": self.b.describe(),
            "gamma": self.gamma.describe(),
            "h": self.h.describe(),
            "eta": self.eta.describe(),
            "q": self.q.describe(),
        }


@dataclass
class AssumptionReport:
    """Outcome of one audit: verdict, fitted constants, witness points."""

    name: str
    passed: bool
    constants: dict
    worst: dict
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _pair_grids(y_grid, z_grid):
    y = np.asarray(y_grid, dtype=float)
    z = np.asarray(z_grid, dtype=float)
    if y.ndim != 1 or z.ndim != 1 or y.size == 0 or z.size == 0:
        raise ContractError("audit grids must be nonempty 1-d arrays")
    return y[:, None], z[None, :]


def check_S(
    coeffs: CoefficientSet,
    y_grid=None,
    z_grid=None,
    tol: float | None = None,
) -> AssumptionReport:
    """Slope audit: min over the grid of 1 + dh/dy must exceed tol.

    A positive verdict certifies (on the grid) that y -> y + h(y, z) is
    strictly increasing, which is what every inverse-map computation and the
    density transport rely on.
    """
    if y_grid is None:
        y_grid = coeffs.y_audit_grid()
    if z_grid is None:
        z_grid = coeffs.z_audit_grid()
    tol = coeffs.c0_tol if tol is None else float(tol)
    yy, zz = _pair_grids(y_grid, z_grid)
    slope = 1.0 + np.asarray(coeffs.h.dy(yy, zz, 1), dtype=float)
    if not np.all(np.isfinite(slope)):
        iy, iz = np.argwhere(~np.isfinite(slope))[0]
        raise InvalidModelError(
            f"jump amplitude slope non-finite at y={float(np.ravel(yy)[iy])}, "
            f"z={float(np.ravel(zz)[iz])}"
        )
    idx = np.unravel_index(np.argmin(slope), slope.shape)
    c0 = float(slope[idx])
    report = AssumptionReport(
        name="slope",
        passed=bool(c0 > tol),
        constants={"c0": c0, "tol": tol},
        worst={"y": float(np.ravel(y_grid)[idx[0]]), "z": float(np.ravel(z_grid)[idx[1]])},
        details={"grid_shape": list(slope.shape)},
    )
    return report


def check_A(
    coeffs: CoefficientSet,
    y_grid=None,
    z_grid=None,
    quadrature: QuadratureSpec | None = None,
) -> AssumptionReport:
    """Smoothness-budget audit for orders 0..k.

    Fails when some y-derivative of h escapes the declared bound eta on the
    grid, or when eta is not q-integrable at powers 1 and p on the declared
    horizon.  Non-finite coefficient values raise immediately.
    """
    if y_grid is None:
        y_grid = coeffs.y_audit_grid()
    if z_grid is None:
        z_grid = coeffs.z_audit_grid()
    quadrature = quadrature or QuadratureSpec()
    yy, zz = _pair_grids(y_grid, z_grid)

    margins = {}
    worst = {"l": None, "y": None, "z": None, "margin": -np.inf}
    eta_on_grid = np.asarray(coeffs.eta.value(np.ravel(zz)), dtype=float)
    if not np.all(np.isfinite(eta_on_grid)):
        bad = np.ravel(zz)[~np.isfinite(eta_on_grid)][0]
        raise InvalidModelError(f"eta non-finite at z={float(bad)}")
    for l in range(coeffs.k + 1):
        dval = np.asarray(coeffs.h.dy(yy, zz, l), dtype=float)
        if not np.all(np.isfinite(dval)):
            iy, iz = np.argwhere(~np.isfinite(dval))[0]
            raise InvalidModelError(
                f"jump amplitude derivative {l} non-finite at "
                f"y={float(np.ravel(y_grid)[iy])}, z={float(np.ravel(z_grid)[iz])}"
            )
        margin = np.abs(dval) - eta_on_grid[None, :]
        idx = np.unravel_index(np.argmax(margin), margin.shape)
        margins[l] = float(margin[idx])
        if margin[idx] > worst["margin"]:
            worst = {
                "l": l,
                "y": float(np.ravel(y_grid)[idx[0]]),
                "z": float(np.ravel(z_grid)[idx[1]]),
                "margin": float(margin[idx]),
            }

    sup_b = [coeffs._grid_sup(coeffs.b, l, "drift") for l in range(coeffs.k + 1)]
    sup_gamma = [coeffs._grid_sup(coeffs.gamma, l, "jump rate") for l in range(coeffs.k + 1)]

    lo, hi = coeffs.q.support
    horizon = coeffs.q.quad_horizon(quadrature)
    if coeffs.q.orientation == "right":
        qlo, qhi = lo, lo + horizon
    elif coeffs.q.orientation == "left":
        qlo, qhi = hi - horizon, hi
    else:
        qlo, qhi = -horizon, horizon
    z, w = gauss_panels(qlo, qhi, quadrature.nodes, quadrature.panels)
    rho = np.asarray(coeffs.q.density.value(z), dtype=float)
    eta_q = np.asarray(coeffs.eta.value(z), dtype=float)
    eta_l1 = float(np.sum(w * rho * np.abs(eta_q)))
    eta_lp = float(np.sum(w * rho * np.abs(eta_q) ** coeffs.p))

    dominated = all(m <= 1e-12 for m in margins.values())
    integrable = np.isfinite(eta_l1) and np.isfinite(eta_lp)
    return AssumptionReport(
        name="smoothness_budget",
        passed=bool(dominated and integrable),
        constants={
            "eta_L1": eta_l1,
            "eta_Lp": eta_lp,
            "p": coeffs.p,
            "sup_b_derivs": sup_b,
            "sup_gamma_derivs": sup_gamma,
        },
        worst=worst,
        details={"domination_margins": margins, "quad_horizon": horizon},
    )


def check_B(
    coeffs: CoefficientSet,
    n_max: int,
    theta: float,
    y_grid=None,
    quadrature: QuadratureSpec | None = None,
) -> AssumptionReport:
    """Inversion-budget audit for the regularizing kernels.

    For each kernel index n and audit state y, integrates |dh/dz|^(-2k) over
    the window of length n/gamma(y) starting at the Lebesgue endpoint a(y)
    (mirrored when marks extend leftwards), scales by gamma(y)/n and the
    polynomial weight (1+|y|^p), and checks the profile against the declared
    exponential budget e^(theta n): the tail half of the n-range must not
    exceed twice the head half's envelope constant.  Also audits that the
    mark density dominates Lebesgue measure on the windows, which the kernel
    construction needs.
    """
    if n_max < 2:
        raise ContractError("check_B needs n_max >= 2")
    if theta < 0:
        raise ContractError("theta must be >= 0")
    if y_grid is None:
        y_grid = coeffs.y_audit_grid()
    quadrature = quadrature or QuadratureSpec()
    y = np.asarray(y_grid, dtype=float)
    endpoint = coeffs.q.endpoint_fn()
    left = coeffs.q.orientation == "left"

    values = np.zeros((n_max, y.size))
    density_floor = np.inf
    for j, yj in enumerate(y):
        gam = float(coeffs.gamma.value(yj))
        if not np.isfinite(gam) or gam <= 0:
            raise InvalidModelError(f"jump rate not positive at y={yj}")
        a = float(endpoint.value(yj))
        for n in range(1, n_max + 1):
            width = n / gam
            lo, hi = (a - width, a) if left else (a, a + width)
            z, w = gauss_panels(lo, hi, quadrature.nodes, quadrature.panels)
            slope = np.abs(np.asarray(coeffs.h.dz(yj, z, 1), dtype=float))
            if np.any(slope < 1e-12):
                bad = z[slope < 1e-12][0]
                raise DegenerateKernelError(
                    f"dh/dz vanishes inside the inversion window at y={yj}, z={float(bad)}"
                )
            values[n - 1, j] = (gam / n) * float(np.sum(w * slope ** (-2 * coeffs.k)))
            rho = np.asarray(coeffs.q.density.value(z), dtype=float)
            density_floor = min(density_floor, float(np.min(rho)))

    weight = 1.0 + np.abs(y) ** coeffs.p
    per_n = np.max(values / weight[None, :], axis=1)
    ns = np.arange(1, n_max + 1)
    enveloped = per_n * np.exp(-theta * ns)
    half = max(1, n_max // 2)
    head = float(np.max(enveloped[:half]))
    tail = float(np.max(enveloped[half:]))
    fitted_c = float(np.max(enveloped))
    budget_ok = tail <= 2.0 * head
    lebesgue_ok = density_floor >= 1.0 - 1e-9

    iworst = np.unravel_index(np.argmax(values / weight[None, :]), values.shape)
    return AssumptionReport(
        name="inversion_budget",
        passed=bool(budget_ok and lebesgue_ok),
        constants={
            "theta": theta,
            "fitted_C": fitted_c,
            "head_envelope": head,
            "tail_envelope": tail,
            "density_floor": density_floor,
            "k": coeffs.k,
            "p": coeffs.p,
        },
        worst={"n": int(iworst[0] + 1), "y": float(y[iworst[1]])},
        details={
            "per_n_constant": [float(v) for v in per_n],
            "n_max": n_max,
            "budget_ok": bool(budget_ok),
            "lebesgue_ok": bool(lebesgue_ok),
        },
    )
