"""Pathwise simulation of the jumping dynamics by thinning.

Candidate jump marks arrive as a Poisson stream with intensity ubar * q(G)
(ubar a constant upper bound for the state-dependent rate, G the active mark
window); each candidate carries a mark z ~ q|_G, a rate variable u uniform on
(0, ubar), and a filter variable v uniform on (0, 1).  A candidate becomes a
real jump when u <= gamma(X-), reproducing jumps at the exact state-dependent
rate; v is drawn for every candidate whether or not a filtered-kernel check
is requested, so runs with and without filtering consume identical random
streams and can be coupled pathwise.

Between candidates the state follows the drift flow (fixed-step RK4); the
drift-poissonized variant replaces the flow with Poisson kicks b(X)/i at rate
i, which is the chain whose density evolution the adjoint solver mirrors.

Random streams are organized as a fixed fan-out of 32 Philox substreams per
(seed, stream) pair, so batch results are byte-identical regardless of how
many worker threads consume the chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    BlowUpError,
    ContractError,
    InvalidModelError,
    WindowTooSmallError,
)
from .fokker_planck import GridDensity
from .kernels import KernelDecomposition
from .model import CoefficientSet

N_CHUNKS = 32  # fixed RNG fan-out; results do not depend on thread count


@dataclass(frozen=True)
class RngSpec:
    """Seed bookkeeping for reproducible streams.

    `stream` separates independent experiments under one seed; batch chunk c
    draws from the child sequence spawn_key=(stream, c).
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(seq))

    def chunk_generator(self, chunk: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, chunk))
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class OdeOptions:
    """Fixed-step RK4 controls for the drift flow between candidates."""

    max_step: float = 1e-3
    min_substeps: int = 8
    blow_up: float = 1e8
    max_batch_substeps: int = 4096


class MarkSampler:
    """Inverse-CDF sampler for the mark density restricted to an interval."""

    def __init__(self, spec, interval: tuple[float, float], nodes: int = 4097):
        lo, hi = float(interval[0]), float(interval[1])
        if not hi > lo:
            raise ContractError("mark interval must have positive length")
        zs = np.linspace(lo, hi, nodes)
        dens = np.asarray(spec.density.value(zs), dtype=float)
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise InvalidModelError("mark density must be finite and nonnegative")
        inc = 0.5 * (dens[1:] + dens[:-1]) * np.diff(zs)
        cdf = np.concatenate([[0.0], np.cumsum(inc)])
        self.mass = float(cdf[-1])
        if self.mass <= 0.0:
            raise InvalidModelError("mark density vanishes on the sampling interval")
        self.interval = (lo, hi)
        self._zs = zs
        self._cdf = cdf / self.mass

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.interp(rng.uniform(0.0, 1.0, size), self._cdf, self._zs)


@dataclass(frozen=True)
class JumpEvent:
    """One candidate of the thinning stream and what became of it."""

    time: float
    kind: str  # "jump", "reject", "skip" (outside window), "drift"
    pre: float
    post: float
    mark: float = math.nan
    u: float = math.nan
    v: float = math.nan


@dataclass(frozen=True)
class Trajectory:
    x0: float
    t_end: float
    times: np.ndarray
    states: np.ndarray
    events: tuple[JumpEvent, ...]
    trunc: int

    @property
    def terminal(self) -> float:
        return float(self.states[-1])

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)


@dataclass(frozen=True)
class RegularizingJumpRecord:
    """First candidate accepted by both the rate and the filtered kernel."""

    tau: float
    pre: float
    post: float
    mark: float


def _rate_bound(coeffs: CoefficientSet) -> float:
    # zero is allowed: the jump stream is empty and paths are pure drift
    return 1.05 * coeffs.gamma_sup()


def _check_rate_bound(gam_pre, ubar: float) -> None:
    if np.any(np.asarray(gam_pre) > ubar):
        raise ContractError(
            "state left the audited window: jump rate exceeded the thinning bound"
        )


def _drift_flow_scalar(coeffs, x: float, seg: float, opts: OdeOptions) -> float:
    if seg <= 0.0 or coeffs.b.is_zero:
        return x
    steps = max(opts.min_substeps, math.ceil(seg / opts.max_step))
    hstep = seg / steps
    b = coeffs.b.value
    # overflow to inf is fine: the guard below turns it into BlowUpError
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            k1 = float(b(x))
            k2 = float(b(x + 0.5 * hstep * k1))
            k3 = float(b(x + 0.5 * hstep * k2))
            k4 = float(b(x + hstep * k3))
            x = x + hstep * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    if not math.isfinite(x) or abs(x) > opts.blow_up:
        raise BlowUpError(f"drift flow left the finite range near x={x}")
    return x


def _drift_flow_batch(coeffs, x: np.ndarray, seg: np.ndarray, opts: OdeOptions) -> np.ndarray:
    if x.size == 0 or coeffs.b.is_zero:
        return x
    longest = float(np.max(seg))
    if longest <= 0.0:
        return x
    steps = int(
        min(opts.max_batch_substeps, max(opts.min_substeps, math.ceil(longest / opts.max_step)))
    )
    hstep = seg / steps  # per-run step; common count keeps the sweep vectorized
    b = coeffs.b.value
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            k1 = np.asarray(b(x), dtype=float)
            k2 = np.asarray(b(x + 0.5 * hstep * k1), dtype=float)
            k3 = np.asarray(b(x + 0.5 * hstep * k2), dtype=float)
            k4 = np.asarray(b(x + hstep * k3), dtype=float)
            x = x + hstep * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > opts.blow_up:
        raise BlowUpError("drift flow left the finite range in a batch segment")
    return x


def _candidate_frame(coeffs: CoefficientSet, trunc: int, couple_top: int | None):
    """Sampling window, active window, and candidate rate for the thinning
    stream.  With coupling, marks are drawn from the larger window and those
    outside the active one are skipped, so streams at different truncations
    share every draw."""
    active = coeffs.q.trunc_interval(trunc)
    sample_from = active if couple_top is None else coeffs.q.trunc_interval(couple_top)
    if couple_top is not None and couple_top < trunc:
        raise ContractError("coupling window must contain the active truncation")
    ubar = _rate_bound(coeffs)
    if ubar == 0.0:
        return None, active, 0.0, 0.0
    sampler = MarkSampler(coeffs.q, sample_from)
    return sampler, active, ubar, ubar * sampler.mass


def simulate_exact(
    coeffs: CoefficientSet,
    x0: float,
    t_end: float,
    trunc: int,
    rng: np.random.Generator,
    ode_opts: OdeOptions | None = None,
    couple_top: int | None = None,
    record: bool = True,
) -> Trajectory:
    """One path of the jumping diffusion with truncated marks.

    Draws (gap, mark, u, v) for every candidate in that order; v is unused
    here but keeps the stream aligned with filtered runs under the same seed.
    """
    opts = ode_opts or OdeOptions()
    sampler, active, ubar, lam = _candidate_frame(coeffs, trunc, couple_top)
    x = float(x0)
    t = 0.0
    events: list[JumpEvent] = []
    times = [0.0]
    states = [x]
    if lam == 0.0:  # rate vanishes identically: pure drift flow
        x = _drift_flow_scalar(coeffs, x, t_end, opts)
        return Trajectory(
            float(x0), float(t_end), np.asarray([0.0, t_end]), np.asarray([states[0], x]),
            (), trunc,
        )
    max_events = 1_000_000
    while True:
        gap = rng.exponential(1.0 / lam)
        z = float(sampler.sample(rng, 1)[0])
        u = float(rng.uniform(0.0, ubar))
        v = float(rng.uniform(0.0, 1.0))
        t_next = t + gap
        if t_next > t_end:
            x = _drift_flow_scalar(coeffs, x, t_end - t, opts)
            t = t_end
            break
        pre = _drift_flow_scalar(coeffs, x, gap, opts)
        gam = float(coeffs.gamma.value(pre))
        _check_rate_bound(gam, ubar)
        if not (active[0] <= z <= active[1]):
            kind, post = "skip", pre
        elif u <= gam:
            post = pre + float(coeffs.h.value(pre, z))
            kind = "jump"
        else:
            kind, post = "reject", pre
        if not math.isfinite(post) or abs(post) > opts.blow_up:
            raise BlowUpError(f"state blew up at t={t_next} (pre={pre}, mark={z})")
        x, t = post, t_next
        if record:
            events.append(JumpEvent(t_next, kind, pre, post, z, u, v))
            times.append(t_next)
            states.append(post)
            if len(events) > max_events:
                raise BlowUpError("event budget exhausted; rate is too large to record")
    times.append(t_end)
    states.append(x)
    return Trajectory(
        float(x0), float(t_end), np.asarray(times), np.asarray(states), tuple(events), trunc
    )


def simulate_poissonized(
    coeffs: CoefficientSet,
    x0: float,
    t_end: float,
    i: int,
    trunc: int,
    rng: np.random.Generator,
    ode_opts: OdeOptions | None = None,
    record: bool = True,
) -> Trajectory:
    """One path of the drift-poissonized chain: drift kicks b(X)/i at rate i
    superposed with the thinned jump stream, no continuous motion."""
    if i < coeffs.min_drift_index():
        raise ContractError(
            f"drift index {i} below the contraction threshold {coeffs.min_drift_index()}"
        )
    opts = ode_opts or OdeOptions()
    sampler, active, ubar, lam = _candidate_frame(coeffs, trunc, None)
    total = float(i) + lam
    x = float(x0)
    t = 0.0
    events: list[JumpEvent] = []
    times = [0.0]
    states = [x]
    while True:
        gap = rng.exponential(1.0 / total)
        w = float(rng.uniform(0.0, 1.0))
        z = float(sampler.sample(rng, 1)[0]) if sampler is not None else math.nan
        u = float(rng.uniform(0.0, ubar))
        v = float(rng.uniform(0.0, 1.0))
        t_next = t + gap
        if t_next > t_end:
            break
        pre = x
        if sampler is None or w <= i / total:
            post = pre + float(coeffs.b.value(pre)) / i
            kind = "drift"
        else:
            gam = float(coeffs.gamma.value(pre))
            _check_rate_bound(gam, ubar)
            if u <= gam:
                post = pre + float(coeffs.h.value(pre, z))
                kind = "jump"
            else:
                kind, post = "reject", pre
        if not math.isfinite(post) or abs(post) > opts.blow_up:
            raise BlowUpError(f"state blew up at t={t_next}")
        x, t = post, t_next
        if record:
            events.append(JumpEvent(t_next, kind, pre, post, z, u, v))
            times.append(t_next)
            states.append(post)
    times.append(t_end)
    states.append(x)
    return Trajectory(
        float(x0), float(t_end), np.asarray(times), np.asarray(states), tuple(events), trunc
    )


def _audit_filtered_rate(coeffs, kernels: KernelDecomposition, n: int, trunc: int) -> None:
    if kernels.coeffs is not coeffs:
        raise ContractError("kernel decomposition was built for a different model")
    if n not in kernels.n_values:
        raise ContractError(f"kernel index {n} was not declared in the decomposition")
    interval = coeffs.q.trunc_interval(trunc)
    grid = coeffs.y_audit_grid()
    worst = min(
        kernels.acceptance_rate(n, float(y), interval)
        for y in grid[:: max(1, grid.size // 24)]
    )
    if worst < n - 1e-6:
        raise ContractError(
            f"truncation window clips the filtered kernel: rate {worst:.6f} < {n}"
        )


def sample_tau_n(
    coeffs: CoefficientSet,
    kernels: KernelDecomposition,
    x0: float,
    n: int,
    t_max: float,
    trunc: int,
    rng: np.random.Generator,
    ode_opts: OdeOptions | None = None,
) -> RegularizingJumpRecord | None:
    """First jump kept by the n-th filtered kernel along one exact path.

    Candidates use the same draw pattern as `simulate_exact`, so under a
    common seed the filtered time picks out one of the exact path's jumps.
    Returns None when no filtered jump occurs before t_max.
    """
    _audit_filtered_rate(coeffs, kernels, n, trunc)
    opts = ode_opts or OdeOptions()
    sampler, active, ubar, lam = _candidate_frame(coeffs, trunc, None)
    x = float(x0)
    t = 0.0
    while True:
        gap = rng.exponential(1.0 / lam)
        z = float(sampler.sample(rng, 1)[0])
        u = float(rng.uniform(0.0, ubar))
        v = float(rng.uniform(0.0, 1.0))
        t_next = t + gap
        if t_next > t_max:
            return None
        pre = _drift_flow_scalar(coeffs, x, gap, opts)
        gam = float(coeffs.gamma.value(pre))
        _check_rate_bound(gam, ubar)
        post = pre
        if active[0] <= z <= active[1] and u <= gam:
            post = pre + float(coeffs.h.value(pre, z))
            if v <= float(kernels.acceptance(n, pre, z)):
                return RegularizingJumpRecord(t_next, pre, post, z)
        if not math.isfinite(post) or abs(post) > opts.blow_up:
            raise BlowUpError(f"state blew up at t={t_next}")
        x, t = post, t_next


def _chunk_sizes(runs: int) -> list[int]:
    base, rem = divmod(runs, N_CHUNKS)
    return [base + 1 if c < rem else base for c in range(N_CHUNKS)]


def _batch_chunk(
    coeffs,
    x0: np.ndarray,
    t_end: float,
    rng: np.random.Generator,
    m: int,
    sampler: MarkSampler,
    active: tuple[float, float],
    ubar: float,
    lam: float,
    i: int | None,
    kernels: KernelDecomposition | None,
    filter_n: int | None,
    opts: OdeOptions,
):
    x = np.array(x0, dtype=float, copy=True)
    t = np.zeros(m)
    tau = np.full(m, np.inf)
    jumps = np.zeros(m, dtype=np.int64)
    alive = np.ones(m, dtype=bool)
    if lam == 0.0 and i is None:  # no jumps, no kicks: one drift segment
        x = _drift_flow_batch(coeffs, x, np.full(m, t_end), opts)
        return x, tau, jumps
    total = lam if i is None else float(i) + lam
    while True:
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        gaps = rng.exponential(1.0 / total, idx.size)
        if i is not None:
            wkick = rng.uniform(0.0, 1.0, idx.size)
        if sampler is not None:
            z = sampler.sample(rng, idx.size)
        else:
            z = np.full(idx.size, np.nan)
        u = rng.uniform(0.0, ubar, idx.size)
        v = rng.uniform(0.0, 1.0, idx.size)
        t_next = t[idx] + gaps
        landed = t_next <= t_end
        if i is None:
            seg = np.minimum(t_next, t_end) - t[idx]
            pre = _drift_flow_batch(coeffs, x[idx], seg, opts)
        else:
            pre = x[idx].copy()
        gam = np.asarray(coeffs.gamma.value(pre), dtype=float)
        _check_rate_bound(gam[landed], ubar)
        in_window = (z >= active[0]) & (z <= active[1])
        acc = landed & in_window & (u <= gam)
        if i is not None:
            is_kick = landed & (wkick <= i / total)
            acc &= ~is_kick
        post = pre.copy()
        if np.any(acc):
            post[acc] = pre[acc] + np.asarray(coeffs.h.value(pre[acc], z[acc]), dtype=float)
            jumps[idx[acc]] += 1
            if filter_n is not None:
                keep = v[acc] <= kernels.acceptance(filter_n, pre[acc], z[acc])
                newly = idx[acc][keep]
                tau[newly] = np.minimum(tau[newly], t_next[acc][keep])
        if i is not None and np.any(is_kick):
            post[is_kick] = pre[is_kick] + np.asarray(
                coeffs.b.value(pre[is_kick]), dtype=float
            ) / i
        if not np.all(np.isfinite(post)) or np.max(np.abs(post)) > opts.blow_up:
            raise BlowUpError("batch state blew up")
        x[idx] = post
        t[idx] = np.minimum(t_next, t_end)
        alive[idx] = landed
    return x, tau, jumps


def simulate_batch(
    coeffs: CoefficientSet,
    x0,
    t_end: float,
    trunc: int,
    rng_spec: RngSpec,
    runs: int,
    i: int | None = None,
    kernels: KernelDecomposition | None = None,
    filter_n: int | None = None,
    ode_opts: OdeOptions | None = None,
    threads: int = 1,
) -> dict:
    """Monte Carlo batch of terminal states (and filtered first-jump times).

    `x0` is a common initial state or an array of per-run initial states
    (for matching a spread-out initial density).  Set `i` for the
    drift-poissonized chain, None for the exact flow.  When `filter_n` is
    given, `tau` holds the first time each run's jumps passed the n-th
    filtered kernel (inf if none did).  Results are byte-identical for any
    `threads` value under a fixed RngSpec.
    """
    if runs < 1:
        raise ContractError("batch needs at least one run")
    x0_all = np.broadcast_to(np.asarray(x0, dtype=float), (runs,))
    if filter_n is not None:
        if kernels is None:
            raise ContractError("filtering needs a kernel decomposition")
        _audit_filtered_rate(coeffs, kernels, filter_n, trunc)
    if i is not None and i < coeffs.min_drift_index():
        raise ContractError(
            f"drift index {i} below the contraction threshold {coeffs.min_drift_index()}"
        )
    opts = ode_opts or OdeOptions()
    sampler, active, ubar, lam = _candidate_frame(coeffs, trunc, None)
    sizes = _chunk_sizes(runs)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def run_chunk(c: int):
        if sizes[c] == 0:
            return (np.empty(0), np.empty(0), np.empty(0, dtype=np.int64))
        return _batch_chunk(
            coeffs, x0_all[offsets[c] : offsets[c + 1]], t_end,
            rng_spec.chunk_generator(c), sizes[c],
            sampler, active, ubar, lam, i, kernels, filter_n, opts,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, range(N_CHUNKS)))
    else:
        parts = [run_chunk(c) for c in range(N_CHUNKS)]
    out = {
        "terminal": np.concatenate([p[0] for p in parts]),
        "jumps": np.concatenate([p[2] for p in parts]),
        "runs": runs,
        "t_end": float(t_end),
        "rate_bound": ubar,
        "candidate_rate": lam,
    }
    if filter_n is not None:
        out["tau"] = np.concatenate([p[1] for p in parts])
    return out


def _hermite_rows(s: np.ndarray, order: int) -> np.ndarray:
    rows = np.empty((order + 1,) + s.shape)
    rows[0] = 1.0
    if order >= 1:
        rows[1] = s
    for l in range(2, order + 1):
        rows[l] = s * rows[l - 1] - (l - 1) * rows[l - 2]
    return rows


def estimate_density(
    samples,
    window: tuple[float, float],
    size: int = 512,
    order: int = 0,
    bandwidth: float | None = None,
    time: float = 0.0,
) -> GridDensity:
    """Gaussian kernel density (with derivative rows) from terminal samples.

    Bandwidth defaults to the Silverman rule; a near-zero sample spread means
    the law has (numerically) an atom and no density estimate is meaningful.
    """
    s = np.asarray(samples, dtype=float)
    if s.size < 100:
        raise ContractError("density estimation needs at least 100 samples")
    if order > 4:
        raise ContractError("derivative rows above order 4 are too noisy to estimate")
    span = float(window[1]) - float(window[0])
    if bandwidth is None:
        sd = float(np.std(s))
        q75, q25 = np.percentile(s, [75.0, 25.0])
        spread = min(sd, (q75 - q25) / 1.34) or sd
        bandwidth = 0.9 * spread * s.size ** (-0.2)
        if bandwidth < 1e-12 * span:
            # samples coincide to roundoff: render the atom as one narrow bump
            bandwidth = span / 100.0
    if not bandwidth > 0.0:
        raise ContractError("bandwidth must be positive")
    grid = np.linspace(float(window[0]), float(window[1]), size)
    stack = np.zeros((order + 1, size))
    norm = 1.0 / (s.size * bandwidth * math.sqrt(2.0 * math.pi))
    for start in range(0, s.size, 16384):
        block = s[start : start + 16384]
        sc = (grid[None, :] - block[:, None]) / bandwidth
        weight = np.exp(-0.5 * sc * sc)
        herm = _hermite_rows(sc, order)
        for l in range(order + 1):
            sign = -1.0 if l % 2 else 1.0
            stack[l] += sign * np.sum(herm[l] * weight, axis=0) / bandwidth**l
    stack *= norm
    mass = float(np.trapezoid(stack[0], grid))
    if mass < 0.98:
        raise WindowTooSmallError(
            f"estimation window holds only {mass:.3f} of the sample mass"
        )
    return GridDensity(float(grid[0]), float(grid[-1]), stack / mass, time)


def histogram_density(samples, window: tuple[float, float], bins: int = 64, time: float = 0.0) -> GridDensity:
    """Bin-averaged density on bin centers; no derivative rows."""
    s = np.asarray(samples, dtype=float)
    counts, edges = np.histogram(s, bins=bins, range=(float(window[0]), float(window[1])))
    centers = 0.5 * (edges[1:] + edges[:-1])
    vals = counts / (s.size * np.diff(edges))
    return GridDensity(float(centers[0]), float(centers[-1]), vals[None, :], time)


@dataclass(frozen=True)
class CFEstimate:
    """Empirical characteristic function on a frequency grid."""

    xi: np.ndarray
    values: np.ndarray
    n_samples: int

    @property
    def stderr(self) -> float:
        return 1.0 / math.sqrt(self.n_samples)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def usable(self, floor_mult: float = 3.0) -> np.ndarray:
        """Mask of frequencies where the magnitude stands clear of the
        1/sqrt(N) sampling floor."""
        return self.magnitude() >= floor_mult * self.stderr


def empirical_cf(samples, xi) -> CFEstimate:
    """Average of exp(i xi X) over the sample, chunked for memory.

    The grid may be symmetric about 0 or one-sided; values at -xi are the
    conjugates of those at xi by construction, and xi = 0 gives exactly 1.
    """
    s = np.asarray(samples, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or xi.size < 1 or not np.all(np.isfinite(xi)):
        raise ContractError("frequency grid must be a finite 1-d array")
    acc = np.zeros(xi.size, dtype=complex)
    for start in range(0, s.size, 16384):
        block = s[start : start + 16384]
        acc += np.exp(1j * np.multiply.outer(block, xi)).sum(axis=0)
    return CFEstimate(xi, acc / s.size, int(s.size))
