"""Time-integrated stuff over the hyperbolic domain around a spacetime point.

The domain around ``x = (t, X)`` holds every ``(tb, Xb)`` with
``-a^2 <= (tb - t)^2 - |Xb - X|^2 <= a^2``. For a free classical point
particle the stuff density is ``m sqrt(1 - v^2) delta^3(Xb - x0 - v tb)``, so
its integral over the domain is ``m sqrt(1 - v^2)`` times the coordinate time
the worldline spends inside the domain.

Units: hbar = c = 1 throughout.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .elliptic import complete_elliptic_K
from .errors import ContractError, RegimeError
from .hilbert import HermitianOperator
from .lattice import Lattice

log = logging.getLogger(__name__)


class EmptyDomainWarning(UserWarning):
    pass


class OracleConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SpacetimeDomain:
    center: tuple
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ContractError("domain half-width a must be positive")
        c = tuple(float(x) for x in self.center)
        if len(c) != 4:
            raise ContractError("center must be a (t, x, y, z) tuple")
        object.__setattr__(self, "center", c)

    def interval(self, point) -> float:
        """Invariant interval ``(tb - t)^2 - |Xb - X|^2`` from the centre."""
        p = np.asarray(point, dtype=float)
        c = np.asarray(self.center)
        dt = p[..., 0] - c[0]
        dx = p[..., 1:] - c[1:]
        return dt * dt - np.sum(dx * dx, axis=-1)

    def contains(self, point):
        s = self.interval(point)
        a2 = self.a * self.a
        return (-a2 <= s) & (s <= a2)


def domain_contains(domain: SpacetimeDomain, point) -> bool:
    return bool(domain.contains(point))


@dataclass(frozen=True)
class ParticleWorldline:
    """Free point mass: position ``x0 + v tb`` at coordinate time ``tb``."""

    m: float
    x0: tuple
    v: tuple

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        if not self.m > 0:
            raise ContractError("mass must be positive")
        if not float(v @ v) < 1.0:
            raise ContractError(f"|v| must be < 1, got {math.sqrt(float(v @ v))!r}")
        object.__setattr__(self, "x0", tuple(x0))
        object.__setattr__(self, "v", tuple(v))
        object.__setattr__(self, "m", float(self.m))

    @property
    def speed2(self) -> float:
        v = np.asarray(self.v)
        return float(v @ v)

    def event(self, tb: float) -> np.ndarray:
        return np.concatenate([[tb], np.asarray(self.x0) + np.asarray(self.v) * tb])

    def boosted(self, beta: float, axis: int = 0) -> "ParticleWorldline":
        """Same worldline seen from a frame moving with speed ``beta`` along ``axis``."""
        e0 = lorentz_boost(self.event(0.0), beta, axis)
        e1 = lorentz_boost(self.event(1.0), beta, axis)
        vel = (e1[1:] - e0[1:]) / (e1[0] - e0[0])
        x0 = e0[1:] - vel * e0[0]
        return ParticleWorldline(self.m, tuple(x0), tuple(vel))


def lorentz_boost(event, beta: float, axis: int = 0) -> np.ndarray:
    e = np.asarray(event, dtype=float).copy()
    gamma = 1.0 / math.sqrt(1.0 - beta * beta)
    t, x = e[0], e[1 + axis]
    e[0] = gamma * (t - beta * x)
    e[1 + axis] = gamma * (x - beta * t)
    return e


def _relative_position(wl: ParticleWorldline, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.asarray(wl.x0) + np.asarray(wl.v) * x[0] - x[1:]


def _member_intervals(wl: ParticleWorldline, x, a: float) -> list:
    """Closed-form time offsets ``tau = tb - t`` spent inside the domain."""
    x1 = _relative_position(wl, x)
    v = np.asarray(wl.v)
    one_m_v2 = 1.0 - wl.speed2
    proj = float(x1 @ v)
    q = float(x1 @ x1) + proj * proj / one_m_v2
    tau0 = proj / one_m_v2
    outer = math.sqrt((q + a * a) / one_m_v2)
    if q > a * a:
        inner = math.sqrt((q - a * a) / one_m_v2)
        return [(tau0 - outer, tau0 - inner), (tau0 + inner, tau0 + outer)]
    return [(tau0 - outer, tau0 + outer)]


def stuff_closed_form(wl: ParticleWorldline, x, a: float, window: float | None = None) -> float:
    """``2m (sqrt(Q + a^2) - sqrt(Q - a^2))`` with ``Q = x1^2 + (x1.v)^2 / (1 - v^2)``.

    The second root is dropped when its argument is negative. With ``window``
    only the part of the worldline with ``|tb - t| <= window`` counts.
    """
    if not a > 0:
        raise ContractError("a must be positive")
    if window is not None:
        total = sum(max(0.0, min(hi, window) - max(lo, -window)) for lo, hi in _member_intervals(wl, x, a))
        return wl.m * math.sqrt(1.0 - wl.speed2) * total
    x1 = _relative_position(wl, x)
    v = np.asarray(wl.v)
    proj = float(x1 @ v)
    q = float(x1 @ x1) + proj * proj / (1.0 - wl.speed2)
    a2 = a * a
    if q > a2:
        # rationalized difference of roots; avoids cancellation far from the particle
        return 2.0 * wl.m * 2.0 * a2 / (math.sqrt(q + a2) + math.sqrt(q - a2))
    return 2.0 * wl.m * math.sqrt(q + a2)


@dataclass
class OracleResult:
    value: float
    measure: float
    intervals: list
    resolution: float
    converged: bool


def _oracle_measure(s, a2: float, lo: float, hi: float, resolution: float):
    """Lebesgue measure of ``{tau in [lo, hi] : -a2 <= s(tau) <= a2}``.

    ``s`` is sampled on a grid; discrete extrema are polished with a bounded
    scalar minimizer so that level crossings between grid points are not
    missed. Each monotone piece then contributes at most one crossing per
    level, located by Brent's method.
    """
    n = max(16, int(math.ceil((hi - lo) / resolution)))
    grid = np.linspace(lo, hi, n + 1)
    vals = s(grid)
    breaks = [lo, hi]
    dv = np.diff(vals)
    turn = np.flatnonzero(dv[:-1] * dv[1:] <= 0) + 1
    for k in turn:
        left, right = grid[max(k - 1, 0)], grid[min(k + 1, n)]
        for sign in (1.0, -1.0):
            res = minimize_scalar(lambda u: sign * float(s(np.array([u]))[0]), bounds=(left, right),
                                  method="bounded", options={"xatol": 1e-14 * max(1.0, abs(left))})
            breaks.append(float(res.x))
    pts = np.unique(np.clip(np.concatenate([grid, breaks]), lo, hi))
    pv = s(pts)
    f = lambda u: float(s(np.array([u]))[0])
    roots = []
    for level in (a2, -a2):
        g = pv - level
        idx = np.flatnonzero(g[:-1] * g[1:] < 0)
        for k in idx:
            roots.append(brentq(lambda u: f(u) - level, pts[k], pts[k + 1], xtol=1e-15, rtol=1e-15, maxiter=500))
        roots.extend(pts[np.flatnonzero(g == 0)])
    edges = np.unique(np.concatenate([[lo, hi], roots]))
    intervals = []
    for left, right in zip(edges[:-1], edges[1:]):
        mid = f(0.5 * (left + right))
        if -a2 <= mid <= a2:
            if intervals and intervals[-1][1] == left:
                intervals[-1] = (intervals[-1][0], right)
            else:
                intervals.append((left, right))
    return math.fsum(r - l for l, r in intervals), intervals


def stuff_numeric_oracle(wl: ParticleWorldline, x, a: float, resolution: float | None = None,
                         window: float | None = None, max_refinements: int = 6,
                         rtol: float = 1e-12) -> OracleResult:
    """Integrate the domain indicator along the worldline numerically.

    Membership is evaluated from the raw invariant interval of worldline events
    and never from the closed form. The search window is bounded by
    ``(|x1| + a) / (1 - |v|) + a``, beyond which the interval exceeds ``a^2``.
    Resolution is halved until two successive measures agree to ``rtol``;
    after ``max_refinements`` halvings the result is flagged unconverged.
    """
    if not a > 0:
        raise ContractError("a must be positive")
    domain = SpacetimeDomain(tuple(np.asarray(x, dtype=float)), a)
    t = domain.center[0]
    x0 = np.asarray(wl.x0)
    v = np.asarray(wl.v)
    ctr = np.asarray(domain.center[1:])

    def s(tau):
        tau = np.asarray(tau, dtype=float)
        pos = x0[None, :] + v[None, :] * (t + tau)[:, None] - ctr[None, :]
        return tau * tau - np.sum(pos * pos, axis=1)

    x1 = _relative_position(wl, x)
    bound = (float(np.linalg.norm(x1)) + a) / (1.0 - math.sqrt(wl.speed2)) + a
    if window is not None:
        bound = min(bound, float(window))
    if resolution is None:
        resolution = a / 16.0
    prev = None
    converged = False
    for _ in range(max_refinements + 1):
        measure, intervals = _oracle_measure(s, a * a, -bound, bound, resolution)
        if prev is not None and abs(measure - prev) <= rtol * max(abs(measure), 1e-300):
            converged = True
            break
        if prev is not None and measure == 0.0 and prev == 0.0:
            converged = True
            break
        prev = measure
        resolution *= 0.5
    if not converged:
        warnings.warn(f"stuff oracle did not converge (last resolution {resolution:.3g})",
                      OracleConvergenceWarning)
    value = wl.m * math.sqrt(1.0 - wl.speed2) * measure
    return OracleResult(value, measure, intervals, resolution, converged)


def orthogonal_far_limit(m: float, a: float, distance: float) -> float:
    return 2.0 * m * a * a / distance


def parallel_far_limit(m: float, a: float, distance: float, speed: float) -> float:
    return 2.0 * m * a * math.sqrt(1.0 - speed * speed) * a / distance


def far_field_envelope_probe(m: float, a: float, distance: float, speed: float,
                             n_directions: int = 1000, seed: int = 0) -> dict:
    """Check far-field values against the parallel and orthogonal limits.

    Velocity directions are sampled uniformly on the sphere. Violations are
    logged and counted, never raised.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_directions, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    lo = parallel_far_limit(m, a, distance, speed)
    hi = orthogonal_far_limit(m, a, distance)
    x = (0.0, 0.0, 0.0, 0.0)
    values = np.array([
        stuff_closed_form(ParticleWorldline(m, (distance, 0.0, 0.0), tuple(speed * d)), x, a)
        for d in dirs
    ])
    slack = 1e-9 * hi
    bad = int(np.sum((values < lo - slack) | (values > hi + slack)))
    if bad:
        log.warning("far-field envelope violated for %d of %d directions", bad, n_directions)
    return {"lower": lo, "upper": hi, "values": values, "violations": bad}


def shattering_estimate(S_amount: float, a: float, l: float, w: float, alpha: int) -> float:
    """Stuff counted for an amount ``S`` sprayed with speed ``w``.

    ``alpha=1``: the stuff starts at the query point, ``2 a S / sqrt(1 - w^2)``.
    ``alpha=2``: it starts a distance ``l`` away (far field, ``l >= 10 a``),
    ``2 a S (a / l) (2/pi) K(w^2)`` with ``K`` taking the parameter ``m = w^2``.
    """
    if not 0.0 <= w < 1.0:
        raise RegimeError(f"speed w must satisfy 0 <= w < 1, got {w!r}")
    if alpha == 1:
        return 2.0 * a * S_amount / math.sqrt(1.0 - w * w)
    if alpha == 2:
        if l < 10.0 * a:
            raise RegimeError(f"far-field formula requires l^2 >> a^2 (l >= 10 a); got l={l!r}, a={a!r}")
        return 2.0 * a * S_amount * (a / l) * (2.0 / math.pi) * complete_elliptic_K(w * w)
    raise ContractError(f"alpha must be 1 or 2, got {alpha!r}")


def shattering_brackets(w: float) -> tuple:
    """The two bracketed velocity factors ``(1/sqrt(1-w^2), (2/pi) K(w^2))``."""
    return 1.0 / math.sqrt(1.0 - w * w), (2.0 / math.pi) * complete_elliptic_K(w * w)


def shattering_monte_carlo(S_amount: float, a: float, l: float, w: float, alpha: int,
                           n_directions: int = 100_000, seed: int = 0,
                           geometry: str = "planar") -> float:
    """Average the point-particle stuff over fragments sprayed isotropically.

    Each fragment passes the object position at time ``t = 0`` with velocity
    ``w n``; its rest mass is chosen so the fragments together carry stuff
    ``S`` at fixed time. ``geometry="planar"`` draws ``n`` uniformly on the
    circle containing the separation, ``"spherical"`` uniformly on the sphere.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    if geometry == "planar":
        phi = rng.uniform(0.0, 2.0 * math.pi, n_directions)
        dirs = np.stack([np.cos(phi), np.sin(phi), np.zeros_like(phi)], axis=1)
    elif geometry == "spherical":
        dirs = rng.normal(size=(n_directions, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        raise ContractError(f"unknown geometry {geometry!r}")
    sep = 0.0 if alpha == 1 else float(l)
    m_frag = S_amount / n_directions / math.sqrt(1.0 - w * w)
    # vectorized closed form over fragments; position at t=0 is (sep, 0, 0)
    x1 = np.array([sep, 0.0, 0.0])
    proj = (dirs @ x1) * w
    q = sep * sep + proj * proj / (1.0 - w * w)
    a2 = a * a
    vals = np.where(q > a2, 4.0 * a2 / (np.sqrt(q + a2) + np.sqrt(np.maximum(q - a2, 0.0))),
                    2.0 * np.sqrt(q + a2))
    return float(m_frag * np.sum(vals))


@dataclass
class StuffFieldSample:
    points: np.ndarray
    values: np.ndarray
    t: float = 0.0


def discrimination_map(worldlines: Sequence[ParticleWorldline], grid, a: float, t: float = 0.0) -> StuffFieldSample:
    """Sum of single-particle stuff over every worldline at each spatial grid point."""
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if pts.shape[1] != 3:
        raise ContractError("grid points must be 3-vectors")
    if not np.all(np.isfinite(pts)):
        raise ContractError("grid must be finite")
    values = np.zeros(len(pts))
    for wl in worldlines:
        values += np.array([stuff_closed_form(wl, (t, *p), a) for p in pts])
    return StuffFieldSample(pts, values, t)


def _cell_time_intervals(r: float, a: float, window: float) -> list:
    """Offsets ``tau`` with ``r^2 - a^2 <= tau^2 <= r^2 + a^2``, clipped to ``|tau| <= window``."""
    outer = math.sqrt(r * r + a * a)
    if r <= a:
        spans = [(-outer, outer)]
    else:
        inner = math.sqrt(r * r - a * a)
        spans = [(-outer, -inner), (inner, outer)]
    out = []
    for lo, hi in spans:
        lo, hi = max(lo, -window), min(hi, window)
        if hi > lo:
            out.append((lo, hi))
    return out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


def sandwich_stuff_operator(stuff_density_ops, h0, x, a: float, time_window: float,
                            lattice: Lattice, time_step: float | None = None) -> HermitianOperator:
    """Schroedinger-picture time-integrated stuff operator of a toy system.

    Builds ``U0(t) [int dtb U0^+(tb) (sum_{cells in slice(tb)} dV s_cell) U0(tb)] U0^+(t)``
    with ``tb`` restricted to ``|tb - t| <= time_window``. A cell at distance
    ``r`` from the spatial query point belongs to the slice at ``tb`` exactly
    when ``r^2 - a^2 <= (tb - t)^2 <= r^2 + a^2``.

    With ``time_step=None`` the time integral is done exactly in the
    eigenbasis of ``h0``; otherwise composite 6-point Gauss-Legendre panels of
    length at most ``time_step`` are used on absolute times ``tb``.
    """
    x = np.asarray(x, dtype=float)
    t, xs = float(x[0]), x[1:]
    h = np.asarray(h0, dtype=complex)
    d = h.shape[0]
    if d > 512:
        raise ContractError("toy systems are limited to dimension 512")
    if not time_window > 0:
        raise ContractError("time_window must be positive")
    dens = [np.asarray(s, dtype=complex) for s in stuff_density_ops]
    if len(dens) != lattice.size:
        raise ContractError(f"{len(dens)} density operators for {lattice.size} cells")
    evals, evecs = np.linalg.eigh(h)
    dV = lattice.cell_volume
    radii = np.linalg.norm(lattice.centers - xs[None, :], axis=1)
    omega = evals[:, None] - evals[None, :]

    acc = np.zeros((d, d), dtype=complex)  # accumulated in the h0 eigenbasis
    touched = False
    for cell, s_op in enumerate(dens):
        if not np.any(s_op):
            continue
        spans = _cell_time_intervals(radii[cell], a, time_window)
        if not spans:
            continue
        touched = True
        s_eig = evecs.conj().T @ s_op @ evecs
        if time_step is None:
            weight = np.zeros((d, d), dtype=complex)
            for lo, hi in spans:
                # int_{t+lo}^{t+hi} e^{i w tb} dtb, then the outer U0(t) conjugation e^{-i w t}
                mid, half = t + 0.5 * (lo + hi), 0.5 * (hi - lo)
                sinc = np.where(omega == 0.0, half, np.sin(omega * half) / np.where(omega == 0.0, 1.0, omega))
                weight += 2.0 * sinc * np.exp(1j * omega * mid) * np.exp(-1j * omega * t)
        else:
            weight = np.zeros((d, d), dtype=complex)
            for lo, hi in spans:
                n_pan = max(1, int(math.ceil((hi - lo) / time_step)))
                edges = t + lo + (hi - lo) * np.arange(n_pan + 1) / n_pan
                for p0, p1 in zip(edges[:-1], edges[1:]):
                    c, r = 0.5 * (p0 + p1), 0.5 * (p1 - p0)
                    for node, wgt in zip(_GL_NODES, _GL_WEIGHTS):
                        tb = c + r * node
                        weight += (r * wgt) * np.exp(1j * omega * tb)
            weight = weight * np.exp(-1j * omega * t)
        acc += dV * s_eig * weight
    if not touched:
        warnings.warn("time window does not reach any cell carrying stuff; returning zero operator",
                      EmptyDomainWarning)
    op = evecs @ acc @ evecs.conj().T
    return HermitianOperator(op, tol=1e-10 * max(1.0, float(np.max(np.abs(op)))), symmetrize=True)


def converge_window(build, start: float, tol: float = 1e-6, max_doublings: int = 20):
    """Double the time window until the operator changes by at most ``tol`` (relative)."""
    window = float(start)
    prev = build(window).matrix
    for _ in range(max_doublings):
        window *= 2.0
        cur = build(window).matrix
        scale = max(np.linalg.norm(cur), 1e-300)
        if np.linalg.norm(cur - prev) <= tol * scale:
            return window, HermitianOperator(cur)
        prev = cur
    raise ContractError(f"sandwich operator did not converge within window {window}")


def hopping_chain(n_sites: int, hopping: float) -> np.ndarray:
    """Nearest-neighbour tight-binding Hamiltonian on an open chain."""
    h = np.zeros((n_sites, n_sites))
    idx = np.arange(n_sites - 1)
    h[idx, idx + 1] = h[idx + 1, idx] = -hopping
    return h


def site_density_operators(n_sites: int, mass: float, cell_volume: float) -> list:
    """One-particle stuff density ``m / dV |c><c|`` for each chain site."""
    ops = []
    for c in range(n_sites):
        s = np.zeros((n_sites, n_sites))
        s[c, c] = mass / cell_volume
        ops.append(s)
    return ops
