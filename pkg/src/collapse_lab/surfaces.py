"""Stochastic evolution over spacelike surfaces, advanced one bubble at a time.

A surface assigns a time to every lattice cell. A bubble advances one cell
by ``dt`` and sweeps the spacetime volume ``dV * dt``. The driving noise lives
on a fixed grid of spacetime cells of duration ``fine_dt``; a bubble's noise
is the sum of the fine cells it covers, so coarse and fine schedules see the
same Brownian field.

Two update rules are provided. ``"nonlinear"`` is the Euler form

    dpsi = [-i H dsigma + g (S - <S>) dbeta - 1/2 g^2 (S - <S>)^2 dsigma] psi

followed by renormalization. ``"linear"`` applies the exact map
``exp(g S dbeta - 1/2 g^2 S^2 dsigma)`` (then ``exp(-i H dsigma)``) and
renormalizes; for commuting ``S`` with ``H = 0`` its maps compose exactly,
which is what the path-independence and refinement checks rely on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ContractError, NumericError, SchedulingError
from .hilbert import HermitianOperator, StateVector
from .lattice import Lattice

log = logging.getLogger(__name__)

SCHEMES = ("nonlinear", "linear")
_ALIGN_TOL = 1e-9


@dataclass
class SpacelikeSurface:
    lattice: Lattice
    cell_times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.cell_times, dtype=float).reshape(-1)
        if t.size != self.lattice.size:
            raise ContractError(f"need {self.lattice.size} cell times, got {t.size}")
        self.cell_times = t
        bad = self.violations()
        if bad:
            c1, c2 = bad[0]
            raise SchedulingError(f"surface not spacelike between cells {c1} and {c2}", cells=(c1, c2))

    @classmethod
    def flat(cls, lattice: Lattice, t: float = 0.0) -> "SpacelikeSurface":
        return cls(lattice, np.full(lattice.size, float(t)))

    def violations(self, times=None) -> list:
        """Adjacent pairs with ``|t(c) - t(c')| >= distance`` (unit causal speed)."""
        t = self.cell_times if times is None else times
        pairs = self.lattice.adjacent_pairs
        if len(pairs) == 0:
            return []
        gap = np.abs(t[pairs[:, 0]] - t[pairs[:, 1]])
        return [tuple(int(c) for c in p) for p in pairs[gap >= self.lattice.cell_size]]

    def advanced(self, cells: Sequence[int], dts: Sequence[float]) -> "SpacelikeSurface":
        t = self.cell_times.copy()
        for c, dt in zip(cells, dts):
            t[c] += dt
        bad = self.violations(t)
        if bad:
            c1, c2 = bad[0]
            raise SchedulingError(
                f"advancing cells {list(cells)} breaks the spacelike condition between cells {c1} and {c2}",
                cells=(c1, c2),
            )
        return SpacelikeSurface.__new__(SpacelikeSurface)._init_unchecked(self.lattice, t)

    def _init_unchecked(self, lattice, t):
        self.lattice = lattice
        self.cell_times = t
        return self

    def same_as(self, other: "SpacelikeSurface", tol: float = 1e-12) -> bool:
        return self.lattice == other.lattice and np.allclose(self.cell_times, other.cell_times, rtol=0, atol=tol)


@dataclass(frozen=True)
class Bubble:
    cell: int
    dt: float
    cell_volume: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError("bubble dt must be positive")

    @property
    def volume(self) -> float:
        return self.cell_volume * self.dt


@dataclass
class PathSchedule:
    """Bubble collections applied in order; each step is a list of bubbles in distinct cells."""

    start: SpacelikeSurface
    steps: list

    def __post_init__(self):
        steps = []
        for s in self.steps:
            group = [s] if isinstance(s, Bubble) else list(s)
            cells = [b.cell for b in group]
            if len(set(cells)) != len(cells):
                raise ContractError("a bubble collection advances a cell twice")
            steps.append(group)
        self.steps = steps
        self.end = self._walk()
        self._check_tiling()

    def _walk(self) -> SpacelikeSurface:
        surf = self.start
        for group in self.steps:
            surf = surf.advanced([b.cell for b in group], [b.dt for b in group])
        return surf

    def _check_tiling(self):
        vol = math.fsum(b.volume for g in self.steps for b in g)
        expected = self.start.lattice.cell_volume * math.fsum(self.end.cell_times - self.start.cell_times)
        if abs(vol - expected) > 1e-9 * max(abs(expected), self.start.lattice.cell_volume):
            raise ContractError(f"bubble volumes {vol!r} do not tile the region {expected!r}")

    @property
    def n_bubbles(self) -> int:
        return sum(len(g) for g in self.steps)


class BubbleNoiseField:
    """Gaussian variables on spacetime cells ``(cell, slot)`` of duration ``fine_dt``.

    Each fine cell has variance ``cell_volume * fine_dt``; every fine cell
    carries ``n_samples`` independent values, so one field drives a whole
    batch of noise realizations at once. Values are generated in blocks keyed
    by ``(cell, slot // block)`` so any region can be regenerated without
    drawing its predecessors.
    """

    def __init__(self, base_seed: int, cell_volume: float, fine_dt: float, n_samples: int = 1,
                 block: int = 64, t0: float = 0.0):
        if not fine_dt > 0 or not cell_volume > 0:
            raise ContractError("fine_dt and cell_volume must be positive")
        if n_samples < 1:
            raise ContractError("n_samples must be at least 1")
        self.base_seed = int(base_seed)
        self.cell_volume = float(cell_volume)
        self.fine_dt = float(fine_dt)
        self.n_samples = int(n_samples)
        self.block = int(block)
        self.t0 = float(t0)
        self._cache = {}

    @property
    def fine_volume(self) -> float:
        return self.cell_volume * self.fine_dt

    def with_samples(self, n_samples: int) -> "BubbleNoiseField":
        return BubbleNoiseField(self.base_seed, self.cell_volume, self.fine_dt, n_samples, self.block, self.t0)

    def _blk(self, cell: int, b: int) -> np.ndarray:
        key = (cell, b)
        if key not in self._cache:
            ss = np.random.SeedSequence(self.base_seed, spawn_key=(int(cell), int(b)))
            z = np.random.Generator(np.random.PCG64(ss)).standard_normal((self.block, self.n_samples))
            self._cache[key] = z * math.sqrt(self.fine_volume)
        return self._cache[key]

    def slot(self, t: float) -> int:
        x = (t - self.t0) / self.fine_dt
        k = round(x)
        if abs(x - k) > _ALIGN_TOL * max(1.0, abs(x)):
            raise ContractError(f"time {t!r} is not on the noise grid of step {self.fine_dt!r}")
        return int(k)

    def fine_values(self, cell: int, k0: int, k1: int) -> np.ndarray:
        """Fine-cell values for slots ``k0 <= k < k1``, shape ``(k1 - k0, n_samples)``."""
        if k1 <= k0:
            return np.zeros((0, self.n_samples))
        if k0 < 0:
            raise ContractError("noise requested before the start of the field")
        rows = []
        for b in range(k0 // self.block, (k1 - 1) // self.block + 1):
            lo = max(k0, b * self.block) - b * self.block
            hi = min(k1, (b + 1) * self.block) - b * self.block
            rows.append(self._blk(cell, b)[lo:hi])
        return np.concatenate(rows)

    def value(self, cell: int, t_start: float, t_end: float) -> np.ndarray:
        """Noise of the spacetime region ``cell x [t_start, t_end)``: sum of its fine cells."""
        k0, k1 = self.slot(t_start), self.slot(t_end)
        if k1 <= k0:
            raise ContractError("empty or reversed noise window")
        return self.fine_values(cell, k0, k1).sum(axis=0)


@dataclass
class CellGenerators:
    """Per-cell coupling operators ``S_c`` and Hamiltonian densities ``H_c``."""

    S: Sequence
    H: Sequence | None = None
    g: float = 1.0

    def __post_init__(self):
        self.S = [np.asarray(s, dtype=complex) for s in self.S]
        if not self.S:
            raise ContractError("need at least one cell operator")
        d = self.S[0].shape[0]
        if self.H is None:
            self.H = [None] * len(self.S)
        else:
            self.H = [None if h is None or not np.any(np.asarray(h)) else np.asarray(h, dtype=complex) for h in self.H]
        if len(self.H) != len(self.S):
            raise ContractError("need one Hamiltonian density per cell")
        for m in self.S + [h for h in self.H if h is not None]:
            if m.shape != (d, d):
                raise ContractError("cell operators must share one dimension")
        self.dim = d
        self._diag = [np.real(np.diagonal(s)) if not np.any(s - np.diag(np.diagonal(s))) else None for s in self.S]
        self._eig = {}
        self._unit = {}

    @classmethod
    def uniform(cls, n_cells: int, S, H=None, g: float = 1.0) -> "CellGenerators":
        return cls([S] * n_cells, None if H is None else [H] * n_cells, g)

    def eig(self, c: int):
        if c not in self._eig:
            if self._diag[c] is not None:
                self._eig[c] = (self._diag[c], None)
            else:
                self._eig[c] = np.linalg.eigh(self.S[c])
        return self._eig[c]

    def unitary(self, c: int, dsigma: float) -> np.ndarray:
        key = (c, round(dsigma / 1e-18))
        if key not in self._unit:
            self._unit[key] = expm(-1j * dsigma * self.H[c])
        return self._unit[key]


def _batch(psi) -> tuple[np.ndarray, bool]:
    v = np.asarray(psi, dtype=complex)
    return (v[None, :], True) if v.ndim == 1 else (v, False)


def _normalize(psi: np.ndarray) -> np.ndarray:
    n = np.sqrt(np.einsum("bi,bi->b", psi.conj(), psi).real)
    if not np.all(np.isfinite(n)) or np.any(n == 0):
        raise NumericError("state norm vanished or is not finite during bubble advance")
    return psi / n[:, None]


def _apply_nonlinear(psi, ops: CellGenerators, bubbles, dbeta, dsigma):
    g = ops.g
    delta = np.zeros_like(psi)
    for b, db, ds in zip(bubbles, dbeta, dsigma):
        S = ops.S[b.cell]
        H = ops.H[b.cell]
        if H is not None:
            delta -= 1j * ds * (psi @ H.T)
        diag = ops._diag[b.cell]
        s_psi = psi * diag if diag is not None else psi @ S.T
        mean = np.einsum("bi,bi->b", psi.conj(), s_psi).real[:, None]
        cen = s_psi - mean * psi
        cen2 = (cen * diag if diag is not None else cen @ S.T) - mean * cen
        delta += g * db[:, None] * cen - 0.5 * g * g * ds * cen2
    return _normalize(psi + delta)


def _apply_linear(psi, ops: CellGenerators, bubbles, dbeta, dsigma):
    g = ops.g
    for b, db, ds in zip(bubbles, dbeta, dsigma):
        lam, vecs = ops.eig(b.cell)
        expo = g * db[:, None] * lam[None, :] - 0.5 * g * g * ds * lam[None, :] ** 2
        expo -= expo.max(axis=1, keepdims=True)
        fac = np.exp(expo)
        if vecs is None:
            psi = psi * fac
        else:
            psi = ((psi @ vecs.conj()) * fac) @ vecs.T
        if ops.H[b.cell] is not None:
            psi = psi @ ops.unitary(b.cell, ds).T
        psi = _normalize(psi)
    return psi


def bubble_advance(psi, surface: SpacelikeSurface, bubble, H_density=None, S_op=None, g: float = 1.0,
                   noise: BubbleNoiseField = None, scheme: str = "nonlinear", operators: CellGenerators = None):
    """Advance the state and the surface by one bubble or one collection of bubbles.

    Pass either a single ``H_density``/``S_op`` pair (used for every bubble)
    or a ``CellGenerators`` via ``operators``. ``psi`` may be a single state or
    a ``(n_samples, d)`` batch matching the noise field. Returns the new state
    (a ``StateVector`` for a single state) and the new surface.
    """
    if scheme not in SCHEMES:
        raise ContractError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if noise is None:
        raise ContractError("a BubbleNoiseField is required")
    bubbles = [bubble] if isinstance(bubble, Bubble) else list(bubble)
    if operators is None:
        if S_op is None:
            raise ContractError("need S_op or operators")
        S = np.asarray(S_op, dtype=complex)
        H = None if H_density is None else np.asarray(H_density, dtype=complex)
        operators = CellGenerators.uniform(surface.lattice.size, S, H, g)
    vec, single = _batch(psi)
    if vec.shape[1] != operators.dim:
        raise ContractError(f"state dimension {vec.shape[1]} != operator dimension {operators.dim}")
    new_surface = surface.advanced([b.cell for b in bubbles], [b.dt for b in bubbles])
    dbeta, dsigma = [], []
    for b in bubbles:
        t = surface.cell_times[b.cell]
        v = noise.value(b.cell, t, t + b.dt)
        dbeta.append(v if vec.shape[0] == noise.n_samples else np.broadcast_to(v[:1], (vec.shape[0],)))
        dsigma.append(b.volume)
    step = _apply_nonlinear if scheme == "nonlinear" else _apply_linear
    out = step(vec, operators, bubbles, dbeta, dsigma)
    return (StateVector(out[0], normalize=False) if single else out), new_surface


def path_evolve(psi0, schedule: PathSchedule, operators: CellGenerators, noise: BubbleNoiseField,
                scheme: str = "nonlinear"):
    """Apply every bubble collection of ``schedule`` in order."""
    vec, single = _batch(psi0)
    vec = _normalize(vec)
    surf = schedule.start
    for group in schedule.steps:
        vec, surf = bubble_advance(vec, surf, group, noise=noise, scheme=scheme, operators=operators)
    return StateVector(vec[0], normalize=False) if single else vec


def flat_slice_generators(operators: CellGenerators, cell_volume: float):
    """Global ``(H, ops, couplings)`` equivalent to one flat layer of bubbles.

    With ``dB_c = dbeta_c / sqrt(dV)`` these reproduce a layer of duration
    ``dt`` as one Ito step: couplings ``g sqrt(dV)`` and ``H = sum_c H_c dV``.
    """
    d = operators.dim
    H = np.zeros((d, d), dtype=complex)
    for h in operators.H:
        if h is not None:
            H += h * cell_volume
    couplings = np.full(len(operators.S), operators.g * math.sqrt(cell_volume))
    return H, list(operators.S), couplings


def flat_layer(lattice: Lattice, dt: float) -> list:
    return [Bubble(c, dt, lattice.cell_volume) for c in range(lattice.size)]


def sweep_schedule(start: SpacelikeSurface, n_layers: int, dt: float, order: Sequence[int] | None = None) -> PathSchedule:
    """Advance cells one at a time in ``order``, ``n_layers`` times, by ``dt`` each."""
    lat = start.lattice
    order = list(range(lat.size)) if order is None else list(order)
    if sorted(order) != list(range(lat.size)):
        raise ContractError("order must be a permutation of the cells")
    steps = [Bubble(c, dt, lat.cell_volume) for _ in range(n_layers) for c in order]
    return PathSchedule(start, steps)


def flat_schedule(start: SpacelikeSurface, n_layers: int, dt: float) -> PathSchedule:
    return PathSchedule(start, [flat_layer(start.lattice, dt) for _ in range(n_layers)])


@dataclass
class DiscrepancyStats:
    mean: float
    max: float
    n: int
    values: np.ndarray = field(repr=False, default=None)


def integrability_discrepancy(psi0, schedule_a: PathSchedule, schedule_b: PathSchedule, operators: CellGenerators,
                              noise: BubbleNoiseField, n_noise_samples: int | None = None,
                              scheme: str = "nonlinear") -> DiscrepancyStats:
    """Distance between the states reached along two schedules with shared noise.

    The distance is taken modulo a global phase, ``min_phi |psi_a - e^{i phi} psi_b|``.
    """
    if not (schedule_a.start.same_as(schedule_b.start) and schedule_a.end.same_as(schedule_b.end)):
        raise ContractError("schedules must share start and end surfaces")
    if n_noise_samples is not None and n_noise_samples != noise.n_samples:
        noise = noise.with_samples(n_noise_samples)
    psi = np.broadcast_to(np.asarray(psi0, dtype=complex).reshape(-1), (noise.n_samples, operators.dim)).copy()
    a = path_evolve(psi, schedule_a, operators, noise, scheme)
    b = path_evolve(psi, schedule_b, operators, noise, scheme) if schedule_b is not schedule_a else a
    overlap = np.einsum("bi,bi->b", b.conj(), a)
    phase = np.exp(1j * np.angle(overlap))
    d = np.linalg.norm(a - phase[:, None] * b, axis=1)
    return DiscrepancyStats(float(d.mean()), float(d.max()), int(d.size), d)


@dataclass
class DiscrepancyScan:
    dts: np.ndarray
    mean: np.ndarray
    max: np.ndarray
    n: int
    slope: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.mean) < 0))

    def rows(self) -> list:
        # largest dt first, as produced
        return [{"dt": float(t), "mean": float(m), "max": float(x), "n": self.n}
                for t, m, x in zip(self.dts, self.mean, self.max)]


def integrability_scan(psi0, operators: CellGenerators, lattice: Lattice, horizon: float, dts: Sequence[float],
                       base_seed: int, n_samples: int = 64, scheme: str = "nonlinear",
                       orders: tuple | None = None) -> DiscrepancyScan:
    """Discrepancy between two sweep orders for a range of bubble durations.

    The noise grid uses the smallest ``dt`` so every schedule sees the same
    underlying field. ``dts`` must divide ``horizon`` and be multiples of the
    smallest one. The slope is the log-log fit of mean discrepancy vs ``dt``.
    """
    dts = np.sort(np.asarray(dts, dtype=float))[::-1]
    fine = float(dts.min())
    noise = BubbleNoiseField(base_seed, lattice.cell_volume, fine, n_samples)
    start = SpacelikeSurface.flat(lattice)
    fwd = list(range(lattice.size))
    order_a, order_b = orders if orders is not None else (fwd, fwd[::-1])
    means, maxes = [], []
    for dt in dts:
        n = horizon / dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ContractError(f"dt {dt!r} does not divide the horizon {horizon!r}")
        n = int(round(n))
        sa = sweep_schedule(start, n, dt, order_a)
        sb = sweep_schedule(start, n, dt, order_b)
        st = integrability_discrepancy(psi0, sa, sb, operators, noise, scheme=scheme)
        log.info("integrability dt=%.4g mean=%.4g max=%.4g", dt, st.mean, st.max)
        means.append(st.mean)
        maxes.append(st.max)
    means = np.asarray(means)
    ok = means > 0
    slope = float(np.polyfit(np.log(dts[ok]), np.log(means[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    log.info("integrability discrepancy slope %.4g over dt in [%.4g, %.4g]", slope, dts.min(), dts.max())
    return DiscrepancyScan(dts, means, np.asarray(maxes), n_samples, slope)


@dataclass
class RefinementReport:
    coarse_volumes: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    variance_ratios: np.ndarray
    mean_z: np.ndarray
    variance_z: np.ndarray
    max_cross_z: float
    max_sum_mismatch: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.mean_z) <= 4) and np.all(np.abs(self.variance_z) <= 4)
                    and self.max_cross_z <= 4)


def _region_key(region):
    cell, t0, t1 = region
    return int(cell), float(t0), float(t1)


def refinement_consistency_check(noise: BubbleNoiseField, coarse_partition: Sequence, fine_partition: Sequence,
                                 n_samples: int = 100_000) -> RefinementReport:
    """Statistics of summed fine-cell noise against the coarse-bubble law.

    Partitions are lists of spacetime regions ``(cell, t_start, t_end)``. Each
    fine region must lie in exactly one coarse region and together they must
    cover every coarse region.
    """
    coarse = [_region_key(r) for r in coarse_partition]
    fine = [_region_key(r) for r in fine_partition]
    if noise.n_samples != n_samples:
        noise = noise.with_samples(n_samples)
    members = [[] for _ in coarse]
    for f in fine:
        hits = [i for i, c in enumerate(coarse) if c[0] == f[0] and c[1] - 1e-12 <= f[1] and f[2] <= c[2] + 1e-12]
        if len(hits) != 1:
            raise ContractError(f"fine region {f} lies in {len(hits)} coarse regions")
        members[hits[0]].append(f)
    for c, fs in zip(coarse, members):
        fs.sort(key=lambda r: r[1])
        edges = [c[1]] + [x for r in fs for x in (r[1], r[2])] + [c[2]]
        if not fs or not np.allclose(edges[0::2], edges[1::2], rtol=0, atol=1e-12):
            raise ContractError(f"fine regions do not tile coarse region {c}")
    sums = np.stack([np.sum([noise.value(*f) for f in fs], axis=0) for fs in members])
    direct = np.stack([noise.value(*c) for c in coarse])
    mismatch = float(np.max(np.abs(sums - direct)))
    vol = np.array([noise.cell_volume * (c[2] - c[1]) for c in coarse])
    n = sums.shape[1]
    means = sums.mean(axis=1)
    var = sums.var(axis=1, ddof=1)
    mean_z = means / np.sqrt(vol / n)
    var_z = (var - vol) / (vol * math.sqrt(2.0 / (n - 1)))
    cross = 0.0
    for i in range(len(coarse)):
        for j in range(i + 1, len(coarse)):
            cov = float(np.mean(sums[i] * sums[j]) - means[i] * means[j])
            cross = max(cross, abs(cov) / math.sqrt(vol[i] * vol[j] / n))
    return RefinementReport(vol, means, var, var / vol, mean_z, var_z, cross, mismatch, n)


def refinement_invariance(psi0, operators: CellGenerators, noise: BubbleNoiseField, cell: int, t0: float,
                          dt: float, n_parts: int, lattice: Lattice, scheme: str = "linear") -> float:
    """Largest distance between one coarse bubble and its ``n_parts`` fine pieces, over noise samples."""
    start = SpacelikeSurface.flat(lattice, t0)
    coarse = PathSchedule(start, [Bubble(cell, dt, lattice.cell_volume)])
    fine = PathSchedule(start, [Bubble(cell, dt / n_parts, lattice.cell_volume) for _ in range(n_parts)])
    psi = np.broadcast_to(np.asarray(psi0, dtype=complex).reshape(-1), (noise.n_samples, operators.dim)).copy()
    a = path_evolve(psi, coarse, operators, noise, scheme)
    b = path_evolve(psi, fine, operators, noise, scheme)
    return float(np.max(np.linalg.norm(a - b, axis=1)))


def localized_probe(n_cells: int = 6, coupling: float = 1.0, omega: float = 0.8):
    """Two-qubit toy on a line of cells for the reordering probe.

    The first qubit is a pointer whose ``sigma_z`` couples to the noise in the
    first two cells; a Hamiltonian density ``omega (sigma_x x 1 + 1/2 1 x sigma_x)``
    acts in the last two cells, far from the coupling region.
    """
    if n_cells < 4:
        raise ContractError("probe needs at least four cells")
    lat = Lattice((n_cells, 1, 1), 1.0)
    sz = np.diag([1.0, -1.0])
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    eye = np.eye(2)
    S = [np.kron(sz, eye) if c < 2 else np.zeros((4, 4)) for c in range(n_cells)]
    H = [omega * (np.kron(sx, eye) + 0.5 * np.kron(eye, sx)) if c >= n_cells - 2 else None for c in range(n_cells)]
    return lat, CellGenerators(S, H, coupling)
