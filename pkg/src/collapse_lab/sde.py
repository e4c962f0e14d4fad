"""Ito integration of the norm-preserving nonlinear stochastic Schroedinger equation.

The update for one step is

    psi + [-i H dt + sum_i (g_i A_i,psi dB_i - 1/2 g_i^2 A_i,psi^2 dt)] psi

with ``A_i,psi = A_i - <psi|A_i|psi>``, followed by renormalization when the
scheme asks for it. Ensembles are integrated in batches of trajectories as one
``(batch, dim)`` array; every trajectory still owns an independent Gaussian
stream so results never depend on how batches are scheduled.

Seed splitting: trajectory ``k`` of an ensemble with base seed ``s`` draws from
``PCG64(SeedSequence(s, spawn_key=(k,)))``. Increments are
``sqrt(dt) * Generator.standard_normal`` (numpy's ziggurat), drawn row by row
as ``(n_steps, n_channels)`` blocks.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericError
from .hilbert import ProjectorSet, StateVector, joint_eigenspaces

log = logging.getLogger(__name__)

EULER_MARUYAMA = "euler_maruyama"
EULER_RENORMALIZED = "euler_with_renormalization"
SCHEMES = (EULER_MARUYAMA, EULER_RENORMALIZED)

_NOISE_BUDGET = 4_000_000  # floats per noise chunk


def trajectory_seed_sequence(base_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))


class NoiseRealization:
    """Reproducible stream of Wiener increments for one trajectory.

    Increments are independent ``N(0, dt)`` per channel and per step. Drawing
    ``n`` then ``m`` steps yields the same numbers as drawing ``n + m`` at once.
    """

    def __init__(self, seed: int, dt: float, n_channels: int = 1, trajectory: int | None = None):
        if not dt > 0:
            raise ContractError("dt must be positive")
        self.seed = int(seed)
        self.trajectory = trajectory
        self.dt = float(dt)
        self.n_channels = int(n_channels)
        ss = (trajectory_seed_sequence(seed, trajectory) if trajectory is not None
              else np.random.SeedSequence(self.seed))
        self._rng = np.random.Generator(np.random.PCG64(ss))
        self._sqrt_dt = np.sqrt(self.dt)

    def increments(self, n_steps: int) -> np.ndarray:
        return self._sqrt_dt * self._rng.standard_normal((int(n_steps), self.n_channels))


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    n_steps: int
    couplings: tuple
    scheme: str = EULER_RENORMALIZED

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ContractError(f"dt must be positive and finite, got {self.dt!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ContractError(f"n_steps must be a non-negative integer, got {self.n_steps!r}")
        g = np.atleast_1d(np.asarray(self.couplings, dtype=float))
        if not np.all(np.isfinite(g)):
            raise ContractError("couplings must be finite")
        object.__setattr__(self, "couplings", tuple(float(x) for x in g))
        if self.scheme not in SCHEMES:
            raise ContractError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    @property
    def renormalize(self) -> bool:
        return self.scheme == EULER_RENORMALIZED

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps


class _Generator:
    """Operators of one problem packed for batched stepping."""

    def __init__(self, H, ops: Sequence, couplings):
        ops = list(ops)
        g = np.atleast_1d(np.asarray(couplings, dtype=float))
        if len(g) == 1 and len(ops) > 1:
            g = np.full(len(ops), g[0])
        if len(g) != len(ops):
            raise ContractError(f"{len(ops)} operators but {len(g)} couplings")
        mats = [np.asarray(o, dtype=complex) for o in ops]
        h = None if H is None else np.asarray(H, dtype=complex)
        dims = {m.shape[0] for m in mats} | ({h.shape[0]} if h is not None else set())
        if len(dims) > 1:
            raise ContractError(f"operator dimensions disagree: {sorted(dims)}")
        self.dim = dims.pop() if dims else None
        self.g = g
        self.g2 = g**2
        self.H = None if h is None or not np.any(h) else h
        self.n_ops = len(mats)
        self.diagonal = all(not np.any(m - np.diag(np.diagonal(m))) for m in mats)
        if self.n_ops == 0:
            self.diag = np.zeros((0, self.dim or 0))
            self.mats = np.zeros((0, self.dim or 0, self.dim or 0), dtype=complex)
        elif self.diagonal:
            self.diag = np.stack([np.real(np.diagonal(m)) for m in mats])
            self._g2_diag_sq = self.g2 @ self.diag**2
        else:
            self.mats = np.stack(mats)

    def advance(self, psi: np.ndarray, dB: np.ndarray, dt: float) -> np.ndarray:
        """Euler update ``psi + dpsi`` (un-normalized) of a ``(batch, dim)`` array."""
        if self.n_ops and self.diagonal:
            # sum_k c_k (a_k - m_k)^p expanded into (batch, ops) @ (ops, dim) products
            gdB = dB * self.g
            prob = psi.real**2
            prob += psi.imag**2
            mean = prob @ self.diag.T
            g2m = self.g2 * mean
            fac = gdB @ self.diag
            fac -= 0.5 * dt * (self._g2_diag_sq - 2.0 * (g2m @ self.diag))
            fac += (1.0 - np.sum(gdB * mean, axis=1) - 0.5 * dt * np.sum(g2m * mean, axis=1))[:, None]
            new = psi * fac
            if self.H is not None:
                new -= 1j * dt * (psi @ self.H.T)
            return new
        return psi + self.increment(psi, dB, dt)

    def increment(self, psi: np.ndarray, dB: np.ndarray, dt: float) -> np.ndarray:
        """Un-normalized change of a ``(batch, dim)`` state array for one step."""
        delta = np.zeros_like(psi)
        if self.H is not None:
            delta -= 1j * dt * (psi @ self.H.T)
        if self.n_ops == 0:
            return delta
        gdB = dB * self.g
        a_psi = np.einsum("kij,bj->bki", self.mats, psi) if not self.diagonal else psi[:, None, :] * self.diag[None]
        mean = np.real(np.einsum("bj,bkj->bk", psi.conj(), a_psi))
        cen = a_psi - mean[:, :, None] * psi[:, None, :]
        if self.diagonal:
            cen2 = cen * self.diag[None] - mean[:, :, None] * cen
        else:
            cen2 = np.einsum("kij,bkj->bki", self.mats, cen) - mean[:, :, None] * cen
        delta += np.einsum("bk,bki->bi", gdB, cen) - (0.5 * dt) * np.einsum("k,bki->bi", self.g2, cen2)
        return delta

    def spread(self, psi: np.ndarray) -> np.ndarray:
        """Sum over operators of the state variance ``<A^2> - <A>^2``, per batch row."""
        if self.n_ops == 0:
            return np.zeros(psi.shape[0])
        if self.diagonal:
            prob = psi.real**2 + psi.imag**2
            m1 = prob @ self.diag.T
            m2 = prob @ (self.diag**2).T
            return np.sum(m2 - m1**2, axis=1)
        a_psi = np.einsum("kij,bj->bki", self.mats, psi)
        m1 = np.real(np.einsum("bj,bkj->bk", psi.conj(), a_psi))
        m2 = np.real(np.einsum("bki,bki->bk", a_psi.conj(), a_psi))
        return np.sum(m2 - m1**2, axis=1)


def _step(gen: _Generator, psi: np.ndarray, dB: np.ndarray, dt: float, renormalize: bool, step: int):
    # overflow surfaces as a NumericError below, not as a floating-point warning
    with np.errstate(over="ignore", invalid="ignore"):
        new = gen.advance(psi, dB, dt)
        norms = np.sqrt(np.einsum("bi,bi->b", new.real, new.real) + np.einsum("bi,bi->b", new.imag, new.imag))
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        raise NumericError(f"non-finite or vanishing amplitudes at step {step}", step=step)
    if renormalize:
        new /= norms[:, None]
    return new, norms


def ito_step(psi, H, ops: Sequence, couplings, noise, dt: float, renormalize: bool = True) -> StateVector:
    """Advance one state by one Euler-Maruyama step.

    ``noise`` holds one Wiener increment per operator. With
    ``renormalize=False`` the raw Euler result is returned as an array so its
    norm drift can be inspected.
    """
    vec = np.asarray(psi, dtype=complex).reshape(1, -1)
    gen = _Generator(H, ops, couplings)
    if gen.dim is not None and gen.dim != vec.shape[1]:
        raise ContractError(f"state dimension {vec.shape[1]} != operator dimension {gen.dim}")
    dB = np.asarray(noise, dtype=float).reshape(1, -1)
    if dB.shape[1] != gen.n_ops:
        raise ContractError(f"need {gen.n_ops} noise increments, got {dB.shape[1]}")
    new, _ = _step(gen, vec, dB, float(dt), renormalize, 0)
    return StateVector(new[0]) if renormalize else new[0]


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    expectations: np.ndarray
    projection_weights: np.ndarray
    final_state: StateVector
    eigenvalues: tuple = ()


def _weights(psi: np.ndarray, pmats: np.ndarray, diag_masks: np.ndarray | None) -> np.ndarray:
    if diag_masks is not None:
        return (psi.real**2 + psi.imag**2) @ diag_masks.T
    return np.real(np.einsum("bi,eij,bj->be", psi.conj(), pmats, psi))


def _diag_masks(projectors: ProjectorSet) -> np.ndarray | None:
    mats = projectors.matrices
    if all(not np.any(p - np.diag(np.diagonal(p))) for p in mats):
        return np.real(np.stack([np.diagonal(p) for p in mats]))
    return None


def _expectations(psi: np.ndarray, mats: np.ndarray) -> np.ndarray:
    if mats.shape[0] == 0:
        return np.zeros((psi.shape[0], 0))
    return np.real(np.einsum("bi,kij,bj->bk", psi.conj(), mats, psi))


def evolve_trajectory(psi0, config: EvolutionConfig, H, ops: Sequence, noise: NoiseRealization,
                      record_every: int = 1, record_ops: Sequence | None = None,
                      projectors: ProjectorSet | None = None) -> TrajectoryRecord:
    """Integrate one trajectory, sampling every ``record_every`` steps.

    The record holds ``n_steps // record_every + 1`` samples, the first being
    the initial state. ``record_ops`` defaults to ``ops`` and ``projectors`` to
    the joint eigenspaces of ``ops``.
    """
    if record_every < 1:
        raise ContractError("record_every must be >= 1")
    psi = np.asarray(psi0, dtype=complex).reshape(1, -1).copy()
    gen = _Generator(H, ops, config.couplings)
    if noise.n_channels != gen.n_ops:
        raise ContractError(f"noise has {noise.n_channels} channels, problem has {gen.n_ops} operators")
    if projectors is None:
        projectors = joint_eigenspaces(ops) if ops else joint_eigenspaces([np.zeros((psi.shape[1],) * 2)])
    pmats = projectors.matrices
    masks = _diag_masks(projectors)
    rec_mats = np.stack([np.asarray(o, dtype=complex) for o in (record_ops if record_ops is not None else ops)]) \
        if (record_ops if record_ops is not None else ops) else np.zeros((0, psi.shape[1], psi.shape[1]))

    n_rec = config.n_steps // record_every + 1
    times = np.arange(n_rec) * record_every * config.dt
    exps = np.empty((n_rec, rec_mats.shape[0]))
    wts = np.empty((n_rec, len(projectors)))
    exps[0] = _expectations(psi, rec_mats)[0]
    wts[0] = _weights(psi, pmats, masks)[0]

    chunk = max(1, min(4096, _NOISE_BUDGET // max(1, gen.n_ops)))
    step = 0
    while step < config.n_steps:
        n = min(chunk, config.n_steps - step)
        dBs = noise.increments(n)
        for j in range(n):
            psi, _ = _step(gen, psi, dBs[j:j + 1], config.dt, config.renormalize, step)
            step += 1
            if step % record_every == 0:
                r = step // record_every
                exps[r] = _expectations(psi, rec_mats)[0]
                wts[r] = _weights(psi, pmats, masks)[0]
    final = StateVector(psi[0]) if config.renormalize else StateVector(psi[0], normalize=True)
    return TrajectoryRecord(times, exps, wts, final, tuple(projectors.eigenvalues))


@dataclass
class EnsembleStats:
    n_trajectories: int
    eigenvalues: tuple
    born_weights: np.ndarray
    times: np.ndarray
    outcome_frequencies: np.ndarray
    outcome_counts: np.ndarray
    mean_projection_weight_series: np.ndarray
    variance_series: np.ndarray
    spread_series: np.ndarray
    outcomes: np.ndarray
    flagged: np.ndarray
    final_weights: np.ndarray
    final_states: np.ndarray | None = None
    density_series: np.ndarray | None = None
    extensions: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def standard_error_series(self) -> np.ndarray:
        return np.sqrt(self.variance_series / max(self.n_trajectories, 1))

    def binomial_sigma(self) -> np.ndarray:
        p = self.born_weights
        return np.sqrt(p * (1 - p) / self.n_trajectories)


@dataclass
class _BatchSummary:
    w_sum: np.ndarray
    w_sumsq: np.ndarray
    spread_sum: np.ndarray
    rho_sum: np.ndarray | None
    outcomes: np.ndarray
    flagged: np.ndarray
    final_weights: np.ndarray
    final_states: np.ndarray
    extensions: int


def _run_batch(indices, psi0, config, gen, base_seed, record_every, pmats, masks,
               threshold, max_doublings, record_density) -> _BatchSummary:
    B = len(indices)
    d = psi0.shape[0]
    rngs = [np.random.Generator(np.random.PCG64(trajectory_seed_sequence(base_seed, k))) for k in indices]
    sqrt_dt = np.sqrt(config.dt)
    k_ops = max(gen.n_ops, 1)
    chunk = max(1, min(4096, _NOISE_BUDGET // (B * k_ops)))

    def draw(rows, n):
        return sqrt_dt * np.stack([rngs[r].standard_normal((n, gen.n_ops)) for r in rows], axis=1)

    psi = np.tile(psi0, (B, 1))
    n_rec = config.n_steps // record_every + 1
    n_e = pmats.shape[0]
    w_sum = np.zeros((n_rec, n_e))
    w_sumsq = np.zeros((n_rec, n_e))
    spread_sum = np.zeros(n_rec)
    rho_sum = np.zeros((n_rec, d, d), dtype=complex) if record_density else None

    def record(r, psi):
        w = _weights(psi, pmats, masks)
        w_sum[r] = w.sum(axis=0)
        w_sumsq[r] = (w * w).sum(axis=0)
        spread_sum[r] = gen.spread(psi).sum()
        if rho_sum is not None:
            rho_sum[r] = psi.T @ psi.conj()

    record(0, psi)
    rows = np.arange(B)
    step = 0
    try:
        while step < config.n_steps:
            n = min(chunk, config.n_steps - step)
            dBs = draw(rows, n)
            for j in range(n):
                psi, _ = _step(gen, psi, dBs[j], config.dt, config.renormalize, step)
                step += 1
                if step % record_every == 0:
                    record(step // record_every, psi)
        # extend unresolved trajectories by doubling the horizon
        extensions = 0
        extra = config.n_steps
        for _ in range(max_doublings):
            w = _weights(psi, pmats, masks)
            todo = np.flatnonzero(w.max(axis=1) < threshold)
            if todo.size == 0 or extra == 0:
                break
            extensions += 1
            sub = psi[todo]
            done = 0
            sub_chunk = max(1, min(4096, _NOISE_BUDGET // (todo.size * k_ops)))
            while done < extra:
                n = min(sub_chunk, extra - done)
                dBs = draw(todo, n)
                for j in range(n):
                    sub, _ = _step(gen, sub, dBs[j], config.dt, config.renormalize, step + done)
                    done += 1
            psi[todo] = sub
            step += extra
            extra *= 2
    except NumericError as exc:
        raise NumericError(f"{exc} (trajectories {indices[0]}..{indices[-1]})",
                           step=exc.step, trajectory=int(indices[0])) from exc

    final_w = _weights(psi, pmats, masks)
    outcomes = np.argmax(final_w, axis=1)
    flagged = final_w.max(axis=1) < threshold
    return _BatchSummary(w_sum, w_sumsq, spread_sum, rho_sum, outcomes, flagged, final_w,
                         psi, extensions if config.n_steps else 0)


def run_ensemble(psi0, config: EvolutionConfig, H, ops: Sequence, n_traj: int, base_seed: int,
                 record_every: int | None = None, projectors: ProjectorSet | None = None,
                 threshold: float = 0.999, max_doublings: int = 4, batch_size: int = 4096,
                 workers: int = 1, keep_final_states: bool = True,
                 record_density: bool | None = None) -> EnsembleStats:
    """Integrate ``n_traj`` independent trajectories and reduce them to statistics.

    The outcome of each trajectory is the eigenspace holding the dominant
    projection weight at the final time. Trajectories whose dominant weight is
    still below ``threshold`` are continued (horizon doubled, up to
    ``max_doublings`` times) and flagged if they remain unresolved. Batches are
    merged in index order, so ``workers`` never changes the result.
    """
    if n_traj < 1:
        raise ContractError("n_traj must be >= 1")
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    d = psi0.shape[0]
    gen = _Generator(H, ops, config.couplings)
    if gen.dim is not None and gen.dim != d:
        raise ContractError(f"state dimension {d} != operator dimension {gen.dim}")
    if projectors is None:
        projectors = joint_eigenspaces(ops) if ops else joint_eigenspaces([np.zeros((d, d))])
    pmats = projectors.matrices
    masks = _diag_masks(projectors)
    if record_every is None:
        record_every = max(1, config.n_steps // 50)
    if record_density is None:
        record_density = d <= 64

    starts = list(range(0, n_traj, batch_size))
    jobs = [np.arange(s, min(s + batch_size, n_traj)) for s in starts]

    def work(idx):
        return _run_batch(idx, psi0, config, gen, base_seed, record_every, pmats, masks,
                          threshold, max_doublings, record_density)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, jobs))
    else:
        parts = [work(j) for j in jobs]

    n = float(n_traj)
    w_sum = sum(p.w_sum for p in parts)
    w_sumsq = sum(p.w_sumsq for p in parts)
    mean_w = w_sum / n
    var_w = np.maximum(w_sumsq / n - mean_w**2, 0.0) * (n / (n - 1) if n > 1 else 0.0)
    outcomes = np.concatenate([p.outcomes for p in parts])
    counts = np.bincount(outcomes, minlength=len(projectors))
    flagged = np.concatenate([p.flagged for p in parts])
    if flagged.any():
        log.warning("%d of %d trajectories did not reach weight %.4g", flagged.sum(), n_traj, threshold)
    n_rec = config.n_steps // record_every + 1
    born = _weights(psi0[None, :], pmats, masks)[0]
    return EnsembleStats(
        n_trajectories=n_traj,
        eigenvalues=tuple(projectors.eigenvalues),
        born_weights=born,
        times=np.arange(n_rec) * record_every * config.dt,
        outcome_frequencies=counts / n,
        outcome_counts=counts,
        mean_projection_weight_series=mean_w,
        variance_series=var_w,
        spread_series=sum(p.spread_sum for p in parts) / n,
        outcomes=outcomes,
        flagged=flagged,
        final_weights=np.concatenate([p.final_weights for p in parts]),
        final_states=np.concatenate([p.final_states for p in parts]) if keep_final_states else None,
        density_series=(sum(p.rho_sum for p in parts) / n) if record_density else None,
        extensions=max(p.extensions for p in parts),
        meta={"base_seed": int(base_seed), "dt": config.dt, "n_steps": config.n_steps,
              "record_every": record_every, "scheme": config.scheme},
    )


@dataclass
class MartingaleReport:
    times: np.ndarray
    deviations: np.ndarray
    tolerances: np.ndarray
    passed: np.ndarray
    sufficient_statistics: bool

    @property
    def all_passed(self) -> bool:
        return bool(self.sufficient_statistics and self.passed.all())

    @property
    def worst_ratio(self) -> float:
        return float(np.max(self.deviations / self.tolerances))


def martingale_check(stats: EnsembleStats, psi0, projectors: ProjectorSet,
                     n_se: float = 4.0, floor: float = 1e-12) -> MartingaleReport:
    """Check that ensemble-mean projection weights stay at their initial values.

    Each time slice passes when ``|mean - ||P psi0||^2| <= n_se * s.e.`` (with
    an absolute ``floor`` so exactly constant series pass). A single
    trajectory cannot supply a standard error and is reported as insufficient.
    """
    p0 = projectors.weights(psi0)
    dev = np.abs(stats.mean_projection_weight_series - p0[None, :])
    tol = np.maximum(n_se * stats.standard_error_series, floor)
    passed = np.all(dev <= tol, axis=1)
    return MartingaleReport(stats.times, dev, tol, passed, stats.n_trajectories > 1)


def projection_rule_angles(stats: EnsembleStats, psi0, projectors: ProjectorSet) -> dict:
    """Angles between resolved final states and ``P psi0 / ||P psi0||``, per outcome.

    The angle is ``arccos |<target|psi_final>|``, so global phases do not count.
    Flagged (unresolved) trajectories are skipped.
    """
    if stats.final_states is None:
        raise ContractError("ensemble was run without keep_final_states")
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    out = {}
    for e, P in enumerate(projectors.matrices):
        rows = np.flatnonzero((stats.outcomes == e) & ~stats.flagged)
        target = P @ psi0
        norm = np.linalg.norm(target)
        if rows.size == 0 or norm == 0:
            out[e] = np.zeros(0)
            continue
        target /= norm
        ov = np.abs(stats.final_states[rows] @ target.conj())
        out[e] = np.arccos(np.clip(ov, 0.0, 1.0))
    return out


@dataclass
class OrderTable:
    dts: np.ndarray
    errors: np.ndarray
    slope: float | None
    reference_dt: float

    def ratios(self) -> np.ndarray:
        return self.errors[:-1] / self.errors[1:]


def two_level_problem(g: float = 1.0, omega: float = 1.0):
    """The fixed 2-level instance used by :func:`strong_order_probe`."""
    A = np.diag([1.0, -1.0])
    H = 0.5 * omega * np.array([[0.0, 1.0], [1.0, 0.0]])
    psi0 = np.array([np.sqrt(0.3), np.sqrt(0.7) * np.exp(0.4j)])
    return psi0, H, [A], [g]


def strong_order_probe(dts: Sequence[float], g: float = 1.0, omega: float = 1.0, horizon: float = 1.0,
                       n_paths: int = 2048, seed: int = 2024, ref_factor: int = 8,
                       scheme: str = EULER_RENORMALIZED) -> OrderTable:
    """Self-convergence of the integrator on one shared Brownian path per sample.

    The reference run uses ``min(dts) / ref_factor``; coarse increments are
    sums of reference increments, so every resolution sees the same path.
    Errors are r.m.s. endpoint distances over ``n_paths`` samples.
    """
    dts = np.asarray(dts, dtype=float)
    if dts.ndim != 1 or dts.size == 0:
        raise ContractError("need at least one dt")
    if np.any(np.diff(dts) >= 0):
        raise ContractError("dts must be strictly decreasing")
    dt_ref = dts[-1] / ref_factor
    n_ref = int(round(horizon / dt_ref))
    if abs(n_ref * dt_ref - horizon) > 1e-9 * horizon:
        raise ContractError("horizon must be a multiple of the reference dt")
    factors = dts / dt_ref
    if np.any(np.abs(factors - np.round(factors)) > 1e-9):
        raise ContractError("every dt must be an integer multiple of the reference dt")
    factors = np.round(factors).astype(int)

    psi0, H, ops, couplings = two_level_problem(g, omega)
    gen = _Generator(H, ops, couplings)
    rng = np.random.Generator(np.random.PCG64(seed))
    fine = np.sqrt(dt_ref) * rng.standard_normal((n_ref, n_paths, 1))
    renorm = scheme == EULER_RENORMALIZED

    def endpoint(factor):
        dt = dt_ref * factor
        psi = np.tile(psi0, (n_paths, 1)).astype(complex)
        coarse = fine.reshape(n_ref // factor, factor, n_paths, 1).sum(axis=1)
        for j in range(coarse.shape[0]):
            psi, _ = _step(gen, psi, coarse[j], dt, renorm, j)
        return psi

    ref = endpoint(1)
    errors = np.array([np.sqrt(np.mean(np.sum(np.abs(endpoint(f) - ref) ** 2, axis=1))) for f in factors])
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0]) if dts.size > 1 else None
    return OrderTable(dts, errors, slope, dt_ref)


def norm_drift(psi, H, ops: Sequence, couplings, dt: float, n_samples: int = 20000, seed: int = 7):
    """R.m.s. and mean of ``||psi'|| - 1`` for one un-normalized Euler step."""
    gen = _Generator(H, ops, couplings)
    vec = np.tile(np.asarray(psi, dtype=complex).reshape(-1), (n_samples, 1))
    rng = np.random.Generator(np.random.PCG64(seed))
    dB = np.sqrt(dt) * rng.standard_normal((n_samples, gen.n_ops))
    _, norms = _step(gen, vec, dB, dt, False, 0)
    drift = norms - 1.0
    return float(np.sqrt(np.mean(drift**2))), float(np.mean(drift))


