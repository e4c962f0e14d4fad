"""Mass-density reduction process on a spatial lattice.

Smeared density ``D(x) = int F(xb - x) m(xb)`` and sphere mass ``M(x)`` are
diagonal in a first-quantized placement basis: each basis state puts every
particle at a definite position. The white-noise field with covariance
``delta^3(x - x') dt`` becomes one independent increment per cell with
variance ``dt / dV``, so ``sum_cells dV dB_cell`` has the continuum
covariance.

Physical inputs are cgs. Simulations run in lattice units: lengths in ``a``,
masses in ``m0`` and time in ``1 / (g^2 a^3)``, which makes the lattice
coupling of the mass form equal to one.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import master
from .errors import ContractError
from .hilbert import HermitianOperator, StateVector
from .lattice import Lattice
from .sde import EvolutionConfig, _Generator, _step, run_ensemble

log = logging.getLogger(__name__)

PROTON_MASS_G = 1.67262192369e-24


class ResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SmearingKernel:
    kind: str
    a: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "square"):
            raise ContractError(f"kernel kind must be 'gaussian' or 'square', got {self.kind!r}")
        if not self.a > 0:
            raise ContractError("kernel width a must be positive")

    @property
    def normalization(self) -> float:
        if self.kind == "gaussian":
            return (1.0 / (2.0 * math.pi * self.a**2)) ** 1.5
        return 3.0 / (4.0 * math.pi * self.a**3)

    def __call__(self, r2):
        """Kernel value at squared distance ``r2``."""
        r2 = np.asarray(r2, dtype=float)
        if self.kind == "gaussian":
            return self.normalization * np.exp(-0.5 * r2 / self.a**2)
        return np.where(r2 <= self.a**2, self.normalization, 0.0)

    def support_radius(self, rel: float = 1e-16) -> float:
        if self.kind == "square":
            return self.a
        return self.a * math.sqrt(-2.0 * math.log(rel))


@dataclass(frozen=True)
class PhysicalParams:
    """Strength and width constants, cgs.

    ``g_sq`` is the squared coupling of the mass form,
    ``(3 / (4 pi a^3))^2 g0_sq``.
    """

    a: float = 1e-5  # cm
    g0_sq: float = 1e-30  # cm^3 s^-1
    m0: float = PROTON_MASS_G  # g

    def __post_init__(self):
        for name in ("a", "g0_sq", "m0"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")

    @property
    def g_sq(self) -> float:
        return (3.0 / (4.0 * math.pi * self.a**3)) ** 2 * self.g0_sq

    @property
    def units(self) -> "LatticeUnits":
        return LatticeUnits(length=self.a, time=1.0 / (self.g_sq * self.a**3), mass=self.m0)


@dataclass(frozen=True)
class LatticeUnits:
    length: float  # cm
    time: float  # s
    mass: float  # g

    def log(self):
        log.info("lattice units: length %.6g cm, time %.6g s, mass %.6g g", self.length, self.time, self.mass)


@dataclass
class ConfigurationBasisModel:
    """Superposition of classical placements of ``n_particles`` point masses.

    ``placements[j, k]`` is the position (cm) of particle ``k`` in basis state ``j``.
    """

    masses: np.ndarray
    placements: np.ndarray
    amplitudes: np.ndarray = None

    def __post_init__(self):
        self.masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        self.placements = np.asarray(self.placements, dtype=float)
        if self.placements.ndim == 2:
            self.placements = self.placements[:, None, :]
        if self.placements.ndim != 3 or self.placements.shape[2] != 3:
            raise ContractError("placements must have shape (n_placements, n_particles, 3)")
        if self.placements.shape[0] == 0 or self.masses.size == 0:
            raise ContractError("model has no placements or no particles")
        if self.placements.shape[1] != self.masses.size:
            raise ContractError(f"{self.masses.size} masses but {self.placements.shape[1]} particles per placement")
        if np.any(self.masses <= 0):
            raise ContractError("masses must be positive")
        if self.amplitudes is None:
            self.amplitudes = np.ones(self.n_placements)
        self.amplitudes = StateVector(self.amplitudes).amplitudes

    @property
    def n_placements(self) -> int:
        return self.placements.shape[0]

    @property
    def n_particles(self) -> int:
        return self.masses.size

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def state(self) -> StateVector:
        return StateVector(self.amplitudes)


@dataclass
class CellOperators(Sequence):
    """Per-cell diagonal operators stored as ``values[cell, placement]``."""

    values: np.ndarray
    cell_volume: float
    units: str = ""

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, cell):
        return HermitianOperator(np.diag(self.values[cell]))

    @property
    def active_cells(self) -> np.ndarray:
        """Cells whose operator is not a multiple of the identity."""
        v = self.values
        return np.flatnonzero(np.any(v != v[:, :1], axis=1))

    def max_commutator(self) -> float:
        # diagonal matrices commute identically; kept as an explicit check
        return 0.0 if self.values.ndim == 2 else float("nan")


def _validate(model: ConfigurationBasisModel, lattice: Lattice, a: float, margin: float = 3.0):
    if a < lattice.cell_size:
        warnings.warn(f"kernel width {a:.3g} is below the cell size {lattice.cell_size:.3g}; smearing unresolved",
                      ResolutionWarning)
    lo = np.asarray(lattice.origin)
    hi = lo + lattice.extent
    thick = np.asarray(lattice.n_cells) > 1
    pts = model.placements.reshape(-1, 3)
    gap = np.minimum(pts - lo, hi - pts)[:, thick]
    if gap.size and gap.min() < margin * a - 1e-12 * a:
        raise ContractError(
            f"model mass lies {gap.min() / a:.3g} a from the lattice edge; at least {margin} a required"
        )


def _cell_values(model: ConfigurationBasisModel, lattice: Lattice, kernel_fn, radius: float) -> np.ndarray:
    centers = lattice.centers
    out = np.zeros((lattice.size, model.n_placements))
    for j in range(model.n_placements):
        for k in range(model.n_particles):
            p = model.placements[j, k]
            # only cells inside the support radius are touched
            lo = np.floor((p - radius - np.asarray(lattice.origin)) / lattice.cell_size).astype(int)
            hi = np.ceil((p + radius - np.asarray(lattice.origin)) / lattice.cell_size).astype(int)
            lo = np.clip(lo, 0, np.asarray(lattice.n_cells) - 1)
            hi = np.clip(hi, 0, np.asarray(lattice.n_cells) - 1)
            ii, jj, kk = np.meshgrid(*[np.arange(lo[a], hi[a] + 1) for a in range(3)], indexing="ij")
            cells = np.ravel_multi_index((ii.ravel(), jj.ravel(), kk.ravel()), lattice.n_cells)
            r2 = np.sum((centers[cells] - p) ** 2, axis=1)
            out[cells, j] += model.masses[k] * kernel_fn(r2)
    return out


def build_smeared_density(model: ConfigurationBasisModel, lattice: Lattice, kernel: SmearingKernel) -> CellOperators:
    """Diagonal ``D(x_cell)`` for every cell, in g cm^-3."""
    _validate(model, lattice, kernel.a)
    vals = _cell_values(model, lattice, kernel, kernel.support_radius())
    return CellOperators(vals, lattice.cell_volume, "g/cm^3")


def build_smeared_mass(model: ConfigurationBasisModel, lattice: Lattice, params: PhysicalParams) -> CellOperators:
    """Diagonal ``M(x_cell)``: total mass within distance ``a`` of each cell centre, in g."""
    _validate(model, lattice, params.a)
    a2 = params.a**2
    vals = _cell_values(model, lattice, lambda r2: np.where(r2 <= a2, 1.0, 0.0), params.a)
    return CellOperators(vals, lattice.cell_volume, "g")


def _form_coupling_sq(form: str, params: PhysicalParams) -> float:
    # squared coupling in front of (operator / m0), cgs
    if form == "mass":
        return params.g_sq
    if form == "density":
        return params.g0_sq
    raise ContractError(f"form must be 'mass' or 'density', got {form!r}")


def decay_rate(cell_ops: CellOperators, params: PhysicalParams, form: str = "mass", i: int = 0, j: int = 1) -> float:
    """Coherence decay rate between placements ``i`` and ``j`` in s^-1.

    ``Gamma = 1/2 (g^2 / m0^2) sum_cells dV (O_i(x) - O_j(x))^2``.
    """
    diff = cell_ops.values[:, i] - cell_ops.values[:, j]
    return 0.5 * _form_coupling_sq(form, params) / params.m0**2 * cell_ops.cell_volume * float(diff @ diff)


def lattice_couplings(cell_ops: CellOperators, params: PhysicalParams, form: str = "mass"):
    """Active-cell diagonal operators and couplings for the SDE engine, lattice units.

    Cell ``c`` contributes ``g sqrt(dV) (O_c / m0)`` driven by a unit-rate
    Wiener increment; this is the ``dt / dV`` variance rendering rescaled.
    """
    units = params.units
    active = cell_ops.active_cells
    vals = cell_ops.values[active] / params.m0
    if form == "density":
        vals = vals * units.length**3
    if form == "density":
        g_sq_lat = params.g0_sq * units.time / units.length**3
    else:
        g_sq_lat = params.g_sq * units.time * units.length**3
    dv_lat = cell_ops.cell_volume / units.length**3
    coupling = math.sqrt(g_sq_lat * dv_lat)
    return active, vals, coupling


def mass_step(psi, H, cell_ops: CellOperators, params: PhysicalParams, lattice: Lattice, noise, dt: float,
              form: str = "mass") -> StateVector:
    """One Euler step of the mass-form (or density-form) reduction equation, cgs.

    ``noise`` holds one increment per lattice cell with variance ``dt / dV``.
    ``dt`` is in seconds and ``H`` in rad/s (hbar = 1 energy units).
    """
    noise = np.asarray(noise, dtype=float).reshape(-1)
    if noise.size != lattice.size or len(cell_ops) != lattice.size:
        raise ContractError("need one operator and one noise increment per lattice cell")
    active = cell_ops.active_cells
    g = math.sqrt(_form_coupling_sq(form, params))
    dv = lattice.cell_volume
    diag = cell_ops.values[active] / params.m0
    # sum_c dV g (O/m0) dB_c == sum_c [g sqrt(dV) O/m0] [sqrt(dV) dB_c]
    gen = _Generator(H, [np.diag(d) for d in diag], np.full(active.size, g * math.sqrt(dv)))
    vec = np.asarray(psi, dtype=complex).reshape(1, -1)
    new, _ = _step(gen, vec, (noise[active] * math.sqrt(dv))[None, :], dt, True, 0)
    return StateVector(new[0])


@dataclass
class DecayResult:
    times: np.ndarray  # lattice time units
    coherence: np.ndarray  # |ensemble-mean rho_01(t)|
    gamma_ensemble: float  # lattice units
    gamma_oracle: float  # lattice units
    gamma_formula: float  # lattice units
    units: LatticeUnits
    n_traj: int
    extra: dict = field(default_factory=dict)

    @property
    def relative_error(self) -> float:
        return abs(self.gamma_ensemble - self.gamma_oracle) / self.gamma_oracle


def simulate_decay(model: ConfigurationBasisModel, lattice: Lattice, params: PhysicalParams, n_traj: int,
                   seed: int, horizon_gamma: float = 1.0, n_steps: int = 400, form: str = "mass",
                   kernel: SmearingKernel | None = None, n_records: int = 20, workers: int = 1) -> DecayResult:
    """Ensemble coherence decay of a two-placement superposition.

    Runs ``n_traj`` trajectories with ``H = 0`` up to ``Gamma t = horizon_gamma``
    and fits ``rho_01(t) = rho_01(0) exp(-Gamma t)`` through the origin in log
    space. The oracle rate comes from the 2x2 master equation built on the same
    lattice operators.
    """
    if model.n_placements != 2:
        raise ContractError("decay simulation needs exactly two placements")
    units = params.units
    units.log()
    if form == "mass":
        ops = build_smeared_mass(model, lattice, params)
    else:
        ops = build_smeared_density(model, lattice, kernel or SmearingKernel("gaussian", params.a))
    active, vals, coupling = lattice_couplings(ops, params, form)
    gamma_formula = decay_rate(ops, params, form) * units.time
    if gamma_formula == 0.0:
        raise ContractError("placements have identical mass distributions; no decay to measure")
    diag_ops = [np.diag(v) for v in vals]
    couplings = np.full(len(diag_ops), coupling)

    t_end = horizon_gamma / gamma_formula
    psi0 = model.amplitudes
    rho0 = master.pure_density(psi0)
    oracle = master.solve(rho0, np.zeros((2, 2)), diag_ops, couplings, [t_end])
    gamma_oracle = -math.log(abs(oracle[0][0, 1]) / abs(rho0[0, 1])) / t_end

    dt = t_end / n_steps
    record_every = max(1, n_steps // n_records)
    cfg = EvolutionConfig(dt, n_steps, tuple(couplings))
    stats = run_ensemble(psi0, cfg, None, diag_ops, n_traj, seed, record_every=record_every,
                         record_density=True, keep_final_states=False, max_doublings=0, workers=workers,
                         threshold=0.0)
    times = stats.times
    coh = np.abs(stats.density_series[:, 0, 1])
    y = np.log(coh / abs(rho0[0, 1]))
    mask = times > 0
    gamma_fit = float(-np.sum(times[mask] * y[mask]) / np.sum(times[mask] ** 2))
    return DecayResult(times, coh, gamma_fit, gamma_oracle, gamma_formula, units, n_traj,
                       {"active_cells": int(active.size), "coupling": coupling, "dt": dt})


def two_placement_model(lattice: Lattice, separation_cells: float, n_particles: int = 1,
                        mass: float = PROTON_MASS_G, axis: int = 0) -> ConfigurationBasisModel:
    """Rigid body of co-located particles displaced along ``axis``.

    The two placements sit symmetrically about the lattice centre,
    ``separation_cells`` cell widths apart, with equal amplitudes.
    """
    mid = np.asarray(lattice.origin) + 0.5 * lattice.extent
    shift = np.zeros(3)
    shift[axis] = 0.5 * separation_cells * lattice.cell_size
    p1, p2 = mid - shift, mid + shift
    placements = np.stack([np.tile(p1, (n_particles, 1)), np.tile(p2, (n_particles, 1))])
    return ConfigurationBasisModel(np.full(n_particles, mass), placements)


def reduction_rate_table(separations: Sequence[int], n_particles_list: Sequence[int], params: PhysicalParams,
                         lattice: Lattice, kernel: str = "square") -> list:
    """Decay rates for displaced rigid bodies.

    ``separations`` are in cells. ``kernel="square"`` uses the sphere-mass form,
    ``"gaussian"`` the smeared-density form with the Gaussian kernel.
    """
    rows = []
    units = params.units
    for sep in separations:
        for n in n_particles_list:
            model = two_placement_model(lattice, float(sep), int(n))
            if kernel == "square":
                ops = build_smeared_mass(model, lattice, params)
                gamma = decay_rate(ops, params, "mass")
            elif kernel == "gaussian":
                ops = build_smeared_density(model, lattice, SmearingKernel("gaussian", params.a))
                gamma = decay_rate(ops, params, "density")
            else:
                raise ContractError(f"unknown kernel {kernel!r}")
            rows.append({
                "separation_cells": float(sep),
                "separation_a": sep * lattice.cell_size / params.a,
                "n_particles": int(n),
                "kernel": kernel,
                "gamma_per_s": gamma,
                "gamma_lattice": gamma * units.time,
            })
    return rows
