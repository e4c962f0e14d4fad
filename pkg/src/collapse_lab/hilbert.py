"""Finite-dimensional Hilbert space primitives.

States and operators are thin immutable wrappers around numpy arrays. Every
function here also accepts plain arrays, so hot loops elsewhere can work on
raw ``ndarray`` batches and only wrap results at the public boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractError, NumericError

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-12
PROJECTOR_TOL = 1e-10


class StateVector:
    """Normalized complex amplitude vector. Read-only after construction."""

    __slots__ = ("_amps",)

    def __init__(self, amplitudes, normalize: bool = True):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        if amps.size == 0:
            raise ContractError("state dimension must be >= 1")
        if not np.all(np.isfinite(amps)):
            raise NumericError("state amplitudes are not finite")
        norm = np.linalg.norm(amps)
        if normalize:
            if norm == 0.0:
                raise ContractError("cannot normalize the zero vector")
            amps = amps / norm
        elif abs(norm - 1.0) > NORM_TOL:
            raise ContractError(f"state norm {norm!r} differs from 1")
        amps.setflags(write=False)
        self._amps = amps

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amps

    @property
    def dim(self) -> int:
        return self._amps.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._amps
        return self._amps.astype(dtype)

    def __len__(self):
        return self.dim

    def __repr__(self):
        return f"StateVector(dim={self.dim})"

    @classmethod
    def from_weights(cls, weights, phases=None) -> "StateVector":
        """State with ``|c_k|^2 = weights[k]`` (weights are normalized first)."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ContractError("weights must be non-negative")
        amps = np.sqrt(w / w.sum()).astype(complex)
        if phases is not None:
            amps = amps * np.exp(1j * np.asarray(phases, dtype=float))
        return cls(amps)

    @classmethod
    def basis(cls, dim: int, index: int) -> "StateVector":
        amps = np.zeros(dim, dtype=complex)
        amps[index] = 1.0
        return cls(amps)


class HermitianOperator:
    """Dense self-adjoint matrix. Read-only after construction."""

    __slots__ = ("_mat",)

    def __init__(self, matrix, tol: float = HERMITIAN_TOL, symmetrize: bool = False):
        mat = np.array(matrix, dtype=complex)
        if mat.ndim == 1:
            mat = np.diag(mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ContractError(f"operator must be square, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise NumericError("operator entries are not finite")
        asym = float(np.max(np.abs(mat - mat.conj().T))) if mat.size else 0.0
        if symmetrize:
            mat = 0.5 * (mat + mat.conj().T)
        elif asym > tol:
            raise ContractError(f"operator is not Hermitian (max asymmetry {asym:.3e})")
        mat.setflags(write=False)
        self._mat = mat

    @property
    def matrix(self) -> np.ndarray:
        return self._mat

    @property
    def dim(self) -> int:
        return self._mat.shape[0]

    def is_diagonal(self) -> bool:
        m = self._mat
        return not np.any(m - np.diag(np.diagonal(m)))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._mat
        return self._mat.astype(dtype)

    def __add__(self, other):
        return HermitianOperator(self._mat + _as_matrix(other), symmetrize=True)

    def __sub__(self, other):
        return HermitianOperator(self._mat - _as_matrix(other), symmetrize=True)

    def __mul__(self, scalar):
        if np.iscomplexobj(scalar) and np.imag(scalar) != 0:
            raise ContractError("Hermitian operators only scale by real numbers")
        return HermitianOperator(self._mat * float(np.real(scalar)))

    __rmul__ = __mul__

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim})"

    @classmethod
    def zeros(cls, dim: int) -> "HermitianOperator":
        return cls(np.zeros((dim, dim)))

    @classmethod
    def identity(cls, dim: int) -> "HermitianOperator":
        return cls(np.eye(dim))


def _as_matrix(op) -> np.ndarray:
    if isinstance(op, HermitianOperator):
        return op.matrix
    mat = np.asarray(op, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ContractError(f"operator must be square, got shape {mat.shape}")
    return mat


def _as_vector(psi) -> np.ndarray:
    if isinstance(psi, StateVector):
        return psi.amplitudes
    return np.asarray(psi, dtype=complex).reshape(-1)


def _check_dims(mat: np.ndarray, vec: np.ndarray):
    if mat.shape[0] != vec.shape[0]:
        raise ContractError(
            f"dimension mismatch: operator is {mat.shape[0]}x{mat.shape[1]}, "
            f"state has dimension {vec.shape[0]}"
        )


def expectation(op, psi) -> float:
    """Return the real expectation value ``<psi|A|psi>``."""
    mat, vec = _as_matrix(op), _as_vector(psi)
    _check_dims(mat, vec)
    return float(np.real(np.vdot(vec, mat @ vec)))


def expectation_imag(op, psi) -> float:
    """Imaginary part of the raw bilinear form; a Hermiticity diagnostic."""
    mat, vec = _as_matrix(op), _as_vector(psi)
    _check_dims(mat, vec)
    return float(np.imag(np.vdot(vec, mat @ vec)))


def centered_apply(op, psi) -> np.ndarray:
    """Return ``(A - <A>) psi`` as an unnormalized vector."""
    mat, vec = _as_matrix(op), _as_vector(psi)
    _check_dims(mat, vec)
    a_psi = mat @ vec
    mean = np.real(np.vdot(vec, a_psi))
    return a_psi - mean * vec


@dataclass(frozen=True)
class ProjectorSet:
    """Orthogonal projectors onto the eigenspaces of an operator."""

    projectors: tuple
    eigenvalues: tuple

    def __len__(self):
        return len(self.projectors)

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([p.matrix for p in self.projectors])

    @property
    def ranks(self) -> list[int]:
        return [int(round(np.real(np.trace(p.matrix)))) for p in self.projectors]

    def weights(self, psi) -> np.ndarray:
        """Projection weights ``||P_e psi||^2`` for each eigenspace."""
        vec = _as_vector(psi)
        return np.array([np.real(np.vdot(vec, p.matrix @ vec)) for p in self.projectors])

    def project(self, index: int, psi) -> StateVector:
        """Normalized projection ``P psi / ||P psi||`` (the projection rule)."""
        vec = self.projectors[index].matrix @ _as_vector(psi)
        return StateVector(vec)

    def check(self, tol: float = PROJECTOR_TOL) -> float:
        """Largest violation of idempotence, orthogonality and completeness."""
        mats = self.matrices
        d = mats.shape[1]
        worst = 0.0
        for i, p in enumerate(mats):
            worst = max(worst, np.max(np.abs(p @ p - p)), np.max(np.abs(p - p.conj().T)))
            for q in mats[i + 1:]:
                worst = max(worst, np.max(np.abs(p @ q)))
        worst = max(worst, np.max(np.abs(mats.sum(axis=0) - np.eye(d))))
        if worst > tol:
            raise NumericError(f"projector set violates invariants by {worst:.3e}")
        return float(worst)


def _group_eigenvalues(evals: np.ndarray, tol: float) -> list[list[int]]:
    # evals sorted ascending; chain-merge neighbours closer than tol
    groups = [[0]]
    for k in range(1, len(evals)):
        if evals[k] - evals[groups[-1][-1]] <= tol:
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def spectral_decompose(op, degeneracy_tol: float | None = None) -> ProjectorSet:
    """Eigenspace projectors of a Hermitian operator.

    Eigenvalues closer than ``degeneracy_tol`` (default ``1e-9 * ||A||``) are
    merged into one eigenspace; the reported eigenvalue is the group mean.
    """
    mat = _as_matrix(op)
    d = mat.shape[0]
    scale = float(np.linalg.norm(mat, 2)) if d else 0.0
    if degeneracy_tol is None:
        degeneracy_tol = 1e-9 * max(scale, 1e-300)
    try:
        evals, evecs = np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(mat) if d else float("nan")
        raise NumericError(f"eigensolver failed (norm {scale:.3e}, cond {cond:.3e}): {exc}")
    projectors, values = [], []
    for group in _group_eigenvalues(evals, degeneracy_tol):
        vecs = evecs[:, group]
        projectors.append(HermitianOperator(vecs @ vecs.conj().T, symmetrize=True))
        values.append(float(np.mean(evals[group])))
    return ProjectorSet(tuple(projectors), tuple(values))


def joint_eigenspaces(ops: Sequence, degeneracy_tol: float = 1e-9, seed: int = 12345) -> ProjectorSet:
    """Common eigenspaces of mutually commuting Hermitian operators.

    Diagonal inputs are grouped exactly by their tuple of diagonal entries.
    Dense inputs are decomposed through a generic random linear combination,
    whose eigenspaces coincide with the joint ones almost surely. The reported
    eigenvalues are those of the first operator.
    """
    mats = [_as_matrix(o) for o in ops]
    if not mats:
        raise ContractError("need at least one operator")
    d = mats[0].shape[0]
    if all(not np.any(m - np.diag(np.diagonal(m))) for m in mats):
        diag = np.stack([np.real(np.diagonal(m)) for m in mats], axis=1)
        scale = max(float(np.max(np.abs(diag))), 1e-300)
        keys = np.round(diag / (degeneracy_tol * scale)).astype(np.int64)
        order = {}
        for idx, key in enumerate(map(tuple, keys)):
            order.setdefault(key, []).append(idx)
        groups = sorted(order.values(), key=lambda g: (diag[g[0], 0], g[0]))
        projectors, values = [], []
        for g in groups:
            p = np.zeros((d, d))
            p[g, g] = 1.0
            projectors.append(HermitianOperator(p))
            values.append(float(diag[g[0], 0]))
        return ProjectorSet(tuple(projectors), tuple(values))
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(0.5, 1.5, size=len(mats))
    combo = sum(c * m / max(np.linalg.norm(m, 2), 1e-300) for c, m in zip(coeffs, mats))
    pset = spectral_decompose(combo, degeneracy_tol)
    values = tuple(
        float(np.real(np.trace(p.matrix @ mats[0])) / np.real(np.trace(p.matrix)))
        for p in pset.projectors
    )
    return ProjectorSet(pset.projectors, values)


def free_evolution(h0, dt: float) -> np.ndarray:
    """Unitary ``exp(-i h0 dt)`` built from the eigendecomposition of ``h0``."""
    mat = _as_matrix(h0)
    if not np.isfinite(dt):
        raise ContractError("dt must be finite")
    evals, evecs = np.linalg.eigh(mat)
    phases = np.exp(-1j * evals * dt)
    u = (evecs * phases) @ evecs.conj().T
    if not np.all(np.isfinite(u)):
        raise NumericError("free evolution overflowed")
    return u


def commutator_norm(a, b) -> float:
    ma, mb = _as_matrix(a), _as_matrix(b)
    return float(np.linalg.norm(ma @ mb - mb @ ma))


class TensorSpace:
    """Composite space of several factors with index bookkeeping."""

    def __init__(self, factor_dimensions: Sequence[int]):
        dims = tuple(int(d) for d in factor_dimensions)
        if not dims or any(d < 1 for d in dims):
            raise ContractError("factor dimensions must be positive integers")
        self.factor_dimensions = dims
        self.dim = int(np.prod(dims))

    def composite_index(self, factor_indices: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(factor_indices), self.factor_dimensions))

    def factor_indices(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.factor_dimensions))

    def embed(self, op, factor: int) -> np.ndarray:
        """``1 x ... x op x ... x 1`` with ``op`` on the given factor."""
        mat = _as_matrix(op)
        if mat.shape[0] != self.factor_dimensions[factor]:
            raise ContractError(
                f"operator dimension {mat.shape[0]} does not match factor {factor} "
                f"of dimension {self.factor_dimensions[factor]}"
            )
        out = np.ones((1, 1), dtype=complex)
        for k, d in enumerate(self.factor_dimensions):
            out = np.kron(out, mat if k == factor else np.eye(d))
        return out

    def product_state(self, *factors) -> np.ndarray:
        out = np.ones(1, dtype=complex)
        for f in factors:
            out = np.kron(out, _as_vector(f))
        return out


class CancellationReport(NamedTuple):
    discrepancy: float
    squared_discrepancy: float
    precondition_holds: bool


def environment_cancellation_check(S, L_part, E_part, psi, space: TensorSpace,
                                   tol: float = 1e-10) -> CancellationReport:
    """Compare ``(S - <S>) psi`` against ``(L - <L>) psi`` for ``S = L x 1 + 1 x E``.

    The identity holds exactly when every environment branch of ``psi`` is an
    eigenvector of ``E`` with one common eigenvalue. When that precondition
    fails the honest discrepancy is still returned, with
    ``precondition_holds=False``. Both the linear and the squared centered
    operators are compared.
    """
    if len(space.factor_dimensions) != 2:
        raise ContractError("cancellation check needs a (local, environment) split")
    vec = _as_vector(psi)
    if vec.shape[0] != space.dim:
        raise ContractError(f"state dimension {vec.shape[0]} != tensor space {space.dim}")
    L = space.embed(L_part, 0)
    E = space.embed(E_part, 1)
    s = _as_matrix(S)
    if s.shape != L.shape or np.max(np.abs(s - (L + E))) > 1e-9 * max(1.0, np.max(np.abs(s))):
        raise ContractError("S must equal L x 1 + 1 x E on the tensor space")

    e_psi = E @ vec
    e_mean = np.real(np.vdot(vec, e_psi))
    eig_residual = float(np.linalg.norm(e_psi - e_mean * vec))
    scale = max(1.0, float(np.linalg.norm(E, 2)))

    cs = centered_apply(s, vec)
    cl = centered_apply(L, vec)
    disc = float(np.linalg.norm(cs - cl))
    s_mean = np.real(np.vdot(vec, s @ vec))
    l_mean = np.real(np.vdot(vec, L @ vec))
    cs2 = s @ cs - s_mean * cs
    cl2 = L @ cl - l_mean * cl
    disc2 = float(np.linalg.norm(cs2 - cl2))
    return CancellationReport(disc, disc2, eig_residual <= tol * scale)
