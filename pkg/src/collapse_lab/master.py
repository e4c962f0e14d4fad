"""Deterministic master-equation oracle.

Solves ``drho/dt = -i[H, rho] - 1/2 sum_i g_i^2 [A_i, [A_i, rho]]`` exactly by
exponentiating the Liouvillian superoperator. It shares no code with the
trajectory integrator and serves as the independent check on ensemble
averages.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ContractError


def _mat(op) -> np.ndarray:
    return np.asarray(op, dtype=complex)


def liouvillian(H, ops: Sequence, couplings: Sequence[float]) -> np.ndarray:
    """Column-stacking superoperator, ``vec(A X B) = (B^T kron A) vec(X)``."""
    h = _mat(H)
    d = h.shape[0]
    eye = np.eye(d)
    gen = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    if len(ops) != len(couplings):
        raise ContractError("one coupling per operator required")
    for op, g in zip(ops, couplings):
        a = _mat(op)
        a2 = a @ a
        gen += -0.5 * g**2 * (np.kron(eye, a2) + np.kron(a2.T, eye) - 2.0 * np.kron(a.T, a))
    return gen


def solve(rho0, H, ops: Sequence, couplings: Sequence[float], times) -> np.ndarray:
    """Density matrices at each requested time, shape ``(len(times), d, d)``."""
    rho0 = _mat(rho0)
    d = rho0.shape[0]
    gen = liouvillian(H, ops, couplings)
    v0 = rho0.reshape(-1, order="F")
    out = np.empty((len(times), d, d), dtype=complex)
    for k, t in enumerate(times):
        out[k] = (expm(gen * float(t)) @ v0).reshape(d, d, order="F")
    return out


def pure_density(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def trace_distance(rho, sigma) -> float:
    diff = _mat(rho) - _mat(sigma)
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def coherence_decay_rate(diag_values_1, diag_values_2, couplings) -> float:
    """Closed-form decay rate of ``rho_12`` for diagonal operators with ``H = 0``.

    For ``A_i = diag(..)`` the off-diagonal element between basis states 1 and 2
    decays as ``exp(-Gamma t)`` with ``Gamma = 1/2 sum_i g_i^2 (a_i1 - a_i2)^2``.
    """
    a1 = np.asarray(diag_values_1, dtype=float)
    a2 = np.asarray(diag_values_2, dtype=float)
    g = np.asarray(couplings, dtype=float)
    return 0.5 * float(np.sum(g**2 * (a1 - a2) ** 2))
