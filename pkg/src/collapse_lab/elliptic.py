"""Complete elliptic integral of the first kind.

Convention: the argument is the *parameter* ``m = k**2``, so
``K(m) = int_0^{pi/2} dphi / sqrt(1 - m sin^2 phi)``.
"""

import math

from .errors import ContractError


def complete_elliptic_K(m: float) -> float:
    """``K(m)`` via the arithmetic-geometric mean, ``K = pi / (2 AGM(1, sqrt(1 - m)))``."""
    m = float(m)
    if not m < 1.0:
        raise ContractError(f"K(m) diverges for m >= 1 (got m={m!r})")
    if math.isnan(m):
        raise ContractError("m is NaN")
    a, b = 1.0, math.sqrt(1.0 - m)
    for _ in range(64):
        if abs(a - b) <= 1e-16 * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (a + b)


def complete_elliptic_K_series(m: float, tol: float = 1e-17, max_terms: int = 10_000) -> float:
    """Power series ``pi/2 * sum_n [(2n)! / (2^{2n} (n!)^2)]^2 m^n``.

    Only practical for ``|m|`` comfortably below 1; used as an independent
    check of the AGM routine.
    """
    m = float(m)
    if not abs(m) < 1.0:
        raise ContractError("series only converges for |m| < 1")
    coeff = 1.0  # (2n)! / (2^{2n} (n!)^2), the central binomial ratio
    power = 1.0
    terms = [1.0]
    for n in range(1, max_terms):
        coeff *= (2 * n - 1) / (2 * n)
        power *= m
        term = coeff * coeff * power
        terms.append(term)
        if abs(term) < tol:
            break
    return 0.5 * math.pi * math.fsum(terms)
