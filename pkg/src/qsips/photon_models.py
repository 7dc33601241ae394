"""Finite-distribution algebra for emitted and detected photon statistics.

Everything is an exact finite pmf (no sampling): blinking / single-photon /
Poisson emission models, binomial loss, convolution of independent sources,
exact cumulants, and the Stirling-weighted cumulant combinations (factorial
cumulants) that the super-resolved maps are built from. This module is the
deterministic oracle the Monte-Carlo pipeline is validated against, so the
moment arithmetic is done exactly (rationals) for small supports and in
extended precision above that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np
from scipy import stats

from . import combinatorics
from .errors import CapacityError, ContractError

_NORM_TOL = 1e-12
MAX_CUMULANT_ORDER = 8
# Above this support size the rational path gets slow; fall back to
# compensated longdouble accumulation (still ~1e-18 relative).
_EXACT_SUPPORT_LIMIT = 4096


@dataclass(frozen=True)
class PhotonDistribution:
    """pmf over photon number m = 0..m_max; normalized, non-negative."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ContractError("probs must be a non-empty 1-D array")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ContractError("probs must be finite and non-negative")
        s = math.fsum(p.tolist())
        if abs(s - 1.0) > _NORM_TOL:
            raise ContractError(f"probs must sum to 1 within {_NORM_TOL}, got {s!r}")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def m_max(self) -> int:
        return self.probs.size - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(self.probs.size), self.probs))

    def variance(self) -> float:
        m = np.arange(self.probs.size)
        mu = self.mean()
        return float(np.dot((m - mu) ** 2, self.probs))


# ---------------------------------------------------------------------------
# Emitter statistics models

@dataclass(frozen=True)
class Blinking:
    """Two-state emitter: emits nothing with probability b, else M photons."""

    b: float
    M: int

    def __post_init__(self):
        if not 0.0 <= self.b <= 1.0:
            raise ContractError(f"blinking probability must be in [0,1], got {self.b}")
        if not (isinstance(self.M, (int, np.integer)) and self.M >= 1):
            raise ContractError(f"excitations per frame must be an integer >= 1, got {self.M}")


@dataclass(frozen=True)
class SinglePhoton:
    """Deterministic one photon per frame (Blinking with b=0, M=1)."""


@dataclass(frozen=True)
class Poisson:
    lam: float
    tail_mass: float = 1e-12
    m_cap: int = 100_000

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractError(f"Poisson mean must be > 0, got {self.lam}")
        if not 0 < self.tail_mass < 1:
            raise ContractError("tail_mass must be in (0,1)")


@dataclass(frozen=True)
class Custom:
    dist: PhotonDistribution


EmitterStatModel = Union[Blinking, SinglePhoton, Poisson, Custom]


def pmf(model: EmitterStatModel) -> PhotonDistribution:
    """Exact pmf of an emission model."""
    if isinstance(model, SinglePhoton):
        return PhotonDistribution(np.array([0.0, 1.0]))
    if isinstance(model, Blinking):
        p = np.zeros(model.M + 1)
        p[0] = model.b
        p[model.M] += 1.0 - model.b
        return PhotonDistribution(p)
    if isinstance(model, Poisson):
        return _poisson_pmf(model)
    if isinstance(model, Custom):
        return model.dist
    raise ContractError(f"unknown emitter model {model!r}")


def model_mean(model: EmitterStatModel) -> float:
    if isinstance(model, SinglePhoton):
        return 1.0
    if isinstance(model, Blinking):
        return (1.0 - model.b) * model.M
    if isinstance(model, Poisson):
        return model.lam
    return pmf(model).mean()


def _poisson_pmf(model: Poisson) -> PhotonDistribution:
    lam, tol = model.lam, model.tail_mass
    # truncate where the upper tail drops below tol, then renormalize
    m_hi = int(lam + 10.0 * math.sqrt(lam) + 20)
    while stats.poisson.sf(m_hi, lam) > tol:
        m_hi *= 2
        if m_hi > model.m_cap:
            raise CapacityError(
                f"Poisson(lam={lam}) cannot reach tail mass {tol} within cap {model.m_cap}")
    # shrink back to the smallest cutoff meeting the tolerance
    lo, hi = 0, m_hi
    while lo < hi:
        mid = (lo + hi) // 2
        if stats.poisson.sf(mid, lam) <= tol:
            hi = mid
        else:
            lo = mid + 1
    m_hi = lo
    p = stats.poisson.pmf(np.arange(m_hi + 1), lam)
    return PhotonDistribution(p / math.fsum(p.tolist()))


# ---------------------------------------------------------------------------
# Distribution algebra

def binomial_thin(dist: PhotonDistribution, eta: float) -> PhotonDistribution:
    """Detected-count pmf after independent per-photon survival with probability eta.

    out(n) = sum_{m>=n} P(m) C(m,n) eta^n (1-eta)^(m-n).
    """
    if not 0.0 <= eta <= 1.0:
        raise ContractError(f"thinning probability must be in [0,1], got {eta}")
    p = dist.probs
    if eta == 1.0:
        return dist
    if eta == 0.0:
        return PhotonDistribution(np.array([1.0]))
    out = np.zeros(p.size)
    # Iterate the (possibly sparse) support; each atom m contributes a full
    # Binomial(m, eta) row. Cost is sum over atoms of (m+1).
    for m in np.flatnonzero(p):
        out[: m + 1] += p[m] * stats.binom.pmf(np.arange(m + 1), int(m), eta)
    out /= math.fsum(out.tolist())
    return PhotonDistribution(np.trim_zeros(out, "b") if out[-1] == 0 else out)


def convolve(a: PhotonDistribution, b: PhotonDistribution) -> PhotonDistribution:
    """pmf of the sum of two independent counts."""
    out = np.convolve(a.probs, b.probs)
    out = np.clip(out, 0.0, None)
    return PhotonDistribution(out / math.fsum(out.tolist()))


# ---------------------------------------------------------------------------
# Moments, cumulants, factorial cumulants

def _raw_moments(dist: PhotonDistribution, j_max: int):
    """Raw moments <m^p>, p=1..j_max, exact (Fraction) or longdouble."""
    p = dist.probs
    m = np.arange(p.size)
    if p.size <= _EXACT_SUPPORT_LIMIT:
        fr = [Fraction(float(v)) for v in p]
        moments = []
        for order in range(1, j_max + 1):
            moments.append(sum(Fraction(int(mm) ** order) * fr[mm] for mm in np.flatnonzero(p)))
        return moments
    pl = p.astype(np.longdouble)
    ml = m.astype(np.longdouble)
    return [np.sum(pl * ml**order) for order in range(1, j_max + 1)]


def _cumulants_from_moment_list(moments) -> list:
    """Cumulants from raw moments via k_j = m_j - sum_i C(j-1,i-1) k_i m_{j-i}.

    Works elementwise for scalars, Fractions, longdoubles or numpy maps
    (m_0 = 1 implicitly).
    """
    j_max = len(moments)
    ks: list = []
    for j in range(1, j_max + 1):
        acc = moments[j - 1]
        for i in range(1, j):
            m_rem = moments[j - i - 1] if j - i >= 1 else 1
            acc = acc - math.comb(j - 1, i - 1) * ks[i - 1] * m_rem
        ks.append(acc)
    return ks


def exact_cumulants(dist: PhotonDistribution, j_max: int) -> np.ndarray:
    """Cumulants z^(1..j_max) of a finite pmf, exact to pmf rounding."""
    _check_order(j_max)
    return np.array([float(k) for k in _cumulants_from_moment_list(_raw_moments(dist, j_max))])


def factorial_moments(dist: PhotonDistribution, j_max: int) -> np.ndarray:
    """<m(m-1)...(m-j+1)> for j = 1..j_max."""
    _check_order(j_max)
    p = dist.probs
    support = np.flatnonzero(p)
    if p.size <= _EXACT_SUPPORT_LIMIT:
        fr = {int(mm): Fraction(float(p[mm])) for mm in support}
        out = []
        for j in range(1, j_max + 1):
            total = Fraction(0)
            for mm, w in fr.items():
                ff = 1
                for i in range(j):
                    ff *= mm - i
                total += ff * w
            out.append(float(total))
        return np.array(out)
    pl = p.astype(np.longdouble)
    ml = np.arange(p.size, dtype=np.longdouble)
    out = []
    ff = np.ones_like(ml)
    for j in range(1, j_max + 1):
        ff = ff * (ml - (j - 1))
        out.append(float(np.sum(pl * ff)))
    return np.array(out)


def sgurzants(dist: PhotonDistribution, j_max: int) -> np.ndarray:
    """Stirling-weighted cumulant combinations sum_i beta_{i,j} z^(i), j = 1..j_max.

    Equal to the j-th derivative of log sum_m nu^m P(m) at nu = 1 (the j-th
    factorial cumulant); scales as eta^j under binomial thinning, which is
    what makes the order-j map proportional to the j-th power of the PSF.
    """
    _check_order(j_max)
    zs = _cumulants_from_moment_list(_raw_moments(dist, j_max))
    table = combinatorics.default_table()
    out = []
    for j in range(1, j_max + 1):
        betas = table.beta_coeffs(j)
        acc = zs[0] * betas[0]
        for i in range(2, j + 1):
            acc = acc + betas[i - 1] * zs[i - 1]
        out.append(float(acc))
    return np.array(out)


def fano(dist: PhotonDistribution) -> float:
    """Variance-to-mean ratio; 1 for Poisson."""
    mu = dist.mean()
    if mu == 0.0:
        raise ContractError("Fano factor undefined for a zero-mean distribution")
    return dist.variance() / mu


def fano_after_loss(f_e: float, eta: float) -> float:
    """Fano factor after a binomial loss eta: F -> eta (F - 1) + 1."""
    if not 0.0 <= eta <= 1.0:
        raise ContractError(f"loss transmission must be in [0,1], got {eta}")
    return eta * (f_e - 1.0) + 1.0


def _check_order(j_max: int) -> None:
    if not 1 <= j_max <= MAX_CUMULANT_ORDER:
        raise ContractError(
            f"order must be in [1, {MAX_CUMULANT_ORDER}], got {j_max}")
