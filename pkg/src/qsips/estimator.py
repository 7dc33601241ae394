"""Single-pass, mergeable per-pixel moment accumulation and cumulant maps.

Power sums sum N^p are kept with Kahan compensation (mandatory at the
higher orders: sum N^5 over 1e5 frames with N ~ 70 spans ~14 decades).
Accumulators are shardable by frame range; merge is associative and
commutative up to compensated-summation reassociation.

Cumulants use the recursive moment relation
k_j = <N^j> - sum_{i=1}^{j-1} C(j-1, i-1) k_i <N^{j-i}>,
whose explicit expansions are the usual variance / third-central-moment /
... formulas. Plug-in (population) estimators are the default; the optional
unbiased mode applies the exact k-statistic corrections at orders 2 and 3.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import containers
from .errors import ContractError, EmptySampleError

MAX_ORDER = 8


class MomentAccumulator:
    """Per-pixel running power sums over frames; single pass, mergeable."""

    def __init__(self, width: int, height: int, j_max: int = 4,
                 track_factorial: bool = False):
        if not 1 <= j_max <= MAX_ORDER:
            raise ContractError(f"j_max must be in [1, {MAX_ORDER}], got {j_max}")
        if width < 1 or height < 1:
            raise ContractError("grid must be at least 1x1")
        self.width = width
        self.height = height
        self.j_max = j_max
        self.track_factorial = track_factorial
        self.count = 0
        self.power_sums = np.zeros((j_max, height, width))
        self._comp = np.zeros((j_max, height, width))
        if track_factorial:
            self.factorial_sums = np.zeros((j_max, height, width))
            self._fcomp = np.zeros((j_max, height, width))
        else:
            self.factorial_sums = None
            self._fcomp = None

    # -- accumulation -------------------------------------------------------

    def _kahan_add(self, sums, comp, idx, term):
        y = term - comp[idx]
        t = sums[idx] + y
        comp[idx] = (t - sums[idx]) - y
        sums[idx] = t

    def accumulate(self, frame: np.ndarray) -> "MomentAccumulator":
        """Absorb one frame (height, width)."""
        f = np.asarray(frame, dtype=np.float64)
        if f.shape != (self.height, self.width):
            raise ContractError(
                f"frame shape {f.shape} does not match ({self.height}, {self.width})")
        power = np.ones_like(f)
        for p in range(self.j_max):
            power = power * f
            self._kahan_add(self.power_sums, self._comp, p, power)
        if self.track_factorial:
            fact = np.ones_like(f)
            for p in range(self.j_max):
                fact = fact * (f - p)
                self._kahan_add(self.factorial_sums, self._fcomp, p, fact)
        self.count += 1
        return self

    def accumulate_block(self, frames: np.ndarray) -> "MomentAccumulator":
        """Absorb a chunk (n, height, width); pairwise-sums the chunk, then
        one compensated add per order."""
        f = np.asarray(frames, dtype=np.float64)
        if f.ndim != 3 or f.shape[1:] != (self.height, self.width):
            raise ContractError(
                f"block shape {f.shape} does not match (n, {self.height}, {self.width})")
        power = np.ones_like(f)
        for p in range(self.j_max):
            power = power * f
            self._kahan_add(self.power_sums, self._comp, p, power.sum(axis=0))
        if self.track_factorial:
            fact = np.ones_like(f)
            for p in range(self.j_max):
                fact = fact * (f - p)
                self._kahan_add(self.factorial_sums, self._fcomp, p, fact.sum(axis=0))
        self.count += f.shape[0]
        return self

    def accumulate_stack(self, stack) -> "MomentAccumulator":
        values = stack.values if hasattr(stack, "values") else np.asarray(stack)
        return self.accumulate_block(values)

    # -- merging ------------------------------------------------------------

    def _compatible(self, other: "MomentAccumulator") -> None:
        if (self.width, self.height, self.j_max, self.track_factorial) != \
                (other.width, other.height, other.j_max, other.track_factorial):
            raise ContractError("accumulators differ in shape, order or tracking")

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """Combined accumulator; associative/commutative within ~1e-12."""
        self._compatible(other)
        out = MomentAccumulator(self.width, self.height, self.j_max, self.track_factorial)
        out.count = self.count + other.count
        for p in range(self.j_max):
            out._kahan_add(out.power_sums, out._comp, p, self.power_sums[p] - self._comp[p])
            out._kahan_add(out.power_sums, out._comp, p, other.power_sums[p] - other._comp[p])
            if self.track_factorial:
                out._kahan_add(out.factorial_sums, out._fcomp, p,
                               self.factorial_sums[p] - self._fcomp[p])
                out._kahan_add(out.factorial_sums, out._fcomp, p,
                               other.factorial_sums[p] - other._fcomp[p])
        return out

    def raw_moments(self) -> np.ndarray:
        """<N^p> maps, shape (j_max, height, width)."""
        if self.count == 0:
            raise EmptySampleError("no frames accumulated")
        return self.power_sums / self.count


def merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    return a.merge(b)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CumulantStack:
    """Per-pixel cumulant maps k^(1..j_max); values shape (j_max, h, w).

    count == 0 marks an analytically computed (no-sampling) stack.
    """

    values: np.ndarray
    count: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ContractError("CumulantStack values must be (j_max, h, w)")
        object.__setattr__(self, "values", v)

    @property
    def j_max(self) -> int:
        return self.values.shape[0]

    def k(self, order: int) -> np.ndarray:
        if not 1 <= order <= self.j_max:
            raise ContractError(f"order {order} not in [1, {self.j_max}]")
        return self.values[order - 1]


def cumulants_from_raw(acc: MomentAccumulator, j_max: int | None = None,
                       unbiased: bool = False) -> CumulantStack:
    """Plug-in cumulant maps from empirical raw moments.

    unbiased=True applies the exact k-statistic corrections
    k2 *= n/(n-1), k3 *= n^2/((n-1)(n-2)); orders above 3 stay plug-in.
    """
    if acc.count == 0:
        raise EmptySampleError("no frames accumulated")
    j_max = acc.j_max if j_max is None else j_max
    if j_max > acc.j_max:
        raise ContractError(f"requested order {j_max} above accumulated {acc.j_max}")
    if acc.count < j_max:
        raise ContractError(
            f"need at least j_max={j_max} frames for order-{j_max} cumulants, "
            f"have {acc.count}")
    m = [acc.power_sums[p] / acc.count for p in range(j_max)]
    ks = []
    for j in range(1, j_max + 1):
        kj = m[j - 1].copy()
        for i in range(1, j):
            kj -= math.comb(j - 1, i - 1) * ks[i - 1] * m[j - i - 1]
        ks.append(kj)
    if unbiased:
        n = acc.count
        if j_max >= 2 and n >= 2:
            ks[1] = ks[1] * (n / (n - 1))
        if j_max >= 3 and n >= 3:
            ks[2] = ks[2] * (n * n / ((n - 1) * (n - 2)))
    return CumulantStack(values=np.stack(ks), count=acc.count)


def g_maps(acc: MomentAccumulator, j_max: int | None = None) -> np.ndarray:
    """Normalized factorial-moment maps g^(j) = <N(N-1)...(N-j+1)> / <N>^j.

    g^(1) is identically 1; pixels with non-positive mean are flagged
    missing (NaN), not raised. Intended for noiseless/integer stacks —
    factorial products of noisy real N are polynomials in N, not counts.
    """
    if acc.factorial_sums is None:
        raise ContractError("accumulator was built without track_factorial=True")
    if acc.count == 0:
        raise EmptySampleError("no frames accumulated")
    j_max = acc.j_max if j_max is None else j_max
    if j_max > acc.j_max:
        raise ContractError(f"requested order {j_max} above accumulated {acc.j_max}")
    mean = acc.power_sums[0] / acc.count
    valid = mean > 0
    out = np.full((j_max, acc.height, acc.width), np.nan)
    out[0][valid] = 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        for j in range(2, j_max + 1):
            fj = acc.factorial_sums[j - 1] / acc.count
            out[j - 1][valid] = fj[valid] / mean[valid] ** j
    return out


# ---------------------------------------------------------------------------
# Export

def write_cumulant_stack(path, stack: CumulantStack) -> None:
    """QSTK container with the n_frames field reused as n_orders."""
    containers.write_qstk(path, stack.values)


def read_cumulant_stack(path) -> CumulantStack:
    return CumulantStack(values=containers.read_qstk(path))


def write_cumulant_csv(path, stack: CumulantStack) -> None:
    """Rows: pixel i, j, k1..k_jmax."""
    j_max, h, w = stack.values.shape
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "j"] + [f"k{p}" for p in range(1, j_max + 1)])
        for jj in range(h):
            for ii in range(w):
                writer.writerow([ii, jj] + [repr(float(v)) for v in stack.values[:, jj, ii]])
