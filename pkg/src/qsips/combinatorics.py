"""Exact integer combinatorics behind the cumulant-combination weights.

Stirling numbers of both kinds, partial Bell polynomials, and the
orthogonality identity sum_i S_I(i,j) S_II(i,k) = delta_{j,k} that makes the
Stirling-weighted cumulant combination collapse onto a single power of the
detection probability. Everything here is exact integer arithmetic so the
rest of the package can use it as an oracle.

Index convention: S_I(i, j) is the coefficient of x^i in the falling
factorial x(x-1)...(x-j+1) (signed first kind), and S_II(i, k) counts
partitions of an i-set into k blocks.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

from .errors import ContractError

# Values stay well inside int64 up to order 20 (max |S_I| at j=20 is 19! ~ 1.2e17);
# the cap keeps the type contract honest rather than Python's unbounded ints.
MAX_ORDER_CAP = 20
_INT64_MAX = 2**63 - 1


class StirlingTable:
    """Triangular tables of signed first-kind and second-kind Stirling numbers.

    Immutable after construction; safe to share across threads.
    """

    def __init__(self, max_order: int = 8):
        if not 1 <= max_order <= MAX_ORDER_CAP:
            raise ContractError(
                f"max_order must be in [1, {MAX_ORDER_CAP}], got {max_order}")
        self.max_order = max_order
        # _s1[j][i] = S_I(i, j), i = 0..j ; _s2[i][k] = S_II(i, k), k = 0..i
        s1 = [[1]]
        s2 = [[1]]
        for n in range(1, max_order + 1):
            prev1 = s1[n - 1]
            row1 = [0] * (n + 1)
            for i in range(n + 1):
                # x_(n) = x_(n-1) * (x - (n-1)), so [x^i] picks up the shifted
                # previous coefficient minus (n-1) times the unshifted one.
                lower = prev1[i - 1] if 1 <= i <= n else 0
                same = prev1[i] if i <= n - 1 else 0
                row1[i] = lower - (n - 1) * same
            s1.append(row1)
            prev2 = s2[n - 1]
            row2 = [0] * (n + 1)
            for k in range(1, n + 1):
                lower = prev2[k - 1] if k <= n else 0
                same = prev2[k] if k <= n - 1 else 0
                row2[k] = lower + k * same
            s2.append(row2)
        for row in s1 + s2:
            for v in row:
                if abs(v) > _INT64_MAX:
                    raise ContractError("Stirling table overflows 64-bit range")
        self._s1 = s1
        self._s2 = s2

    def s1(self, i: int, j: int) -> int:
        """Signed Stirling first kind S_I(i, j): [x^i] x(x-1)...(x-j+1)."""
        self._check(j, "j")
        if not 0 <= i <= j:
            raise ContractError(f"need 0 <= i <= j, got i={i}, j={j}")
        return self._s1[j][i]

    def s2(self, i: int, k: int) -> int:
        """Stirling second kind S_II(i, k): partitions of an i-set into k blocks."""
        self._check(i, "i")
        if not 0 <= k <= i:
            raise ContractError(f"need 0 <= k <= i, got k={k}, i={i}")
        return self._s2[i][k]

    def beta_coeffs(self, j: int) -> list[int]:
        """Weights beta_{1..j, j} of the order-j cumulant combination.

        beta_{i,j} = S_I(i,j); beta_{j,j} = 1. Row j of the signed
        first-kind table, constant term dropped.
        """
        self._check(j, "j")
        return self._s1[j][1:]

    def _check(self, j: int, name: str) -> None:
        if not 1 <= j <= self.max_order:
            raise ContractError(
                f"{name} must be in [1, {self.max_order}], got {j}")


@lru_cache(maxsize=None)
def _shared_table(max_order: int) -> StirlingTable:
    return StirlingTable(max_order)


def default_table() -> StirlingTable:
    return _shared_table(MAX_ORDER_CAP)


def beta_coeffs(j: int) -> list[int]:
    return default_table().beta_coeffs(j)


def stirling_first(i: int, j: int) -> int:
    return default_table().s1(i, j)


def stirling_second(i: int, k: int) -> int:
    if not 1 <= k <= i:
        raise ContractError(f"need 1 <= k <= i, got i={i}, k={k}")
    return default_table().s2(i, k)


def bell_partial(i: int, k: int, args: Sequence[float]) -> float:
    """Partial Bell polynomial B_{i,k}(x_1, ..., x_{i-k+1}).

    Evaluated by the standard recurrence
    B_{i,k} = sum_{m=1}^{i-k+1} C(i-1, m-1) x_m B_{i-m, k-1};
    B_{i,k}(1,...,1) = S_II(i,k).
    """
    if not 1 <= k <= i:
        raise ContractError(f"need 1 <= k <= i, got i={i}, k={k}")
    if len(args) != i - k + 1:
        raise ContractError(
            f"B_{{{i},{k}}} takes {i - k + 1} arguments, got {len(args)}")
    x = list(args)

    def rec(n: int, m: int):
        if n == 0 and m == 0:
            return 1
        if n == 0 or m == 0:
            return 0
        total = 0
        for l in range(1, n - m + 2):
            total += math.comb(n - 1, l - 1) * x[l - 1] * rec(n - l, m - 1)
        return total

    return rec(i, k)


def verify_orthogonality(j_max: int) -> bool:
    """Check sum_{i=k}^{j} S_I(i,j) S_II(i,k) = delta_{j,k} for all k <= j <= j_max."""
    t = default_table()
    if j_max > t.max_order:
        raise ContractError(f"j_max must be <= {t.max_order}, got {j_max}")
    for j in range(1, j_max + 1):
        for k in range(1, j + 1):
            total = sum(t.s1(i, j) * t.s2(i, k) for i in range(k, j + 1))
            if total != (1 if j == k else 0):
                return False
    return True
