"""Super-resolved map construction from per-pixel cumulant maps.

Three routes:

* qsips_map: the Stirling-weighted combination sum_i beta_{i,j} k^(i),
  proportional to the j-th power of the detection PSF for any
  non-Poissonian emitter;
* sofi_map: the raw order-j cumulant (classical fluctuation imaging);
* sr_map_via_g: the correlation-function formulation for orders 2..5,
  an independent cross-check equal to qsips up to (-1)^(j-1) (j-1)!.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import math

import numpy as np

from . import combinatorics, containers
from .containers import FieldMap
from .errors import ContractError
from .estimator import CumulantStack

METHOD_QSIPS = "qsips"
METHOD_SOFI = "sofi"
METHOD_SR_G = "sr_g"


@dataclass(frozen=True)
class SuperResMap:
    field: FieldMap
    order: int
    method: str
    sign_normalized: bool = False

    def __post_init__(self):
        if self.order < 1:
            raise ContractError("order must be >= 1")
        if self.method not in (METHOD_QSIPS, METHOD_SOFI, METHOD_SR_G):
            raise ContractError(f"unknown method {self.method!r}")

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def _require_orders(k: CumulantStack, j: int) -> None:
    if j < 1:
        raise ContractError("order must be >= 1")
    if k.j_max < j:
        raise ContractError(f"cumulant stack holds orders 1..{k.j_max}, need {j}")


def qsips_map(k: CumulantStack, j: int, pixel_pitch: float = 1.0) -> SuperResMap:
    """Order-j map sum_i beta_{i,j} k^(i); j=1 is the mean map."""
    _require_orders(k, j)
    betas = combinatorics.beta_coeffs(j)
    values = np.zeros_like(k.k(1))
    for i in range(1, j + 1):
        values += betas[i - 1] * k.k(i)
    return SuperResMap(FieldMap(values, pixel_pitch), j, METHOD_QSIPS)


def sofi_map(k: CumulantStack, j: int, pixel_pitch: float = 1.0) -> SuperResMap:
    """Order-j map = raw cumulant k^(j)."""
    _require_orders(k, j)
    return SuperResMap(FieldMap(k.k(j).copy(), pixel_pitch), j, METHOD_SOFI)


# Bracket polynomials of the correlation-function formulation, orders 2..5.
# The order-4 bracket ends with -(1/6) g4: that is the only coefficient for
# which the bracket times (-1)^(j-1) (j-1)! <N>^j equals the Stirling
# combination identically.
def _sr_bracket(j: int, g: np.ndarray) -> np.ndarray:
    g2 = g[1]
    if j == 2:
        return 1.0 - g2
    g3 = g[2]
    if j == 3:
        return 1.0 - 1.5 * g2 + 0.5 * g3
    g4 = g[3]
    if j == 4:
        return 1.0 - 2.0 * g2 + 0.5 * g2**2 + (2.0 / 3.0) * g3 - (1.0 / 6.0) * g4
    g5 = g[4]
    return (1.0 - 2.5 * g2 + 1.25 * g2**2 + (5.0 / 6.0) * g3
            - (5.0 / 12.0) * g2 * g3 - (5.0 / 24.0) * g4 + (1.0 / 24.0) * g5)


def sr_map_via_g(mean_map: np.ndarray, g: np.ndarray, j: int,
                 pixel_pitch: float = 1.0) -> SuperResMap:
    """<N>^j times the order-j bracket of g^(2..j); closed forms exist to 5."""
    if not 2 <= j <= 5:
        raise ContractError(f"g-function route supports orders 2..5, got {j}")
    if g.shape[0] < j:
        raise ContractError(f"need g maps up to order {j}, have {g.shape[0]}")
    mean = np.asarray(mean_map, dtype=np.float64)
    values = mean**j * _sr_bracket(j, g)
    return SuperResMap(FieldMap(values, pixel_pitch), j, METHOD_SR_G)


def sign_normalize(m: SuperResMap) -> SuperResMap:
    """Divide a QSIPS map by (-1)^(j-1) (j-1)! so ideal single-photon maps
    are non-negative at every order; idempotence is an error."""
    if m.sign_normalized:
        raise ContractError("map is already sign-normalized")
    if m.order == 1:
        return replace(m, sign_normalized=True)
    factor = (-1.0) ** (m.order - 1) / math.factorial(m.order - 1)
    return SuperResMap(FieldMap(m.values * factor, m.field.pixel_pitch),
                       m.order, m.method, sign_normalized=True)


def write_map(path, m: SuperResMap) -> None:
    containers.write_qmap(path, m.values, m.field.pixel_pitch)


def write_map_pgm(path, m: SuperResMap) -> None:
    containers.write_pgm16(path, m.values)
