"""Monte-Carlo synthesis of photon-count frames, and the matching exact oracle.

Sampling path per frame and emitter: draw the emitted photon number m from
the emitter's pmf, thin it by the illumination transmittance at the emitter
position (binomial), then allocate the survivors to detector pixels. By
default every pixel sees an independent Binomial(k, eta_a(pixel)) draw,
which reproduces the per-pixel marginal law exactly and keeps pixels
independent; a multinomial mode ("each photon lands in at most one pixel",
requires sum eta <= 1) is available for realism studies. Gaussian readout
noise is added per pixel afterwards.

Streams are Philox counter-based, keyed per (frame-chunk, emitter) with a
fixed chunk size, so stacks are bit-reproducible from the seed and chunks
can be generated in parallel or out of order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import photon_models as pm
from .containers import FrameStack
from .errors import CapacityError, ContractError
from .estimator import CumulantStack
from .scene import (IlluminationPattern, Scene, detection_prob,
                    detection_prob_map, illumination_weight)

_NOISE_STREAM = 0xFFFF
_MAX_STACK_ELEMENTS = 1_000_000_000  # ~8 GB of float64

ALLOCATIONS = ("independent", "multinomial")


@dataclass(frozen=True)
class RngSpec:
    """Reproducible stream layout: one Philox stream per (chunk, emitter).

    Identical specs reproduce identical stacks bit-exactly regardless of the
    order chunks are generated in. chunk_size is part of the layout.
    """

    seed: int
    chunk_size: int = 1024

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must be an unsigned 64-bit integer")
        if self.chunk_size < 1:
            raise ContractError("chunk_size must be >= 1")

    def stream(self, chunk_index: int, stream_id: int) -> np.random.Generator:
        key = np.array([self.seed, (chunk_index << 16) | stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def _emitter_draws(scene: Scene, pattern: IlluminationPattern):
    """Per-emitter (support, probs, illumination weight, eta map) tuples."""
    out = []
    for a, em in enumerate(scene.emitters):
        dist = pm.pmf(em.model)
        support = np.flatnonzero(dist.probs)
        probs = dist.probs[support]
        probs = probs / probs.sum()
        weight = illumination_weight(pattern, em.position)
        eta = detection_prob_map(scene, a).ravel()
        out.append((support, probs, weight, eta))
    return out


def _sample_chunk(scene, draws, rng_spec, chunk_index, n, allocation):
    h, w = scene.height, scene.width
    counts = np.zeros((n, h * w))
    for a, (support, probs, weight, eta) in enumerate(draws):
        rng = rng_spec.stream(chunk_index, a)
        if support.size == 1:
            m = np.full(n, support[0])
        else:
            m = rng.choice(support, size=n, p=probs)
        if weight <= 0.0:
            continue
        k = m if weight >= 1.0 else rng.binomial(m, weight)
        if allocation == "independent":
            counts += rng.binomial(k[:, None], eta[None, :])
        else:
            lost = 1.0 - eta.sum()
            counts += rng.multinomial(k, np.append(eta, lost))[:, :-1]
    if scene.readout_rms > 0.0:
        noise_rng = rng_spec.stream(chunk_index, _NOISE_STREAM)
        counts += noise_rng.normal(0.0, scene.readout_rms, size=(n, h * w))
    return counts.reshape(n, h, w)


def _validate_allocation(scene: Scene, allocation: str) -> None:
    if allocation not in ALLOCATIONS:
        raise ContractError(f"allocation must be one of {ALLOCATIONS}, got {allocation!r}")
    if allocation == "multinomial":
        for a in range(len(scene.emitters)):
            total = detection_prob_map(scene, a).sum()
            if total > 1.0 + 1e-12:
                raise ContractError(
                    f"multinomial allocation needs sum(eta) <= 1 per emitter; "
                    f"emitter {a} has {total:.4f}")


def sample_stack(scene: Scene, pattern: IlluminationPattern, n_frames: int,
                 rng_spec: RngSpec, allocation: str = "independent") -> FrameStack:
    """n_frames i.i.d. frames, bit-reproducible from rng_spec."""
    if n_frames < 1:
        raise ContractError("n_frames must be >= 1")
    if n_frames * scene.height * scene.width > _MAX_STACK_ELEMENTS:
        raise CapacityError(
            f"stack of {n_frames}x{scene.height}x{scene.width} exceeds the "
            f"{_MAX_STACK_ELEMENTS}-element cap")
    _validate_allocation(scene, allocation)
    draws = _emitter_draws(scene, pattern)
    cs = rng_spec.chunk_size
    out = np.empty((n_frames, scene.height, scene.width))
    for chunk in range(0, n_frames, cs):
        n = min(cs, n_frames - chunk)
        out[chunk:chunk + n] = _sample_chunk(scene, draws, rng_spec, chunk // cs, n, allocation)
    return FrameStack(out)


def iter_stack_chunks(scene: Scene, pattern: IlluminationPattern, n_frames: int,
                      rng_spec: RngSpec, allocation: str = "independent"):
    """Yield (start_index, frames) chunks without materializing the stack."""
    if n_frames < 1:
        raise ContractError("n_frames must be >= 1")
    _validate_allocation(scene, allocation)
    draws = _emitter_draws(scene, pattern)
    cs = rng_spec.chunk_size
    for chunk in range(0, n_frames, cs):
        n = min(cs, n_frames - chunk)
        yield chunk, _sample_chunk(scene, draws, rng_spec, chunk // cs, n, allocation)


def sample_frame(scene: Scene, pattern: IlluminationPattern, rng,
                 allocation: str = "independent") -> np.ndarray:
    """One frame. rng is an RngSpec (frame = chunk 0, index 0) or a Generator."""
    if isinstance(rng, RngSpec):
        return sample_stack(scene, pattern, 1, rng, allocation).values[0]
    _validate_allocation(scene, allocation)
    draws = _emitter_draws(scene, pattern)
    h, w = scene.height, scene.width
    counts = np.zeros(h * w)
    for support, probs, weight, eta in draws:
        m = int(rng.choice(support, p=probs)) if support.size > 1 else int(support[0])
        if weight <= 0.0:
            continue
        k = m if weight >= 1.0 else int(rng.binomial(m, weight))
        if allocation == "independent":
            counts += rng.binomial(k, eta)
        else:
            lost = 1.0 - eta.sum()
            counts += rng.multinomial(k, np.append(eta, lost))[:-1]
    if scene.readout_rms > 0.0:
        counts += rng.normal(0.0, scene.readout_rms, size=h * w)
    return counts.reshape(h, w)


# ---------------------------------------------------------------------------
# Exact oracle

def exact_pixel_distribution(scene: Scene, pattern: IlluminationPattern,
                             pixel: tuple[float, float], n_cap: int | None = None
                             ) -> pm.PhotonDistribution:
    """Exact pre-readout count distribution at a pixel.

    Convolution over emitters of the emission pmf thinned by the product of
    the illumination transmittance (at the emitter) and eta (at the pixel);
    thinnings compose multiplicatively.
    """
    total = pm.PhotonDistribution(np.array([1.0]))
    for a, em in enumerate(scene.emitters):
        weight = illumination_weight(pattern, em.position)
        eta = detection_prob(scene, a, pixel)
        thinned = pm.binomial_thin(pm.pmf(em.model), weight * eta)
        total = pm.convolve(total, thinned)
    if n_cap is not None and total.m_max > n_cap:
        tail = float(total.probs[n_cap + 1:].sum())
        if tail > 1e-10:
            raise CapacityError(
                f"tail mass {tail:.3e} beyond n_cap={n_cap} exceeds 1e-10")
        p = total.probs[: n_cap + 1].copy()
        total = pm.PhotonDistribution(p / math.fsum(p.tolist()))
    return total


def exact_cumulant_stack(scene: Scene, pattern: IlluminationPattern, j_max: int,
                         include_readout: bool = True,
                         method: str = "factorial_scaling") -> CumulantStack:
    """Analytic per-pixel cumulant maps (the no-sampling path).

    Uses cumulant additivity over independent emitters; Gaussian readout
    noise contributes its variance to order 2 only. method "per_pixel_law"
    builds the exact thinned pmf at every pixel (slow, rational-exact);
    "factorial_scaling" scales the emitted factorial moments by the pixel's
    composite thinning probability (factorial moments transform as q^j under
    binomial loss) and converts to cumulants, vectorized over the grid.
    """
    from .combinatorics import default_table
    h, w = scene.height, scene.width
    maps = np.zeros((j_max, h, w))
    table = default_table()
    for a, em in enumerate(scene.emitters):
        weight = illumination_weight(pattern, em.position)
        eta = detection_prob_map(scene, a)
        base = pm.pmf(em.model)
        if method == "per_pixel_law":
            for jj in range(h):
                for ii in range(w):
                    thinned = pm.binomial_thin(base, weight * eta[jj, ii])
                    maps[:, jj, ii] += pm.exact_cumulants(thinned, j_max)
        elif method == "factorial_scaling":
            f_emit = pm.factorial_moments(base, j_max)
            q = weight * eta
            f_det = [f_emit[p - 1] * q**p for p in range(1, j_max + 1)]
            raw = [sum(table.s2(p, k) * f_det[k - 1] for k in range(1, p + 1))
                   for p in range(1, j_max + 1)]
            for order, kmap in enumerate(pm._cumulants_from_moment_list(raw)):
                maps[order] += kmap
        else:
            raise ContractError(f"unknown exact-map method {method!r}")
    if include_readout and scene.readout_rms > 0.0 and j_max >= 2:
        maps[1] += scene.readout_rms**2
    return CumulantStack(values=maps, count=0)
