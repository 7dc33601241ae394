"""Emitter layout, Gaussian PSF, losses, detector grid and structured light.

Produces the per-pixel detection probabilities eta_a(r) = rho_a * PSF_a(r)
and the per-emitter illumination transmittances that drive both the samplers
and the exact-distribution oracles. Coordinates are in pixel units; pixel
(i, j) means column i (x) and row j (y), and maps are stored row-major
[y, x]. The PSF is sampled at pixel centers (no areal integration; for
sigma >= 1.2 px the center-sampling error is below 1%).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .containers import FieldMap
from .errors import ContractError
from .photon_models import EmitterStatModel, model_mean

# Effective band limit of a Gaussian PSF: spatial frequencies above
# 0.42/sigma carry no usable contrast.
ABBE_GAUSSIAN_FACTOR = 0.42


@dataclass(frozen=True)
class PSFModel:
    """Isotropic Gaussian PSF; peak is the detection probability at center."""

    sigma: float
    peak: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ContractError(f"PSF sigma must be > 0, got {self.sigma}")
        if not 0 < self.peak <= 1:
            raise ContractError(f"PSF peak must be in (0,1], got {self.peak}")


@dataclass(frozen=True)
class Emitter:
    position: tuple[float, float]  # (x, y) in pixel units
    model: EmitterStatModel
    rho: float = 1.0  # optical transmission, all losses except PSF spreading

    def __post_init__(self):
        x, y = self.position
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ContractError("emitter position must be finite")
        if not 0 < self.rho <= 1:
            raise ContractError(f"rho must be in (0,1], got {self.rho}")


@dataclass(frozen=True)
class IlluminationPattern:
    """Sinusoidal excitation 0.5*[1 - cos(2 pi p.r + phi)], or uniform light."""

    theta: float = 0.0
    phi: float = 0.0
    p_mag: float = 0.0  # cycles / pixel
    uniform_flag: bool = True

    def __post_init__(self):
        if self.p_mag < 0:
            raise ContractError(f"p_mag must be >= 0, got {self.p_mag}")

    @classmethod
    def uniform(cls) -> "IlluminationPattern":
        return cls()

    @classmethod
    def structured(cls, theta: float, phi: float, p_mag: float) -> "IlluminationPattern":
        return cls(theta=theta, phi=phi, p_mag=p_mag, uniform_flag=False)

    @property
    def p_vector(self) -> tuple[float, float]:
        return (self.p_mag * math.cos(self.theta), self.p_mag * math.sin(self.theta))


@dataclass(frozen=True)
class Scene:
    emitters: tuple[Emitter, ...]
    psf: PSFModel
    grid: tuple[int, int]  # (width, height)
    readout_rms: float = 0.0  # detector Gaussian noise RMS, photoelectrons

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        w, h = self.grid
        if w < 1 or h < 1:
            raise ContractError(f"grid must be >= 1x1, got {self.grid}")
        if not self.emitters:
            raise ContractError("scene needs at least one emitter")
        if self.readout_rms < 0:
            raise ContractError("readout_rms must be >= 0")

    @property
    def width(self) -> int:
        return self.grid[0]

    @property
    def height(self) -> int:
        return self.grid[1]


def detection_prob(scene: Scene, emitter_index: int, pixel: tuple[float, float]) -> float:
    """eta_a at a pixel center: rho * peak * exp(-((i-x)^2+(j-y)^2)/(2 sigma^2))."""
    em = scene.emitters[emitter_index]
    i, j = pixel
    x, y = em.position
    r2 = (i - x) ** 2 + (j - y) ** 2
    return em.rho * scene.psf.peak * math.exp(-r2 / (2.0 * scene.psf.sigma**2))


def detection_prob_map(scene: Scene, emitter_index: int) -> np.ndarray:
    """eta_a over the whole grid, shape (height, width)."""
    em = scene.emitters[emitter_index]
    x, y = em.position
    xs = np.arange(scene.width, dtype=np.float64)
    ys = np.arange(scene.height, dtype=np.float64)
    r2 = (xs[None, :] - x) ** 2 + (ys[:, None] - y) ** 2
    return em.rho * scene.psf.peak * np.exp(-r2 / (2.0 * scene.psf.sigma**2))


def illumination_weight(pattern: IlluminationPattern, position: tuple[float, float]) -> float:
    """Excitation transmittance at a sample-plane position, in [0, 1]."""
    if pattern.uniform_flag:
        return 1.0
    px, py = pattern.p_vector
    x, y = position
    return 0.5 * (1.0 - math.cos(2.0 * math.pi * (px * x + py * y) + pattern.phi))


def abbe_frequency(psf: PSFModel) -> float:
    """Maximum spatial frequency the system transmits, cycles/pixel."""
    return ABBE_GAUSSIAN_FACTOR / psf.sigma


def expected_intensity_map(scene: Scene, pattern: IlluminationPattern) -> FieldMap:
    """Mean detected photons per pixel; readout noise has zero mean."""
    total = np.zeros((scene.height, scene.width))
    for a, em in enumerate(scene.emitters):
        mu = model_mean(em.model) * illumination_weight(pattern, em.position)
        if mu != 0.0:
            total += mu * detection_prob_map(scene, a)
    return FieldMap(total)
