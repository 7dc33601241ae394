"""Structured-illumination fusion of second-order (or mean) maps.

Per orientation theta: phase-stepped acquisitions are separated into
modulation bands by solving the per-pixel linear system over exp(i b phi),
each band is normalized by its analytic modulation coefficient, Wiener
filtered against the effective OTF of the map (Gaussian, sigma/sqrt(j)),
embedded in an upsampled Fourier canvas, shifted to its true carrier
position by a sub-pixel real-space ramp, and summed over bands and
orientations (the 0-bands averaged over theta). An optional raised-cosine
apodization tapers the extended support before the inverse transform.

A sinusoidal excitation enters an order-j map through the j-th power of the
illumination, so a second-order map carries +-1 and +-2 harmonics; 3-band
separation uses only the +-1 pair (shifts of +-|p|), the 5-band mode also
relocates the +-2 pair to +-2|p|, which is what extends the support to the
2+sqrt(2) factor.

All spectra are unitary 2-D DFTs with DC at the array center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .containers import FieldMap
from .errors import ContractError, DegeneratePhasesError, PatternNotFoundError

_COND_LIMIT = 1e8


# ---------------------------------------------------------------------------
# Types

@dataclass(frozen=True)
class SpectrumComponent:
    spectrum: np.ndarray  # complex 2-D, DC-centered, original-grid sampling
    band: int             # harmonic index
    offset: tuple[float, float] = (0.0, 0.0)  # carrier position, cycles/pixel


@dataclass(frozen=True)
class FusionParams:
    w: float = 0.05          # Wiener regularization, unit-peak OTF scale
    bands: int = 3           # 3 = {0,+-1}; 5 adds the +-2 harmonics
    upsample: int = 4        # Fourier canvas embedding factor
    apodize: bool = True
    combine: str = "weighted"  # "weighted" (shared denominator) or "simple"
    unit_otf: bool = False   # override the Gaussian OTF with 1 (tests)

    def __post_init__(self):
        if self.w <= 0:
            raise ContractError("Wiener w must be > 0")
        if self.bands not in (3, 5):
            raise ContractError("bands must be 3 or 5")
        if self.upsample < 1:
            raise ContractError("upsample must be >= 1")
        if self.combine not in ("weighted", "simple"):
            raise ContractError("combine must be 'weighted' or 'simple'")


@dataclass(frozen=True)
class AcquisitionSet:
    """One map per (theta, phi); maps[(ti, pi)] aligned with thetas/phis."""

    maps: dict
    thetas: tuple[float, ...]
    phis: tuple[float, ...]
    p_mag: float
    order: int = 2        # 1 for mean maps, 2 for second-order maps
    psf_sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(self.thetas))
        object.__setattr__(self, "phis", tuple(self.phis))
        if self.order < 1:
            raise ContractError("order must be >= 1")
        if self.psf_sigma <= 0:
            raise ContractError("psf_sigma must be > 0")
        shapes = {np.asarray(v).shape for v in self.maps.values()}
        if len(shapes) > 1:
            raise ContractError(f"acquisition maps disagree in shape: {shapes}")

    def grid_shape(self):
        return np.asarray(next(iter(self.maps.values()))).shape

    def missing(self):
        return [(ti, pi) for ti in range(len(self.thetas))
                for pi in range(len(self.phis)) if (ti, pi) not in self.maps]


# ---------------------------------------------------------------------------
# Transforms

def fft2c(values: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT, DC at center."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(values), norm="ortho"))


def ifft2c(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(spectrum), norm="ortho"))


def freq_grids(shape, pitch: float = 1.0):
    """Centered (ky, kx) grids in cycles per original pixel."""
    h, w = shape
    ky = np.fft.fftshift(np.fft.fftfreq(h, d=pitch))[:, None]
    kx = np.fft.fftshift(np.fft.fftfreq(w, d=pitch))[None, :]
    return ky, kx


def gaussian_otf(shape, sigma: float, pitch: float = 1.0) -> np.ndarray:
    """Unit-peak OTF of a Gaussian PSF with the given spatial sigma."""
    ky, kx = freq_grids(shape, pitch)
    return np.exp(-2.0 * np.pi**2 * sigma**2 * (kx**2 + ky**2))


def modulation_coeffs(order: int) -> dict[int, float]:
    """Harmonic coefficients of [ (1 - cos(psi + phi)) / 2 ]^order in exp(i phi).

    order 1: {0: 1/2, +-1: -1/4}; order 2: {0: 3/8, +-1: -1/4, +-2: 1/16}.
    """
    coeffs = {0: 1.0}
    base = {-1: -0.25, 0: 0.5, 1: -0.25}
    for _ in range(order):
        nxt: dict[int, float] = {}
        for b1, c1 in coeffs.items():
            for b2, c2 in base.items():
                nxt[b1 + b2] = nxt.get(b1 + b2, 0.0) + c1 * c2
        coeffs = nxt
    return coeffs


# ---------------------------------------------------------------------------
# Operations

def separate_bands(maps_for_theta, phases, n_bands: int = 3,
                   p_vec: tuple[float, float] = (0.0, 0.0)) -> list[SpectrumComponent]:
    """Solve each acquisition's map as a phase-weighted sum of harmonic bands.

    Least squares over the phase grid when there are more phases than bands;
    with equally spaced phases the extra harmonics are orthogonal to the
    fitted ones, so 3-band separation stays exact in their presence.
    """
    phases = np.asarray(phases, dtype=np.float64)
    maps = [np.asarray(m, dtype=np.float64) for m in maps_for_theta]
    if len(maps) != phases.size:
        raise ContractError(f"{len(maps)} maps vs {phases.size} phases")
    orders = [b - (n_bands // 2) for b in range(n_bands)]
    if phases.size < n_bands:
        raise DegeneratePhasesError(
            f"need at least {n_bands} phases for {n_bands} bands, got {phases.size}")
    design = np.exp(1j * np.outer(phases, orders))
    cond = np.linalg.cond(design)
    if cond > _COND_LIMIT:
        raise DegeneratePhasesError(
            f"phase matrix condition number {cond:.3g} is effectively rank-deficient")
    shape = maps[0].shape
    data = np.stack([m.ravel() for m in maps])
    comps, *_ = np.linalg.lstsq(design, data.astype(complex), rcond=None)
    out = []
    for row, b in zip(comps, orders):
        spec = fft2c(row.reshape(shape))
        out.append(SpectrumComponent(spectrum=spec, band=b,
                                     offset=(b * p_vec[0], b * p_vec[1])))
    return out


def wiener_filter(spectrum: np.ndarray, otf: np.ndarray, w: float) -> np.ndarray:
    """conj(OTF) / (|OTF|^2 + w) deconvolution weight."""
    if w <= 0:
        raise ContractError("Wiener w must be > 0")
    return spectrum * np.conj(otf) / (np.abs(otf) ** 2 + w)


def shift_spectrum(spectrum: np.ndarray, offset: tuple[float, float],
                   pitch: float = 1.0) -> np.ndarray:
    """Relocate spectral content by `offset` (cycles/original-pixel),
    sub-pixel exact, via a complex ramp in real space."""
    ox, oy = offset
    if ox == 0.0 and oy == 0.0:
        return spectrum
    field_ = ifft2c(spectrum)
    h, w = spectrum.shape
    ys = (np.arange(h) - h // 2)[:, None] * pitch
    xs = (np.arange(w) - w // 2)[None, :] * pitch
    ramp = np.exp(2j * np.pi * (ox * xs + oy * ys))
    return fft2c(field_ * ramp)


def _embed(spectrum: np.ndarray, upsample: int) -> np.ndarray:
    if upsample == 1:
        return spectrum
    h, w = spectrum.shape
    big = np.zeros((h * upsample, w * upsample), dtype=complex)
    y0 = (h * upsample - h) // 2
    x0 = (w * upsample - w) // 2
    big[y0:y0 + h, x0:x0 + w] = spectrum
    return big


def _radial_window(shape, pitch: float, radius: float) -> np.ndarray:
    ky, kx = freq_grids(shape, pitch)
    q = np.sqrt(kx**2 + ky**2)
    win = np.cos(np.pi * q / (2.0 * radius)) ** 2
    win[q >= radius] = 0.0
    return win


def fuse(acq: AcquisitionSet, params: FusionParams = FusionParams()) -> FieldMap:
    """Band-separate, Wiener-filter, shift and recombine a full (theta, phi)
    acquisition grid into one extended-support map (real part)."""
    missing = acq.missing()
    if missing:
        raise ContractError(f"acquisition grid is missing (theta, phi) entries: {missing}")
    if len(set(np.round(acq.phis, 12))) < 3:
        raise DegeneratePhasesError("need at least 3 distinct phases")
    structured = acq.p_mag > 0.0
    n_bands = params.bands if structured else 1
    coeffs = modulation_coeffs(acq.order) if structured else {0: 1.0}
    if structured and params.bands == 5 and acq.order < 2:
        n_bands = 3  # an order-1 map has no +-2 harmonic to separate
    shape = acq.grid_shape()
    sigma_eff = acq.psf_sigma / math.sqrt(acq.order)
    otf = np.ones(shape) if params.unit_otf else gaussian_otf(shape, sigma_eff)
    up = params.upsample
    canvas_shape = (shape[0] * up, shape[1] * up)
    pitch = 1.0 / up
    num = np.zeros(canvas_shape, dtype=complex)
    den = np.full(canvas_shape, params.w) if params.combine == "weighted" else None
    ky_c, kx_c = freq_grids(canvas_shape, pitch)
    n_theta = len(acq.thetas)
    max_reach = 0.0
    for ti, theta in enumerate(acq.thetas):
        pv = (acq.p_mag * math.cos(theta), acq.p_mag * math.sin(theta))
        maps = [acq.maps[(ti, pi)] for pi in range(len(acq.phis))]
        comps = separate_bands(maps, acq.phis, n_bands=n_bands, p_vec=pv)
        for comp in comps:
            b = comp.band
            cb = coeffs.get(b)
            if cb is None or cb == 0.0:
                continue
            weight = (1.0 / n_theta) if b == 0 else 1.0
            spec = comp.spectrum / cb
            if params.combine == "weighted":
                spec = spec * np.conj(otf)
            else:
                spec = wiener_filter(spec, otf, params.w)
            spec = _embed(spec, up)
            spec = shift_spectrum(spec, (-b * pv[0], -b * pv[1]), pitch=pitch)
            num += weight * spec
            if params.combine == "weighted":
                if params.unit_otf:
                    t2 = np.ones(canvas_shape)
                else:
                    r2 = (kx_c + b * pv[0]) ** 2 + (ky_c + b * pv[1]) ** 2
                    t2 = np.exp(-4.0 * np.pi**2 * sigma_eff**2 * r2)
                den += weight * t2
            reach = abs(b) * acq.p_mag + _otf_reach(sigma_eff, params.unit_otf)
            max_reach = max(max_reach, reach)
    fused = num / den if params.combine == "weighted" else num
    if params.apodize and max_reach > 0.0:
        fused = fused * _radial_window(canvas_shape, pitch, max_reach)
    out = ifft2c(fused).real * up
    return FieldMap(out, pixel_pitch=pitch)


def _otf_reach(sigma_eff: float, unit_otf: bool, floor: float = 1e-2) -> float:
    """Radial frequency where the Gaussian OTF falls to `floor` of peak."""
    if unit_otf:
        return 0.5  # Nyquist of the original grid
    return math.sqrt(math.log(1.0 / floor) / 2.0) / (math.pi * sigma_eff)


# ---------------------------------------------------------------------------
# Pattern vector estimation

@dataclass(frozen=True)
class PatternEstimate:
    p_mag: float
    theta: float
    reliable: bool


def estimate_pattern_vector(m, theta_hint: float | None = None,
                            p_mag_hint: float | None = None,
                            min_peak_ratio: float = 5.0) -> PatternEstimate:
    """Locate the modulation sideband in the Fourier magnitude.

    Searches the half-plane (sidebands come in conjugate pairs), optionally
    restricted near hints, and refines the peak to sub-pixel by local
    quadratic interpolation. Peaks hugging the Nyquist edge are flagged
    unreliable.
    """
    values = np.asarray(m.values if hasattr(m, "values") else m, dtype=np.float64)
    spec = np.abs(fft2c(values - values.mean()))
    h, w = spec.shape
    ky, kx = freq_grids((h, w))
    q = np.sqrt(kx**2 + ky**2)
    mask = q > 2.0 / min(h, w)  # drop the DC neighborhood
    if theta_hint is not None:
        ang = np.arctan2(ky, kx)
        dtheta = np.abs(np.angle(np.exp(1j * (ang - theta_hint))))
        mask &= dtheta < 0.35
    if p_mag_hint is not None:
        mask &= np.abs(q - p_mag_hint) < max(0.15 * p_mag_hint, 3.0 / min(h, w))
    if not np.any(mask):
        raise PatternNotFoundError("empty search region for the pattern peak")
    floor = np.median(spec[mask])
    idx = np.argmax(np.where(mask, spec, -np.inf))
    jy, jx = np.unravel_index(idx, spec.shape)
    peak = spec[jy, jx]
    if floor <= 0 or peak < min_peak_ratio * floor:
        raise PatternNotFoundError(
            f"no sideband above {min_peak_ratio}x the spectral floor")

    def refine(vals3):
        a, b, c = vals3
        denom = a - 2 * b + c
        return 0.0 if denom == 0 else 0.5 * (a - c) / denom

    dx = refine(spec[jy, max(jx - 1, 0):jx + 2][:3]) if 0 < jx < w - 1 else 0.0
    dy = refine(spec[max(jy - 1, 0):jy + 2, jx][:3]) if 0 < jy < h - 1 else 0.0
    fx = kx[0, jx] + dx / w
    fy = ky[jy, 0] + dy / h
    p_mag = math.hypot(fx, fy)
    theta = math.atan2(fy, fx)
    near_edge = (jx <= 1 or jx >= w - 2 or jy <= 1 or jy >= h - 2
                 or p_mag > 0.48)
    return PatternEstimate(p_mag=p_mag, theta=theta, reliable=not near_edge)
