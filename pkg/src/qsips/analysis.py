"""Quantitative metrics: 2D Gaussian PSF fits, enhancement ratios,
two-emitter visibility, line cuts, and display conditioning.

Display conditioning (Fourier interpolation, Gaussian blur) is for image
quality only and stays out of the quantitative pipeline; fits run on raw
maps. Maps with negative lobes are fitted with a free offset and a free
(signed) amplitude — no absolute-value preprocessing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .containers import FieldMap
from .errors import ContractError, FitError


def _map_values(m) -> np.ndarray:
    if isinstance(m, FieldMap):
        return m.values
    if hasattr(m, "field"):  # SuperResMap
        return m.field.values
    return np.asarray(m, dtype=np.float64)


# ---------------------------------------------------------------------------
# Gaussian fitting

@dataclass(frozen=True)
class GaussianFit:
    center: tuple[float, float]  # (x0, y0), map pixel coordinates
    sigma_x: float
    sigma_y: float
    amplitude: float
    offset: float
    residual_rms: float
    cov: np.ndarray  # parameter covariance, order (A, x0, y0, sx, sy, c)

    @property
    def sigma_geo(self) -> float:
        return math.sqrt(self.sigma_x * self.sigma_y)

    @property
    def sigma_x_stderr(self) -> float:
        return math.sqrt(max(self.cov[3, 3], 0.0))

    @property
    def sigma_y_stderr(self) -> float:
        return math.sqrt(max(self.cov[4, 4], 0.0))

    @property
    def sigma_geo_stderr(self) -> float:
        # first-order propagation through sqrt(sx*sy), ignoring sx-sy covariance sign issues
        g = self.sigma_geo
        vx, vy = self.cov[3, 3], self.cov[4, 4]
        cxy = self.cov[3, 4]
        var = (g**2 / 4.0) * (vx / self.sigma_x**2 + vy / self.sigma_y**2
                              + 2.0 * cxy / (self.sigma_x * self.sigma_y))
        return math.sqrt(max(var, 0.0))


def _model_and_jac(theta, xg, yg):
    amp, x0, y0, sx, sy, off = theta
    dx = xg - x0
    dy = yg - y0
    e = np.exp(-(dx**2 / (2.0 * sx**2) + dy**2 / (2.0 * sy**2)))
    f = amp * e + off
    jac = np.stack([
        e,
        amp * e * dx / sx**2,
        amp * e * dy / sy**2,
        amp * e * dx**2 / sx**3,
        amp * e * dy**2 / sy**3,
        np.ones_like(e),
    ], axis=-1)
    return f, jac


def gaussian_fit_2d(m, roi: tuple[int, int, int, int] | None = None) -> GaussianFit:
    """Damped least-squares fit of A exp(-((x-x0)^2/2sx^2 + (y-y0)^2/2sy^2)) + c.

    roi is (x_lo, y_lo, x_hi, y_hi), half-open, in map pixel coordinates.
    Initialized from the border-median offset and signed-peak second moments;
    converges when the relative step falls below 1e-9 (200 iteration cap).
    """
    values = _map_values(m)
    h, w = values.shape
    if roi is None:
        x_lo, y_lo, x_hi, y_hi = 0, 0, w, h
    else:
        x_lo, y_lo, x_hi, y_hi = roi
    sub = values[y_lo:y_hi, x_lo:x_hi]
    if sub.size < 7:
        raise ContractError("ROI too small for a 6-parameter fit")
    ys, xs = np.mgrid[y_lo:y_hi, x_lo:x_hi]
    xg = xs.ravel().astype(np.float64)
    yg = ys.ravel().astype(np.float64)
    data = sub.ravel()

    border = np.concatenate([sub[0], sub[-1], sub[:, 0], sub[:, -1]])
    off0 = float(np.median(border))
    d = data - off0
    peak = int(np.argmax(np.abs(d)))
    amp0 = float(d[peak])
    wgt = np.clip(d * np.sign(amp0), 0.0, None)
    tot = wgt.sum()
    if tot <= 0:
        x0, y0 = xg[peak], yg[peak]
        s0x = s0y = max(sub.shape) / 4.0
    else:
        x0 = float(np.dot(wgt, xg) / tot)
        y0 = float(np.dot(wgt, yg) / tot)
        s0x = math.sqrt(max(np.dot(wgt, (xg - x0) ** 2) / tot, 0.09))
        s0y = math.sqrt(max(np.dot(wgt, (yg - y0) ** 2) / tot, 0.09))
    theta0 = np.array([amp0, x0, y0, s0x, s0y, off0])

    def fun(theta):
        return _model_and_jac(theta, xg, yg)[0] - data

    def jac(theta):
        return _model_and_jac(theta, xg, yg)[1]

    res = least_squares(fun, theta0, jac=jac, method="lm", xtol=1e-9,
                        ftol=1e-12, gtol=1e-12, max_nfev=200 * 6)
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitError("gaussian fit did not converge",
                       diagnostics={"status": res.status, "message": res.message,
                                    "cost": float(res.cost), "nfev": res.nfev,
                                    "x": res.x.tolist()})
    amp, x0, y0, sx, sy, off = res.x
    sx, sy = abs(float(sx)), abs(float(sy))
    n_res, n_par = data.size, 6
    resid = res.fun
    s2 = 2.0 * res.cost / max(n_res - n_par, 1)
    jtj = res.jac.T @ res.jac
    try:
        cov = s2 * np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((6, 6), np.nan)
    return GaussianFit(center=(float(x0), float(y0)), sigma_x=sx, sigma_y=sy,
                       amplitude=float(amp), offset=float(off),
                       residual_rms=float(np.sqrt(np.mean(resid**2))), cov=cov)


def enhancement_ratio(reference_fit: GaussianFit, sr_fit: GaussianFit,
                      pitch_ratio: float = 1.0) -> float:
    """Geometric mean of the x/y PSF width ratios (reference over super-res).

    pitch_ratio = sr map pixel pitch / reference map pixel pitch, for maps
    sampled on different grids (e.g. upsampled fusion outputs).
    """
    rx = reference_fit.sigma_x / (sr_fit.sigma_x * pitch_ratio)
    ry = reference_fit.sigma_y / (sr_fit.sigma_y * pitch_ratio)
    return math.sqrt(rx * ry)


# ---------------------------------------------------------------------------
# Visibility

@dataclass(frozen=True)
class VisibilityResult:
    value: float  # clamped to [0, 1] for reporting
    raw: float
    resolved: bool


def bilinear(m, x: float, y: float) -> float:
    """Bilinearly interpolated map value at a sub-pixel (x, y)."""
    v = _map_values(m)
    h, w = v.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return float(v[y0, x0] * (1 - fx) * (1 - fy) + v[y0, x1] * fx * (1 - fy)
                 + v[y1, x0] * (1 - fx) * fy + v[y1, x1] * fx * fy)


def visibility(m, peak_a: tuple[float, float], peak_b: tuple[float, float]) -> VisibilityResult:
    """Relative valley depth between two peaks.

    V = (mean of the map at the two peak positions - value at the segment
    midpoint) / mean peak value, sub-pixel sampled. Negative raw values mean
    the pair is unresolved; the reported value is clamped to [0, 1].
    """
    pa = bilinear(m, *peak_a)
    pb = bilinear(m, *peak_b)
    mid = ((peak_a[0] + peak_b[0]) / 2.0, (peak_a[1] + peak_b[1]) / 2.0)
    valley = bilinear(m, *mid)
    peak_mean = 0.5 * (pa + pb)
    if peak_mean == 0:
        return VisibilityResult(0.0, 0.0, False)
    raw = (peak_mean - valley) / peak_mean
    return VisibilityResult(min(max(raw, 0.0), 1.0), raw, raw > 0)


def line_cut(m, p1: tuple[float, float], p2: tuple[float, float], n_samples: int) -> np.ndarray:
    """Bilinearly sampled profile along the p1 -> p2 segment."""
    if n_samples < 2:
        raise ContractError("need at least 2 samples")
    ts = np.linspace(0.0, 1.0, n_samples)
    return np.array([bilinear(m, p1[0] + t * (p2[0] - p1[0]),
                              p1[1] + t * (p2[1] - p1[1])) for t in ts])


# ---------------------------------------------------------------------------
# Display conditioning

def fourier_interpolate(m, factor: int) -> FieldMap:
    """Zero-padded-spectrum upsampling by an integer factor (real output)."""
    if not (isinstance(factor, (int, np.integer)) and factor >= 1):
        raise ContractError(f"factor must be an integer >= 1, got {factor}")
    fm = m if isinstance(m, FieldMap) else FieldMap(_map_values(m))
    if factor == 1:
        return fm
    v = fm.values
    h, w = v.shape
    spec = np.fft.fftshift(np.fft.fft2(v))
    big = np.zeros((h * factor, w * factor), dtype=complex)
    y0 = (h * factor - h) // 2
    x0 = (w * factor - w) // 2
    big[y0:y0 + h, x0:x0 + w] = spec
    out = np.fft.ifft2(np.fft.ifftshift(big)).real * factor**2
    return FieldMap(out, fm.pixel_pitch / factor)


def gaussian_blur(m, sigma: float) -> FieldMap:
    """Gaussian convolution via spectrum multiplication (circular)."""
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    fm = m if isinstance(m, FieldMap) else FieldMap(_map_values(m))
    if sigma == 0:
        return fm
    v = fm.values
    h, w = v.shape
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    kernel = np.exp(-2.0 * np.pi**2 * sigma**2 * (kx**2 + ky**2))
    out = np.fft.ifft2(np.fft.fft2(v) * kernel).real
    return FieldMap(out, fm.pixel_pitch)


# ---------------------------------------------------------------------------
# CSV outputs

def write_fit_table_csv(path, rows) -> None:
    """Rows: dicts with order, method, sigma_x, sigma_y, sigma_geo, stderr, enhancement."""
    cols = ["method", "order", "sigma_x", "sigma_y", "sigma_geo", "sigma_stderr", "enhancement"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in cols})


def write_visibility_csv(path, rows) -> None:
    """Rows: dicts with M, mean_detected, fano_detected, V/raw per method."""
    cols = ["M", "mean_detected", "fano_detected",
            "V_sofi", "V_sofi_raw", "V_qsips", "V_qsips_raw"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in cols})
