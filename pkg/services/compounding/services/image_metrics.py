"""
Image-quality measures for beamformed envelopes.

Includes:
- PSNR, SSIM (global, plus a Gaussian sliding-window variant)
- Mutual information on a joint histogram
- CR, CNR and gCNR over a target / background region pair
- Lateral resolution as the FWHM of a wire's lateral profile

All inputs are envelope images normalised to a peak of 1, never
log-compressed.
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from errors import DimensionError, MetricError, WindowTooSmallError
from models.imaging import BeamformGrid, Disk, RegionMask, Wire
from schema.reports import MetricSummary

SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"images differ in shape: {a.shape} vs {b.shape}")


def psnr(yhat: np.ndarray, y: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio in dB.

    PSNR = 20 log10(MAX_Y / RMSE), MAX_Y the largest reference pixel.

    Returns:
        +inf when the images are identical
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(yhat, y)
    rmse = math.sqrt(float(np.mean((yhat - y) ** 2)))
    if rmse == 0.0:
        return math.inf
    return 20.0 * math.log10(float(np.max(y)) / rmse)


def ssim(yhat: np.ndarray, y: np.ndarray, data_range: float = 1.0) -> float:
    """
    Structural similarity computed over the whole image as one window.

    SSIM = (2 mu_x mu_y + C1)(2 cov + C2) / ((mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2))
    with C1 = (K1 L)^2, C2 = (K2 L)^2 and L the reference dynamic range.
    """
    x = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = float(np.mean(x))
    mu_y = float(np.mean(y))
    dx = x - mu_x
    dy = y - mu_y
    var_x = float(np.mean(dx * dx))
    var_y = float(np.mean(dy * dy))
    cov = float(np.mean(dx * dy))
    numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return numerator / denominator


def ssim_windowed(yhat: np.ndarray, y: np.ndarray, data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Mean SSIM over 11 x 11 Gaussian-weighted windows."""
    x = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def blur(a):
        return gaussian_filter(a, sigma=sigma, truncate=3.5, mode="reflect")

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    index = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return float(np.mean(index))


def _clip_unit(a: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=np.float64).ravel(), 0.0, 1.0)


def entropy(x: np.ndarray, bins: int = 256) -> float:
    """Shannon entropy (nats) of a [0, 1] histogram."""
    counts, _ = np.histogram(_clip_unit(x), bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mutual_information(yhat: np.ndarray, y: np.ndarray, bins: int = 256) -> float:
    """Mutual information in nats from a bins x bins joint histogram over [0, 1]^2."""
    _same_shape(np.asarray(yhat), np.asarray(y))
    joint, _, _ = np.histogram2d(_clip_unit(yhat), _clip_unit(y), bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    pxy = joint / joint.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])))


def _regions(img: np.ndarray, mask: RegionMask) -> Tuple[np.ndarray, np.ndarray]:
    img = np.asarray(img, dtype=np.float64)
    if img.shape != mask.target.shape:
        raise DimensionError(f"image {img.shape} and masks {mask.target.shape} differ")
    return img[mask.target], img[mask.background]


def contrast_ratio(img: np.ndarray, mask: RegionMask) -> float:
    """CR = -20 log10(mu_t / mu_b) in dB."""
    target, background = _regions(img, mask)
    mu_t = float(np.mean(target))
    mu_b = float(np.mean(background))
    if mu_b <= 0.0:
        raise MetricError("background mean is not positive")
    if mu_t <= 0.0:
        return math.inf
    return -20.0 * math.log10(mu_t / mu_b)


def cnr(img: np.ndarray, mask: RegionMask) -> float:
    """CNR = 20 log10(|mu_t - mu_b| / sqrt(var_t + var_b)) in dB."""
    target, background = _regions(img, mask)
    spread = math.sqrt(float(np.var(target)) + float(np.var(background)))
    if spread == 0.0:
        raise MetricError("both regions have zero variance")
    gap = abs(float(np.mean(target)) - float(np.mean(background)))
    if gap == 0.0:
        return -math.inf
    return 20.0 * math.log10(gap / spread)


def gcnr(img: np.ndarray, mask: RegionMask, bins: int = 256, edges: Optional[np.ndarray] = None) -> float:
    """
    Generalized contrast-to-noise ratio.

    gCNR = 1 - sum_k min(p_t(k), p_b(k)) over shared histogram bins spanning
    [0, max intensity] unless explicit edges are given.
    """
    target, background = _regions(img, mask)
    if edges is None:
        top = float(max(np.max(target), np.max(background)))
        if top <= 0.0:
            return 0.0
        edges = np.linspace(0.0, top, bins + 1)
    h_t, _ = np.histogram(target, bins=edges)
    h_b, _ = np.histogram(background, bins=edges)
    if h_t.sum() == 0 or h_b.sum() == 0:
        raise MetricError("a region has no samples inside the histogram range")
    p_t = h_t / h_t.sum()
    p_b = h_b / h_b.sum()
    return float(1.0 - np.sum(np.minimum(p_t, p_b)))


def region_mask(grid: BeamformGrid, disk: Disk) -> RegionMask:
    """Disk interior against an equal-area concentric annulus behind a guard gap."""
    x, z = grid.mesh()
    distance = np.hypot(x - disk.x, z - disk.z)
    depth = math.hypot(disk.x, disk.z)
    guard = 2.0 * max(grid.depth_step, depth * grid.angle_step)
    inner = disk.radius + guard
    outer = math.sqrt(disk.radius**2 + inner**2)
    return RegionMask(target=distance <= disk.radius, background=(distance >= inner) & (distance <= outer))


def lateral_resolution_fwhm(env: np.ndarray, wire: Wire, grid: BeamformGrid, search: int = 3) -> float:
    """
    Lateral FWHM (mm) of the profile through a wire's peak pixel.

    The peak is searched within +-search pixels of the annotated position;
    half-maximum crossings are linearly interpolated and the angular width is
    converted to arc length at the peak depth.
    """
    env = np.asarray(env, dtype=np.float64)
    if env.shape != grid.shape:
        raise DimensionError(f"image {env.shape} does not match grid {grid.shape}")
    if not grid.covers(wire.x, wire.z):
        raise MetricError(f"wire at ({wire.x:.4f}, {wire.z:.4f}) m lies outside the grid")
    row, col = (int(round(v)) for v in grid.locate(wire.x, wire.z))
    r0, r1 = max(0, row - search), min(grid.depth_samples, row + search + 1)
    c0, c1 = max(0, col - search), min(grid.angle_lines, col + search + 1)
    window = env[r0:r1, c0:c1]
    dr, dc = np.unravel_index(int(np.argmax(window)), window.shape)
    peak_row, peak_col = r0 + int(dr), c0 + int(dc)

    profile = env[peak_row]
    half = profile[peak_col] / 2.0
    if half <= 0.0:
        raise MetricError("wire peak is zero")

    left = peak_col
    while left >= 0 and profile[left] > half:
        left -= 1
    right = peak_col
    while right < profile.size and profile[right] > half:
        right += 1
    if left < 0 or right >= profile.size:
        raise WindowTooSmallError("lateral profile does not fall below half maximum inside the image")

    left_cross = left + (half - profile[left]) / (profile[left + 1] - profile[left])
    right_cross = right - (half - profile[right]) / (profile[right - 1] - profile[right])
    width_lines = right_cross - left_cross
    return float(width_lines * grid.angle_step * grid.depths[peak_row] * 1e3)


def field_label(depth: float, grid: BeamformGrid, parts: int) -> str:
    """near/far (parts=2) or near/middle/far (parts=3) band of a depth."""
    labels = {2: ("near", "far"), 3: ("near", "middle", "far")}[parts]
    fraction = (depth - grid.depth_start) / (grid.depth_end - grid.depth_start)
    return labels[min(parts - 1, max(0, int(fraction * parts)))]


def summarize(values: Sequence[float]) -> MetricSummary:
    """Mean and standard deviation that tolerate infinite PSNR values."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return MetricSummary(mean=math.nan, std=math.nan, count=0)
    if np.all(np.isfinite(arr)):
        return MetricSummary(mean=float(np.mean(arr)), std=float(np.std(arr)), count=int(arr.size))
    if np.all(arr == arr[0]):
        return MetricSummary(mean=float(arr[0]), std=0.0, count=int(arr.size))
    return MetricSummary(mean=float(np.mean(arr)), std=math.inf, count=int(arr.size))
