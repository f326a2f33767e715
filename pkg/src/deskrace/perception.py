"""Track limits from camera rasters.

The pipeline mirrors what top entrants converged on: find the drivable band
in the raster, project its edges to metric vehicle-frame points, fit cubic
polynomials per side, then sample both fits on a common forward grid. The
cameras here are top-down, so the ground-plane projection reduces to an
affine cell-to-metre map plus the camera's mount and yaw; the operation
boundary is kept so a perspective model could slot in.

All functions are pure and stateless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .env import CameraCalibration


class PerceptionError(ValueError):
    """Raster or geometry that the pipeline cannot turn into track limits."""


class EmptySceneError(PerceptionError):
    """No drivable cells at all; the vehicle sees nothing to drive on."""


class InconsistentLimitsError(PerceptionError):
    """Fitted boundaries cross; the perceived road has non-positive width."""


@dataclass(frozen=True)
class BoundaryPolynomial:
    """Cubic lateral-offset model y(x) of one track edge, vehicle frame."""

    side: str
    coefficients: tuple[float, float, float, float]  # c0..c3, y = sum c_k x^k
    x_min: float
    x_max: float
    residual: float
    degraded: bool = False  # fit fell back to a lower order

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise PerceptionError(f"side must be 'left' or 'right', got {self.side!r}")
        if not (self.x_max > self.x_min >= 0.0):
            raise PerceptionError(
                f"invalid x range [{self.x_min}, {self.x_max}] for {self.side} boundary"
            )
        if not math.isfinite(self.residual):
            raise PerceptionError("fit residual must be finite")

    def __call__(self, x):
        return P.polyval(np.asarray(x, dtype=float), self.coefficients)


@dataclass(frozen=True)
class TrackLimits:
    """Metric road edges sampled on a forward grid, left-positive frame."""

    samples: tuple[tuple[float, float, float], ...]  # (x, y_left, y_right)
    residuals: tuple[float, float]  # left RMS, right RMS

    def __post_init__(self):
        xs = [s[0] for s in self.samples]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise PerceptionError("sample x must be strictly increasing")
        for x, yl, yr in self.samples:
            if not yl > yr:
                raise InconsistentLimitsError(
                    f"y_left {yl:.3f} <= y_right {yr:.3f} at x = {x:.3f}"
                )

    def arrays(self):
        a = np.asarray(self.samples, dtype=float)
        return a[:, 0], a[:, 1], a[:, 2]


def extract_boundary_points(raster, calib: CameraCalibration):
    """Outermost drivable cells per row, as metric vehicle-frame points.

    Rows are walked near to far. The first populated row anchors on the run
    under the view axis; later rows must overlap the previous row's run, so a
    break in the road ends extraction instead of jumping to another patch.
    Each boundary point is the outer edge of the outermost drivable cell
    (half a cell beyond its center). A run touching the raster's side leaves
    that side's boundary out of view and contributes no point for it.

    Returns (left_points, right_points) as (n, 2) arrays of (x, y).
    """
    r = np.asarray(raster)
    if r.shape != (calib.height, calib.width):
        raise PerceptionError(
            f"raster shape {r.shape} does not match calibration "
            f"({calib.height}, {calib.width})"
        )
    drivable = r != 0
    if not drivable.any():
        raise EmptySceneError("no drivable cells in raster")

    center = (calib.width - 1) / 2.0
    res = calib.resolution
    cy, sy = math.cos(calib.yaw), math.sin(calib.yaw)
    mx, my = calib.mount

    left, right = [], []
    prev = None
    started = False
    for i in range(calib.height):
        runs = _runs(drivable[i])
        run = _select_run(runs, prev, center)
        if run is None:
            if started:
                break
            continue
        started = True
        prev = run
        u = (i + 0.5) * res
        lo, hi = run
        if lo > 0:
            w = (center - lo) * res + res / 2.0
            left.append((mx + cy * u - sy * w, my + sy * u + cy * w))
        if hi < calib.width - 1:
            w = (center - hi) * res - res / 2.0
            right.append((mx + cy * u - sy * w, my + sy * u + cy * w))
    return (
        np.asarray(left, dtype=float).reshape(-1, 2),
        np.asarray(right, dtype=float).reshape(-1, 2),
    )


def _runs(mask):
    # maximal runs of True as (first, last) index pairs
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    return [(int(idx[a]), int(idx[b])) for a, b in zip(starts, ends)]


def _select_run(runs, prev, center):
    if not runs:
        return None
    if prev is not None:
        best, best_ov = None, 0
        for lo, hi in runs:
            ov = min(hi, prev[1]) - max(lo, prev[0]) + 1
            if ov > best_ov:
                best, best_ov = (lo, hi), ov
        return best
    for lo, hi in runs:
        if lo <= center <= hi:
            return (lo, hi)
    return min(runs, key=lambda r: min(abs(r[0] - center), abs(r[1] - center)))


def fit_cubic(points, side: str = "left") -> BoundaryPolynomial:
    """Least-squares cubic y(x) through boundary points.

    Fewer than 4 distinct x values cannot support a cubic; the fit degrades
    to the highest order the data does support and flags it, rather than
    failing mid-drive.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise PerceptionError("fit_cubic needs at least 4 (x, y) points")
    if not np.isfinite(pts).all():
        raise PerceptionError("fit_cubic points must be finite")
    x, y = pts[:, 0], pts[:, 1]
    n_distinct = np.unique(x).size
    degree = 3
    degraded = False
    if n_distinct < 4:
        degree = n_distinct - 1
        degraded = True
    c = P.polyfit(x, y, degree)
    coeffs = np.zeros(4)
    coeffs[: degree + 1] = c
    rms = float(np.sqrt(np.mean((P.polyval(x, c) - y) ** 2)))
    x_min = max(0.0, float(x.min()))
    x_max = float(x.max())
    if x_max <= x_min:
        raise PerceptionError(f"{side} boundary points have no forward extent")
    return BoundaryPolynomial(
        side=side,
        coefficients=tuple(coeffs),
        x_min=x_min,
        x_max=x_max,
        residual=rms,
        degraded=degraded,
    )


def track_limits(
    left: BoundaryPolynomial,
    right: BoundaryPolynomial,
    step: float = 1.0,
    horizon: float = 30.0,
    margin: float = 0.0,
) -> TrackLimits:
    """Sample both boundary fits on a common forward grid.

    Samples run from x = 0 to min(horizon, shared x_max) in `step` strides;
    `margin` shrinks both sides inward. Crossing boundaries mean the two fits
    disagree about where the road is, which is reported, not papered over.
    """
    if step <= 0 or horizon <= 0:
        raise PerceptionError("step and horizon must be positive")
    shared_max = min(left.x_max, right.x_max)
    shared_min = max(left.x_min, right.x_min)
    if shared_max - shared_min < step:
        raise PerceptionError(
            f"boundary fits overlap on [{shared_min:.2f}, {shared_max:.2f}], "
            f"shorter than one {step:.2f} m step"
        )
    stop = min(horizon, shared_max)
    xs = np.arange(0.0, stop + 1e-9, step)
    yl = np.asarray(left(xs), dtype=float) - margin
    yr = np.asarray(right(xs), dtype=float) + margin
    bad = yl <= yr
    if bad.any():
        i = int(np.argmax(bad))
        raise InconsistentLimitsError(
            f"boundaries cross at x = {xs[i]:.2f} "
            f"(y_left {yl[i]:.3f} <= y_right {yr[i]:.3f})"
        )
    samples = tuple((float(x), float(a), float(b)) for x, a, b in zip(xs, yl, yr))
    return TrackLimits(samples=samples, residuals=(left.residual, right.residual))


def centerline_curvature(limits: TrackLimits):
    """Signed curvature of the road midline at each limit sample.

    The midline is refit with a cubic and differentiated analytically;
    positive curvature bends left.
    """
    if len(limits.samples) < 5:
        raise PerceptionError("centerline_curvature needs at least 5 samples")
    x, yl, yr = limits.arrays()
    yc = (yl + yr) / 2.0
    c = P.polyfit(x, yc, 3)
    d1 = P.polyval(x, P.polyder(c))
    d2 = P.polyval(x, P.polyder(c, 2))
    kappa = d2 / (1.0 + d1 * d1) ** 1.5
    return [(float(a), float(k)) for a, k in zip(x, kappa)]


def limits_text(limits: TrackLimits) -> str:
    """Comma-separated dump of the samples, for eyeballing a bad frame."""
    lines = ["x,y_left,y_right"]
    for x, yl, yr in limits.samples:
        lines.append(f"{x:.3f},{yl:.3f},{yr:.3f}")
    return "\n".join(lines) + "\n"
