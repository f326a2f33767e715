"""Track geometry: smooth closed circuits parameterized by arc length.

A Track is built from ordered centerline control points with per-point lane
half-widths. The control polygon is interpolated with cubic splines,
reparameterized by arc length on a 0.5 m grid, and every query (nearest-point
projection, drivability, curvature sampling) runs against that smoothed
geometry. Tracks are immutable value objects: build once, query from anywhere.

Conventions: lateral offset d is positive to the LEFT of the direction of
travel, and generated circuits run counter-clockwise, so the infield is at
positive d.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

RESAMPLE_DS = 0.5            # arc-length grid resolution (m)
MIN_HALF_WIDTH = 1.0         # half the default vehicle footprint width (m)
DEFAULT_PROJECT_MARGIN = 30.0  # beyond this distance from the centerline a point is out of bounds
DEFAULT_N_SEGMENTS = 10

# segment feet farther along-track than this from the nearest vertex are treated
# as clamped (possible only past the ends of an open track)
_FOOT_SLACK = 0.35


class TrackFormatError(ValueError):
    """A track file or point set violates the format contract."""


class OutOfBoundsError(ValueError):
    """A query point lies beyond the projection margin."""


@dataclass(frozen=True)
class TrackFrame:
    """Curvilinear coordinates: arc length s (m) and signed lateral offset d (m, left positive)."""

    s: float
    d: float


@dataclass(frozen=True)
class CenterlineSample:
    """Centerline point with heading (rad) and signed curvature (1/m, left turn positive)."""

    point: np.ndarray
    heading: float
    curvature: float


class Track:
    """Smoothed racing circuit with segment partition and optional obstacles.

    Parameters
    ----------
    track_id : str
        Stable identifier, serialized with the track.
    points : (N, 2) array
        Ordered centerline control points. For closed tracks the loop is
        implicit; do not repeat the first point.
    half_width_left, half_width_right : (N,) arrays or float
        Lane half-widths at each control point, interpolated linearly in
        between. Must exceed MIN_HALF_WIDTH.
    closed : bool
        Closed circuit (default) or open road.
    n_segments : int
        Number of equal arc-length scoring segments.
    obstacles : iterable of (cx, cy, r)
        Static disc obstacles.
    """

    def __init__(self, track_id, points, half_width_left, half_width_right,
                 closed=True, n_segments=DEFAULT_N_SEGMENTS, obstacles=()):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise TrackFormatError("points: expected an (N, 2) array of centerline points")
        n = len(points)
        if n < (3 if closed else 2):
            raise TrackFormatError("points: need at least 3 control points for a closed track")
        if not np.all(np.isfinite(points)):
            raise TrackFormatError("points: non-finite coordinate")

        wl = np.broadcast_to(np.asarray(half_width_left, dtype=float), (n,)).copy()
        wr = np.broadcast_to(np.asarray(half_width_right, dtype=float), (n,)).copy()
        for name, w in (("half_width_left", wl), ("half_width_right", wr)):
            if not np.all(np.isfinite(w)):
                raise TrackFormatError(f"{name}: non-finite value")
            if np.any(w <= MIN_HALF_WIDTH):
                bad = int(np.argmax(w <= MIN_HALF_WIDTH))
                raise TrackFormatError(
                    f"{name}[{bad}] = {w[bad]:.3f} m is below the minimum of {MIN_HALF_WIDTH} m "
                    "(half the vehicle footprint width)")

        if n_segments < 1:
            raise TrackFormatError("n_segments: must be at least 1")

        obstacles = np.asarray(list(obstacles), dtype=float).reshape(-1, 3)
        if obstacles.size and (np.any(~np.isfinite(obstacles)) or np.any(obstacles[:, 2] <= 0)):
            raise TrackFormatError("obstacles: rows must be finite (cx, cy, r) with r > 0")

        # chord-length parameterization of the control polygon
        closing = [np.linalg.norm(points[0] - points[-1])] if closed else []
        chords = np.concatenate([np.linalg.norm(np.diff(points, axis=0), axis=1), closing])
        if np.any(chords < 1e-9):
            bad = int(np.argmax(chords < 1e-9))
            raise TrackFormatError(
                f"points[{bad}] -> points[{(bad + 1) % n}]: non-increasing arc length "
                "(duplicate consecutive control points)")
        t_ctrl = np.concatenate([[0.0], np.cumsum(chords)])

        if closed:
            knots_t = t_ctrl
            knots_p = np.vstack([points, points[:1]])
            chord_spl = CubicSpline(knots_t, knots_p, axis=0, bc_type="periodic")
        else:
            chord_spl = CubicSpline(t_ctrl, points, axis=0, bc_type="natural")

        # measure true arc length on a fine polygon, then invert to s -> t
        t_end = t_ctrl[-1]
        n_fine = max(512, int(np.ceil(t_end / 0.05)))
        t_fine = np.linspace(0.0, t_end, n_fine + 1)
        p_fine = chord_spl(t_fine)
        s_fine = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p_fine, axis=0), axis=1))])
        total_length = float(s_fine[-1])

        if closed:
            n_grid = max(8, int(np.floor(total_length / RESAMPLE_DS)))
            s_grid = np.arange(n_grid) * (total_length / n_grid)
        else:
            n_grid = max(8, int(np.round(total_length / RESAMPLE_DS)))
            s_grid = np.linspace(0.0, total_length, n_grid + 1)
        t_grid = np.interp(s_grid, s_fine, t_fine)
        p_grid = chord_spl(t_grid)

        # final spline indexed by arc length; analytic derivatives give heading and curvature
        if closed:
            spl = CubicSpline(np.concatenate([s_grid, [total_length]]),
                              np.vstack([p_grid, p_grid[:1]]), axis=0, bc_type="periodic")
        else:
            spl = CubicSpline(s_grid, p_grid, axis=0, bc_type="natural")

        cum_s = np.interp(t_ctrl[:n], t_fine, s_fine)
        cum_s[0] = 0.0

        self.id = str(track_id)
        self.centerline = points
        self.cum_s = cum_s
        self.half_width_left = wl
        self.half_width_right = wr
        self.total_length = total_length
        self.n_segments = int(n_segments)
        self.segment_starts = total_length * np.arange(n_segments) / n_segments
        self.obstacles = obstacles
        self.closed = bool(closed)

        self._spl = spl
        self._s_grid = s_grid
        self._p_grid = p_grid
        self._tree = cKDTree(p_grid)
        if closed:
            seg_next = np.vstack([p_grid[1:], p_grid[:1]])
            self._seg_arc = np.diff(np.concatenate([s_grid, [total_length]]))
        else:
            seg_next = p_grid[1:]
            self._seg_arc = np.diff(s_grid)
        self._seg_base = p_grid[: len(seg_next)]
        self._seg_vec = seg_next - self._seg_base
        self._seg_len2 = np.einsum("ij,ij->i", self._seg_vec, self._seg_vec)
        self._n_segs = len(self._seg_vec)

        # width lookup along arc length, wrap-aware for closed tracks
        if closed:
            self._width_s = np.concatenate([cum_s, [total_length]])
            self._width_l = np.concatenate([wl, wl[:1]])
            self._width_r = np.concatenate([wr, wr[:1]])
        else:
            self._width_s, self._width_l, self._width_r = cum_s, wl, wr

        for arr in (self.centerline, self.cum_s, self.half_width_left,
                    self.half_width_right, self.segment_starts, self.obstacles):
            arr.flags.writeable = False

    # -- queries ---------------------------------------------------------

    def wrap_s(self, s):
        """Normalize arc length into [0, total_length) for closed tracks."""
        if self.closed:
            return np.mod(s, self.total_length)
        return s

    def widths_at(self, s):
        """(left, right) half-widths at arc length s (scalar or array)."""
        s = self.wrap_s(s)
        return (np.interp(s, self._width_s, self._width_l),
                np.interp(s, self._width_s, self._width_r))

    def project_many(self, points):
        """Vectorized nearest-point projection.

        Returns (s, d, dist, clamped): arc lengths, signed lateral offsets,
        euclidean distances to the projection feet, and a mask of feet clamped
        at the ends of an open track.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _, idx = self._tree.query(pts)
        if self.closed:
            cand = np.stack([(idx - 1) % self._n_segs, idx % self._n_segs])
        else:
            cand = np.stack([np.clip(idx - 1, 0, self._n_segs - 1),
                             np.clip(idx, 0, self._n_segs - 1)])

        best_d2 = np.full(len(pts), np.inf)
        out_s = np.zeros(len(pts))
        out_d = np.zeros(len(pts))
        out_clamp = np.zeros(len(pts), dtype=bool)
        for k in cand:
            a = self._seg_base[k]
            v = self._seg_vec[k]
            rel = pts - a
            t_raw = np.einsum("ij,ij->i", rel, v) / self._seg_len2[k]
            t = np.clip(t_raw, 0.0, 1.0)
            foot = a + t[:, None] * v
            diff = pts - foot
            d2 = np.einsum("ij,ij->i", diff, diff)
            take = d2 < best_d2 - 1e-12
            if np.any(take):
                best_d2[take] = d2[take]
                seg_len = np.sqrt(self._seg_len2[k[take]])
                cross = (v[take, 0] * rel[take, 1] - v[take, 1] * rel[take, 0]) / seg_len
                out_s[take] = self._s_grid[k[take]] + t[take] * self._seg_arc[k[take]]
                out_d[take] = cross
                out_clamp[take] = (t_raw[take] < -1e-12) | (t_raw[take] > 1.0 + 1e-12)
        return out_s, out_d, np.sqrt(best_d2), out_clamp

    def drivable_mask(self, points):
        """Boolean drivability for a batch of world points.

        A point is drivable when its lateral offset lies within the local lane
        half-widths and it is outside every obstacle disc. Points beyond the
        projection margin, or past the ends of an open track, are not drivable.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.drivable_rule(pts, *self.project_many(pts))

    def drivable_rule(self, pts, s, d, dist, clamped):
        """The drivability decision applied to precomputed projections.

        Split out so callers that already projected a batch (the environment
        steps position and wheels together) apply the exact same rule as
        drivable_mask.
        """
        wl, wr = self.widths_at(s)
        ok = (d <= wl) & (d >= -wr) & (dist <= DEFAULT_PROJECT_MARGIN)
        ok &= ~(clamped & (dist - np.abs(d) > _FOOT_SLACK))
        for cx, cy, r in self.obstacles:
            dx = pts[:, 0] - cx
            dy = pts[:, 1] - cy
            ok &= dx * dx + dy * dy > r * r
        return ok


def project(track: Track, point, margin=DEFAULT_PROJECT_MARGIN) -> TrackFrame:
    """Project a world point onto the centerline.

    Raises OutOfBoundsError when the point is farther than `margin` from the
    centerline.
    """
    p = np.asarray(point, dtype=float)
    s, d, dist, clamped = track.project_many([p])
    if dist[0] > margin:
        raise OutOfBoundsError(
            f"point {tuple(p)} is {dist[0]:.1f} m from the "
            f"centerline, beyond the {margin:.1f} m margin")
    s_ref = float(s[0])
    if not clamped[0]:
        # polish the polyline estimate on the spline: solve (p - r(s)) . r'(s) = 0
        for _ in range(3):
            r = track._spl(s_ref)
            r1 = track._spl(s_ref, 1)
            r2 = track._spl(s_ref, 2)
            rel = p - r
            f = rel @ r1
            fp = -(r1 @ r1) + rel @ r2
            if abs(fp) < 1e-12:
                break
            step = np.clip(f / -fp, -RESAMPLE_DS, RESAMPLE_DS)
            s_ref = float(track.wrap_s(s_ref + step))
            if abs(step) < 1e-10:
                break
        r = track._spl(s_ref)
        r1 = track._spl(s_ref, 1)
        tan = r1 / np.hypot(r1[0], r1[1])
        rel = p - r
        return TrackFrame(s=s_ref, d=float(tan[0] * rel[1] - tan[1] * rel[0]))
    return TrackFrame(s=s_ref, d=float(d[0]))


def sample(track: Track, s: float) -> CenterlineSample:
    """Centerline point, heading and curvature at arc length s.

    s wraps modulo lap length on closed tracks; on open tracks it must lie in
    [0, total_length].
    """
    if track.closed:
        s = float(np.mod(s, track.total_length))
    elif not -1e-9 <= s <= track.total_length + 1e-9:
        raise ValueError(f"s = {s:.3f} outside [0, {track.total_length:.3f}] on an open track")
    p = track._spl(s)
    d1 = track._spl(s, 1)
    d2 = track._spl(s, 2)
    speed2 = d1[0] * d1[0] + d1[1] * d1[1]
    curv = (d1[0] * d2[1] - d1[1] * d2[0]) / speed2 ** 1.5
    return CenterlineSample(point=np.asarray(p, dtype=float),
                            heading=float(np.arctan2(d1[1], d1[0])),
                            curvature=float(curv))


def sample_many(track: Track, s_values):
    """Vectorized sample(): returns (points, headings, curvatures) arrays."""
    s = track.wrap_s(np.asarray(s_values, dtype=float))
    p = track._spl(s)
    d1 = track._spl(s, 1)
    d2 = track._spl(s, 2)
    speed2 = np.einsum("ij,ij->i", d1, d1)
    curv = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed2 ** 1.5
    return p, np.arctan2(d1[:, 1], d1[:, 0]), curv


def is_drivable(track: Track, point) -> bool:
    """True when the point lies inside the lane and outside all obstacles."""
    return bool(track.drivable_mask([point])[0])


def segment_index(track: Track, s: float) -> int:
    """Index of the scoring segment containing arc length s."""
    s = track.wrap_s(float(s))
    if not track.closed and not -1e-9 <= s <= track.total_length + 1e-9:
        raise ValueError(f"s = {s:.3f} outside [0, {track.total_length:.3f}]")
    idx = int(np.searchsorted(track.segment_starts, s, side="right") - 1)
    return max(0, min(idx, track.n_segments - 1))


# -- serialization -------------------------------------------------------

def save_track(track: Track, path) -> None:
    """Write a track to its JSON file format (see load_track)."""
    doc = {
        "id": track.id,
        "closed": track.closed,
        "n_segments": track.n_segments,
        "points": [[float(x), float(y), float(wl), float(wr)]
                   for (x, y), wl, wr in zip(track.centerline, track.half_width_left,
                                             track.half_width_right)],
        "obstacles": [[float(a), float(b), float(c)] for a, b, c in track.obstacles],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_track(path) -> Track:
    """Load a track from a JSON file.

    Format: {"id": str, "closed": bool, "n_segments": int,
             "points": [[x, y, half_width_left, half_width_right], ...],
             "obstacles": [[cx, cy, r], ...]}
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TrackFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise TrackFormatError(f"{path}: expected a JSON object at top level")
    for key in ("id", "closed", "n_segments", "points"):
        if key not in doc:
            raise TrackFormatError(f"{path}: missing required field '{key}'")
    rows = np.asarray(doc["points"], dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 4:
        raise TrackFormatError(f"{path}: 'points' rows must be [x, y, wl, wr]")
    return Track(doc["id"], rows[:, :2], rows[:, 2], rows[:, 3],
                 closed=bool(doc["closed"]), n_segments=int(doc["n_segments"]),
                 obstacles=doc.get("obstacles", ()))


# -- generation ----------------------------------------------------------

@dataclass
class GeneratorSpec:
    """Parameters for generate_track. `name` picks the family, widths may override."""

    name: str
    half_width: float | None = None
    radius: float = 200.0        # circle and stadium end radius
    straight: float = 250.0      # stadium straight length
    n_segments: int = DEFAULT_N_SEGMENTS


_DEFAULT_HALF_WIDTH = {
    "circle": 6.0,
    "stadium": 6.0,
    "thruxton_standin": 6.5,
    "anglesey_standin": 5.0,
    "vegas_standin": 5.5,
}

# stand-in circuits: radial Fourier loops scaled to a target lap length.
# harmonics are (order, relative amplitude); higher orders make tighter corners.
_STANDINS = {
    "thruxton_standin": (3800.0, ((2, 0.055), (3, 0.040), (5, 0.018))),
    "anglesey_standin": (2100.0, ((2, 0.080), (5, 0.050), (8, 0.045), (12, 0.030))),
    "vegas_standin": (1800.0, ((2, 0.075), (3, 0.050), (5, 0.050), (7, 0.015))),
}

GENERATOR_NAMES = tuple(_DEFAULT_HALF_WIDTH)


def _circle_points(radius):
    n = max(48, int(round(2 * np.pi * radius / 5.0)))
    th = 2 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(th), np.sin(th)], axis=1)


def _stadium_points(straight, radius):
    # counter-clockwise: bottom straight, right arc, top straight, left arc;
    # the lap starts mid-straight so spawns sit on locally straight road
    half = straight / 2.0
    per = 2 * straight + 2 * np.pi * radius
    n = max(64, int(round(per / 5.0)))
    u = (per * np.arange(n) / n + half) % per
    pts = np.empty((n, 2))
    for i, s in enumerate(u):
        if s < straight:
            pts[i] = (-half + s, -radius)
        elif s < straight + np.pi * radius:
            a = (s - straight) / radius - np.pi / 2
            pts[i] = (half + radius * np.cos(a), radius * np.sin(a))
        elif s < 2 * straight + np.pi * radius:
            pts[i] = (half - (s - straight - np.pi * radius), radius)
        else:
            a = (s - 2 * straight - np.pi * radius) / radius + np.pi / 2
            pts[i] = (-half + radius * np.cos(a), radius * np.sin(a))
    return pts


def _standin_points(target_length, waves):
    # waves: (order, amplitude, phase) triples applied to a unit radial profile
    base_r = target_length / (2 * np.pi)
    n = max(96, int(round(target_length / 5.0)))
    th = 2 * np.pi * np.arange(n) / n
    r = np.full(n, 1.0)
    for order, amp, phase in waves:
        r += amp * np.cos(order * th + phase)
    return base_r * r[:, None] * np.stack([np.cos(th), np.sin(th)], axis=1)


def generate_track(spec, seed=0) -> Track:
    """Deterministically generate a named track.

    `spec` is a GeneratorSpec or one of: circle, stadium, thruxton_standin,
    anglesey_standin, vegas_standin. The same (spec, seed) pair always yields
    a bit-identical track.
    """
    if isinstance(spec, str):
        spec = GeneratorSpec(name=spec)
    if spec.name not in _DEFAULT_HALF_WIDTH:
        raise ValueError(f"unknown track spec '{spec.name}', expected one of {GENERATOR_NAMES}")
    hw = spec.half_width if spec.half_width is not None else _DEFAULT_HALF_WIDTH[spec.name]
    track_id = f"{spec.name}_s{seed}"

    def build(points):
        return Track(track_id, points, hw, hw, closed=True, n_segments=spec.n_segments)

    if spec.name == "circle":
        return build(_circle_points(spec.radius))
    if spec.name == "stadium":
        radius = min(spec.radius, 80.0)
        return build(_stadium_points(spec.straight, radius))

    target, harmonics = _STANDINS[spec.name]
    rng = np.random.default_rng(int(seed))
    waves = [(order, amp * (0.8 + 0.4 * rng.uniform()), rng.uniform(0.0, 2 * np.pi))
             for order, amp in harmonics]
    scale = 1.0
    for _ in range(6):
        track = build(_standin_points(target, [(k, a * scale, ph) for k, a, ph in waves]))
        # keep corner radii clear of the lane width so the circuit cannot self-overlap
        _, _, curv = sample_many(track, np.arange(0.0, track.total_length, 2.0))
        if np.max(np.abs(curv)) * 3.0 * hw < 1.0:
            break
        scale *= 0.85
    for _ in range(4):
        if abs(track.total_length - target) <= 1e-6 * target:
            break
        track = build(track.centerline * (target / track.total_length))
    return track


def with_segments(track: Track, n_segments: int) -> Track:
    """Copy of `track` with a different scoring partition (geometry shared)."""
    if n_segments < 1:
        raise ValueError("n_segments: must be at least 1")
    dup = copy.copy(track)
    dup.n_segments = int(n_segments)
    starts = track.total_length * np.arange(n_segments) / n_segments
    starts.flags.writeable = False
    dup.segment_starts = starts
    return dup
