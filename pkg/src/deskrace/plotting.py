"""Vector-graphic output for recorded laps: trace over the track, speed profile."""

import csv

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .track import sample_many


class TrajectoryFormatError(ValueError):
    pass


_NUMERIC = ("t", "x", "y", "heading", "speed", "steer",
            "action_steering", "action_acceleration", "segment")


def read_trajectory(path):
    """Read a trajectory CSV into a dict of arrays (infraction stays text)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(_NUMERIC) <= set(reader.fieldnames):
            raise TrajectoryFormatError(
                f"{path}: expected a trajectory header with columns {_NUMERIC}")
        rows = list(reader)
    if not rows:
        raise TrajectoryFormatError(f"{path}: no data rows")
    try:
        out = {k: np.array([float(r[k]) for r in rows]) for k in _NUMERIC}
    except ValueError as exc:
        raise TrajectoryFormatError(f"{path}: non-numeric cell ({exc})") from None
    out["infraction"] = [r["infraction"] for r in rows]
    return out


def _track_edges(track, n=600):
    s = np.linspace(0.0, track.total_length, n, endpoint=False)
    centers, headings, _ = sample_many(track, s)
    normals = np.stack([-np.sin(headings), np.cos(headings)], axis=1)
    wl, wr = track.widths_at(s)
    return centers + normals * wl[:, None], centers - normals * wr[:, None]


def plot_trajectory(log, out_path, track=None):
    """Write an SVG with the driven line and its speed profile.

    log is a path or the dict from read_trajectory; pass a Track to draw its
    boundaries under the trace.
    """
    if not isinstance(log, dict):
        log = read_trajectory(log)
    fig, (ax_map, ax_speed) = plt.subplots(
        1, 2, figsize=(11, 5), gridspec_kw={"width_ratios": [1.2, 1.0]})

    if track is not None:
        for edge in _track_edges(track):
            closed = np.vstack([edge, edge[:1]])
            ax_map.plot(closed[:, 0], closed[:, 1], color="0.6", linewidth=0.8)
    pts = ax_map.scatter(log["x"], log["y"], c=log["speed"], s=3, cmap="viridis")
    hits = [i for i, kind in enumerate(log["infraction"]) if kind]
    if hits:
        ax_map.scatter(log["x"][hits], log["y"][hits], marker="x", color="red",
                       s=45, linewidths=1.4, label="infraction")
        ax_map.legend(loc="best", fontsize=8)
    fig.colorbar(pts, ax=ax_map, label="speed (m/s)")
    ax_map.set_aspect("equal")
    ax_map.set_xlabel("x (m)")
    ax_map.set_ylabel("y (m)")
    ax_map.set_title("driven line")

    ax_speed.plot(log["t"], log["speed"], linewidth=1.0)
    for i in hits:
        ax_speed.axvline(log["t"][i], color="red", linewidth=0.6, alpha=0.6)
    ax_speed.set_xlabel("t (s)")
    ax_speed.set_ylabel("speed (m/s)")
    ax_speed.set_title("speed profile")
    ax_speed.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
