"""Deterministic artifact writers: trajectory CSVs, JSON summaries, SVG
figures.

Float values go through ``repr`` so identical runs produce byte-identical
files; no timestamps anywhere. Every JSON artifact carries
``schema_version``.
"""

from __future__ import annotations

import csv
import json

import numpy as np

SCHEMA_VERSION = 1

__all__ = [
    "write_trajectories_csv",
    "read_trajectories_csv",
    "write_json",
    "figure_svg",
    "SCHEMA_VERSION",
]


def write_trajectories_csv(paths, file) -> None:
    """Many trajectories in one CSV: ``t,x1,...,xd,sample``."""
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", newline="")
        close = True
    try:
        d = paths[0].dim
        wr = csv.writer(file)
        wr.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + ["sample"])
        for s, p in enumerate(paths):
            for t, x in zip(p.times, p.points):
                wr.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [s])
    finally:
        if close:
            file.close()


def read_trajectories_csv(file):
    """Inverse of ``write_trajectories_csv``; returns list of (times, points)."""
    from .om import Path

    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "r", newline="")
        close = True
    try:
        rd = csv.reader(file)
        header = next(rd)
        if header[0] != "t" or header[-1] != "sample":
            raise ValueError("expected a t,x1,...,xd,sample CSV")
        groups = {}
        for row in rd:
            if not row:
                continue
            s = int(row[-1])
            groups.setdefault(s, []).append([float(c) for c in row[:-1]])
    finally:
        if close:
            file.close()
    out = []
    for s in sorted(groups):
        arr = np.asarray(groups[s], dtype=float)
        out.append(Path(arr[:, 0], arr[:, 1:]))
    return out


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(payload: dict, file) -> None:
    payload = dict(payload)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w")
        close = True
    try:
        json.dump(_jsonable(payload), file, sort_keys=True, indent=1)
        file.write("\n")
    finally:
        if close:
            file.close()


def _fmt(v):
    return f"{v:.4f}"


def _as2d(path):
    """1D trajectories plot as (t, x); higher-d uses the first two axes."""
    points = np.asarray(path.points)
    if points.shape[1] == 1:
        return np.column_stack([path.times, points[:, 0]])
    return points[:, :2]


def figure_svg(
    deterministic,
    mpp_paths,
    noise_centers,
    file,
    width: int = 640,
    height: int = 640,
) -> None:
    """Trajectory figure: red deterministic flow, blue most-probable paths,
    green noise centers. One polyline per trajectory, one circle marker per
    center."""
    det2d = [_as2d(p) for p in deterministic]
    mpp2d = [_as2d(p) for p in mpp_paths]
    noise_centers = np.asarray(noise_centers, dtype=float)
    cent2d = (
        noise_centers[:, :2]
        if len(noise_centers) and noise_centers.shape[1] >= 2
        else np.zeros((0, 2))
    )
    allpts = np.concatenate(det2d + mpp2d + [cent2d], axis=0)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 0.08 * span.max()
    lo, hi = lo - margin, hi + margin
    span = hi - lo

    def to_px(xy):
        # y axis flipped so larger coordinates render upward
        px = (xy[:, 0] - lo[0]) / span[0] * width
        py = height - (xy[:, 1] - lo[1]) / span[1] * height
        return px, py

    def polyline(points2d, cls, color):
        px, py = to_px(points2d)
        coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        return (
            f'<polyline class="{cls}" fill="none" stroke="{color}" '
            f'stroke-width="1.2" points="{coords}"/>'
        )

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for p in det2d:
        lines.append(polyline(p, "deterministic", "red"))
    for p in mpp2d:
        lines.append(polyline(p, "mpp", "blue"))
    for c in cent2d:
        px, py = to_px(np.asarray([c]))
        lines.append(
            f'<circle class="noise-center" cx="{_fmt(px[0])}" cy="{_fmt(py[0])}" '
            f'r="4" fill="green"/>'
        )
    lines.append("</svg>")
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w")
        close = True
    try:
        file.write("\n".join(lines) + "\n")
    finally:
        if close:
            file.close()
