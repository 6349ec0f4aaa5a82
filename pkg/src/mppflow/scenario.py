"""Scenario configuration: one TOML file describes one experiment.

Schema (see README for the full grammar):

    name = "fig1_single"
    dimension = 2
    horizon = 1.0
    seed = 42
    ellipticity_floor = 1e-6

    [[noise]]            # tagged field records, one table per field
    kind = "gaussian"
    center = [0.0, 0.0]
    amplitude = [0.1, 0.0]
    width = 0.5

    [noise_defaults]     # shorthand: axis-aligned kernel pairs + background
    isotropic_centers = [[0.0, 0.0]]
    kernel_amplitude = 0.1
    kernel_width = 0.5
    background = 0.35

    [drift]
    kind = "kernel_momentum"
    ...

    [landmarks]
    count = 40
    line_from = [-1.0, -0.5]
    line_to = [1.0, -0.5]

    [solver]
    steps = 100
    tolerance = 1e-8
    max_iter = 50

    [ensemble]
    samples = 400
    steps = 400
    tube_epsilon = 0.35   # optional

    [outputs]
    forward = true
    bvp = true
    plot = true
    ensemble = false
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path as FsPath

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .fields import (
    Constant,
    ConformalAxis,
    ConstantSchedule,
    GaussianKernel,
    KernelMomentum,
    LinearSchedule,
    NoiseModel,
    SineSchedule,
    Sinusoid,
    Sum,
    TimeScaled,
    VectorField,
)

__all__ = ["Scenario", "load_scenario", "parse_field_spec"]


def _need(table, key, ctx):
    if key not in table:
        raise ConfigError(f"{ctx}.{key}" if ctx else key, "missing required key")
    return table[key]


def _parse_schedule(spec, ctx):
    kind = _need(spec, "kind", ctx)
    if kind == "constant":
        return ConstantSchedule(float(spec.get("value", 1.0)))
    if kind == "linear":
        return LinearSchedule(float(spec.get("offset", 0.0)), float(_need(spec, "rate", ctx)))
    if kind == "sine":
        return SineSchedule(
            float(spec.get("offset", 0.0)),
            float(_need(spec, "amplitude", ctx)),
            float(_need(spec, "omega", ctx)),
            float(spec.get("phase", 0.0)),
        )
    raise ConfigError(f"{ctx}.kind", f"unknown schedule kind '{kind}'")


def parse_field_spec(spec, dim, ctx="field") -> VectorField:
    """Build a vector field from a tagged record."""
    if not isinstance(spec, dict):
        raise ConfigError(ctx, "field spec must be a table")
    kind = _need(spec, "kind", ctx)
    try:
        if kind == "constant":
            return Constant(np.asarray(_need(spec, "vector", ctx), dtype=float))
        if kind == "gaussian":
            return GaussianKernel(
                np.asarray(_need(spec, "center", ctx), dtype=float),
                np.asarray(_need(spec, "amplitude", ctx), dtype=float),
                float(_need(spec, "width", ctx)),
            )
        if kind == "conformal":
            return ConformalAxis(
                int(_need(spec, "axis", ctx)), float(_need(spec, "beta", ctx)), dim
            )
        if kind == "kernel_momentum":
            return KernelMomentum(
                np.asarray(_need(spec, "points", ctx), dtype=float),
                np.asarray(_need(spec, "momenta", ctx), dtype=float),
                float(_need(spec, "width", ctx)),
            )
        if kind == "sinusoid":
            return Sinusoid(
                int(spec.get("axis", 0)),
                float(spec.get("offset", 0.0)),
                float(_need(spec, "amplitude", ctx)),
                np.asarray(_need(spec, "wavevector", ctx), dtype=float),
                float(spec.get("phase", 0.0)),
            )
        if kind == "sum":
            terms = [
                parse_field_spec(s, dim, f"{ctx}.terms[{i}]")
                for i, s in enumerate(_need(spec, "terms", ctx))
            ]
            return Sum(terms)
        if kind == "time_scaled":
            return TimeScaled(
                parse_field_spec(_need(spec, "base", ctx), dim, f"{ctx}.base"),
                _parse_schedule(_need(spec, "schedule", ctx), f"{ctx}.schedule"),
            )
        if kind == "epdiff_drift":
            from .epdiff1d import GridDriftField, read_drift_json

            fname = _need(spec, "file", ctx)
            if not FsPath(fname).exists():
                raise ConfigError(f"{ctx}.file", f"drift file '{fname}' not found")
            return GridDriftField(read_drift_json(fname))
    except ConfigError:
        raise
    except Exception as exc:  # bad shapes, widths etc.
        raise ConfigError(ctx, f"invalid '{kind}' field: {exc}") from exc
    raise ConfigError(f"{ctx}.kind", f"unknown field kind '{kind}'")


@dataclass
class Scenario:
    name: str
    dim: int
    horizon: float
    seed: int
    noise: NoiseModel
    drift: VectorField | None
    landmarks: np.ndarray  # (P, d)
    noise_centers: np.ndarray  # (C, d), for plotting
    solver_steps: int = 100
    solver_tolerance: float = 1e-8
    solver_max_iter: int = 50
    ensemble_samples: int = 0
    ensemble_steps: int = 400
    tube_epsilon: float | None = None
    outputs: dict = dc_field(default_factory=dict)
    raw: dict = dc_field(default_factory=dict)


def _landmarks(table, dim):
    if "explicit" in table:
        pts = np.asarray(table["explicit"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != dim:
            raise ConfigError("landmarks.explicit", "expected a list of d-vectors")
        return pts
    count = int(_need(table, "count", "landmarks"))
    if count < 1:
        raise ConfigError("landmarks.count", "need at least one landmark")
    a = np.asarray(_need(table, "line_from", "landmarks"), dtype=float)
    b = np.asarray(_need(table, "line_to", "landmarks"), dtype=float)
    if a.shape != (dim,) or b.shape != (dim,):
        raise ConfigError("landmarks.line_from", "endpoints must be d-vectors")
    ts = np.linspace(0.0, 1.0, count)[:, None] if count > 1 else np.array([[0.5]])
    return a + ts * (b - a)


def load_scenario(path) -> Scenario:
    path = FsPath(path)
    if not path.exists():
        raise ConfigError("config", f"file '{path}' not found")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"TOML parse error: {exc}") from exc

    name = raw.get("name", path.stem)
    dim = int(_need(raw, "dimension", ""))
    if dim not in (1, 2, 3):
        raise ConfigError("dimension", "dimension must be 1, 2 or 3")
    horizon = float(_need(raw, "horizon", ""))
    if horizon <= 0:
        raise ConfigError("horizon", "horizon must be positive")
    seed = int(raw.get("seed", 0))

    sigmas = []
    centers = []
    for i, spec in enumerate(raw.get("noise", [])):
        fld = parse_field_spec(spec, dim, f"noise[{i}]")
        sigmas.append(fld)
        if isinstance(fld, GaussianKernel):
            centers.append(fld.center)
    nd = raw.get("noise_defaults", {})
    if nd:
        width = float(nd.get("kernel_width", 0.5))
        amp = float(nd.get("kernel_amplitude", 0.1))
        for c in nd.get("isotropic_centers", []):
            c = np.asarray(c, dtype=float)
            if c.shape != (dim,):
                raise ConfigError("noise_defaults.isotropic_centers", "centers must be d-vectors")
            centers.append(c)
            for k in range(dim):
                sigmas.append(GaussianKernel(c, amp * np.eye(dim)[k], width))
        bg = float(nd.get("background", 0.0))
        if bg > 0.0:
            for k in range(dim):
                sigmas.append(Constant(bg * np.eye(dim)[k]))
    if not sigmas:
        raise ConfigError("noise", "no noise fields configured")
    floor = float(raw.get("ellipticity_floor", 1e-8))
    noise = NoiseModel(sigmas, ellipticity_floor=floor)

    drift = None
    if "drift" in raw:
        drift = parse_field_spec(raw["drift"], dim, "drift")

    landmarks = _landmarks(_need(raw, "landmarks", ""), dim)

    solver = raw.get("solver", {})
    ens = raw.get("ensemble", {})
    outputs = dict(raw.get("outputs", {}))
    return Scenario(
        name=name,
        dim=dim,
        horizon=horizon,
        seed=seed,
        noise=noise,
        drift=drift,
        landmarks=landmarks,
        noise_centers=np.asarray(centers) if centers else np.zeros((0, dim)),
        solver_steps=int(solver.get("steps", 100)),
        solver_tolerance=float(solver.get("tolerance", 1e-8)),
        solver_max_iter=int(solver.get("max_iter", 50)),
        ensemble_samples=int(ens.get("samples", 0)),
        ensemble_steps=int(ens.get("steps", 400)),
        tube_epsilon=float(ens["tube_epsilon"]) if "tube_epsilon" in ens else None,
        outputs=outputs,
        raw=raw,
    )
