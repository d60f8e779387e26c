"""JSON-configured experiments.

A configuration names a command and, per command, the medium preset, grid, sources, frames and tolerances. It is
validated against :data:`CONFIG_SCHEMA`, completed with the command's defaults and dispatched to a handler that
returns an :class:`ExperimentReport`. Reports carry metrics, tables and plot series; declared assertions are
evaluated on the metrics.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from jsonschema import Draft202012Validator

from wavescope.base import ConfigError, WavescopeError, constant_field, constant_one_form
from wavescope.covector_lab import (
    CovectorFrame,
    build_four_frame,
    build_i3_frame,
    build_three_frame,
    fit_laurent,
    four_frame_expansion_variable,
    four_frame_theta,
    interaction_sums,
    sweep_four_frame,
)
from wavescope.gauge import GaugeFunction, apply_gauge, dn_discrepancy
from wavescope.linearization import MultiSource, cascade_terms, fd_mixed_derivative, solve_sources
from wavescope.lorentz_geometry import Box, ProductMetric, detect_conjugate_point, trace_bicharacteristic
from wavescope.recovery import RESULT_HEADER, recover_medium, verify_gauge_relations, verify_time_independence
from wavescope.symbol_transport import MeasurementOracle, minkowski_to_metric
from wavescope.utils import load_json, sha256_of
from wavescope.wave_solver import BoundarySource, Grid, MediumParams, dn_trace, solve_nonlinear

module_logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COMMANDS = ("simulate", "dn", "linearize", "gauge-check", "trace", "frames", "coeffs", "recover", "time-independence")
MEDIUM_PRESETS = ("minkowski", "gaussian-lens", "focusing-lens", "damped-westervelt", "constant-b")
GAUGE_PRESETS = ("identity", "sinusoidal", "time-bump")

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}
_vector = {"type": "array", "items": _number, "minItems": 1}
_interval = {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}
_cell_count = {"type": "integer", "minimum": 2}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "wavescope experiment",
    "type": "object",
    "required": ["schema_version", "command"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": list(COMMANDS)},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "strict": {"type": "boolean"},
        "output": {"type": "object", "properties": {"directory": {"type": "string"}}, "additionalProperties": False},
        "medium": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(MEDIUM_PRESETS)},
                "dim": {"enum": [1, 2, 3]},
                "bounds": {"type": "array", "items": _interval},
                "parameters": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "beta2": _number,
                        "beta3": _number,
                        "beta4": _number,
                        "h": _number,
                        "b0": _number,
                        "b": _vector,
                        "speed": _positive,
                        "lens_amplitude": _number,
                        "width": _positive,
                        "center": _vector,
                    },
                },
            },
        },
        "gauge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(GAUGE_PRESETS)},
                "amplitude": _number,
                "duration": _positive,
            },
        },
        "domain": {"type": "object", "properties": {"bounds": {"type": "array", "items": _interval}}},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cells": {"oneOf": [_cell_count, {"type": "array", "items": _cell_count}]},
                "duration": _positive,
                "cfl": _positive,
                "levels": {"type": "integer", "minimum": 3},
            },
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "amplitude": _number,
                "start": {"type": "number", "minimum": 0},
                "duration": _positive,
                "power": {"type": "integer", "minimum": 2},
                "nodes": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
            },
        },
        "linearization": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "order": {"enum": [2, 3, 4]},
                "epsilon": _positive,
                "starts": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
            },
        },
        "ray": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "point": _vector,
                "direction": _vector,
                "s_max": _number,
                "ds": _positive,
            },
        },
        "frame": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["three", "i3", "four"]},
                "phi": _number,
                "theta": _number,
                "r0": _number,
                "s": _number,
                "laurent": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "s_min": _positive,
                        "s_max": _positive,
                        "samples": {"type": "integer", "minimum": 6},
                    },
                },
            },
        },
        "frames": {"type": "array", "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}},
        "betas": {"type": "array", "items": _number, "maxItems": 3},
        "points": {"type": "array", "items": _vector},
        "n_points": {"type": "integer", "minimum": 1},
        "amplitudes": {"type": "array", "items": _positive},
        "tolerances": {"type": "object", "additionalProperties": _positive},
        "assertions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["metric"],
                "additionalProperties": False,
                "properties": {"metric": {"type": "string"}, "min": _number, "max": _number, "equals": {}},
            },
        },
    },
}

_MEDIUM_1D = {"preset": "minkowski", "dim": 1, "parameters": {"beta2": 0.5}}
_GRID_1D = {"cells": 100, "duration": 0.8, "cfl": 0.5, "levels": 3}
_SOURCE = {"amplitude": 1e-3, "start": 0.0, "duration": 0.4, "power": 8, "nodes": [0]}

DEFAULTS: dict[str, dict] = {
    "simulate": dict(medium=_MEDIUM_1D, grid=_GRID_1D, source=_SOURCE, tolerances={"rtol": 1e-12}),
    "dn": dict(medium=_MEDIUM_1D, grid=_GRID_1D, source=_SOURCE, tolerances={"rtol": 1e-12}),
    "linearize": dict(
        medium=_MEDIUM_1D,
        grid={"cells": 64, "duration": 0.8, "cfl": 0.5, "levels": 3},
        source={"amplitude": 1.0, "duration": 0.3, "power": 8, "nodes": [0]},
        linearization={"order": 2, "epsilon": 1e-3, "starts": [0.0, 0.05, 0.1, 0.15]},
        tolerances={"rtol": 1e-13},
    ),
    "gauge-check": dict(
        medium=_MEDIUM_1D,
        grid=_GRID_1D,
        source=_SOURCE,
        gauge={"preset": "sinusoidal", "amplitude": 0.1},
        tolerances={"rtol": 1e-12, "control_shift": 0.1},
    ),
    "trace": dict(
        medium={"preset": "minkowski", "dim": 3, "parameters": {}},
        ray={"point": [0.0, 0.5, 0.5, 0.5], "direction": [1.0, 0.0, 0.0], "s_max": 1.0, "ds": 1e-2},
        domain={"bounds": [[0.0, 1.0]] * 3},
    ),
    "frames": dict(frame={"kind": "i3"}),
    "coeffs": dict(
        frame={"kind": "i3", "laurent": {"s_min": 0.05, "s_max": 0.2, "samples": 24}},
        betas=[1.0, 2.0, 0.0],
    ),
    "recover": dict(
        medium={"preset": "minkowski", "dim": 3, "parameters": {"beta2": 1.0, "beta3": 2.0}},
        gauge={"preset": "sinusoidal", "amplitude": 0.1},
        domain={"bounds": [[0.0, 1.0]] * 3},
        n_points=4,
        tolerances={"step": 1e-2, "nonexact": 1e-6},
    ),
    "time-independence": dict(
        medium={"preset": "minkowski", "dim": 3, "parameters": {}},
        gauge={"preset": "time-bump", "amplitude": 0.05, "duration": 2.0},
        domain={"bounds": [[0.0, 1.0]] * 3},
        betas=[1.0, 2.0, 0.0],
        frames=[[math.pi / 2, math.pi / 3], [math.pi / 2, math.pi / 4]],
        n_points=4,
        tolerances={"zero": 1e-12},
    ),
}


# region configuration


def validate_config(config: Any):
    """Raises ConfigError listing every schema violation with its JSON pointer."""
    validator = Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: ("/".join(str(p) for p in e.absolute_path), e.message))
    if errors:
        pairs = [("/" + "/".join(str(p) for p in e.absolute_path), e.message) for e in errors]
        raise ConfigError(f"Invalid experiment configuration ({len(pairs)} errors)", pairs)


def _merge(defaults: dict, overrides: dict) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_config(config: dict) -> dict:
    """Validates a configuration and fills in the command's defaults."""
    validate_config(config)
    return _merge(DEFAULTS[config["command"]], config)


def load_config(filepath: Path | str) -> dict:
    try:
        config = load_json(filepath)
    except ValueError as e:
        raise ConfigError(f"{filepath} is not valid JSON: {e}", [("", str(e))]) from e
    return config


def config_hash(config: dict) -> str:
    return sha256_of(config)


# endregion configuration
# region presets


def build_metric(spec: dict) -> ProductMetric:
    preset, dim = spec.get("preset", "minkowski"), int(spec.get("dim", 1))
    parameters = spec.get("parameters", {})
    bounds = spec.get("bounds")
    if preset in ("gaussian-lens", "focusing-lens"):
        default = 0.3 if preset == "gaussian-lens" else -0.5
        return ProductMetric.gaussian(
            amplitude=parameters.get("lens_amplitude", default),
            dim=dim,
            width=parameters.get("width", 0.3),
            center=parameters.get("center"),
            bounds=bounds,
        )
    return ProductMetric.constant(parameters.get("speed", 1.0), dim=dim, bounds=bounds)


def build_medium(spec: dict) -> MediumParams:
    """A named medium preset; all coefficients are constants given in ``parameters``."""
    preset = spec.get("preset", "minkowski")
    if preset not in MEDIUM_PRESETS:
        raise ConfigError(f"Unknown medium preset {preset!r}", [("/medium/preset", f"unknown preset {preset!r}")])
    metric = build_metric(spec)
    parameters = spec.get("parameters", {})
    b = None
    if preset == "damped-westervelt":
        b = constant_one_form([parameters.get("b0", 0.1)] + [0.0] * metric.dim)
    elif preset == "constant-b":
        components = parameters.get("b", [0.1] + [0.0] * metric.dim)
        if len(components) != metric.dim + 1:
            raise ConfigError(
                "b needs d + 1 components", [("/medium/parameters/b", f"expected {metric.dim + 1} components")]
            )
        b = constant_one_form(components)
    betas = [parameters.get(f"beta{k}", 0.0) for k in (2, 3, 4)]
    while betas and betas[-1] == 0.0:
        betas.pop()
    h = parameters.get("h")
    return MediumParams(
        metric=metric,
        b=b,
        h=None if not h else constant_field(h),
        betas=tuple(constant_field(value) if value else None for value in betas),
        name=preset,
        description=dict(preset=preset, dim=metric.dim, parameters=parameters),
    )


def build_gauge(spec: dict, bounds: Sequence[Sequence[float]]) -> GaugeFunction:
    preset = spec.get("preset", "identity")
    if preset == "identity":
        return GaugeFunction.identity()
    if preset == "sinusoidal":
        return GaugeFunction.sinusoidal(spec.get("amplitude", 0.1), dim=len(bounds), bounds=bounds)
    return GaugeFunction.time_bump(
        spec.get("amplitude", 0.05), duration=spec.get("duration", 1.0), dim=len(bounds), bounds=bounds
    )


def build_source(spec: dict, amplitude: Optional[float] = None, start: Optional[float] = None) -> BoundarySource:
    return BoundarySource.pulse(
        amplitude=spec["amplitude"] if amplitude is None else amplitude,
        start=spec.get("start", 0.0) if start is None else start,
        duration=spec["duration"],
        power=spec["power"],
        nodes=spec.get("nodes"),
    )


def build_frame(spec: dict) -> CovectorFrame:
    kind = spec.get("kind", "i3")
    if kind == "three":
        return build_three_frame(spec.get("r0", 0.3), spec.get("s", 0.5))
    if kind == "four":
        return build_four_frame(spec.get("phi", 0.3), spec.get("theta", four_frame_theta(0.1)))
    return build_i3_frame(spec.get("phi", math.pi / 2), spec.get("theta", math.pi / 3))


# endregion presets
# region reports


@dataclass(kw_only=True)
class Table:
    header: list[str]
    rows: list[tuple]


@dataclass(kw_only=True)
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray


@dataclass(kw_only=True)
class PlotSpec:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series]
    logx: bool = False
    logy: bool = False


@dataclass(kw_only=True)
class ExperimentReport:
    command: str
    config: dict
    config_hash: str
    schema_version: int = SCHEMA_VERSION
    metrics: dict[str, Any] = field(default_factory=dict)
    results: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    plots: dict[str, PlotSpec] = field(default_factory=dict)
    assertions: list[dict] = field(default_factory=list)
    failure: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.failure is None and all(a["passed"] for a in self.assertions)

    def as_dict(self) -> dict:
        return dict(
            schema_version=self.schema_version,
            command=self.command,
            config=self.config,
            config_hash=self.config_hash,
            metrics=self.metrics,
            results=self.results,
            assertions=self.assertions,
            passed=self.passed,
            failure=self.failure,
        )


def evaluate_assertions(metrics: dict, assertions: Sequence[dict]) -> list[dict]:
    """Checks ``min <= metric <= max`` (or equality); unknown or missing metrics fail."""
    outcomes = []
    for assertion in assertions:
        name = assertion["metric"]
        value = metrics.get(name)
        passed = value is not None and not (isinstance(value, float) and math.isnan(value))
        if passed and "equals" in assertion:
            passed = value == assertion["equals"]
        if passed and "min" in assertion:
            passed = value >= assertion["min"]
        if passed and "max" in assertion:
            passed = value <= assertion["max"]
        outcomes.append(dict(assertion, value=value, passed=bool(passed)))
        if not passed:
            module_logger.warning(f"Assertion on {name!r} failed: value {value!r}, expected {assertion}")
    return outcomes


# endregion reports
# region commands


@dataclass(kw_only=True)
class _Context:
    config: dict
    grid_refine: int = 0
    seed: int = 0
    strict: bool = True

    @property
    def medium(self) -> MediumParams:
        return build_medium(self.config["medium"])

    def domain_bounds(self, dim: int) -> list[list[float]]:
        bounds = self.config.get("domain", {}).get("bounds")
        return [list(b) for b in bounds] if bounds else [[0.0, 1.0]] * dim

    def grid(self, metric: ProductMetric, level: int = 0) -> Grid:
        spec = self.config["grid"]
        cells = np.atleast_1d(spec["cells"]).astype(int) * 2 ** (self.grid_refine + level)
        bounds = self.domain_bounds(metric.dim)
        return Grid.for_metric(
            metric,
            tuple(int(n) for n in cells),
            spec["duration"],
            cfl=spec["cfl"],
            length=[hi - lo for lo, hi in bounds],
            origin=[lo for lo, _ in bounds],
        )

    def sample_points(self, dim: int) -> list[list[float]]:
        if "points" in self.config:
            return [list(p) for p in self.config["points"]]
        rng = np.random.default_rng(self.seed)
        bounds = np.array(self.domain_bounds(dim))
        lo = bounds[:, 0] + 0.3 * (bounds[:, 1] - bounds[:, 0])
        hi = bounds[:, 0] + 0.7 * (bounds[:, 1] - bounds[:, 0])
        return [[0.5] + list(rng.uniform(lo, hi)) for _ in range(self.config["n_points"])]

    def tolerance(self, name: str, default: float) -> float:
        return float(self.config.get("tolerances", {}).get(name, default))


def _simulate(ctx: _Context, report: ExperimentReport):
    params = ctx.medium
    grid = ctx.grid(params.metric)
    field = solve_nonlinear(params, build_source(ctx.config["source"]), grid, rtol=ctx.tolerance("rtol", 1e-12))
    sup = np.max(np.abs(field.values.reshape(grid.nt + 1, -1)), axis=1)
    report.metrics.update(
        sup_norm=field.max_abs(), l2_norm=field.l2_norm(), iterations=field.iterations, residual=field.residual
    )
    report.results.update(field=field.as_dict(), medium=params.as_dict())
    header = ["t", "x", "y"][: 1 + grid.dim] + ["p"]
    report.tables["field"] = Table(header=header, rows=list(field.iter_rows()))
    report.plots["field_sup"] = PlotSpec(
        title="sup |p| over the domain",
        xlabel="t",
        ylabel="sup |p|",
        series=[Series(name="sup_p", x=grid.times, y=sup)],
    )


def _dn(ctx: _Context, report: ExperimentReport):
    params = ctx.medium
    grid = ctx.grid(params.metric)
    field = solve_nonlinear(params, build_source(ctx.config["source"]), grid, rtol=ctx.tolerance("rtol", 1e-12))
    trace = dn_trace(params, field)
    report.metrics.update(l2_norm=trace.l2_norm(), max_abs=trace.max_abs(), iterations=field.iterations)
    report.results.update(grid=grid.as_dict(), medium=params.as_dict())
    report.tables["dn_trace"] = Table(header=["t", "boundary_index", "value"], rows=list(trace.iter_rows()))
    report.plots["dn_trace"] = PlotSpec(
        title="DN trace",
        xlabel="t",
        ylabel="d_nu p + b(nu) p / 2",
        series=[
            Series(name=f"boundary_{k}", x=grid.times, y=trace.values[:, k]) for k in range(trace.values.shape[1])
        ],
    )


def _linearize(ctx: _Context, report: ExperimentReport):
    params = ctx.medium
    grid = ctx.grid(params.metric)
    spec = ctx.config["linearization"]
    order = spec["order"]
    if len(spec["starts"]) < order:
        raise ConfigError("Not enough source starts", [("/linearization/starts", f"need {order} entries")])
    sources = [build_source(ctx.config["source"], start=start) for start in spec["starts"][:order]]
    multi = MultiSource(sources=tuple(sources), epsilon=spec["epsilon"])
    rtol = ctx.tolerance("rtol", 1e-13)
    expected = cascade_terms(params, solve_sources(params, sources, grid), max_order=order).interaction(order)
    errors = []
    for step in (multi, multi.halved()):
        approximation = fd_mixed_derivative(params, step, grid, rtol=rtol)
        errors.append((approximation - expected).max_abs())
    ratio = errors[0] / errors[1] if errors[1] > 0 else math.inf
    report.metrics.update(
        error=errors[0], error_half=errors[1], richardson_ratio=ratio, cascade_sup=expected.max_abs(), order=order
    )
    report.tables["linearization"] = Table(
        header=["epsilon", "error"], rows=[(spec["epsilon"], errors[0]), (spec["epsilon"] / 2, errors[1])]
    )


def _gauge_check(ctx: _Context, report: ExperimentReport):
    params = ctx.medium
    rho = build_gauge(ctx.config["gauge"], ctx.domain_bounds(params.dim))
    source = build_source(ctx.config["source"])
    grids = [ctx.grid(params.metric, level) for level in range(ctx.config["grid"]["levels"])]
    rtol = ctx.tolerance("rtol", 1e-12)
    gauge = dn_discrepancy(params, rho, source, grids, strict=ctx.strict, rtol=rtol)
    control = dn_discrepancy(
        params, rho, source, grids, strict=ctx.strict, perturbation=ctx.tolerance("control_shift", 0.1), rtol=rtol
    )
    finest = gauge.relative[-1]
    report.metrics.update(
        order=gauge.order,
        reliable=gauge.reliable,
        finest_relative=finest,
        control_relative=control.relative[-1],
        control_ratio=control.relative[-1] / finest if finest > 0 else math.inf,
    )
    report.results.update(gauge=gauge.as_dict(), control=control.as_dict())
    report.tables["gauge_check"] = Table(
        header=["h", "discrepancy", "relative", "control_discrepancy", "control_relative"],
        rows=[
            (h, d, r, cd, cr)
            for (h, d, r), (_, cd, cr) in zip(gauge.rows(), control.rows())
        ],
    )
    report.plots["gauge_check"] = PlotSpec(
        title="DN-trace discrepancy under refinement",
        xlabel="h",
        ylabel="relative L2 discrepancy",
        series=[
            Series(name="gauge", x=np.array(gauge.spacings), y=np.array(gauge.relative)),
            Series(name="control", x=np.array(control.spacings), y=np.array(control.relative)),
        ],
        logx=True,
        logy=True,
    )


def _trace(ctx: _Context, report: ExperimentReport):
    metric = build_metric(ctx.config["medium"])
    spec = ctx.config["ray"]
    point = np.asarray(spec["point"], dtype=float)
    direction = np.asarray(spec["direction"], dtype=float)
    zeta = minkowski_to_metric(metric, point, np.concatenate([[-np.linalg.norm(direction)], direction]))
    domain = Box(tuple(tuple(b) for b in ctx.domain_bounds(metric.dim)))
    path = trace_bicharacteristic(metric, point, zeta, spec["s_max"], ds=spec["ds"], domain=domain)
    conjugate = detect_conjugate_point(path)
    report.metrics.update(
        hamiltonian_drift=path.hamiltonian_drift(),
        entry=path.entry,
        exit=path.exit,
        conjugate=conjugate,
        truncated=path.truncated,
        samples=int(path.s.size),
    )
    header = ["s", "t"] + [f"x{k + 1}" for k in range(metric.dim)]
    report.tables["ray"] = Table(header=header, rows=[(s, *p) for s, p in zip(path.s, path.points)])
    x_axis, y_axis = (1, 2) if metric.dim >= 2 else (1, 0)
    report.plots["ray"] = PlotSpec(
        title="Projected ray",
        xlabel=header[x_axis + 1],
        ylabel=header[y_axis + 1],
        series=[Series(name="ray", x=path.points[:, x_axis], y=path.points[:, y_axis])],
    )


def _frames(ctx: _Context, report: ExperimentReport):
    frame = build_frame(ctx.config["frame"])
    report.metrics.update(residual=frame.residual(), rank=frame.rank(), null_defect=frame.null_defect())
    report.results.update(frame=frame.as_dict())


def _coeffs(ctx: _Context, report: ExperimentReport):
    spec = ctx.config["frame"]
    frame = build_frame(spec)
    beta2, beta3, beta4 = (list(ctx.config["betas"]) + [0.0, 0.0, 0.0])[:3]
    coefficients = interaction_sums(frame, beta2, beta3, beta4)
    report.metrics.update({k: v for k, v in coefficients.as_dict().items()})
    report.results.update(frame=frame.as_dict(), coefficients=coefficients.as_dict())
    laurent = spec.get("laurent")
    if frame.kind != "four" or not laurent:
        return
    s_values = np.linspace(laurent["s_min"], laurent["s_max"], laurent["samples"])
    sweep = sweep_four_frame(frame.parameters["phi"], s_values, beta2, beta3, beta4)
    orders = (-3, -2, -1, 0, 1, 2)
    fits = dict(
        C=fit_laurent([(s, ic.C) for s, ic in sweep], orders),
        D=fit_laurent([(s, ic.D) for s, ic in sweep], orders),
        curly_c=fit_laurent([(s, ic.curly_c) for s, ic in sweep], orders),
    )
    for name, fit in fits.items():
        for order in (-3, -2, -1):
            report.metrics[f"{name}_{order}"] = fit.coefficient(order)
    report.metrics["leading"] = -2.0 * fits["curly_c"].coefficient(-3)
    report.metrics["s"] = four_frame_expansion_variable(frame.parameters["theta"])
    report.results["fits"] = {name: fit.as_dict() for name, fit in fits.items()}
    report.tables["laurent"] = Table(
        header=["s", "C", "D", "curly_c"], rows=[(s, ic.C, ic.D, ic.curly_c) for s, ic in sweep]
    )
    report.plots["laurent"] = PlotSpec(
        title="Four-frame coefficient",
        xlabel="s",
        ylabel="s^3 curly_c",
        series=[
            Series(name="data", x=s_values, y=s_values**3 * np.array([ic.curly_c for _, ic in sweep])),
            Series(name="fit", x=s_values, y=s_values**3 * fits["curly_c"](s_values)),
        ],
    )


def _recover(ctx: _Context, report: ExperimentReport):
    reference = ctx.medium
    bounds = ctx.domain_bounds(reference.dim)
    rho = build_gauge(ctx.config["gauge"], bounds)
    hidden = apply_gauge(reference, rho, strict=True)
    domain = Box(tuple(tuple(b) for b in bounds))
    result = recover_medium(
        reference,
        MeasurementOracle(hidden, name="hidden"),
        ctx.sample_points(reference.dim),
        domain,
        step=ctx.tolerance("step", 1e-2),
        nonexact_tol=ctx.tolerance("nonexact", 1e-6),
    )
    relations = verify_gauge_relations(result, reference, hidden, rho_truth=rho)
    report.metrics.update({f"max_{key}": value for key, value in relations.max.items()})
    report.metrics.update(recovered=result.size, skipped=len(result.skipped))
    report.results.update(recovery=result.as_dict(), relations=relations.as_dict())
    report.tables["recover"] = Table(header=list(RESULT_HEADER), rows=list(result.rows()))


def _time_independence(ctx: _Context, report: ExperimentReport):
    dim = int(ctx.config["medium"].get("dim", 3))
    rho = build_gauge(ctx.config["gauge"], ctx.domain_bounds(dim))
    frames = tuple(build_i3_frame(phi, theta) for phi, theta in ctx.config["frames"])
    verdicts = [
        verify_time_independence(point, rho, ctx.config["betas"], frames, tol=ctx.tolerance("zero", 1e-12))
        for point in ctx.sample_points(dim)
    ]
    report.metrics.update(
        points=len(verdicts),
        passed_points=sum(v.passed for v in verdicts),
        all_passed=all(v.passed for v in verdicts),
        branch=verdicts[0].branch if verdicts else None,
        max_c2_beta2=max(v.magnitudes["c2_beta2"] for v in verdicts),
        max_c3_term=max(v.magnitudes["c3_term"] for v in verdicts),
        max_c4_beta4=max(v.magnitudes["c4_beta4"] for v in verdicts),
    )
    report.results["verdicts"] = [v.as_dict() for v in verdicts]


COMMAND_HANDLERS: dict[str, Callable[[_Context, ExperimentReport], None]] = {
    "simulate": _simulate,
    "dn": _dn,
    "linearize": _linearize,
    "gauge-check": _gauge_check,
    "trace": _trace,
    "frames": _frames,
    "coeffs": _coeffs,
    "recover": _recover,
    "time-independence": _time_independence,
}


# endregion commands


def _failure_module(error: BaseException) -> str:
    tb = error.__traceback__
    module = error.__class__.__module__
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("wavescope."):
            module = name
        tb = tb.tb_next
    return module


def run_experiment(
    config: dict,
    out_dir: Optional[Path | str] = None,
    grid_refine: int = 0,
    seed: Optional[int] = None,
    strict: Optional[bool] = None,
) -> ExperimentReport:
    """Validates the configuration, runs the command and, with an output directory, writes its artifacts.

    Errors raised by the numerical modules do not propagate; they are recorded in ``report.failure`` together with
    the module they came from, and make the report fail.

    Raises:
        ConfigError: If the configuration violates the schema.
    """
    resolved = resolve_config(config)
    if seed is not None:
        resolved["seed"] = int(seed)
    if strict is not None:
        resolved["strict"] = bool(strict)
    if grid_refine < 0:
        raise ConfigError("--grid-refine must be non-negative", [("/grid", f"invalid refinement {grid_refine}")])
    ctx = _Context(
        config=resolved,
        grid_refine=int(grid_refine),
        seed=int(resolved.get("seed", 0)),
        strict=bool(resolved.get("strict", True)),
    )
    command = resolved["command"]
    digest = config_hash(dict(resolved, grid_refine=grid_refine))
    report = ExperimentReport(command=command, config=resolved, config_hash=digest)
    module_logger.info(f"Running {command!r} (config {report.config_hash[:12]})")
    try:
        COMMAND_HANDLERS[command](ctx, report)
    except ConfigError:
        raise
    except WavescopeError as e:
        report.failure = dict(error=e.__class__.__name__, module=_failure_module(e), message=str(e))
        module_logger.error(f"{command!r} failed in {report.failure['module']}: {e}")
    report.assertions = evaluate_assertions(report.metrics, resolved.get("assertions", []))
    if out_dir is None and "output" in resolved:
        out_dir = resolved["output"].get("directory")
    if out_dir is not None:
        from wavescope.artifacts import emit_artifacts

        emit_artifacts(report, out_dir)
    return report
