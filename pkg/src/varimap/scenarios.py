"""Named example configurations with expected numerical outcomes.

A scenario bundles a mapping problem, analytic maps into it, optionally
a product multiplier and conformal-factor data, and a list of checks
with expected verdicts and tolerances.  ``run_scenario`` executes every
check under a chosen derivative engine and returns one record per
check: value, tolerance, pass/fail, and a provenance label saying where
the expectation comes from ("definition" for things true by
construction, "oracle" for values pinned by an independent computation,
"reference" for standard differential-geometry facts).

Engine semantics: the engine under test computes residual derivatives
(Euler-Lagrange, variationality conditions, multiplier conditions,
curvature).  Prolongation of the scenario's analytic maps is input
data, not a measurement, so it always uses exact dual arithmetic; RK4
geodesic integration uses no derivative engine at all.  Checks whose
finite-difference noise floor exceeds the dual tolerance carry an
explicit ``fd_tolerance`` so that expected verdicts are reproduced
under both engines without loosening the headline gate.

Scenario and check objects are immutable after construction and runs
share no state, so scenarios can be executed concurrently.
"""

import json
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .catalog import (
    box_chart,
    conformal_fibre_metric,
    constant_fibre_metric,
    euclidean_metric,
    flat_connection,
    gnomonic_map,
    gnomonic_pullback_connection,
    great_circle_seeds,
    identity_map,
    linear_map,
    open_hemisphere_chart,
    sphere_chart,
    sphere_fibre_metric,
    sphere_lc_connection,
    sphere_metric,
    stereographic_map,
)
from .engine import get_engine
from .errors import ConfigError, UnknownCheck
from .geometry import (
    MetricField,
    lowered_riemann_pair_symmetry_defect,
    trace_identity_residual,
)
from .helmholtz import variationality_verdict
from .inverse import (
    MultiplierField,
    condition_grid,
    construct_solution_family,
    dependency_checks,
    dynamical_form,
    hp21_residual,
    hp22_residual,
    hp3x_residuals,
    s_tensor_trace_defect,
)
from .jets import (
    JetPoint,
    canonical_pairs,
    canonical_triples,
    euler_lagrange_form,
    prolong,
    sample_jets,
)
from .maps import (
    MappingProblem,
    energy_lagrangian,
    geodesic_image_defect,
    geodesic_map_residual,
    harmonic_residual,
)
from .tensorops import ein, max_abs

__all__ = [
    "RunSettings",
    "CheckSpec",
    "CheckResult",
    "ResidualReport",
    "Scenario",
    "check_names",
    "run_scenario",
    "builtin_scenarios",
    "scenario_by_name",
    "scenarios_from_config",
    "load_scenarios",
]

# fraction of each chart width kept clear when sampling evaluation
# points; keeps curved-chart derivative growth away from the bounds
SAMPLE_MARGIN = 0.2

_PROVENANCE = ("definition", "oracle", "reference")


@dataclass(frozen=True)
class RunSettings:
    """Knobs shared by every check in a run."""

    engine: str = "dual"
    seed: int = 0
    samples: int = 100
    grid_per_dim: int = 5
    geodesic_steps: int = 700
    geodesic_step: float = 1e-3
    jet_amplitude: float = 0.7
    tolerances: dict = field(default_factory=dict)

    def tolerance_for(self, spec):
        override = self.tolerances.get(spec.check)
        if override is not None:
            return float(override)
        if self.engine == "fd" and spec.fd_tolerance is not None:
            return spec.fd_tolerance
        return spec.tolerance


@dataclass(frozen=True)
class CheckSpec:
    """One expected outcome: a named check, a direction, a tolerance.

    expect="below" passes when value < tolerance, expect="above" when
    value > tolerance; ties fail either way.  ``map`` and ``side`` bind
    the check to one of the scenario's maps or to one side of the
    problem.  ``fd_tolerance`` is an optional noise floor used instead
    of ``tolerance`` under the finite-difference engine.
    """

    check: str
    expect: str
    tolerance: float
    provenance: str
    note: str = ""
    map: str = ""
    side: str = ""
    source: str = ""
    fd_tolerance: Optional[float] = None

    @property
    def label(self):
        parts = [self.check]
        for extra in (self.map, self.side, self.source):
            if extra:
                parts.append(extra)
        return ":".join(parts)


class CheckResult(NamedTuple):
    scenario: str
    check: str
    value: float
    tolerance: float
    verdict: str
    provenance: str
    note: str


class ResidualReport(NamedTuple):
    scenario: str
    engine: str
    seed: int
    samples: int
    results: tuple

    @property
    def passed(self):
        return all(r.verdict == "pass" for r in self.results)

    @property
    def failures(self):
        return tuple(r for r in self.results if r.verdict != "pass")


@dataclass(frozen=True)
class Scenario:
    """Immutable example configuration with its expected check list."""

    name: str
    problem: MappingProblem
    maps: dict
    expected: tuple
    multiplier: Optional[MultiplierField] = None
    psi_coeffs: Optional[tuple] = None
    description: str = ""

    def __post_init__(self):
        for spec in self.expected:
            if spec.check not in CHECKS:
                raise UnknownCheck(
                    f"scenario {self.name!r}: no check named {spec.check!r}"
                )
            if not spec.tolerance > 0:
                raise ConfigError(
                    f"scenario {self.name!r}: check {spec.label!r} needs a "
                    f"positive tolerance, got {spec.tolerance!r}"
                )
            if spec.expect not in ("below", "above"):
                raise ConfigError(
                    f"scenario {self.name!r}: check {spec.label!r} expects "
                    f"'below' or 'above', got {spec.expect!r}"
                )
            if spec.provenance not in _PROVENANCE:
                raise ConfigError(
                    f"scenario {self.name!r}: unknown provenance "
                    f"{spec.provenance!r}"
                )
            cd = CHECKS[spec.check]
            if cd.needs_map and spec.map not in self.maps:
                raise ConfigError(
                    f"scenario {self.name!r}: check {spec.label!r} names "
                    f"map {spec.map!r}, which the scenario does not define"
                )
            needs_multiplier = cd.needs_multiplier or (
                spec.check == "helmholtz" and spec.source == "dynamical"
            )
            if needs_multiplier and self.multiplier is None:
                raise ConfigError(
                    f"scenario {self.name!r}: check {spec.label!r} needs a "
                    "multiplier field"
                )
            if cd.needs_metrics and (
                self.problem.base_metric is None
                or self.problem.fibre_metric is None
            ):
                raise ConfigError(
                    f"scenario {self.name!r}: check {spec.check!r} needs "
                    "both metrics on the problem"
                )
            if cd.needs_psi and self.psi_coeffs is None:
                raise ConfigError(
                    f"scenario {self.name!r}: check {spec.check!r} needs "
                    "conformal-factor coefficients"
                )

    @property
    def dims(self):
        return (self.problem.n, self.problem.m)


# -- check runners --------------------------------------------------------


def _rng_for(settings, scenario, spec):
    key = zlib.crc32(f"{scenario.name}|{spec.label}".encode())
    return np.random.default_rng([settings.seed, key])


def _base_points(scenario, rng, count):
    return list(scenario.problem.base_domain.sample(rng, count, SAMPLE_MARGIN))


def _target_points(scenario, rng, count):
    return list(
        scenario.problem.target_domain.sample(rng, count, SAMPLE_MARGIN)
    )


def _grid(scenario, settings, memo):
    if "grid" not in memo:
        memo["grid"] = condition_grid(
            scenario.problem.base_domain,
            scenario.problem.target_domain,
            per_dim=settings.grid_per_dim,
            seed=settings.seed,
        )
    return memo["grid"]


def _jets_at(rng, x, phi, amplitude):
    """Order-3 jets with given base and fibre points, random derivatives."""
    n, m = len(x), len(phi)
    batch = np.shape(x[0])
    phi1 = rng.normal(0.0, amplitude, size=(m, n) + batch)
    phi2 = np.zeros((m, n, n) + batch)
    for i, j in canonical_pairs(n):
        v = rng.normal(0.0, amplitude, size=(m,) + batch)
        phi2[:, i, j] = phi2[:, j, i] = v
    phi3 = np.zeros((m, n, n, n) + batch)
    for i, j, k in canonical_triples(n):
        v = rng.normal(0.0, amplitude, size=(m,) + batch)
        for p in {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}:
            phi3[:, p[0], p[1], p[2]] = v
    return JetPoint(list(x), list(phi), phi1, phi2, phi3)


def _prolonged(scenario, spec, rng, count, order=2):
    x = _base_points(scenario, rng, count)
    return prolong(scenario.maps[spec.map], scenario.problem.m, x, order=order)


def _run_geodesic_residual(scenario, spec, settings, engine, memo, rng):
    jet = _prolonged(scenario, spec, rng, settings.samples)
    return max_abs(geodesic_map_residual(scenario.problem, jet))


def _run_harmonic_residual(scenario, spec, settings, engine, memo, rng):
    jet = _prolonged(scenario, spec, rng, settings.samples)
    return max_abs(harmonic_residual(scenario.problem, jet))


def _run_trace_relation(scenario, spec, settings, engine, memo, rng):
    p = scenario.problem
    jet = sample_jets(
        rng,
        p.m,
        p.n,
        settings.samples,
        domain=p.base_domain,
        target_domain=p.target_domain,
        amplitude=settings.jet_amplitude,
        margin=SAMPLE_MARGIN,
    )
    direct = harmonic_residual(p, jet)
    h = p.fibre_metric.matrix(jet.x, jet.phi)
    lowered = ein("sv...,vij...->sij...", h, geodesic_map_residual(p, jet))
    traced = ein("ij...,sij...->s...", p.base_metric.inverse(jet.x), lowered)
    scale = max(1.0, max_abs(direct), max_abs(traced))
    return max_abs(direct - traced) / scale


def _run_helmholtz(scenario, spec, settings, engine, memo, rng):
    p = scenario.problem
    if spec.source == "dynamical":
        form = dynamical_form(scenario.multiplier, p)
    else:
        form = euler_lagrange_form(energy_lagrangian(p))
    report = variationality_verdict(
        form,
        sample_count=min(settings.samples, 30),
        seed=int(rng.integers(0, 2**31 - 1)),
        tolerance=settings.tolerance_for(spec),
        engine=engine,
        domain=p.base_domain,
        target_domain=p.target_domain,
        amplitude=settings.jet_amplitude,
    )
    return max(report.norms.values())


def _run_image_defect(scenario, spec, settings, engine, memo, rng):
    pts, v = great_circle_seeds(rng, 10, scenario.problem.base_domain)
    comparison = geodesic_image_defect(
        scenario.problem,
        scenario.maps[spec.map],
        pts,
        v,
        settings.geodesic_steps,
        step=settings.geodesic_step,
    )
    return float(np.max(comparison.curve_gap))


def _run_pair_symmetry(scenario, spec, settings, engine, memo, rng):
    p = scenario.problem
    if spec.side == "target":
        xs = _base_points(scenario, rng, settings.samples)
        ps = _target_points(scenario, rng, settings.samples)
        slice_metric = MetricField(
            p.m, lambda q: p.fibre_metric.matrix(xs, q), name="fibre slice"
        )
        return max_abs(
            lowered_riemann_pair_symmetry_defect(
                slice_metric, p.target_connection, ps, engine
            )
        )
    xs = _base_points(scenario, rng, settings.samples)
    return max_abs(
        lowered_riemann_pair_symmetry_defect(
            p.base_metric, p.base_connection, xs, engine
        )
    )


def _run_trace_identity(scenario, spec, settings, engine, memo, rng):
    xs = _base_points(scenario, rng, settings.samples)
    return max_abs(
        trace_identity_residual(
            scenario.problem.base_metric, xs, engine, weighted=False
        )
    )


def _run_hp21(scenario, spec, settings, engine, memo, rng):
    gx, gphi = _grid(scenario, settings, memo)
    return max_abs(
        hp21_residual(
            scenario.multiplier, scenario.problem.base_connection, gx, gphi, engine
        )
    )


def _run_hp22(scenario, spec, settings, engine, memo, rng):
    gx, gphi = _grid(scenario, settings, memo)
    return max_abs(
        hp22_residual(
            scenario.multiplier,
            scenario.problem.target_connection,
            gx,
            gphi,
            engine,
        )
    )


def _hp3x(scenario, settings, engine, memo):
    if "hp3x" not in memo:
        gx, gphi = _grid(scenario, settings, memo)
        memo["hp3x"] = hp3x_residuals(
            scenario.multiplier, scenario.problem, gx, gphi, engine=engine
        )
    return memo["hp3x"]


def _run_hp3x_component(which):
    def run(scenario, spec, settings, engine, memo, rng):
        return max_abs(getattr(_hp3x(scenario, settings, engine, memo), which))

    return run


def _run_hp32_riemann_match(scenario, spec, settings, engine, memo, rng):
    p = scenario.problem
    gx, gphi = _grid(scenario, settings, memo)
    res = _hp3x(scenario, settings, engine, memo)
    slice_metric = MetricField(
        p.m, lambda q: p.fibre_metric.matrix(gx, q), name="fibre slice"
    )
    defect = lowered_riemann_pair_symmetry_defect(
        slice_metric, p.target_connection, gphi, engine
    )
    want = ein("ij...,mavl...->ijmval...", p.base_metric.inverse(gx), defect)
    return max_abs(res.hp32 - want)


def _dependency(scenario, settings, engine, memo):
    if "dependency" not in memo:
        gx, gphi = _grid(scenario, settings, memo)
        memo["dependency"] = dependency_checks(
            scenario.multiplier, scenario.problem, gx, gphi, engine=engine
        )
    return memo["dependency"]


def _run_dependency_divergence(scenario, spec, settings, engine, memo, rng):
    return _dependency(scenario, settings, engine, memo).divergence_defect


def _run_dependency_combination(scenario, spec, settings, engine, memo, rng):
    return _dependency(scenario, settings, engine, memo).combination_defect


def _s_trace(scenario, settings, engine, memo):
    if "s_trace" not in memo:
        gx, gphi = _grid(scenario, settings, memo)
        p = scenario.problem
        memo["s_trace"] = s_tensor_trace_defect(
            p.base_metric, p.fibre_metric, p.base_connection, gx, gphi, engine
        )
    return memo["s_trace"]


def _run_s_trace_normalized(scenario, spec, settings, engine, memo, rng):
    return max_abs(_s_trace(scenario, settings, engine, memo).normalized)


def _run_s_trace_raw_floor(scenario, spec, settings, engine, memo, rng):
    return max_abs(_s_trace(scenario, settings, engine, memo).raw)


def _run_s_trace_raw_law(scenario, spec, settings, engine, memo, rng):
    raw = _s_trace(scenario, settings, engine, memo).raw
    coeffs = np.asarray(scenario.psi_coeffs, dtype=float)
    factor = scenario.problem.m - 1
    want = factor * coeffs.reshape((-1,) + (1,) * (np.ndim(raw) - 1))
    return max_abs(raw - want)


class CheckDef(NamedTuple):
    runner: Callable
    needs_map: bool = False
    needs_multiplier: bool = False
    needs_metrics: bool = False
    needs_psi: bool = False


CHECKS = {
    "geodesic-residual": CheckDef(_run_geodesic_residual, needs_map=True),
    "harmonic-residual": CheckDef(
        _run_harmonic_residual, needs_map=True, needs_metrics=True
    ),
    "trace-relation": CheckDef(_run_trace_relation, needs_metrics=True),
    "helmholtz": CheckDef(_run_helmholtz, needs_metrics=True),
    "image-defect": CheckDef(_run_image_defect, needs_map=True),
    "pair-symmetry": CheckDef(_run_pair_symmetry, needs_metrics=True),
    "trace-identity": CheckDef(_run_trace_identity, needs_metrics=True),
    "hp21": CheckDef(_run_hp21, needs_multiplier=True),
    "hp22": CheckDef(_run_hp22, needs_multiplier=True),
    "hp31": CheckDef(_run_hp3x_component("hp31"), needs_multiplier=True),
    "hp32": CheckDef(_run_hp3x_component("hp32"), needs_multiplier=True),
    "hp33": CheckDef(_run_hp3x_component("hp33"), needs_multiplier=True),
    "hp34": CheckDef(_run_hp3x_component("hp34"), needs_multiplier=True),
    "hp32-riemann-match": CheckDef(
        _run_hp32_riemann_match, needs_multiplier=True, needs_metrics=True
    ),
    "dependency-divergence": CheckDef(
        _run_dependency_divergence, needs_multiplier=True
    ),
    "dependency-combination": CheckDef(
        _run_dependency_combination, needs_multiplier=True
    ),
    "s-trace-normalized": CheckDef(
        _run_s_trace_normalized, needs_metrics=True
    ),
    "s-trace-raw-floor": CheckDef(_run_s_trace_raw_floor, needs_metrics=True),
    "s-trace-raw-law": CheckDef(
        _run_s_trace_raw_law, needs_metrics=True, needs_psi=True
    ),
}


def check_names():
    """Registry check names plus the synthetic engine-agreement record."""
    return sorted(CHECKS) + ["engine-agreement"]


def run_scenario(scenario, settings=None):
    """Execute every expected check; one CheckResult per expectation.

    engine="both" runs the dual and finite-difference engines on
    identical sample points, reports the dual values, requires both
    verdicts to pass, and appends an engine-agreement record holding the
    worst relative gap (floored at 1) between the two engines' values.
    """
    settings = settings or RunSettings()
    if settings.engine == "both":
        dual = run_scenario(scenario, replace(settings, engine="dual"))
        fd = run_scenario(scenario, replace(settings, engine="fd"))
        rows = []
        worst = 0.0
        for a, b in zip(dual.results, fd.results):
            gap = abs(a.value - b.value) / max(1.0, abs(a.value), abs(b.value))
            worst = max(worst, gap)
            verdict = "pass" if (a.verdict, b.verdict) == ("pass", "pass") else "fail"
            rows.append(a._replace(verdict=verdict))
        tol = float(settings.tolerances.get("engine-agreement", 1e-4))
        rows.append(
            CheckResult(
                scenario=scenario.name,
                check="engine-agreement",
                value=worst,
                tolerance=tol,
                verdict="pass" if worst < tol else "fail",
                provenance="oracle",
                note="worst relative gap between dual and fd values",
            )
        )
        return ResidualReport(
            scenario.name, "both", settings.seed, settings.samples, tuple(rows)
        )

    engine = get_engine(settings.engine)
    memo = {}
    rows = []
    for spec in scenario.expected:
        cd = CHECKS.get(spec.check)
        if cd is None:
            raise UnknownCheck(f"no check named {spec.check!r}")
        rng = _rng_for(settings, scenario, spec)
        value = float(cd.runner(scenario, spec, settings, engine, memo, rng))
        tol = settings.tolerance_for(spec)
        ok = value < tol if spec.expect == "below" else value > tol
        rows.append(
            CheckResult(
                scenario=scenario.name,
                check=spec.label,
                value=value,
                tolerance=tol,
                verdict="pass" if ok else "fail",
                provenance=spec.provenance,
                note=spec.note,
            )
        )
    return ResidualReport(
        scenario.name,
        settings.engine,
        settings.seed,
        settings.samples,
        tuple(rows),
    )


# -- built-in scenarios ----------------------------------------------------


def _constant_map(values):
    vals = [float(v) for v in values]

    def fn(x):
        return [v + 0.0 * x[0] for v in vals]

    return fn


def _below(check, tol, provenance, note="", **kw):
    return CheckSpec(check, "below", tol, provenance, note, **kw)


def _above(check, tol, provenance, note="", **kw):
    return CheckSpec(check, "above", tol, provenance, note, **kw)


def _dependency_specs():
    return (
        _below(
            "dependency-divergence",
            1e-5,
            "oracle",
            "hp34 + x-divergence of hp21",
        ),
        _below(
            "dependency-combination",
            1e-6,
            "oracle",
            "hp33 vs connection combination of hp31 and hp21",
        ),
    )


def _hp_gate_specs():
    # the finite-difference floor matches the one metric-compatibility
    # checks use; stencil noise sits two decades below it
    return (
        _below("hp21", 1e-7, "oracle", fd_tolerance=1e-5),
        _below("hp22", 1e-7, "oracle", fd_tolerance=1e-5),
        _below("hp31", 1e-7, "oracle", fd_tolerance=1e-5),
        _below("hp32", 1e-7, "oracle", fd_tolerance=1e-5),
        _below("hp33", 1e-7, "oracle", fd_tolerance=1e-5),
        _below("hp34", 1e-7, "oracle", fd_tolerance=1e-5),
    )


def _flat_problem(name):
    square = [(-1.0, 1.0), (-1.0, 1.0)]
    return MappingProblem(
        box_chart(square, "base square"),
        box_chart(square, "target square"),
        flat_connection(2),
        flat_connection(2),
        base_metric=euclidean_metric(2),
        fibre_metric=constant_fibre_metric(np.eye(2)),
        name=name,
    )


def _flat_identity():
    problem = _flat_problem("flat identity")
    B = MultiplierField.product(problem.base_metric, problem.fibre_metric)
    expected = (
        _below("geodesic-residual", 1e-12, "definition", map="identity"),
        _below("harmonic-residual", 1e-12, "definition", map="identity"),
        _below(
            "harmonic-residual",
            1e-12,
            "reference",
            "constant maps are harmonic",
            map="constant",
        ),
        _below("trace-relation", 1e-12, "oracle"),
        _below("helmholtz", 1e-6, "oracle", source="energy", fd_tolerance=1e-3),
        _below("pair-symmetry", 1e-8, "oracle", side="base"),
        _below("pair-symmetry", 1e-8, "oracle", side="target"),
        _below("trace-identity", 1e-8, "oracle", "constant determinant"),
        *_hp_gate_specs(),
        *_dependency_specs(),
        _below("s-trace-normalized", 1e-8, "definition"),
    )
    return Scenario(
        name="flat-identity",
        problem=problem,
        maps={"identity": identity_map(2), "constant": _constant_map([0.3, -0.2])},
        expected=expected,
        multiplier=B,
        description="identity map of the flat square; everything vanishes",
    )


def _flat_linear():
    problem = _flat_problem("flat linear")
    B = MultiplierField.product(problem.base_metric, problem.fibre_metric)
    expected = (
        _below("geodesic-residual", 1e-12, "definition", map="affine"),
        _below("harmonic-residual", 1e-12, "definition", map="affine"),
        _below("trace-relation", 1e-12, "oracle"),
        _below("helmholtz", 1e-6, "oracle", source="energy", fd_tolerance=1e-3),
        _below("trace-identity", 1e-8, "oracle", "constant determinant"),
        *_dependency_specs(),
    )
    return Scenario(
        name="flat-linear",
        problem=problem,
        maps={"affine": linear_map([[1.2, -0.3], [0.4, 0.9]], [0.3, -0.2])},
        expected=expected,
        multiplier=B,
        description="affine map between flat squares, totally geodesic",
    )


def _line_to_manifold():
    problem = MappingProblem(
        box_chart([(-1.0, 1.0)], "parameter interval"),
        sphere_chart(),
        flat_connection(1),
        sphere_lc_connection(),
        base_metric=euclidean_metric(1),
        fibre_metric=sphere_fibre_metric(),
        name="curves into the round sphere",
    )
    B = MultiplierField.product(problem.base_metric, problem.fibre_metric)

    def great_circle(x):
        return [np.pi / 2 + 0.0 * x[0], 0.3 + 0.8 * x[0]]

    def tilted(x):
        from . import autodiff as ad

        return [np.pi / 2 + 0.25 * ad.sin(3.0 * x[0]), 0.3 + 0.8 * x[0]]

    expected = (
        _below("geodesic-residual", 1e-12, "oracle", map="great-circle"),
        _below(
            "harmonic-residual",
            1e-12,
            "reference",
            "a curve is harmonic exactly when it is a geodesic",
            map="great-circle",
        ),
        _above(
            "harmonic-residual",
            1e-2,
            "reference",
            "non-geodesic control curve",
            map="tilted",
        ),
        _below("trace-relation", 1e-12, "oracle"),
        _below("helmholtz", 1e-6, "oracle", source="energy", fd_tolerance=1e-3),
        _below("pair-symmetry", 1e-8, "oracle", side="target", fd_tolerance=1e-7),
        _below("trace-identity", 1e-8, "oracle", "constant determinant"),
        *_hp_gate_specs(),
        _below("hp32-riemann-match", 1e-6, "oracle"),
        *_dependency_specs(),
        _below("s-trace-normalized", 1e-8, "definition"),
    )
    return Scenario(
        name="line-to-manifold",
        problem=problem,
        maps={"great-circle": great_circle, "tilted": tilted},
        expected=expected,
        multiplier=B,
        description="curves into the sphere; geodesics pass, a wobble fails",
    )


def _manifold_to_line():
    problem = MappingProblem(
        box_chart([(-1.0, 1.0), (-1.0, 1.0)], "base square"),
        box_chart([(-3.0, 3.0)], "target line"),
        flat_connection(2),
        flat_connection(1),
        base_metric=euclidean_metric(2),
        fibre_metric=constant_fibre_metric([[1.0]]),
        name="scalar functions on the flat square",
    )
    B = MultiplierField.product(problem.base_metric, problem.fibre_metric)

    def saddle(x):
        return [x[0] ** 2 - x[1] ** 2]

    def bump(x):
        return [x[0] ** 2 + x[1] ** 2]

    expected = (
        _below(
            "harmonic-residual",
            1e-12,
            "reference",
            "scalar case is the Laplace equation; saddle is harmonic",
            map="saddle",
        ),
        _above(
            "harmonic-residual",
            0.5,
            "definition",
            "laplacian of the bump is 4",
            map="bump",
        ),
        _below("geodesic-residual", 1e-12, "definition", map="affine"),
        _below("trace-relation", 1e-12, "oracle"),
        _below("helmholtz", 1e-6, "oracle", source="energy", fd_tolerance=1e-3),
        _below("trace-identity", 1e-8, "oracle", "constant determinant"),
        *_dependency_specs(),
        _below("s-trace-normalized", 1e-8, "definition"),
    )
    return Scenario(
        name="manifold-to-line",
        problem=problem,
        maps={
            "saddle": saddle,
            "bump": bump,
            "affine": linear_map([[0.7, -0.4]], [0.1]),
        },
        expected=expected,
        multiplier=B,
        description="maps to the line; harmonicity is the Laplace equation",
    )


def _hemisphere_problem(name, base_connection):
    return MappingProblem(
        open_hemisphere_chart(),
        box_chart([(-10.0, 10.0), (-10.0, 10.0)], "projection plane"),
        base_connection,
        flat_connection(2),
        base_metric=sphere_metric(),
        fibre_metric=constant_fibre_metric(np.eye(2)),
        name=name,
    )


def _sphere_gnomonic():
    # the pullback connection shares its geodesics with the round one;
    # with it the projection is affine, which is the whole point
    problem = _hemisphere_problem(
        "hemisphere to plane, central projection", gnomonic_pullback_connection()
    )
    B = MultiplierField.product(problem.base_metric, problem.fibre_metric)
    expected = (
        _below(
            "geodesic-residual",
            1e-8,
            "reference",
            "central projection straightens great circles",
            map="gnomonic",
        ),
        _below(
            "image-defect",
            1e-5,
            "reference",
            "mapped great circles track plane geodesics",
            map="gnomonic",
        ),
        _below("trace-relation", 1e-12, "oracle"),
        _below(
            "pair-symmetry",
            1e-8,
            "oracle",
            "pullback of the flat connection stays flat",
            side="base",
            fd_tolerance=1e-7,
        ),
        _above(
            "trace-identity",
            1e-2,
            "oracle",
            "unweighted divergence route fails off constant determinant",
        ),
        *_dependency_specs(),
    )
    return Scenario(
        name="sphere-gnomonic",
        problem=problem,
        maps={"gnomonic": gnomonic_map()},
        expected=expected,
        multiplier=B,
        description="the geodesic mapping par excellence",
    )


def _sphere_stereographic():
    problem = _hemisphere_problem(
        "hemisphere to plane, conformal projection", sphere_lc_connection()
    )
    B = MultiplierField.product(problem.base_metric, problem.fibre_metric)
    expected = (
        _above(
            "geodesic-residual",
            1e-2,
            "oracle",
            "conformal projection is not geodesic",
            map="stereographic",
        ),
        _above(
            "image-defect",
            1e-2,
            "oracle",
            "mapped great circles bend away from plane lines",
            map="stereographic",
        ),
        _below("trace-relation", 1e-12, "oracle"),
        _below("pair-symmetry", 1e-8, "oracle", side="base", fd_tolerance=1e-7),
        _above(
            "trace-identity",
            1e-2,
            "oracle",
            "unweighted divergence route fails off constant determinant",
        ),
        *_dependency_specs(),
    )
    return Scenario(
        name="sphere-stereographic",
        problem=problem,
        maps={"stereographic": stereographic_map()},
        expected=expected,
        multiplier=B,
        description="angle-preserving control that bends great circles",
    )


def _linear_psi(coeffs):
    vals = [float(c) for c in coeffs]

    def psi(x):
        total = vals[0] * x[0]
        for c, xi in zip(vals[1:], x[1:]):
            total = total + c * xi
        return total

    return psi


def _family_scenario(base_dim, fibre_dim, coeffs, fibre_scale=None):
    name = f"conformal-family-{base_dim}-{fibre_dim}"
    hhat = None
    if fibre_scale is not None:
        hhat = conformal_fibre_metric(
            fibre_dim, lambda p, s=float(fibre_scale): s * p[0]
        )
    problem, B = construct_solution_family(
        base_dim,
        fibre_dim,
        _linear_psi(coeffs),
        fibre_metric=hhat,
        name=name,
        check_per_dim=3,
    )
    raw_floor = 0.5 * (fibre_dim - 1) * max(abs(c) for c in coeffs)
    expected = (
        *_hp_gate_specs(),
        _below("hp32-riemann-match", 1e-6, "oracle"),
        _below("helmholtz", 1e-6, "oracle", source="dynamical", fd_tolerance=1e-3),
        *_dependency_specs(),
        _below("s-trace-normalized", 1e-8, "oracle"),
        _above(
            "s-trace-raw-floor",
            raw_floor,
            "reference",
            "without the fibre-dimension factor the trace defect survives",
        ),
        _below(
            "s-trace-raw-law",
            1e-8,
            "oracle",
            "surviving defect is (fibre_dim - 1) grad psi",
        ),
        _below("trace-relation", 1e-12, "oracle"),
        _below("trace-identity", 1e-8, "oracle", "constant determinant"),
        _below("pair-symmetry", 1e-8, "oracle", side="target"),
        _below(
            "harmonic-residual",
            1e-12,
            "reference",
            "constant maps are harmonic",
            map="constant",
        ),
    )
    centre = [0.2, -0.3, 0.1][:fibre_dim]
    return Scenario(
        name=name,
        problem=problem,
        maps={"constant": _constant_map(centre)},
        expected=expected,
        multiplier=B,
        psi_coeffs=tuple(float(c) for c in coeffs),
        description="constructed solution family; every condition closes",
    )


def builtin_scenarios():
    """The shipped examples, one Scenario each, freshly constructed."""
    return [
        _flat_identity(),
        _flat_linear(),
        _line_to_manifold(),
        _manifold_to_line(),
        _sphere_gnomonic(),
        _sphere_stereographic(),
        _family_scenario(1, 2, (0.4,)),
        _family_scenario(2, 2, (0.3, 0.2), fibre_scale=0.125),
        _family_scenario(2, 3, (0.2, -0.3)),
    ]


def scenario_by_name(name, extra=None):
    pool = list(extra or []) + builtin_scenarios()
    for s in pool:
        if s.name == name:
            return s
    raise ConfigError(f"no scenario named {name!r}")


# -- declarative configuration ---------------------------------------------

_BASE_GEOMETRIES = {
    "euclidean-1": lambda: (
        box_chart([(-1.0, 1.0)], "interval"),
        euclidean_metric(1),
        flat_connection(1),
    ),
    "euclidean-2": lambda: (
        box_chart([(-1.0, 1.0)] * 2, "square"),
        euclidean_metric(2),
        flat_connection(2),
    ),
    "euclidean-3": lambda: (
        box_chart([(-1.0, 1.0)] * 3, "cube"),
        euclidean_metric(3),
        flat_connection(3),
    ),
    "sphere": lambda: (sphere_chart(), sphere_metric(), sphere_lc_connection()),
    "hemisphere": lambda: (
        open_hemisphere_chart(),
        sphere_metric(),
        sphere_lc_connection(),
    ),
    "plane-10": lambda: (
        box_chart([(-10.0, 10.0)] * 2, "plane"),
        euclidean_metric(2),
        flat_connection(2),
    ),
}

_TARGET_GEOMETRIES = {
    "euclidean-1": lambda: (
        box_chart([(-1.0, 1.0)], "interval"),
        constant_fibre_metric(np.eye(1)),
        flat_connection(1),
    ),
    "euclidean-2": lambda: (
        box_chart([(-1.0, 1.0)] * 2, "square"),
        constant_fibre_metric(np.eye(2)),
        flat_connection(2),
    ),
    "euclidean-3": lambda: (
        box_chart([(-1.0, 1.0)] * 3, "cube"),
        constant_fibre_metric(np.eye(3)),
        flat_connection(3),
    ),
    "sphere": lambda: (
        sphere_chart(),
        sphere_fibre_metric(),
        sphere_lc_connection(),
    ),
    "plane-10": lambda: (
        box_chart([(-10.0, 10.0)] * 2, "plane"),
        constant_fibre_metric(np.eye(2)),
        flat_connection(2),
    ),
}


def _require_keys(entry, allowed, context):
    unknown = sorted(set(entry) - set(allowed))
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")


def _check_from_entry(entry, context):
    _require_keys(
        entry,
        (
            "check",
            "expect",
            "tolerance",
            "fd_tolerance",
            "provenance",
            "note",
            "map",
            "side",
            "source",
        ),
        context,
    )
    for key in ("check", "expect", "tolerance"):
        if key not in entry:
            raise ConfigError(f"{context}: missing required key {key!r}")
    fd = entry.get("fd_tolerance")
    return CheckSpec(
        check=str(entry["check"]),
        expect=str(entry["expect"]),
        tolerance=float(entry["tolerance"]),
        provenance=str(entry.get("provenance", "oracle")),
        note=str(entry.get("note", "")),
        map=str(entry.get("map", "")),
        side=str(entry.get("side", "")),
        source=str(entry.get("source", "")),
        fd_tolerance=None if fd is None else float(fd),
    )


def _map_from_entry(entry, n, m, context):
    _require_keys(entry, ("map", "matrix", "offset", "value"), context)
    kind = entry.get("map")
    if kind == "identity":
        if n != m:
            raise ConfigError(f"{context}: identity needs equal dimensions")
        return identity_map(n)
    if kind == "linear":
        if "matrix" not in entry:
            raise ConfigError(f"{context}: linear map needs a matrix")
        matrix = np.asarray(entry["matrix"], dtype=float)
        if matrix.shape != (m, n):
            raise ConfigError(
                f"{context}: matrix shape {matrix.shape} does not match "
                f"target x base ({m}, {n})"
            )
        return linear_map(matrix, entry.get("offset"))
    if kind == "constant":
        value = entry.get("value")
        if value is None or len(value) != m:
            raise ConfigError(
                f"{context}: constant map needs {m} target components"
            )
        return _constant_map(value)
    if kind == "gnomonic":
        return gnomonic_map()
    if kind == "stereographic":
        return stereographic_map()
    raise ConfigError(f"{context}: unknown map selector {kind!r}")


def _scenario_from_entry(entry, index):
    context = f"scenario #{index}"
    if not isinstance(entry, dict):
        raise ConfigError(f"{context}: expected an object")
    kind = entry.get("kind")
    name = entry.get("name")
    if not name or not isinstance(name, str):
        raise ConfigError(f"{context}: missing scenario name")
    context = f"scenario {name!r}"
    checks_raw = entry.get("checks")
    if not isinstance(checks_raw, list) or not checks_raw:
        raise ConfigError(f"{context}: needs a non-empty checks list")
    expected = tuple(
        _check_from_entry(c, f"{context}, check #{i}")
        for i, c in enumerate(checks_raw)
    )

    if kind == "family":
        _require_keys(
            entry,
            ("kind", "name", "base_dim", "fibre_dim", "psi", "fibre_scale", "checks"),
            context,
        )
        try:
            base_dim = int(entry["base_dim"])
            fibre_dim = int(entry["fibre_dim"])
        except KeyError as exc:
            raise ConfigError(f"{context}: missing {exc.args[0]!r}") from None
        psi = entry.get("psi")
        if not isinstance(psi, list) or len(psi) != base_dim:
            raise ConfigError(
                f"{context}: psi needs {base_dim} linear coefficients"
            )
        hhat = None
        if entry.get("fibre_scale") is not None:
            scale = float(entry["fibre_scale"])
            hhat = conformal_fibre_metric(fibre_dim, lambda p: scale * p[0])
        problem, B = construct_solution_family(
            base_dim,
            fibre_dim,
            _linear_psi(psi),
            fibre_metric=hhat,
            name=name,
            check_per_dim=3,
        )
        centre = [0.0] * fibre_dim
        return Scenario(
            name=name,
            problem=problem,
            maps={"constant": _constant_map(centre)},
            expected=expected,
            multiplier=B,
            psi_coeffs=tuple(float(c) for c in psi),
            description="user-configured solution family",
        )

    if kind == "mapping":
        _require_keys(
            entry, ("kind", "name", "base", "target", "maps", "checks"), context
        )
        base_sel = entry.get("base")
        target_sel = entry.get("target")
        if base_sel not in _BASE_GEOMETRIES:
            raise ConfigError(
                f"{context}: unknown base geometry {base_sel!r}; "
                f"choose from {sorted(_BASE_GEOMETRIES)}"
            )
        if target_sel not in _TARGET_GEOMETRIES:
            raise ConfigError(
                f"{context}: unknown target geometry {target_sel!r}; "
                f"choose from {sorted(_TARGET_GEOMETRIES)}"
            )
        base_domain, base_metric, base_conn = _BASE_GEOMETRIES[base_sel]()
        target_domain, fibre_metric, target_conn = _TARGET_GEOMETRIES[target_sel]()
        problem = MappingProblem(
            base_domain,
            target_domain,
            base_conn,
            target_conn,
            base_metric=base_metric,
            fibre_metric=fibre_metric,
            name=name,
        )
        maps_raw = entry.get("maps", {})
        if not isinstance(maps_raw, dict):
            raise ConfigError(f"{context}: maps must be an object")
        maps = {
            label: _map_from_entry(m, problem.n, problem.m, f"{context}, map {label!r}")
            for label, m in maps_raw.items()
        }
        B = MultiplierField.product(base_metric, fibre_metric)
        return Scenario(
            name=name,
            problem=problem,
            maps=maps,
            expected=expected,
            multiplier=B,
            description="user-configured mapping scenario",
        )

    raise ConfigError(
        f"{context}: kind must be 'family' or 'mapping', got {kind!r}"
    )


def scenarios_from_config(text):
    """Parse declarative scenario definitions; unknown keys are errors."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _require_keys(doc, ("scenarios",), "config root")
    entries = doc.get("scenarios")
    if not isinstance(entries, list):
        raise ConfigError("config needs a 'scenarios' list")
    out = []
    seen = set()
    for i, entry in enumerate(entries):
        scenario = _scenario_from_entry(entry, i)
        if scenario.name in seen:
            raise ConfigError(f"duplicate scenario name {scenario.name!r}")
        seen.add(scenario.name)
        out.append(scenario)
    return out


def load_scenarios(path):
    with open(path, "r", encoding="utf-8") as fh:
        return scenarios_from_config(fh.read())
