"""End-to-end gate for the shipped toolkit.

Each test here stakes one headline claim on the whole stack at once:
the residual operators, both derivative engines, the constructed
solution families, the scenario catalogue, and the command line must
cooperate to make it pass.  Unit-level coverage lives in the sibling
modules; these are the numbers the package advertises.
"""

from zlib import crc32

import numpy as np

from varimap import (
    MappingProblem,
    MetricField,
    RunSettings,
    SourceForm,
    builtin_scenarios,
    condition_grid,
    dependency_checks,
    dynamical_form,
    euler_lagrange_form,
    geodesic_image_defect,
    geodesic_map_residual,
    great_circle_seeds,
    harmonic_residual,
    helmholtz_residuals,
    hp21_residual,
    hp22_residual,
    hp3x_residuals,
    lowered_riemann_pair_symmetry_defect,
    perturb_connection,
    prolong,
    run_scenario,
    sample_jets,
    scenario_by_name,
    variationality_verdict,
)
from varimap.cli import main as cli_main
from varimap.tensorops import ein, max_abs

from support import random_polynomial_lagrangian

FAMILY_NAMES = (
    "conformal-family-1-2",
    "conformal-family-2-2",
    "conformal-family-2-3",
)


def _jets_for(scenario, count, order=3):
    p = scenario.problem
    rng = np.random.default_rng(crc32(scenario.name.encode()))
    return sample_jets(
        rng,
        p.m,
        p.n,
        count,
        domain=p.base_domain,
        target_domain=p.target_domain,
        amplitude=0.7,
        order=order,
        margin=0.2,
    )


def _grid_for(scenario, per_dim=5, seed=0):
    p = scenario.problem
    return condition_grid(
        p.base_domain, p.target_domain, per_dim=per_dim, seed=seed
    )


def test_trace_contraction_routes_agree_on_every_builtin():
    # one-shot contraction of the second-order residual against the
    # stepwise lower-then-trace route, 100 jets per scenario
    for scenario in builtin_scenarios():
        p = scenario.problem
        jet = _jets_for(scenario, 100, order=2)
        direct = harmonic_residual(p, jet)
        lowered = ein(
            "sv...,vij...->sij...",
            p.fibre_metric.matrix(jet.x, jet.phi),
            geodesic_map_residual(p, jet),
        )
        traced = ein("ij...,sij...->s...", p.base_metric.inverse(jet.x), lowered)
        scale = max(1.0, max_abs(direct), max_abs(traced))
        assert max_abs(direct - traced) / scale <= 1e-12, scenario.name


def test_variational_derivatives_satisfy_all_symmetry_conditions():
    # genuine variational derivatives clear every condition; a hand-built
    # asymmetric source form trips the first one at every single jet
    for seed in range(20):
        density = random_polynomial_lagrangian(
            np.random.default_rng(1000 + seed), 2, 2
        )
        form = euler_lagrange_form(density)
        jets = sample_jets(np.random.default_rng(2000 + seed), 2, 2, 100)
        res = helmholtz_residuals(form, jets)
        assert max(res.norms.values()) < 1e-7, f"lagrangian seed {seed}"

    def asymmetric(jet):
        top = jet.phi2[1, 0, 0]
        return np.stack([top, np.zeros_like(top)])

    control = SourceForm(2, 1, asymmetric, name="asymmetric control")
    jets = sample_jets(np.random.default_rng(77), 2, 1, 100)
    res = helmholtz_residuals(control, jets)
    per_jet = np.abs(res.H1).reshape(-1, 100).max(axis=0)
    assert np.all(per_jet >= 1.0)


def test_gnomonic_projection_is_geodesic_while_stereographic_is_not():
    gn = scenario_by_name("sphere-gnomonic")
    rng = np.random.default_rng(31)
    x = list(gn.problem.base_domain.sample(rng, 50, margin=0.2))
    jet = prolong(gn.maps["gnomonic"], gn.problem.m, x, order=2)
    assert max_abs(geodesic_map_residual(gn.problem, jet)) < 1e-8

    pts, v = great_circle_seeds(np.random.default_rng(32), 10, gn.problem.base_domain)
    image = geodesic_image_defect(
        gn.problem, gn.maps["gnomonic"], pts, v, 700, step=1e-3
    )
    assert float(np.max(image.curve_gap)) < 1e-5

    st = scenario_by_name("sphere-stereographic")
    pts, v = great_circle_seeds(np.random.default_rng(32), 10, st.problem.base_domain)
    control = geodesic_image_defect(
        st.problem, st.maps["stereographic"], pts, v, 700, step=1e-3
    )
    assert float(np.max(control.curve_gap)) > 1e-2


def test_constructed_families_pass_every_condition_and_are_variational():
    for name in FAMILY_NAMES:
        s = scenario_by_name(name)
        p, B = s.problem, s.multiplier
        gx, gphi = _grid_for(s)
        assert max_abs(hp21_residual(B, p.base_connection, gx, gphi)) < 1e-7
        assert max_abs(hp22_residual(B, p.target_connection, gx, gphi)) < 1e-7
        second = hp3x_residuals(B, p, gx, gphi)
        for label, arr in zip(second._fields, second):
            assert max_abs(arr) < 1e-7, f"{name}: {label}"
        report = variationality_verdict(
            dynamical_form(B, p),
            sample_count=30,
            seed=9,
            tolerance=1e-6,
            domain=p.base_domain,
            target_domain=p.target_domain,
            amplitude=0.7,
        )
        assert report.passed, f"{name}: worst {report.worst_condition}"
        assert max(report.norms.values()) < 1e-6


def test_broken_fibre_metricity_is_flagged():
    s = scenario_by_name("conformal-family-2-2")
    p, B = s.problem, s.multiplier
    bumped = perturb_connection(p.target_connection, (0, 0, 0), 0.1)
    gx, gphi = _grid_for(s)
    assert max_abs(hp22_residual(B, bumped, gx, gphi)) >= 0.01

    broken = MappingProblem(
        p.base_domain,
        p.target_domain,
        p.base_connection,
        bumped,
        base_metric=p.base_metric,
        fibre_metric=p.fibre_metric,
        name="bumped fibre connection",
    )
    report = variationality_verdict(
        dynamical_form(B, broken),
        sample_count=30,
        seed=9,
        tolerance=1e-6,
        domain=p.base_domain,
        target_domain=p.target_domain,
        amplitude=0.7,
    )
    assert not report.passed
    assert max(report.norms.values()) >= 0.01


def test_second_stage_curvature_condition_matches_pair_symmetry_defect():
    for name in FAMILY_NAMES:
        s = scenario_by_name(name)
        p, B = s.problem, s.multiplier
        gx, gphi = _grid_for(s)
        second = hp3x_residuals(B, p, gx, gphi)
        slice_metric = MetricField(
            p.m, lambda q, gx=gx: p.fibre_metric.matrix(gx, q), name="fibre slice"
        )
        defect = lowered_riemann_pair_symmetry_defect(
            slice_metric, p.target_connection, gphi
        )
        want = ein("ij...,mavl...->ijmval...", p.base_metric.inverse(gx), defect)
        assert max_abs(second.hp32 - want) <= 1e-6, name
        # Levi-Civita fibre connections kill both sides outright
        assert max_abs(second.hp32) < 1e-7, name
        assert max_abs(defect) < 1e-7, name


def test_condition_interdependencies_hold_on_every_builtin():
    for scenario in builtin_scenarios():
        p = scenario.problem
        gx, gphi = _grid_for(scenario, per_dim=4, seed=1)
        report = dependency_checks(scenario.multiplier, p, gx, gphi)
        assert report.passed, scenario.name
        assert report.divergence_defect < 1e-5, scenario.name
        assert report.combination_defect < 1e-6, scenario.name


def test_discrepancy_report_settles_trace_conventions(capsys):
    assert cli_main(["discrepancies"]) == 0
    lines = capsys.readouterr().out.splitlines()

    surviving = {
        "conformal-family-1-2": 0.4,
        "conformal-family-2-2": 0.3,
        "conformal-family-2-3": 0.6,
    }
    for name, magnitude in surviving.items():
        row = next(l for l in lines if l.strip().startswith(name) and "c=1:" in l)
        assert row.endswith("-> 1/fibre_dim variant vanishes"), row
        normalized = float(row.split("c=1/fibre_dim:")[1].split("c=1:")[0])
        raw = float(row.split("c=1:")[1].split("->")[0])
        assert normalized < 1e-8, row
        # what survives without the factor is (fibre_dim - 1) grad psi
        assert abs(raw - magnitude) <= 1e-3 * magnitude, row

    holds = [l for l in lines if l.endswith("-> holds")]
    fails = [l for l in lines if l.endswith("-> fails")]
    assert len(fails) == 2 and all("sphere-" in l for l in fails)
    assert len(holds) == 7


def test_difference_engine_corroborates_dual_engine_suite_wide():
    settings = RunSettings(engine="both")
    for scenario in builtin_scenarios():
        report = run_scenario(scenario, settings)
        assert report.passed, (scenario.name, report.failures)
        agreement = report.results[-1]
        assert agreement.check == "engine-agreement"
        assert agreement.value < 1e-4, scenario.name
