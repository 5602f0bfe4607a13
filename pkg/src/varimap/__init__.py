"""Numerical verification toolkit for geodesic and harmonic mapping
equations and the variationality of their source forms.

The package is organised bottom-up:

- ``autodiff`` and ``engine``: dual-number / truncated-Taylor forward
  differentiation and a finite-difference twin, plus a cross-checking
  wrapper.  Everything above is engine-agnostic.
- ``geometry`` and ``catalog``: charts, metric and connection fields,
  curvature helpers, and the shipped analytic geometries and maps.
- ``jets`` and ``maps``: jet points, prolongation, Euler-Lagrange
  calculus, mapping problems with the geodesic-map and harmonic-map
  field equations.
- ``helmholtz``: the three variationality conditions on source forms
  and a sampled pass/fail verdict.
- ``inverse``: multiplier fields, the split variationality conditions
  for the dynamical form, the connection-decomposition trace oracle,
  dependency identities, and a constructor for solution families.
- ``scenarios``: named example configurations with expected outcomes,
  runnable under either derivative engine or both.
- ``cli``: the ``varimap`` command (list / check / discrepancies).
"""

from .autodiff import Dual, TaylorScalar
from .catalog import (
    box_chart,
    conformal_fibre_metric,
    conformal_lc_connection,
    conformal_metric,
    constant_fibre_metric,
    euclidean_metric,
    flat_connection,
    gnomonic_map,
    gnomonic_pullback_connection,
    great_circle_seeds,
    identity_map,
    linear_map,
    open_hemisphere_chart,
    perturb_connection,
    scaled_fibre_metric,
    sphere_chart,
    sphere_fibre_metric,
    sphere_lc_connection,
    sphere_metric,
    stereographic_map,
    unimodular_shear_metric,
)
from .engine import CrossCheckedEngine, DualEngine, FDEngine, get_engine
from .errors import (
    ConfigError,
    ConstructionError,
    DomainExit,
    EngineDisagreement,
    NonAffineSourceForm,
    SingularMetric,
    UnknownCheck,
    VarimapError,
)
from .geometry import (
    ChartDomain,
    ConnectionField,
    FibredMetricField,
    MetricField,
    christoffel_from_metric,
    connection_trace,
    inverse_metric_divergence,
    levi_civita_connection,
    lowered_riemann_pair_symmetry_defect,
    metric_compatibility_residual,
    riemann_tensor,
    trace_identity_residual,
)
from .helmholtz import (
    HelmholtzResidual,
    VerdictReport,
    assert_affine_source_form,
    helmholtz_residuals,
    variationality_verdict,
)
from .inverse import (
    DependencyReport,
    MultiplierField,
    SolutionFamily,
    STensorField,
    TraceDefect,
    condition_grid,
    construct_solution_family,
    dependency_checks,
    dynamical_form,
    family_s_tensor,
    fibre_conformality_defect,
    hp21_residual,
    hp22_residual,
    hp3x_residuals,
    s_tensor_trace_defect,
)
from .jets import (
    JetPoint,
    JetSlots,
    LagrangianDensity,
    SourceForm,
    euler_lagrange,
    euler_lagrange_form,
    jet_partials,
    prolong,
    sample_jets,
    total_derivative,
)
from .maps import (
    MappingProblem,
    energy_functional,
    energy_lagrangian,
    geodesic_image_defect,
    geodesic_map_residual,
    harmonic_residual,
    integrate_geodesic,
)
from .scenarios import (
    CheckResult,
    CheckSpec,
    ResidualReport,
    RunSettings,
    Scenario,
    builtin_scenarios,
    check_names,
    load_scenarios,
    run_scenario,
    scenario_by_name,
    scenarios_from_config,
)

__version__ = "0.1.0"
