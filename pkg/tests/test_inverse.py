"""Multiplier condition residuals against a symbolic transcription oracle."""

import numpy as np
import pytest
import sympy as sp

from varimap import autodiff as ad
from varimap.catalog import (
    box_chart,
    constant_fibre_metric,
    euclidean_metric,
    flat_connection,
    perturb_connection,
    sphere_chart,
    sphere_fibre_metric,
    sphere_lc_connection,
    sphere_metric,
)
from varimap.engine import DualEngine
from varimap.errors import ConstructionError
from varimap.geometry import (
    ConnectionField,
    FibredMetricField,
    MetricField,
    levi_civita_connection,
    lowered_riemann_pair_symmetry_defect,
    metric_compatibility_residual,
)
from varimap.helmholtz import variationality_verdict
from varimap.inverse import (
    MultiplierField,
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
from varimap.jets import sample_jets
from varimap.maps import MappingProblem, harmonic_residual
from varimap.tensorops import ein, max_abs

N, M = 2, 2


class Oracle:
    """Scalar sympy transcription of every condition, one entry at a time."""

    def __init__(self):
        x0, x1, p0, p1 = sp.symbols("x0 x1 p0 p1")
        self.x = [x0, x1]
        self.p = [p0, p1]
        self.syms = [x0, x1, p0, p1]
        A = [[1 + sp.Rational(1, 2) * x0**2, sp.Rational(3, 10) * x0 * x1],
             [sp.Rational(3, 10) * x0 * x1, 1 + sp.Rational(2, 5) * x1**2]]
        Hb = [[2 + sp.sin(p0), sp.Rational(1, 2) * p0 * p1],
              [sp.Rational(1, 2) * p0 * p1, 2 + sp.cos(p1)]]
        C = [[sp.Rational(2, 5), sp.Rational(1, 10)],
             [sp.Rational(1, 10), sp.Rational(1, 2)]]
        K = [[sp.exp(sp.Rational(3, 10) * p1 + sp.Rational(1, 5) * x0), 0],
             [0, 1 + sp.Rational(1, 10) * x1**2]]
        self.B = [
            [
                [
                    [A[i][j] * Hb[u][v] + C[i][j] * K[u][v] for v in range(M)]
                    for u in range(M)
                ]
                for j in range(N)
            ]
            for i in range(N)
        ]
        self.GM = [
            [[sp.Rational(1, 5) * x0, sp.Rational(1, 10) * x1],
             [sp.Rational(1, 10) * x1, -sp.Rational(3, 10) * x0]],
            [[sp.Rational(1, 10) * sp.sin(x0), sp.Rational(1, 5)],
             [sp.Rational(1, 5), sp.Rational(2, 5) * x1]],
        ]
        self.GN = [
            [[sp.Rational(3, 10) * p0, sp.Rational(1, 10) * p1],
             [sp.Rational(1, 10) * p1, sp.Rational(1, 5)]],
            [[-sp.Rational(1, 5) * p1, sp.Rational(3, 20) * p0],
             [sp.Rational(3, 20) * p0, sp.Rational(1, 4) * p0]],
        ]

    def num(self, expr, vals, batch):
        got = sp.lambdify(self.syms, expr, "numpy")(*vals)
        return np.broadcast_to(np.asarray(got, dtype=float), batch).copy()

    def _fill(self, shape, entry, vals, batch):
        out = np.zeros(shape + batch)
        for idx in np.ndindex(*shape):
            out[idx] = self.num(entry(*idx), vals, batch)
        return out

    def hp21(self, vals, batch):
        B, GM, x = self.B, self.GM, self.x
        return self._fill(
            (N, M, M),
            lambda l, u, v: sum(sp.diff(B[l][q][u][v], x[q]) for q in range(N))
            + sum(B[i][j][u][v] * GM[l][i][j] for i in range(N) for j in range(N)),
            vals,
            batch,
        )

    def hp22(self, vals, batch):
        B, GN, p = self.B, self.GN, self.p
        return self._fill(
            (N, N, M, M, M),
            lambda i, j, u, v, lam: sp.diff(B[i][j][u][v], p[lam])
            - sum(GN[a][u][lam] * B[i][j][a][v] for a in range(M))
            - sum(GN[a][v][lam] * B[i][j][u][a] for a in range(M)),
            vals,
            batch,
        )

    def hp31(self, vals, batch, corrected=False):
        B, GN, p = self.B, self.GN, self.p

        def entry(i, j, s, u, v):
            expr = (
                sp.diff(B[i][j][s][u], p[v])
                - sp.diff(B[i][j][s][v], p[u])
                - sp.diff(B[i][j][u][v], p[s])
                + sum(B[i][j][a][v] * GN[a][u][s] for a in range(M))
            )
            if corrected:
                expr += sum(B[i][j][a][u] * GN[a][s][v] for a in range(M))
            else:
                expr += sum(B[i][j][a][v] * GN[a][s][u] for a in range(M))
            return expr

        return self._fill((N, N, M, M, M), entry, vals, batch)

    def hp32(self, vals, batch):
        B, GN, p = self.B, self.GN, self.p

        def entry(i, j, u, v, al, lam):
            expr = -sp.diff(B[i][j][u][v], p[lam], p[al])
            for s in range(M):
                expr += (
                    sp.diff(B[i][j][s][u], p[v]) * GN[s][al][lam]
                    + B[i][j][s][u] * sp.diff(GN[s][al][lam], p[v])
                    - sp.diff(B[i][j][s][v], p[u]) * GN[s][al][lam]
                    - B[i][j][s][v] * sp.diff(GN[s][al][lam], p[u])
                    + sp.diff(B[i][j][s][v], p[al]) * GN[s][u][lam]
                    + B[i][j][s][v] * sp.diff(GN[s][u][lam], p[al])
                    + sp.diff(B[i][j][s][v], p[lam]) * GN[s][al][u]
                    + B[i][j][s][v] * sp.diff(GN[s][al][u], p[lam])
                )
            return expr

        return self._fill((N, N, M, M, M, M), entry, vals, batch)

    def hp33(self, vals, batch):
        B, GM, GN, x, p = self.B, self.GM, self.GN, self.x, self.p

        def entry(k, s, u, v):
            cyc = sum(
                GM[k][i][j]
                * (
                    sp.diff(B[i][j][s][v], p[u])
                    - sp.diff(B[i][j][s][u], p[v])
                    - sp.diff(B[i][j][u][v], p[s])
                )
                for i in range(N)
                for j in range(N)
            )
            div = 2 * sum(
                sp.diff(B[l][k][a][v], x[l]) * GN[a][u][s]
                for l in range(N)
                for a in range(M)
            )
            mixed = 2 * sum(
                sp.diff(B[k][q][u][v], x[q], p[s]) for q in range(N)
            )
            return cyc + div - mixed

        return self._fill((N, M, M, M), entry, vals, batch)

    def hp34(self, vals, batch):
        B, GM, x = self.B, self.GM, self.x

        def entry(u, v):
            return (
                -sum(
                    sp.diff(B[i][j][u][v], x[l]) * GM[l][i][j]
                    for l in range(N)
                    for i in range(N)
                    for j in range(N)
                )
                - sum(
                    B[i][j][u][v] * sp.diff(GM[l][i][j], x[l])
                    for l in range(N)
                    for i in range(N)
                    for j in range(N)
                )
                - sum(
                    sp.diff(B[l][q][u][v], x[l], x[q])
                    for l in range(N)
                    for q in range(N)
                )
            )

        return self._fill((M, M), entry, vals, batch)


def _twin_multiplier():
    def fn(x, phi):
        x0, x1 = x
        p0, p1 = phi
        A = [[1 + 0.5 * x0**2, 0.3 * x0 * x1], [0.3 * x0 * x1, 1 + 0.4 * x1**2]]
        Hb = [[2 + ad.sin(p0), 0.5 * p0 * p1], [0.5 * p0 * p1, 2 + ad.cos(p1)]]
        C = [[0.4, 0.1], [0.1, 0.5]]
        zero = 0.0 * (x0 + p0)
        K = [[ad.exp(0.3 * p1 + 0.2 * x0), zero], [zero, 1 + 0.1 * x1**2 + zero]]
        return [
            [
                [
                    [A[i][j] * Hb[u][v] + C[i][j] * K[u][v] for v in range(M)]
                    for u in range(M)
                ]
                for j in range(N)
            ]
            for i in range(N)
        ]

    return MultiplierField.general(N, M, fn, name="two-product sum")


def _twin_connections():
    def gm_fn(x):
        x0, x1 = x
        z = 0.0 * x0
        return [
            [[0.2 * x0, 0.1 * x1], [0.1 * x1, -0.3 * x0]],
            [[0.1 * ad.sin(x0), 0.2 + z], [0.2 + z, 0.4 * x1]],
        ]

    def gn_fn(phi):
        p0, p1 = phi
        z = 0.0 * p0
        return [
            [[0.3 * p0, 0.1 * p1], [0.1 * p1, 0.2 + z]],
            [[-0.2 * p1, 0.15 * p0], [0.15 * p0, 0.25 * p0]],
        ]

    return (
        ConnectionField(N, gm_fn, name="twin base"),
        ConnectionField(M, gn_fn, name="twin target"),
    )


@pytest.fixture(scope="module")
def twin_setup():
    gamma_m, gamma_n = _twin_connections()
    problem = MappingProblem(
        box_chart([(-1.0, 1.0)] * N, "twin base"),
        box_chart([(-1.0, 1.0)] * M, "twin fibre"),
        gamma_m,
        gamma_n,
        name="twin configuration",
    )
    return _twin_multiplier(), problem


@pytest.fixture(scope="module")
def sample_points():
    rng = np.random.default_rng(77)
    pts = rng.uniform(-0.8, 0.8, size=(N + M, 3))
    return list(pts[:N]), list(pts[N:])


def test_product_multiplier_components():
    h = constant_fibre_metric([[2.0, 0.5], [0.5, 1.0]])
    B = MultiplierField.product(sphere_metric(), h)
    assert B.structure == "product"
    th = np.array([0.7, 1.2])
    x = [th, np.array([0.3, 2.1])]
    phi = [np.array([0.1, -0.2]), np.array([0.4, 0.0])]
    comp = B.components(x, phi)
    ginv = np.zeros((2, 2, 2))
    ginv[0, 0] = 1.0
    ginv[1, 1] = 1.0 / np.sin(th) ** 2
    want = np.einsum("ij...,mv->ijmv...", ginv, [[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(comp, want, rtol=1e-13)
    B.validate(x, phi)


def test_general_multiplier_rejects_bad_fields():
    def upper_asym(x, phi):
        b = np.zeros((2, 2, 2, 2) + np.shape(x[0]))
        b[0, 0, 0, 0] = b[1, 1, 1, 1] = b[0, 0, 1, 1] = b[1, 1, 0, 0] = 1.0
        b[0, 1, 0, 0] = 0.2
        return b

    with pytest.raises(ConstructionError, match="upper"):
        MultiplierField.general(2, 2, upper_asym)

    def lower_asym(x, phi):
        b = np.zeros((2, 2, 2, 2) + np.shape(x[0]))
        b[0, 0, 0, 0] = b[1, 1, 1, 1] = b[0, 0, 1, 1] = b[1, 1, 0, 0] = 1.0
        b[0, 0, 0, 1] = 0.2
        return b

    with pytest.raises(ConstructionError, match="lower"):
        MultiplierField.general(2, 2, lower_asym)

    def rank_deficient(x, phi):
        return np.zeros((2, 2, 2, 2) + np.shape(x[0]))

    with pytest.raises(ConstructionError, match="singular"):
        MultiplierField.general(2, 2, rank_deficient)


def test_dynamical_form_flat_product():
    h_mat = np.array([[2.0, 0.5], [0.5, 1.0]])
    B = MultiplierField.product(euclidean_metric(2), constant_fibre_metric(h_mat))
    problem = MappingProblem(
        box_chart([(-1.0, 1.0)] * 2),
        box_chart([(-1.0, 1.0)] * 2),
        flat_connection(2),
        flat_connection(2),
        name="flat",
    )
    form = dynamical_form(B, problem)
    jet = sample_jets(np.random.default_rng(3), 2, 2, 5)
    want = np.einsum("sv,sii...->v...", h_mat, jet.phi2)
    np.testing.assert_allclose(form(jet), want, rtol=1e-13)

    small = MappingProblem(
        box_chart([(-1.0, 1.0)]),
        box_chart([(-1.0, 1.0)] * 2),
        flat_connection(1),
        flat_connection(2),
        name="narrow",
    )
    with pytest.raises(ConstructionError):
        dynamical_form(B, small)


def test_dynamical_form_matches_harmonic_route():
    problem = MappingProblem(
        sphere_chart(),
        sphere_chart(),
        sphere_lc_connection(),
        sphere_lc_connection(),
        base_metric=sphere_metric(),
        fibre_metric=sphere_fibre_metric(),
        name="sphere to sphere",
    )
    B = MultiplierField.product(problem.base_metric, problem.fibre_metric)
    form = dynamical_form(B, problem)
    rng = np.random.default_rng(8)
    jet = sample_jets(
        rng, 2, 2, 6,
        domain=problem.base_domain, target_domain=problem.target_domain,
    )
    np.testing.assert_allclose(
        form(jet), harmonic_residual(problem, jet), rtol=1e-12, atol=1e-14
    )


def test_hp21_flat_and_frozen_exponential():
    hhat = np.array([[2.0, 0.5], [0.5, 1.0]])
    gamma_m = flat_connection(2)
    x = [np.array([0.2, -0.4, 1.1]), np.array([0.5, 0.0, -0.3])]
    phi = [np.array([0.1, 0.2, 0.3]), np.array([0.0, -0.1, 0.2])]

    flat_B = MultiplierField.product(
        euclidean_metric(2), constant_fibre_metric(hhat)
    )
    assert max_abs(hp21_residual(flat_B, gamma_m, x, phi)) < 1e-14

    grown = FibredMetricField(
        2,
        lambda xx, pp: [
            [hhat[0, 0] * ad.exp(xx[1]), hhat[0, 1] * ad.exp(xx[1])],
            [hhat[1, 0] * ad.exp(xx[1]), hhat[1, 1] * ad.exp(xx[1])],
        ],
        name="exponential in x1",
    )
    B = MultiplierField.product(euclidean_metric(2), grown)
    res = hp21_residual(B, gamma_m, x, phi)
    want_l1 = np.exp(x[1])[None, None, :] * hhat[:, :, None]
    np.testing.assert_allclose(res[1], want_l1, rtol=1e-12)
    np.testing.assert_allclose(res[0], np.zeros_like(want_l1), atol=1e-14)


def test_hp22_levi_civita_and_constant_bump():
    x = [np.array([0.3, -0.2]), np.array([0.1, 0.4])]
    phi = [np.array([0.9, 1.4]), np.array([0.2, 2.0])]
    round_B = MultiplierField.product(euclidean_metric(2), sphere_fibre_metric())
    assert max_abs(hp22_residual(round_B, sphere_lc_connection(), x, phi)) < 1e-13

    flat_B = MultiplierField.product(
        euclidean_metric(2), constant_fibre_metric(np.eye(2))
    )
    c = 0.37
    bumped = perturb_connection(flat_connection(2), (0, 0, 0), c)
    res = hp22_residual(flat_B, bumped, x, phi)
    # dB = 0 and only Gamma^0_{00} = c survives: entries -2c at [i,i,0,0,0]
    np.testing.assert_allclose(res[0, 0, 0, 0, 0], -2 * c * np.ones(2), rtol=1e-14)
    np.testing.assert_allclose(res[1, 1, 0, 0, 0], -2 * c * np.ones(2), rtol=1e-14)
    assert max_abs(res[0, 1]) < 1e-15


def test_hp22_equals_weighted_fibre_metricity():
    g = sphere_metric()
    h = sphere_fibre_metric()
    gamma_n = flat_connection(2)  # deliberately not metric for h
    B = MultiplierField.product(g, h)
    x = [np.array([0.8, 1.3]), np.array([0.4, 2.2])]
    phi = [np.array([1.0, 0.7]), np.array([0.3, 1.1])]
    res = hp22_residual(B, gamma_n, x, phi)
    fibre_at = MetricField(2, lambda q: h.matrix(x, q), name="fibre at base batch")
    compat = metric_compatibility_residual(fibre_at, gamma_n, phi)
    # compat[m, v, lam] = nabla_lam h_{m v}
    want = ein("ij...,mvl...->ijmvl...", g.inverse(x), compat)
    np.testing.assert_allclose(res, want, rtol=1e-12, atol=1e-14)
    assert max_abs(res) > 0.1


def test_conditions_match_symbolic_oracle(twin_setup, sample_points):
    B, problem = twin_setup
    x, phi = sample_points
    vals = list(x) + list(phi)
    batch = x[0].shape
    oracle = Oracle()

    got21 = hp21_residual(B, problem.base_connection, x, phi)
    np.testing.assert_allclose(got21, oracle.hp21(vals, batch), rtol=1e-9, atol=1e-12)
    assert max_abs(got21) > 0.05

    got22 = hp22_residual(B, problem.target_connection, x, phi)
    np.testing.assert_allclose(got22, oracle.hp22(vals, batch), rtol=1e-9, atol=1e-12)

    res = hp3x_residuals(B, problem, x, phi)
    np.testing.assert_allclose(res.hp31, oracle.hp31(vals, batch), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(res.hp32, oracle.hp32(vals, batch), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(res.hp33, oracle.hp33(vals, batch), rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(res.hp34, oracle.hp34(vals, batch), rtol=1e-9, atol=1e-12)
    for arr in res:
        assert max_abs(arr) > 0.05

    corrected = hp3x_residuals(B, problem, x, phi, corrected_hp31=True)
    np.testing.assert_allclose(
        corrected.hp31, oracle.hp31(vals, batch, corrected=True),
        rtol=1e-9, atol=1e-12,
    )
    assert max_abs(corrected.hp31 - res.hp31) > 0.01


def test_hp31_verbatim_vanishes_under_fibre_parallelism():
    problem = MappingProblem(
        box_chart([(-1.0, 1.0)] * 2),
        sphere_chart(),
        flat_connection(2),
        sphere_lc_connection(),
        name="round fibre",
    )
    B = MultiplierField.product(euclidean_metric(2), sphere_fibre_metric())
    x, phi = condition_grid(problem.base_domain, problem.target_domain, per_dim=3, seed=1)
    res = hp3x_residuals(B, problem, x, phi)
    assert max_abs(res.hp31) < 1e-12
    corrected = hp3x_residuals(B, problem, x, phi, corrected_hp31=True)
    assert max_abs(corrected.hp31) > 0.01


def test_hp32_matches_riemann_pair_defect():
    problem = MappingProblem(
        box_chart([(-1.0, 1.0)] * 2),
        sphere_chart(),
        flat_connection(2),
        sphere_lc_connection(),
        name="round fibre",
    )
    g = euclidean_metric(2)
    h = sphere_fibre_metric()
    B = MultiplierField.product(g, h)
    x, phi = condition_grid(problem.base_domain, problem.target_domain, per_dim=3, seed=4)
    res = hp3x_residuals(B, problem, x, phi)
    fibre_at = MetricField(2, lambda q: h.matrix(x, q), name="fibre slice")
    defect = lowered_riemann_pair_symmetry_defect(
        fibre_at, problem.target_connection, phi
    )
    want = ein("ij...,mavl...->ijmval...", g.inverse(x), defect)
    np.testing.assert_allclose(res.hp32, want, atol=1e-10)
    assert max_abs(res.hp32) < 1e-10  # the pairing symmetry holds here

    bumped = MappingProblem(
        problem.base_domain,
        problem.target_domain,
        problem.base_connection,
        perturb_connection(problem.target_connection, (1, 0, 1), 0.1),
        name="bumped fibre connection",
    )
    assert max_abs(hp3x_residuals(B, bumped, x, phi).hp32) > 1e-3


def test_dependency_checks_flat_and_structural(twin_setup):
    flat_B = MultiplierField.product(
        euclidean_metric(2), constant_fibre_metric(np.eye(2))
    )
    flat_problem = MappingProblem(
        box_chart([(-1.0, 1.0)] * 2),
        box_chart([(-1.0, 1.0)] * 2),
        flat_connection(2),
        flat_connection(2),
        name="flat",
    )
    gx, gphi = condition_grid(flat_problem.base_domain, flat_problem.target_domain, per_dim=2, seed=0)
    trivial = dependency_checks(flat_B, flat_problem, gx, gphi)
    assert trivial.passed
    assert trivial.divergence_defect < 1e-12
    assert trivial.combination_defect < 1e-12

    B, problem = twin_setup
    gx, gphi = condition_grid(problem.base_domain, problem.target_domain, per_dim=3, seed=5)
    report = dependency_checks(B, problem, gx, gphi)
    assert report.passed
    assert report.divergence_defect < 1e-5
    assert report.combination_defect < 1e-6
    # the relations are between genuinely nonzero residuals here
    assert max_abs(hp3x_residuals(B, problem, gx, gphi).hp33) > 0.01


def test_s_tensor_trace_defect_cases():
    x = [np.array([0.3, -0.5]), np.array([0.2, 0.7])]
    phi = [np.array([0.1, 0.0]), np.array([-0.2, 0.4])]
    g = euclidean_metric(2)

    # x-independent fibre metric with the metric's own connection offset zero
    const = constant_fibre_metric([[2.0, 0.3], [0.3, 1.0]])
    both = s_tensor_trace_defect(g, const, flat_connection(2), x, phi)
    assert max_abs(both.normalized) < 1e-14
    assert max_abs(both.raw) < 1e-14

    a, b = 0.4, -0.3
    psi = lambda z: a * z[0] + b * z[1]
    gamma_m = ConnectionField(2, family_s_tensor(2, psi).components)
    h = FibredMetricField(
        2,
        lambda xx, pp: [
            [2.0 * ad.exp(psi(xx)), 0.5 * ad.exp(psi(xx))],
            [0.5 * ad.exp(psi(xx)), 1.0 * ad.exp(psi(xx))],
        ],
        name="scaled constant",
    )
    res = s_tensor_trace_defect(g, h, gamma_m, x, phi)
    assert max_abs(res.normalized) < 1e-13
    grad = np.array([a, b])
    want_raw = np.broadcast_to(grad[:, None], (2, 2)).copy()  # (fibre_dim - 1) = 1
    np.testing.assert_allclose(res.raw, want_raw, rtol=1e-12)


def test_s_tensor_field_components():
    psi = lambda z: 0.4 * z[0] - 0.3 * z[1]
    s = family_s_tensor(2, psi)
    x = [np.array([0.1, 0.9]), np.array([-0.5, 0.2])]
    comp = s.components(x)
    want = np.zeros((2, 2, 2))
    want[0, 0, 0] = want[0, 1, 1] = -0.2
    want[1, 0, 0] = want[1, 1, 1] = 0.15
    np.testing.assert_allclose(
        comp, np.broadcast_to(want[..., None], (2, 2, 2, 2)), rtol=1e-13
    )
    assert max_abs(s.symmetry_defect(x)) == 0.0


def test_fibre_conformality_defect():
    psi = lambda z: 0.3 * z[0] + 0.1 * z[1]
    x = [np.array([0.4, -0.1]), np.array([0.0, 0.6])]
    phi = [np.array([0.2, 0.5]), np.array([0.7, -0.3])]
    conformal = FibredMetricField(
        2,
        lambda xx, pp: [
            [(2.0 + ad.sin(pp[0])) * ad.exp(psi(xx)), 0.0 * (xx[0] + pp[0])],
            [0.0 * (xx[0] + pp[0]), (1.0 + pp[1] ** 2) * ad.exp(psi(xx))],
        ],
        name="conformal growth",
    )
    assert max_abs(fibre_conformality_defect(conformal, x, phi)) < 1e-13

    skew = FibredMetricField(
        2,
        lambda xx, pp: [
            [ad.exp(xx[0]) + 0.0 * pp[0], 0.0 * (xx[0] + pp[0])],
            [0.0 * (xx[0] + pp[0]), 1.0 + 0.0 * (xx[0] + pp[0])],
        ],
        name="one-sided growth",
    )
    assert max_abs(fibre_conformality_defect(skew, x, phi)) > 0.1


def test_construct_solution_family_flat_fibre():
    psi = lambda z: 0.3 * z[0] + 0.2 * z[1]
    family = construct_solution_family(2, 2, psi)
    problem, B = family
    gx, gphi = condition_grid(problem.base_domain, problem.target_domain, per_dim=4, seed=9)
    assert max_abs(hp21_residual(B, problem.base_connection, gx, gphi)) < 1e-10
    assert max_abs(hp22_residual(B, problem.target_connection, gx, gphi)) < 1e-10
    res = hp3x_residuals(B, problem, gx, gphi)
    for arr in res:
        assert max_abs(arr) < 1e-10

    report = variationality_verdict(
        dynamical_form(B, problem),
        sample_count=10,
        seed=11,
        domain=problem.base_domain,
        target_domain=problem.target_domain,
    )
    assert report.passed
    assert max(report.norms.values()) < 1e-8


def test_construct_solution_family_detects_bad_input():
    psi = lambda z: 0.2 * z[0]
    sneaky = FibredMetricField(
        2,
        lambda xx, pp: [
            [1.0 + 0.5 * xx[0] ** 2 + 0.0 * pp[0], 0.0 * pp[0]],
            [0.0 * pp[0], 1.0 + 0.0 * pp[0]],
        ],
        name="reads the base point",
    )
    with pytest.raises(ConstructionError, match="first-stage"):
        construct_solution_family(2, 2, psi, fibre_metric=sneaky)


def test_family_fails_with_perturbed_target_connection():
    psi = lambda z: 0.5 * z[0]
    problem, B = construct_solution_family(1, 2, psi)
    bumped = MappingProblem(
        problem.base_domain,
        problem.target_domain,
        problem.base_connection,
        perturb_connection(problem.target_connection, (0, 0, 0), 0.1),
        base_metric=problem.base_metric,
        fibre_metric=problem.fibre_metric,
        name="bumped family",
    )
    gx, gphi = condition_grid(bumped.base_domain, bumped.target_domain, per_dim=4, seed=2)
    assert max_abs(hp22_residual(B, bumped.target_connection, gx, gphi)) >= 0.01
    report = variationality_verdict(
        dynamical_form(B, bumped),
        sample_count=10,
        seed=3,
        domain=bumped.base_domain,
        target_domain=bumped.target_domain,
    )
    assert not report.passed
    assert max(report.norms.values()) >= 0.01


def test_condition_grid_shape_and_determinism():
    base = box_chart([(-1.0, 1.0), (0.0, 2.0)])
    fibre = box_chart([(-0.5, 0.5)])
    x, phi = condition_grid(base, fibre, per_dim=3, seed=6)
    assert len(x) == 2 and len(phi) == 1
    assert all(c.shape == (27,) for c in x + phi)
    assert np.all((x[1] > 0.0) & (x[1] < 2.0))
    assert np.all((phi[0] > -0.5) & (phi[0] < 0.5))
    x2, phi2 = condition_grid(base, fibre, per_dim=3, seed=6)
    for a, b in zip(x + phi, x2 + phi2):
        np.testing.assert_array_equal(a, b)
    x3, _ = condition_grid(base, fibre, per_dim=3, seed=7)
    assert not np.array_equal(x[0], x3[0])
