"""Concrete charts, metrics, connections, and maps used by scenarios.

Every closed form here is written against the generic scalar functions
so the same definition serves plain batched evaluation and derivative
seeding.  Coefficients follow the component conventions of
``geometry``: connections are indexed [k, i, j] with symmetric (i, j).
"""

import numpy as np

from . import autodiff as ad
from .geometry import ChartDomain, ConnectionField, FibredMetricField, MetricField

__all__ = [
    "sphere_chart",
    "open_hemisphere_chart",
    "box_chart",
    "euclidean_metric",
    "sphere_metric",
    "conformal_metric",
    "unimodular_shear_metric",
    "constant_fibre_metric",
    "conformal_fibre_metric",
    "sphere_fibre_metric",
    "scaled_fibre_metric",
    "flat_connection",
    "sphere_lc_connection",
    "conformal_lc_connection",
    "gnomonic_pullback_connection",
    "perturb_connection",
    "identity_map",
    "linear_map",
    "gnomonic_map",
    "stereographic_map",
    "great_circle_seeds",
]


# -- charts -------------------------------------------------------------


def sphere_chart(margin=0.1):
    """Colatitude/longitude chart avoiding both poles."""
    return ChartDomain([(margin, np.pi - margin), (-np.pi, np.pi)], "sphere")


def open_hemisphere_chart(margin=0.1):
    """Northern open hemisphere, the domain of the gnomonic picture."""
    return ChartDomain(
        [(margin, np.pi / 2 - margin), (-np.pi, np.pi)], "open hemisphere"
    )


def box_chart(bounds, name="box"):
    return ChartDomain(bounds, name)


# -- metrics ------------------------------------------------------------


def _zero_like(s):
    return 0.0 * s


def euclidean_metric(d):
    def fn(x):
        z = _zero_like(x[0])
        return [[z + 1.0 if i == j else z for j in range(d)] for i in range(d)]

    return MetricField(d, fn, name=f"euclidean{d}")


def sphere_metric():
    """Round metric diag(1, sin^2 theta) in the colatitude chart."""

    def fn(x):
        z = _zero_like(x[0])
        return [[1.0 + z, z], [z, ad.sin(x[0]) ** 2]]

    return MetricField(2, fn, name="round sphere")


def conformal_metric(d, scale_fn, name="conformal"):
    """exp(2 * scale_fn(x)) times the euclidean metric."""

    def fn(x):
        s = ad.exp(2.0 * scale_fn(x))
        z = _zero_like(x[0])
        return [[s if i == j else z for j in range(d)] for i in range(d)]

    return MetricField(d, fn, name=name)


def unimodular_shear_metric(a=0.2, b=0.3):
    """diag(exp(q), exp(-q)) with q = a x0 + b x1; unit determinant."""

    def fn(x):
        q = a * x[0] + b * x[1]
        z = _zero_like(x[0])
        return [[ad.exp(q), z], [z, ad.exp(-q)]]

    return MetricField(2, fn, name="unimodular shear")


# -- fibre metrics ------------------------------------------------------


def constant_fibre_metric(matrix):
    matrix = np.asarray(matrix, dtype=float)
    m = matrix.shape[0]

    def fn(x, phi):
        z = _zero_like(phi[0])
        return [[matrix[i, j] + z for j in range(m)] for i in range(m)]

    field = FibredMetricField(m, fn, name="constant fibre metric")
    # advertised so consumers can take the zero Levi-Civita shortcut
    field.constant_matrix = matrix
    return field


def conformal_fibre_metric(m, scale_fn, name="conformal fibre"):
    """exp(2 * scale_fn(phi)) times the euclidean fibre metric."""

    def fn(x, phi):
        s = ad.exp(2.0 * scale_fn(phi))
        z = _zero_like(phi[0])
        return [[s if i == j else z for j in range(m)] for i in range(m)]

    return FibredMetricField(m, fn, name=name)


def sphere_fibre_metric():
    """Round-sphere metric read as a metric on the target fibre."""

    def fn(x, phi):
        z = _zero_like(phi[0])
        return [[1.0 + z, z], [z, ad.sin(phi[0]) ** 2]]

    return FibredMetricField(2, fn, name="round fibre")


def scaled_fibre_metric(psi_fn, fibre, name=None):
    """exp(psi_fn(x)) times a base-independent fibre metric."""

    def fn(x, phi):
        w = ad.exp(psi_fn(x))
        inner = fibre.fn(x, phi)
        m = fibre.dim
        return [[inner[i][j] * w for j in range(m)] for i in range(m)]

    return FibredMetricField(
        fibre.dim, fn, name=name or f"scaled {fibre.name}"
    )


# -- connections --------------------------------------------------------


def flat_connection(d):
    def fn(x):
        z = _zero_like(x[0])
        return [[[z for _ in range(d)] for _ in range(d)] for _ in range(d)]

    return ConnectionField(d, fn, name=f"flat{d}")


def sphere_lc_connection():
    """Levi-Civita coefficients of the round metric, closed form."""

    def fn(x):
        th = x[0]
        z = _zero_like(th)
        cot = ad.cos(th) / ad.sin(th)
        msc = -ad.sin(th) * ad.cos(th)
        return [
            [[z, z], [z, msc]],
            [[z, cot], [cot, z]],
        ]

    return ConnectionField(2, fn, name="round sphere levi-civita")


def conformal_lc_connection(d, grad_fn, name="conformal levi-civita"):
    """Levi-Civita of exp(2 lam) delta from the gradient of lam.

    grad_fn(x) returns the d gradient components of the scale function.
    """

    def fn(x):
        g = grad_fn(x)
        z = _zero_like(x[0])

        def entry(k, i, j):
            val = z
            if k == i:
                val = val + g[j]
            if k == j:
                val = val + g[i]
            if i == j:
                val = val - g[k]
            return val

        return [[[entry(k, i, j) for j in range(d)] for i in range(d)] for k in range(d)]

    return ConnectionField(d, fn, name=name)


def gnomonic_pullback_connection():
    """Pullback of the flat plane connection through the gnomonic map.

    In the colatitude chart the nonzero coefficients are
    G^0_{00} = 2 tan(th), G^0_{11} = -sin(th) cos(th),
    G^1_{01} = G^1_{10} = 1 / (sin(th) cos(th)).
    Projectively equivalent to the round Levi-Civita coefficients with
    one-form d(-log cos th), so its geodesics trace great circles.
    """

    def fn(x):
        th = x[0]
        z = _zero_like(th)
        return [
            [[2.0 * ad.tan(th), z], [z, -ad.sin(th) * ad.cos(th)]],
            [[z, 1.0 / (ad.sin(th) * ad.cos(th))], [1.0 / (ad.sin(th) * ad.cos(th)), z]],
        ]

    return ConnectionField(2, fn, name="gnomonic pullback")


def perturb_connection(connection, index, delta):
    """Copy of a connection with one symmetric coefficient bumped."""
    k, i, j = index

    def fn(x):
        g = connection.components(x)
        if g.dtype == object:
            g = g.copy()
            g[k, i, j] = g[k, i, j] + delta
            if i != j:
                g[k, j, i] = g[k, j, i] + delta
            return g
        bump = np.zeros(g.shape)
        bump[k, i, j] = delta
        if i != j:
            bump[k, j, i] = delta
        return g + bump

    return ConnectionField(
        connection.dim, fn, name=f"{connection.name} bumped at {index}"
    )


# -- maps ---------------------------------------------------------------


def identity_map(d):
    return lambda x: [x[i] + 0.0 for i in range(d)]


def linear_map(matrix, offset=None):
    matrix = np.asarray(matrix, dtype=float)
    m, n = matrix.shape
    offset = np.zeros(m) if offset is None else np.asarray(offset, dtype=float)

    def fn(x):
        return [
            sum(matrix[s, i] * x[i] for i in range(n)) + offset[s]
            for s in range(m)
        ]

    return fn


def gnomonic_map():
    """Central projection of the open hemisphere onto the tangent plane."""

    def fn(x):
        r = ad.tan(x[0])
        return [r * ad.cos(x[1]), r * ad.sin(x[1])]

    return fn


def stereographic_map():
    """Projection from the far pole, radial profile 2 tan(theta / 2).

    Conformal, so it preserves angles but not geodesics: great circles
    land on plane circles rather than lines, which makes it the standard
    negative control for the central projection's straight-line property.
    """

    def fn(x):
        r = 2.0 * ad.tan(0.5 * x[0])
        return [r * ad.cos(x[1]), r * ad.sin(x[1])]

    return fn


def great_circle_seeds(rng, count, chart, speed=1.0):
    """Initial points and unit-speed velocities inside a sphere chart."""
    pts = chart.sample(rng, count, margin=0.25)
    th = pts[0]
    alpha = rng.uniform(0.0, 2 * np.pi, size=count)
    # unit speed with respect to diag(1, sin^2 th)
    v = np.stack([speed * np.cos(alpha), speed * np.sin(alpha) / np.sin(th)])
    return pts, v
