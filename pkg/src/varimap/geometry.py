"""Chart-level geometry: domains, metric and connection fields, curvature.

Fields are thin wrappers around coordinate callables.  A field callable
receives a list of coordinate scalars (floats, batched arrays, or
derivative scalars) and returns nested lists or an ndarray of entries;
the wrappers normalize that to the packed array convention of
``tensorops``.  Everything here is generic over derivative scalars so
the same code path serves plain evaluation and seeding by the engines.
"""

import numpy as np

from . import autodiff as ad
from .engine import DualEngine
from .errors import DomainExit, SingularMetric
from .tensorops import build_matrix, ein, mat_det, mat_inv, pack, real_value

__all__ = [
    "ChartDomain",
    "MetricField",
    "FibredMetricField",
    "ConnectionField",
    "christoffel_from_metric",
    "levi_civita_connection",
    "metric_compatibility_residual",
    "riemann_tensor",
    "lowered_riemann_pair_symmetry_defect",
    "connection_trace",
    "inverse_metric_divergence",
    "trace_identity_residual",
]

REGULARITY_FLOOR = 1e-10

_default_engine = DualEngine()


class ChartDomain:
    """Open box chart domain with per-coordinate bounds."""

    def __init__(self, bounds, name="chart"):
        self.bounds = [(float(lo), float(hi)) for lo, hi in bounds]
        self.name = name
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"empty bound ({lo}, {hi}) in chart '{name}'")

    @property
    def dim(self):
        return len(self.bounds)

    def contains(self, x):
        ok = True
        for xi, (lo, hi) in zip(x, self.bounds):
            v = real_value(xi)
            ok = ok & (v > lo) & (v < hi)
        return ok

    def assert_inside(self, x):
        for i, (xi, (lo, hi)) in enumerate(zip(x, self.bounds)):
            v = np.asarray(real_value(xi))
            bad = (v <= lo) | (v >= hi)
            if np.any(bad):
                worst = float(v[bad].reshape(-1)[0]) if v.shape else float(v)
                raise DomainExit(
                    f"coordinate {i} leaves chart '{self.name}': "
                    f"value {worst:.6g} outside ({lo:.6g}, {hi:.6g})"
                )

    def sample(self, rng, count, margin=0.0):
        """Uniform interior points, shape (dim, count)."""
        cols = []
        for lo, hi in self.bounds:
            pad = margin * (hi - lo)
            cols.append(rng.uniform(lo + pad, hi - pad, size=count))
        return np.stack(cols)


class MetricField:
    """Symmetric nondegenerate two-tensor field on a chart."""

    def __init__(self, dim, fn, name="metric", floor=REGULARITY_FLOOR):
        self.dim = dim
        self.fn = fn
        self.name = name
        self.floor = floor

    def matrix(self, x):
        m = self.fn(x)
        return m if isinstance(m, np.ndarray) else build_matrix(m)

    def det(self, x):
        return mat_det(self.matrix(x))

    def _checked_det(self, x):
        det = self.det(x)
        vals = np.asarray(real_value(det))
        if np.any(np.abs(vals) <= self.floor):
            raise SingularMetric(
                f"metric '{self.name}' determinant magnitude at or below "
                f"regularity floor {self.floor:g}"
            )
        return det

    def inverse(self, x):
        self._checked_det(x)
        return mat_inv(self.matrix(x))

    def sqrt_abs_det(self, x):
        det = self._checked_det(x)
        if np.any(np.asarray(real_value(det)) < 0):
            det = det * np.sign(real_value(det))
        return ad.sqrt(det)


class FibredMetricField:
    """Metric on the target fibre, allowed to vary over the base chart."""

    def __init__(self, dim, fn, name="fibre metric", floor=REGULARITY_FLOOR):
        self.dim = dim
        self.fn = fn
        self.name = name
        self.floor = floor

    def _as_metric_at(self, x):
        return MetricField(
            self.dim, lambda phi: self.fn(x, phi), name=self.name, floor=self.floor
        )

    def matrix(self, x, phi):
        m = self.fn(x, phi)
        return m if isinstance(m, np.ndarray) else build_matrix(m)

    def det(self, x, phi):
        return self._as_metric_at(x).det(phi)

    def inverse(self, x, phi):
        return self._as_metric_at(x).inverse(phi)

    def sqrt_abs_det(self, x, phi):
        return self._as_metric_at(x).sqrt_abs_det(phi)


class ConnectionField:
    """Affine connection with symmetric lower indices, components [k, i, j]."""

    def __init__(self, dim, fn, name="connection"):
        self.dim = dim
        self.fn = fn
        self.name = name

    def components(self, x):
        g = self.fn(x)
        if isinstance(g, np.ndarray):
            return g
        d = self.dim
        return pack((d, d, d), lambda idx: g[idx[0]][idx[1]][idx[2]])

    def symmetry_defect(self, x):
        g = self.components(x)
        return g - np.swapaxes(g, 1, 2)


def christoffel_from_metric(metric, x, engine=None):
    """Levi-Civita coefficients [k, i, j] from metric derivatives at x."""
    engine = engine or _default_engine
    g0, dg = engine.derivs(lambda z: metric.matrix(z), x, 1)
    ginv = mat_inv(g0)
    # dg[i, j, k] = d_k g_ij; term[l, i, j] = d_i g_lj + d_j g_li - d_l g_ij
    term = np.swapaxes(dg, 1, 2) + dg - np.moveaxis(dg, 2, 0)
    return 0.5 * ein("kl...,lij...->kij...", ginv, term)


def levi_civita_connection(metric, engine=None):
    engine = engine or _default_engine
    return ConnectionField(
        metric.dim,
        lambda x: christoffel_from_metric(metric, x, engine),
        name=f"levi-civita({metric.name})",
    )


def metric_compatibility_residual(metric, connection, x, engine=None):
    """Covariant derivative of the metric, components [i, j, k] = nabla_k g_ij."""
    engine = engine or _default_engine
    g0, dg = engine.derivs(lambda z: metric.matrix(z), x, 1)
    gam = connection.components(x)
    return (
        dg
        - ein("lki...,lj...->ijk...", gam, g0)
        - ein("lkj...,il...->ijk...", gam, g0)
    )


def riemann_tensor(connection, x, engine=None):
    """Curvature of an affine connection, components [s, l, n, a].

    R^s_{l n a} = d_n G^s_{l a} - d_a G^s_{l n}
                + G^s_{b n} G^b_{l a} - G^s_{b a} G^b_{l n}
    """
    engine = engine or _default_engine
    g0, dg = engine.derivs(lambda z: connection.components(z), x, 1)
    # dg[s, l, a, n] = d_n G^s_{la}
    quad = ein("sbn...,bla...->slna...", g0, g0)
    return np.swapaxes(dg, 2, 3) - dg + quad - np.swapaxes(quad, 2, 3)


def lowered_riemann_pair_symmetry_defect(metric, connection, x, engine=None):
    """R_{mlna} - R_{naml} with the first index lowered by the metric.

    Vanishes for the Levi-Civita connection of the lowering metric;
    serves as a reference surface for multiplier curvature checks.
    """
    engine = engine or _default_engine
    riem = riemann_tensor(connection, x, engine)
    g0 = metric.matrix(x)
    low = ein("ms...,slna...->mlna...", g0, riem)
    return low - np.moveaxis(low, [0, 1, 2, 3], [2, 3, 0, 1])


def connection_trace(metric, connection, x):
    """Inverse-metric contraction g^{ij} G^k_{ij}, components [k]."""
    ginv = metric.inverse(x)
    gam = connection.components(x)
    return ein("ij...,kij...->k...", ginv, gam)


def inverse_metric_divergence(metric, x, engine=None, weighted=True):
    """Divergence route for the contracted connection.

    weighted=True : -(1 / sqrt|g|) d_l (sqrt|g| g^{kl})
    weighted=False: -d_l g^{kl}

    The weighted form equals ``connection_trace`` of the Levi-Civita
    connection identically; the unweighted form only does so where the
    metric determinant is constant along the chart.
    """
    engine = engine or _default_engine

    def density(z):
        ginv = metric.inverse(z)
        if weighted:
            w = metric.sqrt_abs_det(z)
            return pack(
                (metric.dim, metric.dim), lambda kl: ginv[kl[0], kl[1]] * w
            )
        return ginv

    d0, dd = engine.derivs(density, x, 1)
    div = ein("kll...->k...", dd)
    if not weighted:
        return -div
    w0 = metric.sqrt_abs_det(x)
    if isinstance(div, np.ndarray) and div.dtype == object:
        return pack((metric.dim,), lambda k: -div[k[0]] / w0)
    return -div / np.asarray(w0)


def trace_identity_residual(metric, x, engine=None, weighted=True):
    """Contraction route minus divergence route, components [k]."""
    engine = engine or _default_engine
    lc = levi_civita_connection(metric, engine)
    route_a = connection_trace(metric, lc, x)
    route_b = inverse_metric_divergence(metric, x, engine, weighted=weighted)
    return route_a - route_b
