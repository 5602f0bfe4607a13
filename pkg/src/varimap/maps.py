"""Mapping problems between charts and their field equations.

The central objects are residuals of the two field equations for a map
phi between an n-dimensional base chart and an m-dimensional target:

geodesic-map residual (per target component, per symmetric index pair)
    G^s_{ij} = phi^s_{ij} - GM^k_{ij}(x) phi^s_k
             + GN^s_{al}(phi) phi^a_i phi^l_j

harmonic residual (trace of G weighted by the metrics)
    tau_s = g^{ij}(x) h_{sv}(x, phi) G^v_{ij}

The harmonic residual has a second, variational route: minus the
Euler-Lagrange derivative of the energy density
L = 1/2 g^{ij} h_{al} phi^a_i phi^l_j.  The two routes agree when the
target connection is the Levi-Civita connection of the fibre metric and
the fibre metric does not vary over the base; tests pin that scope.
"""

from typing import NamedTuple

import numpy as np

from .errors import ConstructionError
from .jets import LagrangianDensity, euler_lagrange, prolong
from .tensorops import ein, pack

__all__ = [
    "MappingProblem",
    "GeodesicState",
    "ImageComparison",
    "geodesic_map_residual",
    "harmonic_residual",
    "energy_lagrangian",
    "energy_functional",
    "integrate_geodesic",
    "geodesic_image_defect",
]

class MappingProblem:
    """Charts, metrics, and connections for one mapping setup."""

    def __init__(
        self,
        base_domain,
        target_domain,
        base_connection,
        target_connection,
        base_metric=None,
        fibre_metric=None,
        name="mapping problem",
    ):
        self.base_domain = base_domain
        self.target_domain = target_domain
        self.base_connection = base_connection
        self.target_connection = target_connection
        self.base_metric = base_metric
        self.fibre_metric = fibre_metric
        self.name = name

    @property
    def n(self):
        return self.base_domain.dim

    @property
    def m(self):
        return self.target_domain.dim

    def _need_metrics(self, what):
        if self.base_metric is None or self.fibre_metric is None:
            raise ConstructionError(
                f"{what} needs both a base metric and a fibre metric; "
                f"problem '{self.name}' lacks one"
            )


def geodesic_map_residual(problem, jet):
    """G^s_{ij}, shape (m, n, n) + batch."""
    gam_m = problem.base_connection.components(jet.x)
    gam_n = problem.target_connection.components(jet.phi)
    if jet.phi2 is None:
        raise ValueError("geodesic-map residual needs second derivatives")
    return (
        jet.phi2
        - ein("kij...,sk...->sij...", gam_m, jet.phi1)
        + ein("sal...,ai...,lj...->sij...", gam_n, jet.phi1, jet.phi1)
    )


def harmonic_residual(problem, jet, route="geodesic", engine=None):
    """Metric trace of the geodesic-map residual, shape (m,) + batch.

    route="geodesic" contracts G with the inverse base metric and the
    fibre metric.  route="variational" returns minus the Euler-Lagrange
    derivative of the energy density, an independent computation that
    agrees on metric-compatible fibre connections with base-independent
    fibre metric.  The engine only matters for the variational route.
    """
    problem._need_metrics("harmonic residual")
    if route == "variational":
        return -euler_lagrange(energy_lagrangian(problem), jet, engine=engine)
    if route != "geodesic":
        raise ValueError(f"unknown route {route!r}")
    g_inv = problem.base_metric.inverse(jet.x)
    h = problem.fibre_metric.matrix(jet.x, jet.phi)
    res = geodesic_map_residual(problem, jet)
    return ein("ij...,sv...,vij...->s...", g_inv, h, res)


def energy_lagrangian(problem, weighted=False):
    """Energy density of the mapping problem as a first-order Lagrangian.

    weighted=True multiplies by sqrt|det g| so the density transforms as
    a volume integrand on the base.
    """
    problem._need_metrics("energy density")

    def fn(jet):
        g_inv = problem.base_metric.inverse(jet.x)
        h = problem.fibre_metric.matrix(jet.x, jet.phi)
        val = 0.5 * ein(
            "ij...,al...,ai...,lj...->...", g_inv, h, jet.phi1, jet.phi1
        )
        if weighted:
            val = val * problem.base_metric.sqrt_abs_det(jet.x)
        return val

    label = "weighted energy density" if weighted else "energy density"
    return LagrangianDensity(problem.m, problem.n, fn, name=label)


def energy_functional(problem, map_fn, cells, weighted=False):
    """Midpoint-rule energy of a concrete map over the base box."""
    bounds = problem.base_domain.bounds
    if isinstance(cells, int):
        cells = (cells,) * len(bounds)
    axes = []
    volume = 1.0
    for (lo, hi), c in zip(bounds, cells):
        h = (hi - lo) / c
        axes.append(lo + h * (np.arange(c) + 0.5))
        volume *= h
    grid = np.meshgrid(*axes, indexing="ij")
    pts = [g.reshape(-1) for g in grid]
    jet = prolong(map_fn, problem.m, pts, order=1)
    density = energy_lagrangian(problem, weighted=weighted)(jet)
    return float(np.sum(density) * volume)


class GeodesicState(NamedTuple):
    """RK4 trajectory record.

    path, velocity : (steps + 1, dim, batch)
    alive : (batch,) bool, True where the trajectory never left the chart
    exit_step : (batch,) int, first step index outside, -1 if none
    step : float step size
    """

    path: np.ndarray
    velocity: np.ndarray
    alive: np.ndarray
    exit_step: np.ndarray
    step: float


def _geodesic_rhs(connection, pos, vel):
    gam = connection.components(list(pos))
    return -ein("kij...,i...,j...->k...", gam, vel, vel)


def integrate_geodesic(connection, x0, v0, num_steps, step=1e-3, domain=None):
    """Fixed-step RK4 for the geodesic equation of an affine connection.

    Trajectories that would leave the chart domain freeze at their last
    interior state and are flagged instead of raising; callers decide
    whether an exit is an error.
    """
    pos = np.asarray(x0, dtype=float).copy()
    vel = np.asarray(v0, dtype=float).copy()
    if pos.ndim == 1:
        pos, vel = pos[:, None], vel[:, None]
    d, batch = pos.shape
    path = np.empty((num_steps + 1, d, batch))
    velocity = np.empty_like(path)
    path[0], velocity[0] = pos, vel
    alive = np.ones(batch, dtype=bool)
    exit_step = np.full(batch, -1, dtype=int)
    h = step
    for s in range(1, num_steps + 1):
        with np.errstate(all="ignore"):
            k1x, k1v = vel, _geodesic_rhs(connection, pos, vel)
            k2x = vel + 0.5 * h * k1v
            k2v = _geodesic_rhs(connection, pos + 0.5 * h * k1x, k2x)
            k3x = vel + 0.5 * h * k2v
            k3v = _geodesic_rhs(connection, pos + 0.5 * h * k2x, k3x)
            k4x = vel + h * k3v
            k4v = _geodesic_rhs(connection, pos + h * k3x, k4x)
            cand_pos = pos + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            cand_vel = vel + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        ok = np.isfinite(cand_pos).all(axis=0) & np.isfinite(cand_vel).all(axis=0)
        if domain is not None:
            ok = ok & domain.contains(list(cand_pos))
        leaving = alive & ~ok
        exit_step[leaving] = s
        alive = alive & ok
        move = alive
        pos = np.where(move, cand_pos, pos)
        vel = np.where(move, cand_vel, vel)
        path[s], velocity[s] = pos, vel
    return GeodesicState(path, velocity, alive, exit_step, step)


class ImageComparison(NamedTuple):
    """Gap between the mapped base geodesic and the target geodesic.

    curve_gap : (batch,) max coordinate distance over the common span
    velocity_gap : (batch,) difference between the analytic-Jacobian
        pushforward of the initial velocity and a centered finite
        difference of the image curve
    image_path, target_path : (steps + 1, m, batch)
    """

    curve_gap: np.ndarray
    velocity_gap: np.ndarray
    image_path: np.ndarray
    target_path: np.ndarray


def geodesic_image_defect(
    problem, map_fn, x0, v0, num_steps, step=1e-3
):
    """Integrate a base geodesic, map it, and compare against the target
    geodesic started from the analytic pushforward of the initial data."""
    x0_arr = np.asarray(x0, dtype=float)
    v0_arr = np.asarray(v0, dtype=float)
    if x0_arr.ndim == 1:
        x0_arr, v0_arr = x0_arr[:, None], v0_arr[:, None]
    base = integrate_geodesic(
        problem.base_connection, x0_arr, v0_arr, num_steps, step, problem.base_domain
    )
    coords = [base.path[:, i, :] for i in range(problem.n)]
    vals = map_fn(coords)
    image = pack((problem.m,), lambda s: vals[s[0]])
    image = np.moveaxis(image, 0, 1)  # (steps + 1, m, batch)

    jet1 = prolong(map_fn, problem.m, list(x0_arr), order=1)
    jac = jet1.phi1
    w0 = ein("si...,i...->s...", jac, v0_arr)
    phi0 = np.stack([np.asarray(p) for p in jet1.phi])
    target = integrate_geodesic(
        problem.target_connection, phi0, w0, num_steps, step, problem.target_domain
    )

    limit = np.minimum(
        np.where(base.exit_step < 0, num_steps + 1, base.exit_step),
        np.where(target.exit_step < 0, num_steps + 1, target.exit_step),
    )
    steps_idx = np.arange(num_steps + 1)[:, None]
    valid = steps_idx < limit[None, :]
    dist = np.linalg.norm(image - target.path, axis=1)
    dist = np.where(valid, dist, 0.0)
    curve_gap = dist.max(axis=0)

    if num_steps >= 2:
        v_fd = (image[2] - image[0]) / (2 * step)
        velocity_gap = np.linalg.norm(v_fd - target.velocity[1], axis=0)
    else:
        velocity_gap = np.full(image.shape[2], np.nan)
    return ImageComparison(curve_gap, velocity_gap, image, target.path)
