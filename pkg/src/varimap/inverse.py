"""Multiplier conditions for variational geodesic-mapping equations.

A multiplier B^{ij}_{mu nu}(x, phi) turns the geodesic-map residual
G^sigma_{ij} into the source form E_nu = B^{ij}_{sigma nu} G^sigma_{ij}.
Whether that form is variational reduces to pointwise conditions on B
and the two connections, organized here in two stages:

* hp21: the x-divergence of B must cancel its contraction with the base
  connection;
* hp22: B must be parallel for the target connection in the fibre
  directions (for a product multiplier this is metricity of the fibre
  part);
* hp31 .. hp34: second-stage conditions mixing fibre derivatives of B
  with the target connection and its first derivatives.

Two of the second-stage conditions are consequences of the others for
arbitrary fields, not only for solutions:

    hp34[mu, nu]          = -d_l hp21[l, mu, nu]            (d_l along x)
    hp33[k, sig, mu, nu]  = -GammaM^k_{ij} hp31[i, j, sig, mu, nu]
                            + 2 GammaN^lam_{mu sig} hp21[k, lam, nu]
                            - 2 d_sig hp21[k, mu, nu]       (d_sig along phi)

``dependency_checks`` verifies both numerically by differencing the
assembled hp21 values, an evaluation route independent of the direct
transcriptions.

Index conventions: base indices i, j, l, p, k run over the n base
coordinates, fibre indices sigma, mu, nu, lambda, alpha over the m
target components.  Multiplier components are stored [i, j, mu, nu]
with the upper pair first; residual layouts are stated per function.
Evaluation points are lists of coordinate scalars with trailing batch
axes, as everywhere else in the package.
"""

from typing import NamedTuple

import numpy as np

from .catalog import (
    box_chart,
    constant_fibre_metric,
    euclidean_metric,
    flat_connection,
    scaled_fibre_metric,
)
from .engine import DualEngine
from .errors import ConstructionError
from .geometry import (
    REGULARITY_FLOOR,
    ConnectionField,
    MetricField,
    christoffel_from_metric,
    levi_civita_connection,
)
from .maps import MappingProblem, geodesic_map_residual
from .jets import SourceForm
from .tensorops import ein, max_abs, pack, real_value

__all__ = [
    "MultiplierField",
    "STensorField",
    "SecondStageResiduals",
    "DependencyReport",
    "TraceDefect",
    "SolutionFamily",
    "dynamical_form",
    "hp21_residual",
    "hp22_residual",
    "hp3x_residuals",
    "dependency_checks",
    "s_tensor_trace_defect",
    "fibre_conformality_defect",
    "family_s_tensor",
    "construct_solution_family",
    "condition_grid",
]

_default_engine = DualEngine()


class MultiplierField:
    """Multiplier B^{ij}_{mu nu}(x, phi), symmetric in both index pairs.

    ``structure`` records how the field was built: "product" fields come
    from a base metric g and a fibred metric h as g^{ij}(x) h_{mu nu}(x, phi)
    and inherit both symmetries and regularity from their factors, so
    only the general constructor runs the sampled validation.
    """

    def __init__(
        self,
        base_dim,
        fibre_dim,
        fn,
        structure="general",
        g=None,
        h=None,
        name="multiplier",
        floor=REGULARITY_FLOOR,
    ):
        self.base_dim = base_dim
        self.fibre_dim = fibre_dim
        self.fn = fn
        self.structure = structure
        self.g = g
        self.h = h
        self.name = name
        self.floor = floor

    @classmethod
    def product(cls, g, h, name=None):
        def fn(x, phi):
            return ein("ij...,mv...->ijmv...", g.inverse(x), h.matrix(x, phi))

        return cls(
            g.dim,
            h.dim,
            fn,
            structure="product",
            g=g,
            h=h,
            name=name or f"{g.name} (x) {h.name}",
        )

    @classmethod
    def general(cls, base_dim, fibre_dim, fn, check_at=None, name="multiplier",
                floor=REGULARITY_FLOOR):
        """Wrap an arbitrary component rule, validating at sample points.

        ``check_at`` is an (x, phi) pair of coordinate lists; when omitted
        a fixed seeded handful of standard-normal points is used.  Rules
        defined only on restricted charts must pass their own points.
        """
        field = cls(base_dim, fibre_dim, fn, structure="general", name=name,
                    floor=floor)
        if check_at is None:
            rng = np.random.default_rng(410)
            check_at = (
                list(rng.normal(0.0, 0.7, size=(base_dim, 4))),
                list(rng.normal(0.0, 0.7, size=(fibre_dim, 4))),
            )
        field.validate(*check_at)
        return field

    def components(self, x, phi):
        out = self.fn(x, phi)
        if isinstance(out, np.ndarray):
            return out
        n, m = self.base_dim, self.fibre_dim
        return pack(
            (n, n, m, m), lambda idx: out[idx[0]][idx[1]][idx[2]][idx[3]]
        )

    def validate(self, x, phi):
        """Check both symmetries and paired-index regularity numerically."""
        comp = real_value(self.components(x, phi))
        scale = max(1.0, float(np.max(np.abs(comp))))
        if np.max(np.abs(comp - np.swapaxes(comp, 0, 1))) > 1e-10 * scale:
            raise ConstructionError(
                f"multiplier '{self.name}' is not symmetric in the upper pair"
            )
        if np.max(np.abs(comp - np.swapaxes(comp, 2, 3))) > 1e-10 * scale:
            raise ConstructionError(
                f"multiplier '{self.name}' is not symmetric in the lower pair"
            )
        n, m = self.base_dim, self.fibre_dim
        perm = [0, 2, 1, 3] + list(range(4, comp.ndim))
        paired = comp.transpose(perm).reshape((n * m, n * m) + comp.shape[4:])
        paired = np.moveaxis(paired, [0, 1], [-2, -1])
        dets = np.linalg.det(paired)
        worst = float(np.min(np.abs(dets)))
        if worst < self.floor:
            raise ConstructionError(
                f"multiplier '{self.name}' is singular as a paired-index "
                f"matrix: |det| = {worst:.3e} below floor {self.floor:g}"
            )


class STensorField(ConnectionField):
    """Difference of two affine connections over the base chart.

    Shares the component layout [l, i, j] and the lower-pair symmetry of
    a connection but transforms as a tensor, being a difference.
    """

    def __init__(self, dim, fn, name="connection offset"):
        super().__init__(dim, fn, name=name)


def dynamical_form(B, problem, name=None):
    """Source form E_nu = B^{ij}_{sigma nu} G^sigma_{ij} of a problem.

    Affine in the second-order jet entries by construction, since the
    geodesic-map residual is and B reads only (x, phi).
    """
    if (B.base_dim, B.fibre_dim) != (problem.n, problem.m):
        raise ConstructionError(
            f"multiplier is ({B.base_dim}, {B.fibre_dim}) but problem "
            f"'{problem.name}' is ({problem.n}, {problem.m})"
        )

    def fn(jet):
        comp = B.components(jet.x, jet.phi)
        res = geodesic_map_residual(problem, jet)
        return ein("ijsv...,sij...->v...", comp, res)

    return SourceForm(
        problem.m,
        problem.n,
        fn,
        name=name or f"dynamical form of {problem.name}",
    )


def _b_derivs(B, x, phi, order, engine):
    n = B.base_dim
    z = list(x) + list(phi)
    wrapped = lambda w: B.components(w[:n], w[n:])
    return engine.derivs(wrapped, z, order)


def hp21_residual(B, gamma_m, x, phi, engine=None):
    """Base-divergence condition residual, components [l, mu, nu].

    Returns dB^{lp}_{mu nu}/dx^p + B^{ij}_{mu nu} GammaM^l_{ij}; zero
    exactly when the multiplier divergence cancels the connection
    contraction at (x, phi).
    """
    engine = engine or _default_engine
    n = B.base_dim
    B0, dB = _b_derivs(B, x, phi, 1, engine)
    dBx = np.take(dB, np.arange(n), axis=4)
    div = ein("lpuvp...->luv...", dBx)
    return div + ein("ijuv...,lij...->luv...", B0, gamma_m.components(x))


def hp22_residual(B, gamma_n, x, phi, engine=None):
    """Fibre-parallelism condition residual, components [i, j, mu, nu, lam].

    Returns dB^{ij}_{mu nu}/dphi^lam - GammaN^sig_{mu lam} B^{ij}_{sig nu}
    - GammaN^sig_{nu lam} B^{ij}_{mu sig}.  For a product multiplier this
    is the inverse base metric times the fibre metricity defect.
    """
    engine = engine or _default_engine
    n, m = B.base_dim, B.fibre_dim
    B0, dB = _b_derivs(B, x, phi, 1, engine)
    dBp = np.take(dB, np.arange(n, n + m), axis=4)
    gam = gamma_n.components(phi)
    return (
        dBp
        - ein("aml...,ijav...->ijmvl...", gam, B0)
        - ein("avl...,ijma...->ijmvl...", gam, B0)
    )


class SecondStageResiduals(NamedTuple):
    """Left-hand sides of the four second-stage conditions.

    hp31 : [i, j, sig, mu, nu]
    hp32 : [i, j, mu, nu, alpha, lam]
    hp33 : [k, sig, mu, nu]
    hp34 : [mu, nu]
    """

    hp31: np.ndarray
    hp32: np.ndarray
    hp33: np.ndarray
    hp34: np.ndarray


def hp3x_residuals(B, problem, x, phi, corrected_hp31=False, engine=None):
    """Second-stage condition residuals at (x, phi).

    Each condition is transcribed term by term; all greek-index partials
    are fibre derivatives, latin ones run along the base.  hp31 as
    stated contracts both connection terms with B^{ij}_{alpha nu}; the
    ``corrected_hp31`` flag swaps the second term to the
    B^{ij}_{alpha mu} GammaN^alpha_{sig nu} pairing so reports can show
    both readings side by side.
    """
    engine = engine or _default_engine
    n, m = B.base_dim, B.fibre_dim
    B0, dB, ddB = _b_derivs(B, x, phi, 2, engine)
    xs = np.arange(n)
    ps = np.arange(n, n + m)
    dBx = np.take(dB, xs, axis=4)
    dBp = np.take(dB, ps, axis=4)
    ddB_xx = np.take(np.take(ddB, xs, axis=4), xs, axis=5)
    ddB_xp = np.take(np.take(ddB, xs, axis=4), ps, axis=5)
    ddB_pp = np.take(np.take(ddB, ps, axis=4), ps, axis=5)

    gamM = problem.base_connection.components(x)
    _, dgamM = engine.derivs(
        lambda z: problem.base_connection.components(z), list(x), 1
    )
    gamN = problem.target_connection.components(phi)
    _, dgamN = engine.derivs(
        lambda q: problem.target_connection.components(q), list(phi), 1
    )

    # hp31: d_nu B_{sig mu} - d_mu B_{sig nu} - d_sig B_{mu nu}
    #       + B_{alpha nu} Gam^alpha_{mu sig} + (second connection term)
    d_nu = dBp                                      # [i,j,s,m,v] as written
    d_mu = dBp.transpose([0, 1, 2, 4, 3] + list(range(5, dBp.ndim)))
    d_sig = dBp.transpose([0, 1, 4, 2, 3] + list(range(5, dBp.ndim)))
    gam_first = ein("ijav...,ams...->ijsmv...", B0, gamN)
    if corrected_hp31:
        gam_second = ein("ijam...,asv...->ijsmv...", B0, gamN)
    else:
        gam_second = ein("ijav...,asm...->ijsmv...", B0, gamN)
    hp31 = d_nu - d_mu - d_sig + gam_first + gam_second

    # hp32: eight first-order terms plus the second fibre derivative
    hp32 = (
        ein("ijsmv...,sal...->ijmval...", dBp, gamN)
        + ein("ijsm...,salv...->ijmval...", B0, dgamN)
        - ein("ijsvm...,sal...->ijmval...", dBp, gamN)
        - ein("ijsv...,salm...->ijmval...", B0, dgamN)
        + ein("ijsva...,sml...->ijmval...", dBp, gamN)
        + ein("ijsv...,smla...->ijmval...", B0, dgamN)
        + ein("ijsvl...,sam...->ijmval...", dBp, gamN)
        + ein("ijsv...,saml...->ijmval...", B0, dgamN)
        - ddB_pp.transpose([0, 1, 2, 3, 5, 4] + list(range(6, ddB_pp.ndim)))
    )

    # hp33: GammaM contraction of the cyclic fibre-derivative combination,
    # plus the divergence and mixed-derivative terms
    inner = (
        dBp.transpose([0, 1, 2, 4, 3] + list(range(5, dBp.ndim)))
        - dBp
        - dBp.transpose([0, 1, 4, 2, 3] + list(range(5, dBp.ndim)))
    )
    divB = ein("lkavl...->kav...", dBx)
    hp33 = (
        ein("kij...,ijsmv...->ksmv...", gamM, inner)
        + 2.0 * ein("kav...,ams...->ksmv...", divB, gamN)
        - 2.0 * ein("kpmvps...->ksmv...", ddB_xp)
    )

    # hp34: minus the full x-divergence of the hp21 combination
    hp34 = -(
        ein("ijmvl...,lij...->mv...", dBx, gamM)
        + ein("ijmv...,lijl...->mv...", B0, dgamM)
        + ein("lpmvlp...->mv...", ddB_xx)
    )
    return SecondStageResiduals(hp31, hp32, hp33, hp34)


class DependencyReport(NamedTuple):
    passed: bool
    divergence_defect: float
    combination_defect: float
    worst_divergence_sample: int
    worst_combination_sample: int
    tol_divergence: float
    tol_combination: float


def _defect_and_worst(arr, index_axes):
    a = np.abs(np.asarray(real_value(arr), dtype=float))
    per = a.max(axis=tuple(range(index_axes))) if index_axes else a
    if np.ndim(per) == 0:
        return float(per), 0
    flat = per.reshape(-1)
    return float(flat.max()), int(np.argmax(flat))


def _five_point(sample, h):
    """Fourth-order central first derivative of sample(offset)."""
    return (
        -sample(2.0 * h) + 8.0 * sample(h) - 8.0 * sample(-h) + sample(-2.0 * h)
    ) / (12.0 * h)


def dependency_checks(
    B,
    problem,
    x,
    phi,
    engine=None,
    step_x=1e-3,
    step_phi=2e-3,
    tol_divergence=1e-5,
    tol_combination=1e-6,
):
    """Verify the two structural relations among the conditions.

    (a) hp34 plus the x-divergence of hp21 vanishes; the divergence is
        taken by differencing the assembled hp21 values, an evaluation
        route independent of the hp34 transcription.
    (b) hp33 equals the connection combination of hp31 and hp21 stated
        in the module docstring, with the fibre derivative of hp21 again
        taken by differencing.

    Both relations hold for arbitrary fields, so they test the
    transcriptions and the derivative stack rather than any solution
    property.  The outer derivatives use five-point stencils with wide
    steps: fourth-order truncation keeps curved-chart error down while
    the wide step keeps amplified inner noise below the tolerances even
    when hp21 itself is evaluated with finite differences.  Defects are
    reported with the worst sample index.
    """
    engine = engine or _default_engine
    n = B.base_dim
    gamma_m = problem.base_connection
    gamma_n = problem.target_connection
    res3 = hp3x_residuals(B, problem, x, phi, engine=engine)

    def shifted_x(l, off):
        xs = [xi + (off if i == l else 0.0) for i, xi in enumerate(x)]
        return hp21_residual(B, gamma_m, xs, phi, engine)[l]

    div = None
    for l in range(n):
        term = _five_point(lambda off, l=l: shifted_x(l, off), step_x)
        div = term if div is None else div + term
    defect_a, worst_a = _defect_and_worst(res3.hp34 + div, 2)

    def shifted_phi(s, off):
        ps = [pi + (off if v == s else 0.0) for v, pi in enumerate(phi)]
        return hp21_residual(B, gamma_m, x, ps, engine)

    hp21_0 = hp21_residual(B, gamma_m, x, phi, engine)
    dphi = np.stack(
        [
            _five_point(lambda off, s=s: shifted_phi(s, off), step_phi)
            for s in range(B.fibre_dim)
        ],
        axis=1,
    )  # [k, sig, mu, nu]
    gamM = gamma_m.components(x)
    gamN = gamma_n.components(phi)
    comb = (
        -ein("kij...,ijsmv...->ksmv...", gamM, res3.hp31)
        + 2.0 * ein("ams...,kav...->ksmv...", gamN, hp21_0)
        - 2.0 * dphi
    )
    defect_b, worst_b = _defect_and_worst(res3.hp33 - comb, 4)

    return DependencyReport(
        passed=bool(defect_a < tol_divergence and defect_b < tol_combination),
        divergence_defect=defect_a,
        combination_defect=defect_b,
        worst_divergence_sample=worst_a,
        worst_combination_sample=worst_b,
        tol_divergence=tol_divergence,
        tol_combination=tol_combination,
    )


class TraceDefect(NamedTuple):
    """Both readings of the trace relation for the connection offset.

    ``normalized`` carries the 1/fibre_dim factor on the metric-trace
    side and vanishes on constructed solution families; ``raw`` omits
    the factor and measures what is left without it.
    """

    normalized: np.ndarray
    raw: np.ndarray


def s_tensor_trace_defect(g, h, gamma_m, x, phi, engine=None):
    """Trace relation defects for S = GammaM - LeviCivita(g), shape [l].

    Each variant returns g^{ij} S^l_{ij} + c h^{mu nu} h_{mu nu, p} g^{lp}
    with c = 1/fibre_dim (normalized) or c = 1 (raw); the derivative of
    h runs along the base coordinates.
    """
    engine = engine or _default_engine
    gamma_bar = christoffel_from_metric(g, x, engine)
    s_comp = gamma_m.components(x) - gamma_bar
    ginv = g.inverse(x)
    lhs = ein("ij...,lij...->l...", ginv, s_comp)
    hinv = h.inverse(x, phi)
    _, dh = engine.derivs(lambda z: h.matrix(z, phi), list(x), 1)
    tr = ein("mv...,mvp...->p...", hinv, dh)
    rhs = ein("p...,lp...->l...", tr, ginv)
    return TraceDefect(lhs + rhs / h.dim, lhs + rhs)


def fibre_conformality_defect(h, x, phi, engine=None):
    """Deviation of h_{mu nu, p} from a multiple of h_{mu nu}, [mu, nu, p].

    The multiple is the Frobenius projection coefficient, so the result
    vanishes exactly when every base derivative of the fibre metric is
    pointwise proportional to the metric itself.
    """
    engine = engine or _default_engine
    h0 = h.matrix(x, phi)
    _, dh = engine.derivs(lambda z: h.matrix(z, phi), list(x), 1)
    num = ein("mv...,mvp...->p...", h0, dh)
    den = ein("mv...,mv...->...", h0, h0)
    coef = num / den
    return dh - ein("mv...,p...->mvp...", h0, coef)


class SolutionFamily(NamedTuple):
    problem: MappingProblem
    multiplier: MultiplierField


def family_s_tensor(base_dim, psi, engine=None):
    """Connection offset -(1/base_dim) psi_{,l} delta_{ij} of a family."""
    engine = engine or _default_engine

    def fn(x):
        _, dpsi = engine.derivs(lambda z: psi(z), list(x), 1)
        zero = 0.0 * dpsi[0]

        def entry(kij):
            k, i, j = kij
            return -dpsi[k] / base_dim if i == j else zero

        return pack((base_dim, base_dim, base_dim), entry)

    return STensorField(base_dim, fn, name="family connection offset")


def construct_solution_family(
    base_dim,
    fibre_dim,
    psi,
    fibre_metric=None,
    base_domain=None,
    target_domain=None,
    name=None,
    check=True,
    check_per_dim=5,
    check_seed=0,
    engine=None,
):
    """Build a mapping problem and multiplier satisfying both first-stage
    conditions by construction.

    The base carries the euclidean metric and the non-metric connection
    GammaM = S with S^l_{ij} = -(1/base_dim) psi_{,l} delta_{ij}; the
    fibre metric is exp(psi(x)) times the given phi-dependent metric
    (euclidean when omitted), whose Levi-Civita connection serves as the
    target connection.  The conformal factor is constant along the fibre,
    so that connection is metric for the scaled h as well.

    ``psi`` must accept derivative scalars and must not read the fibre
    point; ``fibre_metric`` must not read the base point.  The first-stage
    residuals are checked on a seeded grid and a failure raises
    ConstructionError, which indicates a defect in the derivative stack
    rather than in the inputs.
    """
    engine = engine or _default_engine
    g = euclidean_metric(base_dim)
    hhat = fibre_metric or constant_fibre_metric(np.eye(fibre_dim))
    h = scaled_fibre_metric(psi, hhat)
    if getattr(hhat, "constant_matrix", None) is not None:
        # Levi-Civita coefficients of a constant metric vanish; skip the
        # derivative sweep that computing them numerically would cost on
        # every downstream evaluation
        gamma_n = flat_connection(fibre_dim)
    else:
        fixed_x = [0.0] * base_dim
        gamma_n = levi_civita_connection(
            MetricField(
                fibre_dim,
                lambda q: hhat.matrix(fixed_x, q),
                name=f"{hhat.name} at fixed base point",
            ),
            engine,
        )
    s_field = family_s_tensor(base_dim, psi, engine)
    gamma_m = ConnectionField(
        base_dim, s_field.components, name="family base connection"
    )
    base_domain = base_domain or box_chart(
        [(-1.0, 1.0)] * base_dim, "family base"
    )
    target_domain = target_domain or box_chart(
        [(-1.0, 1.0)] * fibre_dim, "family fibre"
    )
    problem = MappingProblem(
        base_domain,
        target_domain,
        gamma_m,
        gamma_n,
        base_metric=g,
        fibre_metric=h,
        name=name or f"solution family ({base_dim}, {fibre_dim})",
    )
    multiplier = MultiplierField.product(g, h)
    if check:
        gx, gphi = condition_grid(
            base_domain, target_domain, per_dim=check_per_dim, seed=check_seed
        )
        r21 = max_abs(hp21_residual(multiplier, gamma_m, gx, gphi, engine))
        r22 = max_abs(hp22_residual(multiplier, gamma_n, gx, gphi, engine))
        if max(r21, r22) >= 1e-8:
            raise ConstructionError(
                f"solution family fails its own first-stage conditions "
                f"(hp21 {r21:.3e}, hp22 {r22:.3e}); the construction "
                f"guarantees both, so a derivative or input defect is present"
            )
    return SolutionFamily(problem, multiplier)


def condition_grid(base_domain, target_domain, per_dim=5, seed=0, margin=0.05):
    """Seeded tensor-product sample grid over base and fibre coordinates.

    Draws per_dim interior values per coordinate and forms the full
    product, returning (x, phi) coordinate lists with one flat batch
    axis of length per_dim ** (base_dim + fibre_dim).
    """
    rng = np.random.default_rng(seed)
    axes = []
    for lo, hi in base_domain.bounds + target_domain.bounds:
        pad = margin * (hi - lo)
        axes.append(np.sort(rng.uniform(lo + pad, hi - pad, per_dim)))
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = [grid.reshape(-1) for grid in mesh]
    n = base_domain.dim
    return flat[:n], flat[n:]
