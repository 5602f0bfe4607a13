"""Numerical variationality conditions for second-order source forms.

For a source form E_s(x, phi, phi1, phi2) with values indexed by s, the
three condition residuals evaluated at a jet are

    H1[v, u, l, p] = dE_v/dphi^u_{lp} - dE_u/dphi^v_{lp}
    H2[v, u, l]    = dE_v/dphi^u_l + dE_u/dphi^v_l
                     - 2 d_p(dE_u/dphi^v_{lp})
    H3[v, u]       = dE_v/dphi^u - dE_u/dphi^v + d_l(dE_u/dphi^v_l)
                     - d_l d_p(dE_u/dphi^v_{lp})

with d_p the total derivative along the base and repeated l, p summed.
Partials with respect to phi2 entries follow the symmetrized convention
of the jets module.

The double total derivative in H3 would read fourth-order jet data for a
general second-order form.  Every form treated here is affine in the
phi2 entries with coefficients free of them, which caps the required
data at order 3; evaluation asserts that restriction by a perturbation
test and rejects forms outside it.

All residuals are assembled from one mixed-derivative inventory of the
form per call.  Forms that remember their generating first-order
density (``SourceForm.lagrangian``) get the inventory assembled from
fourth-order derivatives of the density instead, which avoids nesting
derivative sweeps through the variational derivative.
"""

from typing import NamedTuple

import numpy as np

from .engine import DualEngine, MixedInventory
from .errors import NonAffineSourceForm
from .jets import JetPoint, JetSlots, canonical_pairs, canonical_triples, sample_jets
from .tensorops import max_abs

__all__ = [
    "HelmholtzResidual",
    "VerdictReport",
    "DEFAULT_TOLERANCES",
    "assert_affine_source_form",
    "helmholtz_residuals",
    "variationality_verdict",
]

_default_engine = DualEngine()

DEFAULT_TOLERANCES = {"dual": 1e-6, "fd": 1e-3, "both": 1e-6}


class HelmholtzResidual(NamedTuple):
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    norms: dict
    sample: JetPoint


class VerdictReport(NamedTuple):
    passed: bool
    tolerance: float
    sample_count: int
    norms: dict
    per_sample: np.ndarray
    worst_condition: str
    worst_sample: int
    residual: HelmholtzResidual


class _SlotIds:
    """Index bookkeeping for the flattened order-2 slot layout."""

    def __init__(self, m, n):
        self.m, self.n = m, n
        self.pairs = canonical_pairs(n)
        npairs = len(self.pairs)
        self.npairs = npairs
        self.k = n + m + m * n + m * npairs
        self.nh = m * npairs
        self.x = np.arange(n)
        self.phi = n + np.arange(m)
        self.phi1 = (n + m + np.arange(m * n)).reshape(m, n)
        pidx = np.zeros((n, n), dtype=int)
        for c, (i, j) in enumerate(self.pairs):
            pidx[i, j] = pidx[j, i] = c
        self.pidx = pidx
        # flat ids within a phi2-sized block, arranged (s, i, j)
        self.high = np.arange(m)[:, None, None] * npairs + pidx
        self.phi2 = n + m + m * n + self.high
        self.w = np.where(np.eye(n, dtype=bool), 1.0, 0.5)


def _unpack_pairs(arr, axis, ids, idmap=None):
    """Expand one canonical-pair slot axis into reported (s, l, p) axes.

    idmap selects the slot ids to gather: the relative layout for an
    nh-length axis (default) or ids.phi2 for a full slot axis.
    """
    out = np.take(arr, ids.high if idmap is None else idmap, axis=axis)
    shape = (1,) * axis + (1, ids.n, ids.n) + (1,) * (out.ndim - axis - 3)
    return out * ids.w.reshape(shape)


def _td_contract(arr, lead, jet, ids):
    """Contract a full slot axis (at position lead) into d_q coefficients."""
    L = "ABCD"[:lead]
    out = np.take(arr, ids.x, axis=lead)
    out = out + np.einsum(
        f"{L}s...,sq...->{L}q...", np.take(arr, ids.phi, axis=lead), jet.phi1
    )
    out = out + np.einsum(
        f"{L}si...,sqi...->{L}q...", np.take(arr, ids.phi1, axis=lead), jet.phi2
    )
    p2 = _unpack_pairs(arr, lead, ids, idmap=ids.phi2)
    # the gather inserted (s, i, j) axes at the slot position; phi3
    # supplies the matching chain coefficients
    out = out + np.einsum(f"{L}sij...,sqij...->{L}q...", p2, jet.phi3)
    return out


def _swap01(arr):
    return np.swapaxes(arr, 0, 1)


def assert_affine_source_form(E, jet, rtol=1e-8):
    """Check E is affine in phi2 and independent of phi3.

    Raises NonAffineSourceForm otherwise.  The test perturbs along two
    random symmetric directions with a fixed internal seed, so it is
    deterministic and adds only a handful of form evaluations.
    """
    rng = np.random.default_rng(716259)
    m, n = E.m, E.n
    tail = (1,) * len(jet.batch_shape)
    e0 = E(jet)
    scale = max(1.0, float(np.max(np.abs(e0))) if e0.size else 1.0)
    for _ in range(2):
        delta = np.zeros((m, n, n))
        for i, j in canonical_pairs(n):
            v = rng.normal(size=m)
            delta[:, i, j] = delta[:, j, i] = v
        step = delta.reshape(delta.shape + tail)
        e1 = E(JetPoint(jet.x, jet.phi, jet.phi1, jet.phi2 + step, jet.phi3, validate=False))
        e2 = E(JetPoint(jet.x, jet.phi, jet.phi1, jet.phi2 + 2 * step, jet.phi3, validate=False))
        bend = np.max(np.abs(e2 - 2 * e1 + e0))
        local = max(scale, float(np.max(np.abs(e1))), float(np.max(np.abs(e2))))
        if bend > rtol * local:
            raise NonAffineSourceForm(
                f"{E.name}: quadratic dependence on second-order entries "
                f"(defect {bend:.3e})"
            )
    if jet.phi3 is not None:
        delta3 = np.zeros((m, n, n, n))
        for i, j, k in canonical_triples(n):
            v = rng.normal(size=m)
            for p in {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}:
                delta3[:, p[0], p[1], p[2]] = v
        bumped = JetPoint(
            jet.x, jet.phi, jet.phi1, jet.phi2,
            jet.phi3 + delta3.reshape(delta3.shape + tail), validate=False,
        )
        drift = np.max(np.abs(E(bumped) - e0))
        if drift > rtol * scale:
            raise NonAffineSourceForm(
                f"{E.name}: value reads third-order entries (drift {drift:.3e})"
            )


def _generic_inventory(E, jet, engine):
    slots = JetSlots(E.m, E.n, order=2)
    vals = slots.values_from_jet(jet)
    low = np.eye(slots.count)
    high = slots.seed_rows([k for k in slots.names if k[0] == "phi2"])
    wrapped = lambda z: E(slots.jet_from_values(z, jet))
    return engine.mixed_inventory(wrapped, vals, low, high)


def _take(arr, axis, ids):
    return np.take(arr, ids, axis=axis)


def _lagrangian_inventory(L, jet, engine):
    """Inventory of the variational derivative of a first-order density.

    The variational derivative E_s = dL/dphi^s - d_k dL/dphi^s_k is
    affine in phi2 with coefficient -d2L/dphi1 dphi1, so every entry of
    the inventory is a contraction of derivatives of L of order <= 4
    with jet coordinates.  One fourth-order sweep over the first-order
    slots supplies them all.
    """
    m, n = L.m, L.n
    slots1 = JetSlots(m, n, order=1)
    vals = slots1.values_from_jet(jet)
    wrapped = lambda z: L(slots1.jet_from_values(z, jet))
    _, P1, P2, P3, P4 = engine.derivs(wrapped, vals, 4)
    batch = jet.batch_shape
    ids = _SlotIds(m, n)
    kL = slots1.count
    xs = np.arange(n)
    ps = n + np.arange(m)
    qs = (n + m + np.arange(m * n)).reshape(m, n)

    P2qq = _take(_take(P2, 0, qs), 2, qs)
    P3qq = _take(_take(P3, 0, qs), 2, qs)
    P4qq = _take(_take(P4, 0, qs), 2, qs)
    P2qx = _take(_take(P2, 0, qs), 2, xs)
    P2qp = _take(_take(P2, 0, qs), 2, ps)
    P3qx = _take(_take(P3, 0, qs), 2, xs)
    P3qp = _take(_take(P3, 0, qs), 2, ps)
    P4qx = _take(_take(P4, 0, qs), 2, xs)
    P4qp = _take(_take(P4, 0, qs), 2, ps)

    def pair_pack(full):
        # full[s, tau, c, d, extra..., batch] -> canonical high axis
        cols = []
        for tau in range(m):
            for c, d in ids.pairs:
                wgt = 0.5 if c == d else 1.0
                cols.append(wgt * full[:, tau, c, d])
        return np.stack(cols, axis=1)

    def a_swap(arr, src0, src1):
        # arr[s, e1, tau, e2, ...] -> out[s, tau, c, d, ...] where the
        # (c, d) axes come from the old axes (src0, src1)
        perm = [0, 2, src0, src1] + list(range(4, arr.ndim))
        return arr.transpose(perm)

    Mfull = -(a_swap(P2qq, 1, 3) + a_swap(P2qq, 3, 1))
    DMfull = -(a_swap(P3qq, 1, 3) + a_swap(P3qq, 3, 1))
    DDMfull = -(a_swap(P4qq, 1, 3) + a_swap(P4qq, 3, 1))
    M = pair_pack(Mfull)
    DM = pair_pack(DMfull)
    DDM = pair_pack(DDMfull)

    phi1 = jet.phi1
    cvec = (
        _take(P1, 0, ps)
        - np.einsum("skk...->s...", P2qx)
        - np.einsum("skt...,tk...->s...", P2qp, phi1)
    )
    corr1 = np.zeros((m, kL) + batch)
    for rho in range(m):
        for e in range(n):
            corr1[:, qs[rho, e]] = P2qp[:, e, rho]
    Dc = (
        _take(P2, 0, ps)
        - np.einsum("skkt...->st...", P3qx)
        - np.einsum("sktu...,tk...->su...", P3qp, phi1)
        - corr1
    )
    corr2 = np.zeros((m, kL, kL) + batch)
    for rho in range(m):
        for e in range(n):
            corr2[:, qs[rho, e], :] = P3qp[:, e, rho]
    DDc = (
        _take(P3, 0, ps)
        - np.einsum("skktu...->stu...", P4qx)
        - np.einsum("sktuv...,tk...->suv...", P4qp, phi1)
        - corr2
        - np.swapaxes(corr2, 1, 2)
    )

    u2c = np.stack(
        [jet.phi2[tau, c, d] for tau in range(m) for (c, d) in ids.pairs]
    )
    k, nh = ids.k, ids.nh
    f0 = cvec + np.einsum("mh...,h...->m...", M, u2c)
    g_low = np.concatenate(
        [Dc + np.einsum("mhs...,h...->ms...", DM, u2c), M], axis=1
    )
    h_ll = np.zeros((m, k, k) + batch)
    h_ll[:, :kL, :kL] = DDc + np.einsum("mhst...,h...->mst...", DDM, u2c)
    h_ll[:, :kL, kL:] = np.moveaxis(DM, 1, 2)
    h_ll[:, kL:, :kL] = DM
    h_hl = np.zeros((m, nh, k) + batch)
    h_hl[:, :, :kL] = DM
    t_hll = np.zeros((m, nh, k, k) + batch)
    t_hll[:, :, :kL, :kL] = DDM
    return MixedInventory(f0, g_low, h_ll, M, h_hl, t_hll)


def helmholtz_residuals(E, jet, engine=None, check_affine=True):
    """Evaluate the three condition residuals of a source form at a jet.

    The jet must carry order-3 data for the total-derivative terms.
    When the form was built as a variational derivative and the engine
    supports fourth-order sweeps, derivatives come from the generating
    density; otherwise the form itself is swept.
    """
    engine = engine or _default_engine
    if jet.phi3 is None:
        raise ValueError("condition residuals need order-3 jet data")
    if check_affine:
        assert_affine_source_form(E, jet)
    ids = _SlotIds(E.m, E.n)
    if E.lagrangian is not None and getattr(engine, "max_order", 0) >= 4:
        inv = _lagrangian_inventory(E.lagrangian, jet, engine)
    else:
        inv = _generic_inventory(E, jet, engine)

    K = _take(inv.g_low, 1, ids.phi)
    G1 = _take(inv.g_low, 1, ids.phi1)
    F = _unpack_pairs(inv.g_high, 1, ids)
    H1 = F - _swap01(F)

    Fs = _unpack_pairs(inv.h_hl, 1, ids)
    dF = _td_contract(Fs, 4, jet, ids)
    DF = np.einsum("ABlpp...->ABl...", dF)
    H2 = G1 + _swap01(G1) - 2 * _swap01(DF)

    G1s = _take(inv.h_ll, 1, ids.phi1)
    dG1 = _td_contract(G1s, 3, jet, ids)
    DG = np.einsum("ABqq...->AB...", dG1)

    # d_r of d_q F: chain through the inventory's third derivatives plus
    # the explicit jet-coordinate coefficients of d_q.  The one term that
    # would read fourth-order data multiplies d2E/dphi2 dphi2, which the
    # affineness restriction makes zero, so it is omitted.
    TDth = _td_contract(inv.t_hll, 3, jet, ids)
    Hh = inv.h_hl
    dd = _take(TDth, 2, ids.x)
    dd = dd + np.einsum("ABsr...,sq...->ABqr...", _take(TDth, 2, ids.phi), jet.phi1)
    dd = dd + np.einsum("ABsir...,sqi...->ABqr...", _take(TDth, 2, ids.phi1), jet.phi2)
    p2 = _unpack_pairs(TDth, 2, ids, idmap=ids.phi2)
    dd = dd + np.einsum("ABsijr...,sqij...->ABqr...", p2, jet.phi3)
    dd = dd + np.einsum("ABs...,sqr...->ABqr...", _take(Hh, 2, ids.phi), jet.phi2)
    dd = dd + np.einsum("ABsi...,sqir...->ABqr...", _take(Hh, 2, ids.phi1), jet.phi3)
    ddF = _unpack_pairs(dd, 1, ids)
    DDF = np.einsum("ABlppl...->AB...", ddF)
    H3 = K - _swap01(K) + _swap01(DG) - _swap01(DDF)

    norms = {"H1": max_abs(H1), "H2": max_abs(H2), "H3": max_abs(H3)}
    return HelmholtzResidual(H1, H2, H3, norms, jet)


def _per_sample_norms(res, nbatch):
    rows = []
    for arr in (res.H1, res.H2, res.H3):
        axes = tuple(range(arr.ndim - nbatch))
        rows.append(np.max(np.abs(arr), axis=axes))
    return np.stack(rows)


def variationality_verdict(
    E,
    sample_count=30,
    seed=0,
    tolerance=None,
    engine=None,
    domain=None,
    target_domain=None,
    amplitude=1.0,
):
    """Sampled-evidence verdict: residual norms below tolerance at every jet.

    A norm exactly at the tolerance counts as a failure.  The report
    always names the worst condition and sample, so failures come with a
    witness.  Passing is evidence over the sampled jets, not a proof on
    the chart.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    engine = engine or _default_engine
    if tolerance is None:
        tolerance = DEFAULT_TOLERANCES.get(getattr(engine, "name", "dual"), 1e-6)
    rng = np.random.default_rng(seed)
    jets = sample_jets(
        rng, E.m, E.n, sample_count,
        domain=domain, target_domain=target_domain, amplitude=amplitude,
    )
    res = helmholtz_residuals(E, jets, engine)
    per_sample = _per_sample_norms(res, 1)
    worst_flat = int(np.argmax(per_sample))
    cond_idx, sample_idx = np.unravel_index(worst_flat, per_sample.shape)
    return VerdictReport(
        passed=bool(np.all(per_sample < tolerance)),
        tolerance=tolerance,
        sample_count=sample_count,
        norms={name: float(per_sample[i].max()) for i, name in enumerate(("H1", "H2", "H3"))},
        per_sample=per_sample,
        worst_condition=("H1", "H2", "H3")[cond_idx],
        worst_sample=int(sample_idx),
        residual=res,
    )
