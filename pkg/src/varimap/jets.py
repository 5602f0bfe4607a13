"""Jet-space calculus for maps between charts.

A jet point carries base coordinates x^i (i < n), target values phi^s
(s < m), and derivative arrays phi1[s, i], phi2[s, i, j], phi3[s, i, j, k]
with trailing batch axes.  The derivative arrays must be exactly
symmetric in their lower indices; asymmetric input is rejected rather
than silently symmetrized, because a jet with conflicting mixed-partial
entries has no consistent reading.

Derivatives with respect to second-order slots follow the symmetrized
convention: the independent coordinates are the canonical entries
u^s_{ij} with i <= j, and the reported partial against the full
symmetric index pair (i, j) is half the canonical partial off the
diagonal.  Contractions with symmetric tensors (phi3, multiplier
candidates) then reproduce the formal chain rule exactly.
"""

import numpy as np

from .engine import DualEngine, _is_plain
from .tensorops import ein, pack

__all__ = [
    "JetPoint",
    "JetSlots",
    "SourceForm",
    "LagrangianDensity",
    "sample_jets",
    "jet_partials",
    "total_derivative",
    "prolong",
    "euler_lagrange",
    "euler_lagrange_form",
]

_default_engine = DualEngine()


def canonical_pairs(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def canonical_triples(n):
    return [
        (i, j, k)
        for i in range(n)
        for j in range(i, n)
        for k in range(j, n)
    ]


def _exactly_symmetric(arr, axes):
    if arr.dtype == object:
        return True  # internal seeded construction, symmetric by sharing
    for a, b in axes:
        if not np.array_equal(arr, np.swapaxes(arr, a, b)):
            return False
    return True


class JetPoint:
    """Second- or third-order jet of a map at a batch of base points."""

    def __init__(self, x, phi, phi1, phi2=None, phi3=None, validate=True):
        self.x = list(x)
        self.phi = list(phi)
        self.n = len(self.x)
        self.m = len(self.phi)
        self.phi1 = phi1 if isinstance(phi1, np.ndarray) else np.asarray(phi1, float)
        self.phi2 = self._prep(phi2)
        self.phi3 = self._prep(phi3)
        if validate:
            self._validate()

    @staticmethod
    def _prep(arr):
        if arr is None or isinstance(arr, np.ndarray):
            return arr
        return np.asarray(arr, dtype=float)

    def _validate(self):
        m, n = self.m, self.n
        if self.phi1.shape[:2] != (m, n):
            raise ValueError(f"phi1 must be ({m}, {n}, ...), got {self.phi1.shape}")
        if self.phi2 is not None:
            if self.phi2.shape[:3] != (m, n, n):
                raise ValueError(
                    f"phi2 must be ({m}, {n}, {n}, ...), got {self.phi2.shape}"
                )
            if not _exactly_symmetric(self.phi2, [(1, 2)]):
                raise ValueError("phi2 is not symmetric in its lower indices")
        if self.phi3 is not None:
            if self.phi2 is None:
                raise ValueError("phi3 given without phi2")
            if self.phi3.shape[:4] != (m, n, n, n):
                raise ValueError(
                    f"phi3 must be ({m}, {n}, {n}, {n}, ...), got {self.phi3.shape}"
                )
            if not _exactly_symmetric(self.phi3, [(1, 2), (2, 3)]):
                raise ValueError("phi3 is not symmetric in its lower indices")

    @property
    def batch_shape(self):
        if self.phi1.dtype == object:
            return ()
        return self.phi1.shape[2:]

    @property
    def order(self):
        if self.phi3 is not None:
            return 3
        return 2 if self.phi2 is not None else 1


class JetSlots:
    """Flattened coordinate layout of a jet up to second-order slots.

    Slot order: x^i, phi^s, phi1[s, i] (s-major), then canonical
    second-order entries u^s_{ij} with i <= j.
    """

    def __init__(self, m, n, order=2):
        self.m, self.n, self.order = m, n, order
        self.pairs = canonical_pairs(n) if order >= 2 else []
        names = [("x", i) for i in range(n)]
        names += [("phi", s) for s in range(m)]
        names += [("phi1", s, i) for s in range(m) for i in range(n)]
        names += [("phi2", s, i, j) for s in range(m) for (i, j) in self.pairs]
        self.names = names
        self.index = {key: pos for pos, key in enumerate(names)}

    @property
    def count(self):
        return len(self.names)

    def block(self, kind):
        pos = [p for p, key in enumerate(self.names) if key[0] == kind]
        return pos

    def values_from_jet(self, jet):
        vals = list(jet.x) + list(jet.phi)
        vals += [jet.phi1[s, i] for s in range(self.m) for i in range(self.n)]
        if self.order >= 2:
            if jet.phi2 is None:
                raise ValueError("jet carries no second-order entries")
            vals += [
                jet.phi2[s, i, j]
                for s in range(self.m)
                for (i, j) in self.pairs
            ]
        return vals

    def jet_from_values(self, z, template):
        m, n = self.m, self.n
        x = z[:n]
        phi = z[n : n + m]
        p1 = pack((m, n), lambda si: z[n + m + si[0] * n + si[1]])
        p2 = None
        if self.order >= 2:
            off = n + m + m * n
            npairs = len(self.pairs)

            def entry(sij):
                s, i, j = sij
                a, b = (i, j) if i <= j else (j, i)
                return z[off + s * npairs + self.pairs.index((a, b))]

            p2 = pack((m, n, n), entry)
        return JetPoint(x, phi, p1, p2, template.phi3, validate=False)

    def seed_rows(self, keys):
        dirs = np.zeros((len(keys), self.count))
        for r, key in enumerate(keys):
            dirs[r, self.index[key]] = 1.0
        return dirs


def sample_jets(
    rng, m, n, count, domain=None, target_domain=None, amplitude=1.0, order=3,
    margin=0.0,
):
    """Random jets with exactly symmetric derivative arrays.

    margin shrinks chart sampling away from the bounds by that fraction
    of each width; it has no effect on the unbounded normal fallback.
    """
    if domain is not None:
        x = list(domain.sample(rng, count, margin=margin))
    else:
        x = list(rng.normal(0.0, amplitude, size=(n, count)))
    if target_domain is not None:
        phi = list(target_domain.sample(rng, count, margin=margin))
    else:
        phi = list(rng.normal(0.0, amplitude, size=(m, count)))
    phi1 = rng.normal(0.0, amplitude, size=(m, n, count))
    phi2 = phi3 = None
    if order >= 2:
        phi2 = np.zeros((m, n, n, count))
        for i, j in canonical_pairs(n):
            v = rng.normal(0.0, amplitude, size=(m, count))
            phi2[:, i, j] = phi2[:, j, i] = v
    if order >= 3:
        phi3 = np.zeros((m, n, n, n, count))
        for i, j, k in canonical_triples(n):
            v = rng.normal(0.0, amplitude, size=(m, count))
            for p in {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}:
                phi3[:, p[0], p[1], p[2]] = v
    return JetPoint(x, phi, phi1, phi2, phi3)


class SourceForm:
    """Vector-valued jet function, at most second order.

    ``fn(jet)`` returns the m components (array of shape (m,) + batch).
    ``lagrangian`` marks forms obtained as variational derivatives and
    lets downstream consumers derive their jet derivatives from the
    generating density instead of differencing the composite.
    """

    def __init__(self, m, n, fn, order=2, name="source form", lagrangian=None):
        self.m, self.n = m, n
        self.fn = fn
        self.order = order
        self.name = name
        self.lagrangian = lagrangian

    def __call__(self, jet):
        out = self.fn(jet)
        if isinstance(out, np.ndarray):
            return out
        return pack((self.m,), lambda s: out[s[0]])


class LagrangianDensity:
    """First-order scalar density on the jet space."""

    def __init__(self, m, n, fn, name="lagrangian"):
        self.m, self.n = m, n
        self.fn = fn
        self.name = name

    def __call__(self, jet):
        return self.fn(jet)


def _as_component_array(out):
    if isinstance(out, np.ndarray):
        return out
    if isinstance(out, (list, tuple)):
        return pack((len(out),), lambda s: out[s[0]])
    return pack((), lambda _: out)


def jet_partials(fn, jet, block, engine=None):
    """Partial derivatives of fn(jet) with respect to one slot block.

    block is one of "x", "phi", "phi1", "phi2".  The result appends the
    block axes after the output axes: (n,), (m,), (m, n), or (m, n, n)
    with the symmetrized second-order convention.
    """
    engine = engine or _default_engine
    order = 2 if (block == "phi2" or jet.phi2 is not None) else 1
    slots = JetSlots(jet.m, jet.n, order=order)
    vals = slots.values_from_jet(jet)
    keys = [k for k in slots.names if k[0] == block]
    if not keys:
        raise ValueError(f"unknown or empty slot block {block!r}")
    dirs = slots.seed_rows(keys)
    wrapped = lambda z: _as_component_array(fn(slots.jet_from_values(z, jet)))
    f0, d1 = engine.derivs(wrapped, vals, 1, dirs=dirs)
    out_axes = f0.ndim - len(jet.batch_shape) if f0.dtype != object else f0.ndim
    m, n = jet.m, jet.n
    if block == "x":
        return d1
    if block == "phi":
        return d1
    batch_tail = d1.shape[out_axes + 1 :]
    if block == "phi1":
        return d1.reshape(d1.shape[:out_axes] + (m, n) + batch_tail)
    pairs = slots.pairs
    npairs = len(pairs)
    cols = d1.reshape(d1.shape[:out_axes] + (m, npairs) + batch_tail)
    shape = d1.shape[:out_axes] + (m, n, n) + batch_tail
    out = (
        np.empty(shape, dtype=object)
        if d1.dtype == object
        else np.zeros(shape)
    )
    idx = [slice(None)] * out_axes
    for c, (i, j) in enumerate(pairs):
        col = cols[tuple(idx) + (slice(None), c)]
        if i == j:
            out[tuple(idx) + (slice(None), i, j)] = col
        else:
            half = 0.5 * col
            out[tuple(idx) + (slice(None), i, j)] = half
            out[tuple(idx) + (slice(None), j, i)] = half
    return out


def _take(arr, axis, idx):
    sl = [slice(None)] * arr.ndim
    sl[axis] = idx
    return arr[tuple(sl)]


def total_derivative(fn, jet, fn_order=1, engine=None):
    """Total derivative d_p of fn along the base coordinates.

    Appends one axis of length n after the output axes.  fn_order states
    the highest jet order fn actually reads (1 or 2); the jet must carry
    derivatives one order higher to supply the chain coefficients.
    """
    if fn_order >= 2 and jet.phi3 is None:
        raise ValueError("total derivative of a second-order function needs phi3")
    if fn_order >= 1 and jet.phi2 is None:
        raise ValueError("total derivative needs phi2")
    px = jet_partials(fn, jet, "x", engine)
    pphi = jet_partials(fn, jet, "phi", engine)
    pphi1 = jet_partials(fn, jet, "phi1", engine)
    m, n = jet.m, jet.n
    n_out = px.ndim - 1 - (len(jet.batch_shape) if px.dtype != object else 0)
    dF = np.copy(px)
    for s in range(m):
        a = np.expand_dims(_take(pphi, n_out, s), n_out)
        dF = dF + a * jet.phi1[s]
    for s in range(m):
        for i in range(n):
            a = np.expand_dims(_take(_take(pphi1, n_out + 1, i), n_out, s), n_out)
            dF = dF + a * jet.phi2[s, :, i]
    if fn_order >= 2:
        pphi2 = jet_partials(fn, jet, "phi2", engine)
        for s in range(m):
            for i in range(n):
                for j in range(n):
                    a = _take(_take(_take(pphi2, n_out + 2, j), n_out + 1, i), n_out, s)
                    dF = dF + np.expand_dims(a, n_out) * jet.phi3[s, :, i, j]
    return dF


def prolong(map_fn, m, x, order=3, engine=None):
    """Jet of a concrete map at base points x (list of n coordinates)."""
    engine = engine or _default_engine
    n = len(x)
    wrapped = lambda z: _as_component_array(map_fn(z))
    res = engine.derivs(wrapped, x, order)
    phi = [res[0][s] for s in range(m)]
    phi1 = res[1]
    phi2 = res[2] if order >= 2 else None
    phi3 = None
    if order >= 3:
        raw = res[3]
        phi3 = np.empty_like(raw)
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    a, b, c = sorted((i, j, k))
                    phi3[:, i, j, k] = raw[:, a, b, c]
    return JetPoint(list(x), phi, phi1, phi2, phi3)


def euler_lagrange(lagrangian, jet, engine=None):
    """Variational derivative dL/dphi^s - d_k dL/dphi^s_k, shape (m,) + batch.

    One order-2 sweep of the density over its first-order slots supplies
    the phi gradient and every ingredient of the total derivative at once;
    the chain terms then contract the slot Hessian with phi1 and phi2.
    Jets with object-valued entries (an enclosing derivative sweep) take
    the slower nested route, which tops out at first-order inner sweeps.
    """
    if jet.phi2 is None:
        raise ValueError("euler_lagrange needs second-order jet data")
    engine = engine or _default_engine
    m, n = lagrangian.m, lagrangian.n
    slots = JetSlots(m, n, order=1)
    vals = slots.values_from_jet(jet)
    if engine.max_order < 2 or any(not _is_plain(v) for v in vals):
        return _euler_lagrange_nested(lagrangian, jet, engine)
    wrapped = lambda z: _as_component_array(
        lagrangian(slots.jet_from_values(z, jet))
    )
    _, grad, hess = engine.derivs(wrapped, vals, 2)
    o_phi = n
    o_p1 = n + m
    rows = []
    for sig in range(m):
        acc = grad[o_phi + sig]
        for k in range(n):
            r = o_p1 + sig * n + k
            acc = acc - hess[r, k]
            for s in range(m):
                acc = acc - hess[r, o_phi + s] * jet.phi1[s, k]
                for i in range(n):
                    acc = acc - hess[r, o_p1 + s * n + i] * jet.phi2[s, i, k]
        rows.append(acc)
    return np.stack(rows)


def _euler_lagrange_nested(lagrangian, jet, engine):
    pphi = jet_partials(lagrangian, jet, "phi", engine)
    grad1 = lambda j: jet_partials(lagrangian, j, "phi1", engine)
    dgrad = total_derivative(grad1, jet, fn_order=1, engine=engine)
    # dgrad[s, k, p]: divergence takes p = k
    div = ein("skk...->s...", dgrad)
    return pphi - div


def euler_lagrange_form(lagrangian, name=None):
    return SourceForm(
        lagrangian.m,
        lagrangian.n,
        lambda jet: euler_lagrange(lagrangian, jet),
        order=2,
        name=name or f"variational derivative of {lagrangian.name}",
        lagrangian=lagrangian,
    )
