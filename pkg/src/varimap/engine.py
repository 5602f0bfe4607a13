"""Derivative engines.

An engine evaluates a callable ``f(z)`` on a coordinate vector ``z``
(list of k scalars, each a float or a batched array with trailing sample
axes) and returns derivative tensors along prescribed seed directions.
Two independent implementations are provided:

``DualEngine``
    Analytic forward mode built on the Taylor/dual scalars.

``FDEngine``
    Central finite differences with separate step sizes per derivative
    order.

``CrossCheckedEngine``
    Runs both and raises ``EngineDisagreement`` when any returned tensor
    differs by more than ``rtol`` relative to ``max(1, |a|, |b|)``.

Conventions: a result of order r has shape
``out_shape + (ndirs,)*r + batch_shape``.  ``f`` must return a scalar or
an ndarray whose entries are scalars of the evaluation (derivative
scalars, floats, or uniformly broadcastable batch arrays).

``mixed_inventory`` serves the second-derivative-of-first-derivative
pattern needed by jet-space calculations: second order in a "low" block
of directions for every first derivative along a "high" block, obtained
from duals layered over second-order Taylor scalars.
"""

from typing import NamedTuple

import numpy as np

from .autodiff import Dual, _is_plain, coeff_or_zero, taylor_variables
from .errors import EngineDisagreement

__all__ = [
    "DualEngine",
    "FDEngine",
    "CrossCheckedEngine",
    "MixedInventory",
    "get_engine",
]


class MixedInventory(NamedTuple):
    """Derivatives of f over a low block (order 2) and a high block.

    f0 : out + batch
    g_low : out + (nl,) + batch
    h_ll : out + (nl, nl) + batch
    g_high : out + (nh,) + batch
    h_hl : out + (nh, nl) + batch
    t_hll : out + (nh, nl, nl) + batch
    """

    f0: np.ndarray
    g_low: np.ndarray
    h_ll: np.ndarray
    g_high: np.ndarray
    h_hl: np.ndarray
    t_hll: np.ndarray


def _as_output_array(y):
    if isinstance(y, np.ndarray):
        return y
    if isinstance(y, (list, tuple)):
        try:
            return np.asarray(y, dtype=float)
        except (TypeError, ValueError):
            out = np.empty(len(y), dtype=object)
            for i, e in enumerate(y):
                out[i] = e
            return out
    out = np.empty((), dtype=object)
    out[()] = y
    return out


def _to_float_array(y, batch):
    """Normalize f output to a float array of shape out + batch."""
    arr = _as_output_array(y)
    if arr.dtype == object:
        flat = arr.reshape(-1)
        out = np.empty(arr.shape + batch)
        of = out.reshape((-1,) + batch)
        for i, e in enumerate(flat):
            of[i] = e
        return out
    arr = arr.astype(float, copy=False)
    nb = len(batch)
    if nb and arr.ndim >= nb and arr.shape[arr.ndim - nb :] == tuple(batch):
        return arr
    return np.broadcast_to(arr.reshape(arr.shape + (1,) * nb), arr.shape + batch)


def _input_batch(x):
    return np.broadcast_shapes(*[np.shape(v) for v in x if _is_plain(v)])


def _stack_elements(pieces, objmode):
    if not objmode:
        return np.stack(pieces)
    shp = np.shape(pieces[0])
    out = np.empty((len(pieces),) + shp, dtype=object)
    for i, p in enumerate(pieces):
        out[i] = p
    return out


class DualEngine:
    """Analytic forward-mode engine."""

    name = "dual"
    max_order = 4

    def derivs(self, f, x, order, dirs=None):
        k = len(x)
        dirs = np.eye(k) if dirs is None else np.asarray(dirs, dtype=float)
        ndirs = dirs.shape[0]
        objmode = any(not _is_plain(v) for v in x)
        batch = () if objmode else _input_batch(x)
        z = taylor_variables(x, dirs, order)
        y = _as_output_array(f(z))
        if y.dtype != object:
            # no seeded scalar reached the output, so f is constant along
            # every direction; normalize the value and return exact zeros
            val = _to_float_array(y, batch)
            out_shape = val.shape[: val.ndim - len(batch)]
            return (val,) + tuple(
                np.zeros(out_shape + (ndirs,) * r + batch)
                for r in range(1, order + 1)
            )
        out_shape = y.shape
        flat = y.reshape(-1)
        results = []
        for r in range(order + 1):
            pieces = [coeff_or_zero(el, r, ndirs, batch, objmode) for el in flat]
            stacked = _stack_elements(pieces, objmode)
            results.append(stacked.reshape(out_shape + (ndirs,) * r + batch))
        return tuple(results)

    def mixed_inventory(self, f, x, low_dirs, high_dirs):
        low_dirs = np.asarray(low_dirs, dtype=float)
        high_dirs = np.asarray(high_dirs, dtype=float)
        if any(not _is_plain(v) for v in x):
            raise TypeError("mixed_inventory requires plain numeric inputs")
        k = len(x)
        nl, nh = low_dirs.shape[0], high_dirs.shape[0]
        batch = _input_batch(x)
        zl = taylor_variables(x, low_dirs, order=2)

        def extract(elements, out_shape):
            res = []
            for r in range(3):
                pieces = [coeff_or_zero(el, r, nl, batch, False) for el in elements]
                res.append(np.stack(pieces).reshape(out_shape + (nl,) * r + batch))
            return res

        base = None
        out_shape = None
        gh, hhl, thll = [], [], []
        for a in range(nh):
            zd = [Dual(zl[j], float(high_dirs[a, j])) for j in range(k)]
            y = _as_output_array(f(zd))
            out_shape = y.shape
            flat = y.reshape(-1)
            vals = [el.val if isinstance(el, Dual) else el for el in flat]
            epss = [el.eps if isinstance(el, Dual) else 0.0 for el in flat]
            if base is None:
                base = extract(vals, out_shape)
            e0, e1, e2 = extract(epss, out_shape)
            gh.append(e0)
            hhl.append(e1)
            thll.append(e2)
        if base is None:
            y = _as_output_array(f(zl))
            out_shape = y.shape
            base = extract(y.reshape(-1), out_shape)
        n_out = len(out_shape)
        f0, g_low, h_ll = base
        g_high = np.moveaxis(np.stack(gh), 0, n_out) if nh else np.zeros(
            out_shape + (0,) + batch
        )
        h_hl = np.moveaxis(np.stack(hhl), 0, n_out) if nh else np.zeros(
            out_shape + (0, nl) + batch
        )
        t_hll = np.moveaxis(np.stack(thll), 0, n_out) if nh else np.zeros(
            out_shape + (0, nl, nl) + batch
        )
        return MixedInventory(f0, g_low, h_ll, g_high, h_hl, t_hll)


class FDEngine:
    """Central-difference engine with per-order steps.

    First derivatives use ``step1``, second derivatives ``step2`` and the
    third-order (second-of-first) tensors difference the ``step2`` Hessian
    at ``+-step3``.  The larger high-order steps keep truncation and
    roundoff balanced once values pass through two difference levels.
    """

    name = "fd"
    max_order = 3

    def __init__(self, step1=1e-6, step2=1e-4, step3=2e-3):
        self.step1 = step1
        self.step2 = step2
        self.step3 = step3

    @staticmethod
    def _check_plain(x):
        if any(not _is_plain(v) for v in x):
            raise TypeError("FDEngine requires plain numeric inputs")

    def _eval(self, f, x, shift, batch):
        return _to_float_array(f([v + s for v, s in zip(x, shift)]), batch)

    def derivs(self, f, x, order, dirs=None):
        if order > self.max_order:
            raise ValueError("FDEngine supports order <= 3")
        self._check_plain(x)
        k = len(x)
        dirs = np.eye(k) if dirs is None else np.asarray(dirs, dtype=float)
        batch = _input_batch(x)
        base = _to_float_array(f(x), batch)
        n_out = base.ndim - len(batch)
        results = [base]
        if order >= 1:
            results.append(self._grad(f, x, dirs, batch, n_out))
        if order >= 2:
            results.append(self._hess(f, x, dirs, base, batch, n_out))
        if order >= 3:
            results.append(self._third(f, x, dirs, batch, n_out))
        return tuple(results)

    def _grad(self, f, x, dirs, batch, n_out, step=None):
        h = self.step1 if step is None else step
        pieces = []
        for d in dirs:
            fp = self._eval(f, x, h * d, batch)
            fm = self._eval(f, x, -h * d, batch)
            pieces.append((fp - fm) / (2 * h))
        return np.moveaxis(np.stack(pieces), 0, n_out)

    def _hess(self, f, x, dirs, base, batch, n_out):
        h = self.step2
        nd = len(dirs)
        plus = [self._eval(f, x, h * d, batch) for d in dirs]
        minus = [self._eval(f, x, -h * d, batch) for d in dirs]
        out = np.empty((nd, nd) + base.shape)
        for a in range(nd):
            out[a, a] = (plus[a] + minus[a] - 2 * base) / h**2
            for b in range(a + 1, nd):
                fpp = self._eval(f, x, h * (dirs[a] + dirs[b]), batch)
                fpm = self._eval(f, x, h * (dirs[a] - dirs[b]), batch)
                fmp = self._eval(f, x, -h * (dirs[a] - dirs[b]), batch)
                fmm = self._eval(f, x, -h * (dirs[a] + dirs[b]), batch)
                out[a, b] = out[b, a] = (fpp - fpm - fmp + fmm) / (4 * h**2)
        return np.moveaxis(out, [0, 1], [n_out, n_out + 1])

    def _third(self, f, x, dirs, batch, n_out):
        h = self.step3
        pieces = []
        for d in dirs:
            xp = [v + h * s for v, s in zip(x, d)]
            xm = [v - h * s for v, s in zip(x, d)]
            bp = _to_float_array(f(xp), batch)
            bm = _to_float_array(f(xm), batch)
            hp = self._hess(f, xp, dirs, bp, batch, n_out)
            hm = self._hess(f, xm, dirs, bm, batch, n_out)
            pieces.append((hp - hm) / (2 * h))
        return np.moveaxis(np.stack(pieces), 0, n_out)

    def _affine_along(self, f, x, dirs, base, batch):
        """Second-difference probe: is f affine along every given direction?

        Probes each direction and their sum at a finite step; any residual
        curvature, NaN, or Inf sends the caller down the stencil path.
        """
        t = 0.5
        rows = list(dirs) + ([dirs.sum(axis=0)] if len(dirs) > 1 else [])
        for d in rows:
            fp = self._eval(f, x, t * d, batch)
            fm = self._eval(f, x, -t * d, batch)
            curve = fp + fm - 2 * base
            if not np.all(np.isfinite(curve)):
                return False
            scale = max(1.0, float(np.max(np.abs(fp))), float(np.max(np.abs(fm))))
            if float(np.max(np.abs(curve))) > 1e-8 * scale:
                return False
        return True

    def mixed_inventory(self, f, x, low_dirs, high_dirs):
        low_dirs = np.asarray(low_dirs, dtype=float)
        high_dirs = np.asarray(high_dirs, dtype=float)
        self._check_plain(x)
        batch = _input_batch(x)
        base = _to_float_array(f(x), batch)
        n_out = base.ndim - len(batch)
        f0, g_low, h_ll = self.derivs(f, x, 2, dirs=low_dirs)
        gh, hhl, thll = [], [], []
        if len(high_dirs) and self._affine_along(f, x, high_dirs, base, batch):
            # affine high directions: one finite step gives the exact
            # directional slope of the value, gradient and Hessian tables,
            # without the 1/step amplification of stencil noise
            H = 1.0
            for d in high_dirs:
                xp = [v + H * s for v, s in zip(x, d)]
                bp = _to_float_array(f(xp), batch)
                gh.append((bp - base) / H)
                gp = self._grad(f, xp, low_dirs, batch, n_out)
                hhl.append((gp - g_low) / H)
                hp = self._hess(f, xp, low_dirs, bp, batch, n_out)
                thll.append((hp - h_ll) / H)
            return self._assemble_inventory(
                f0, g_low, h_ll, gh, hhl, thll, low_dirs, high_dirs, base, n_out, batch
            )
        h1, h3 = self.step1, self.step3
        for d in high_dirs:
            fp = self._eval(f, x, h1 * d, batch)
            fm = self._eval(f, x, -h1 * d, batch)
            gh.append((fp - fm) / (2 * h1))
            xp = [v + h3 * s for v, s in zip(x, d)]
            xm = [v - h3 * s for v, s in zip(x, d)]
            bp = _to_float_array(f(xp), batch)
            bm = _to_float_array(f(xm), batch)
            gp = self._grad(f, xp, low_dirs, batch, n_out, step=self.step2)
            gm = self._grad(f, xm, low_dirs, batch, n_out, step=self.step2)
            hhl.append((gp - gm) / (2 * h3))
            hp = self._hess(f, xp, low_dirs, bp, batch, n_out)
            hm = self._hess(f, xm, low_dirs, bm, batch, n_out)
            thll.append((hp - hm) / (2 * h3))
        return self._assemble_inventory(
            f0, g_low, h_ll, gh, hhl, thll, low_dirs, high_dirs, base, n_out, batch
        )

    @staticmethod
    def _assemble_inventory(
        f0, g_low, h_ll, gh, hhl, thll, low_dirs, high_dirs, base, n_out, batch
    ):
        nl = low_dirs.shape[0]
        nh = high_dirs.shape[0]
        out_shape = base.shape[:n_out]
        g_high = np.moveaxis(np.stack(gh), 0, n_out) if nh else np.zeros(
            out_shape + (0,) + batch
        )
        h_hl = np.moveaxis(np.stack(hhl), 0, n_out) if nh else np.zeros(
            out_shape + (0, nl) + batch
        )
        t_hll = np.moveaxis(np.stack(thll), 0, n_out) if nh else np.zeros(
            out_shape + (0, nl, nl) + batch
        )
        return MixedInventory(f0, g_low, h_ll, g_high, h_hl, t_hll)


class CrossCheckedEngine:
    """Evaluates with both engines and insists they agree."""

    name = "both"
    max_order = 3

    def __init__(self, rtol=1e-4, dual=None, fd=None):
        self.rtol = rtol
        self.dual = dual or DualEngine()
        self.fd = fd or FDEngine()

    def _compare(self, a, b, label):
        fa = np.asarray(a, dtype=float)
        fb = np.asarray(b, dtype=float)
        scale = np.maximum(1.0, np.maximum(np.abs(fa), np.abs(fb)))
        rel = np.abs(fa - fb) / scale
        worst = float(rel.max()) if rel.size else 0.0
        if worst > self.rtol:
            raise EngineDisagreement(
                f"analytic and finite-difference results diverge on {label}",
                max_rel=worst,
                context=label,
            )

    def derivs(self, f, x, order, dirs=None):
        da = self.dual.derivs(f, x, order, dirs=dirs)
        db = self.fd.derivs(f, x, order, dirs=dirs)
        for r, (ra, rb) in enumerate(zip(da, db)):
            self._compare(ra, rb, f"order-{r} derivative")
        return da

    def mixed_inventory(self, f, x, low_dirs, high_dirs):
        ia = self.dual.mixed_inventory(f, x, low_dirs, high_dirs)
        ib = self.fd.mixed_inventory(f, x, low_dirs, high_dirs)
        for field, ra, rb in zip(MixedInventory._fields, ia, ib):
            self._compare(ra, rb, field)
        return ia


def get_engine(name, **kwargs):
    table = {
        "dual": DualEngine,
        "fd": FDEngine,
        "both": CrossCheckedEngine,
    }
    if name not in table:
        raise ValueError(f"unknown engine {name!r}; expected one of {sorted(table)}")
    return table[name](**kwargs)
