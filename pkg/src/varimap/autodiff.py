"""Forward-mode derivative scalars.

Two scalar types drive every analytic derivative in the package:

``Dual``
    First-order, single-direction dual number.  Components may be floats,
    batched numpy arrays, other duals, or Taylor scalars, so duals can be
    stacked on top of anything for one extra derivative order.

``TaylorScalar``
    Truncated multivariate Taylor expansion of order <= 4 over D seed
    directions.  ``coeffs[r]`` holds the raw partial-derivative tensor
    d^r f / dz_a1 .. dz_ar (no factorial weights), shaped ``(D,)*r`` plus
    trailing broadcast batch axes.  A whole sample batch is pushed through
    one evaluation this way.  When seeds sit on top of other derivative
    scalars the coefficient arrays switch to dtype=object and the batch
    lives inside the nested scalars.

Type precedence for mixed arithmetic: Dual wraps TaylorScalar, both wrap
plain numbers/arrays.  A ``TaylorScalar`` refuses binary ops with a
``Dual`` (returns NotImplemented) so the dual's reflected method runs and
treats the Taylor scalar as its constant part.
"""

import numpy as np

from .tensorops import ein

__all__ = [
    "Dual",
    "TaylorScalar",
    "taylor_variables",
    "coeff_or_zero",
    "sin",
    "cos",
    "tan",
    "exp",
    "log",
    "sqrt",
    "atan",
    "power",
]

_PLAIN = (int, float, np.integer, np.floating)


def _is_plain(x):
    return isinstance(x, _PLAIN) or (
        isinstance(x, np.ndarray) and x.dtype != object
    )


class Dual:
    """First-order dual number a + eps*b with generic components."""

    __slots__ = ("val", "eps")
    __array_ufunc__ = None

    def __init__(self, val, eps):
        self.val = val
        self.eps = eps

    def __repr__(self):
        return f"Dual({self.val!r}, {self.eps!r})"

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.eps + other.eps)
        return Dual(self.val + other, self.eps)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                self.val * other.eps + other.val * self.eps,
            )
        return Dual(self.val * other, self.eps * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(
                self.val * inv,
                (self.eps - self.val * inv * other.eps) * inv,
            )
        return Dual(self.val / other, self.eps / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        return Dual(other * inv, -other * inv * inv * self.eps)

    def __pow__(self, e):
        if isinstance(e, Dual):
            raise TypeError("dual exponents are not supported")
        return Dual(power(self.val, e), e * power(self.val, e - 1) * self.eps)


class TaylorScalar:
    """Truncated multivariate Taylor scalar, order <= 4."""

    __slots__ = ("order", "coeffs", "ndirs", "objmode")
    __array_ufunc__ = None

    def __init__(self, coeffs, normalized=False):
        coeffs = list(coeffs)
        self.order = len(coeffs) - 1
        if self.order < 1 or self.order > 4:
            raise ValueError("TaylorScalar supports orders 1..4")
        c1 = np.asarray(coeffs[1])
        self.ndirs = c1.shape[0]
        self.objmode = c1.dtype == object or not _is_plain(coeffs[0])
        if not self.objmode and not normalized:
            batch = np.broadcast_shapes(
                np.shape(coeffs[0]),
                *[np.shape(c)[r + 1 :] for r, c in enumerate(coeffs[1:])],
            )
            d = self.ndirs
            coeffs[0] = np.broadcast_to(coeffs[0], batch)
            for r in range(1, self.order + 1):
                coeffs[r] = np.broadcast_to(coeffs[r], (d,) * r + batch)
        self.coeffs = tuple(coeffs)

    @property
    def batch_shape(self):
        return () if self.objmode else np.shape(self.coeffs[0])

    def __repr__(self):
        return f"TaylorScalar(order={self.order}, ndirs={self.ndirs})"

    # -- arithmetic ---------------------------------------------------

    def _like(self, coeffs):
        return TaylorScalar(coeffs, normalized=not self.objmode)

    def __neg__(self):
        return self._like([-c for c in self.coeffs])

    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, TaylorScalar):
            _check_compatible(self, other)
            return TaylorScalar(
                [a + b for a, b in zip(self.coeffs, other.coeffs)]
            )
        if isinstance(other, np.ndarray) and other.dtype == object:
            return NotImplemented
        c = list(self.coeffs)
        c[0] = c[0] + other
        return TaylorScalar(c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, TaylorScalar):
            _check_compatible(self, other)
            return TaylorScalar(_mul_coeffs(self.coeffs, other.coeffs))
        if isinstance(other, np.ndarray) and other.dtype == object:
            return NotImplemented
        return self._like([_smul(other, c) for c in self.coeffs])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, TaylorScalar):
            return self * other._reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def __pow__(self, e):
        if isinstance(e, (Dual, TaylorScalar)):
            raise TypeError("scalar exponents only")
        return self._chain(lambda u0, q: _pow_derivs(u0, e, q))

    def _reciprocal(self):
        return self._chain(_recip_derivs)

    def _chain(self, derivs_fn):
        """Faa di Bruno composition with scalar derivative values at c0."""
        q = self.order
        u = self.coeffs
        d = derivs_fn(u[0], q)
        c = [d[0]]
        c.append(_smul(d[1], u[1]))
        if q >= 2:
            c.append(_smul(d[1], u[2]) + _smul(d[2], ein("i...,j...->ij...", u[1], u[1])))
        if q >= 3:
            c.append(
                _smul(d[1], u[3])
                + _smul(d[2], _splits_1_2(u[1], u[2]))
                + _smul(d[3], ein("i...,j...,k...->ijk...", u[1], u[1], u[1]))
            )
        if q >= 4:
            c.append(
                _smul(d[1], u[4])
                + _smul(d[2], _splits_1_3(u[1], u[3]) + _pairings_2_2(u[2]))
                + _smul(d[3], _splits_11_2(u[1], u[2]))
                + _smul(d[4], ein("i...,j...,k...,l...->ijkl...", u[1], u[1], u[1], u[1]))
            )
        return TaylorScalar(c)


def _check_compatible(a, b):
    if a.order != b.order or a.ndirs != b.ndirs:
        raise ValueError(
            f"incompatible Taylor scalars: order {a.order}/{b.order}, "
            f"ndirs {a.ndirs}/{b.ndirs}"
        )


def _smul(s, t):
    """Scalar times coefficient tensor, safe for exotic scalars."""
    if _is_plain(s):
        return t * s if isinstance(t, np.ndarray) and t.dtype == object else s * t
    if isinstance(t, np.ndarray):
        out = np.empty(t.shape, dtype=object)
        of, tf = out.reshape(-1), t.reshape(-1)
        for i in range(t.size):
            of[i] = tf[i] * s
        return out
    return t * s


def _mul_coeffs(a, b):
    q = len(a) - 1
    c = [a[0] * b[0]]
    c.append(_smul(a[0], b[1]) + _smul(b[0], a[1]))
    if q >= 2:
        p = ein("i...,j...->ij...", a[1], b[1])
        c.append(_smul(a[0], b[2]) + _smul(b[0], a[2]) + p + np.swapaxes(p, 0, 1))
    if q >= 3:
        c.append(
            _smul(a[0], b[3])
            + _smul(b[0], a[3])
            + _splits_1_2(a[1], b[2])
            + _splits_1_2(b[1], a[2])
        )
    if q >= 4:
        c.append(
            _smul(a[0], b[4])
            + _smul(b[0], a[4])
            + _splits_1_3(a[1], b[3])
            + _splits_1_3(b[1], a[3])
            + _splits_2_2(a[2], b[2])
        )
    return c


def _splits_1_2(u1, w2):
    return (
        ein("i...,jk...->ijk...", u1, w2)
        + ein("j...,ik...->ijk...", u1, w2)
        + ein("k...,ij...->ijk...", u1, w2)
    )


def _splits_1_3(u1, w3):
    return (
        ein("i...,jkl...->ijkl...", u1, w3)
        + ein("j...,ikl...->ijkl...", u1, w3)
        + ein("k...,ijl...->ijkl...", u1, w3)
        + ein("l...,ijk...->ijkl...", u1, w3)
    )


def _splits_2_2(u2, w2):
    return (
        ein("ij...,kl...->ijkl...", u2, w2)
        + ein("ik...,jl...->ijkl...", u2, w2)
        + ein("il...,jk...->ijkl...", u2, w2)
        + ein("jk...,il...->ijkl...", u2, w2)
        + ein("jl...,ik...->ijkl...", u2, w2)
        + ein("kl...,ij...->ijkl...", u2, w2)
    )


def _pairings_2_2(u2):
    return (
        ein("ij...,kl...->ijkl...", u2, u2)
        + ein("ik...,jl...->ijkl...", u2, u2)
        + ein("il...,jk...->ijkl...", u2, u2)
    )


def _splits_11_2(u1, u2):
    out = None
    for s in (
        "i...,j...,kl...->ijkl...",
        "i...,k...,jl...->ijkl...",
        "i...,l...,jk...->ijkl...",
        "j...,k...,il...->ijkl...",
        "j...,l...,ik...->ijkl...",
        "k...,l...,ij...->ijkl...",
    ):
        t = ein(s, u1, u1, u2)
        out = t if out is None else out + t
    return out


# -- seeding and extraction -------------------------------------------


def taylor_variables(values, dirs, order):
    """Seed Taylor scalars for a coordinate vector.

    Parameters
    ----------
    values : sequence of k scalars (floats, batched arrays, or exotic).
    dirs : (D, k) float array of seed direction weights.
    order : truncation order, 1..4.

    Returns a list of k TaylorScalar variables over D directions.  If any
    value is exotic the coefficient arrays are built in object mode.
    """
    dirs = np.asarray(dirs, dtype=float)
    ndirs, k = dirs.shape
    if len(values) != k:
        raise ValueError("dirs width does not match number of values")
    objmode = any(not _is_plain(v) for v in values)
    out = []
    for j, v in enumerate(values):
        if objmode:
            c1 = np.empty((ndirs,), dtype=object)
            c1[:] = [float(w) for w in dirs[:, j]]
            higher = [
                np.full((ndirs,) * r, 0.0, dtype=object)
                for r in range(2, order + 1)
            ]
            out.append(TaylorScalar([v, c1, *higher]))
        else:
            batch = np.shape(v)
            c1 = np.broadcast_to(
                dirs[:, j].reshape((ndirs,) + (1,) * len(batch)), (ndirs,) + batch
            )
            higher = [
                np.broadcast_to(0.0, (ndirs,) * r + batch)
                for r in range(2, order + 1)
            ]
            out.append(TaylorScalar([v, c1, *higher], normalized=True))
    return out


def coeff_or_zero(el, r, ndirs, batch_shape, objmode):
    """Coefficient tensor of order r for one output element.

    Plain elements (constants with respect to the seeds) yield zero
    tensors of the right shape.
    """
    if isinstance(el, TaylorScalar):
        if r > el.order:
            raise ValueError("requested order exceeds scalar order")
        return el.coeffs[r]
    if r == 0:
        if objmode:
            return el
        return np.broadcast_to(el, batch_shape)
    if objmode:
        return np.full((ndirs,) * r, 0.0, dtype=object)
    return np.broadcast_to(0.0, (ndirs,) * r + batch_shape)


# -- elementary functions ----------------------------------------------


def _map_obj(fn, arr):
    out = np.empty(arr.shape, dtype=object)
    of, af = out.reshape(-1), arr.reshape(-1)
    for i in range(arr.size):
        of[i] = fn(af[i])
    return out


def _dispatch(x, np_fn, dual_rule, derivs_fn):
    if isinstance(x, Dual):
        return dual_rule(x)
    if isinstance(x, TaylorScalar):
        return x._chain(derivs_fn)
    if isinstance(x, np.ndarray) and x.dtype == object:
        return _map_obj(lambda e: _dispatch(e, np_fn, dual_rule, derivs_fn), x)
    return np_fn(x)


def _sin_derivs(u0, q):
    s, c = sin(u0), cos(u0)
    return [s, c, -s, -c, s][: q + 1]


def _cos_derivs(u0, q):
    s, c = sin(u0), cos(u0)
    return [c, -s, -c, s, c][: q + 1]


def _exp_derivs(u0, q):
    e = exp(u0)
    return [e] * (q + 1)


def _log_derivs(u0, q):
    inv = 1.0 / u0
    d = [log(u0), inv]
    acc = inv
    for r in range(2, q + 1):
        acc = acc * inv * (-(r - 1))
        d.append(acc)
    return d


def _pow_derivs(u0, e, q):
    d = [power(u0, e)]
    fac = 1.0
    for r in range(1, q + 1):
        fac = fac * (e - (r - 1))
        # integer exponents terminate; avoid 0 * u0**negative at zeros
        d.append(0.0 if fac == 0.0 else fac * power(u0, e - r))
    return d


def _recip_derivs(u0, q):
    return _pow_derivs(u0, -1.0, q)


def _tan_derivs(u0, q):
    t = tan(u0)
    s = 1.0 + t * t
    d = [t, s]
    if q >= 2:
        d.append(2.0 * t * s)
    if q >= 3:
        d.append(2.0 * s * s + 4.0 * t * t * s)
    if q >= 4:
        d.append(16.0 * t * s * s + 8.0 * t * t * t * s)
    return d


def _atan_derivs(u0, q):
    w = 1.0 / (1.0 + u0 * u0)
    d = [atan(u0), w]
    if q >= 2:
        d.append(-2.0 * u0 * w * w)
    if q >= 3:
        d.append((6.0 * u0 * u0 - 2.0) * w * w * w)
    if q >= 4:
        d.append((24.0 * u0 - 24.0 * u0 * u0 * u0) * w * w * w * w)
    return d


def sin(x):
    return _dispatch(x, np.sin, lambda d: Dual(sin(d.val), cos(d.val) * d.eps), _sin_derivs)


def cos(x):
    return _dispatch(x, np.cos, lambda d: Dual(cos(d.val), -sin(d.val) * d.eps), _cos_derivs)


def tan(x):
    def dual_rule(d):
        t = tan(d.val)
        return Dual(t, (1.0 + t * t) * d.eps)

    return _dispatch(x, np.tan, dual_rule, _tan_derivs)


def exp(x):
    def dual_rule(d):
        e = exp(d.val)
        return Dual(e, e * d.eps)

    return _dispatch(x, np.exp, dual_rule, _exp_derivs)


def log(x):
    return _dispatch(x, np.log, lambda d: Dual(log(d.val), d.eps / d.val), _log_derivs)


def sqrt(x):
    return power(x, 0.5)


def atan(x):
    def dual_rule(d):
        return Dual(atan(d.val), d.eps / (1.0 + d.val * d.val))

    return _dispatch(x, np.arctan, dual_rule, _atan_derivs)


def power(x, e):
    """x**e for float e, generic over derivative scalars."""
    if isinstance(x, (Dual, TaylorScalar)):
        return x**e
    if isinstance(x, np.ndarray) and x.dtype == object:
        return _map_obj(lambda v: power(v, e), x)
    return np.power(x, e)
