"""Small tensor utilities shared by the geometry and jet layers.

Index convention used throughout the package: tensor component axes come
first, derivative axes follow them, and any broadcast batch axes trail at
the end.  Einsum subscripts therefore always carry a trailing ``...`` per
operand.  Arrays are float64 on the plain evaluation path and dtype=object
when the entries are derivative scalars (Dual / TaylorScalar), in which
case the batch lives inside the scalars and the object array has exactly
its index axes.
"""

import numpy as np

__all__ = [
    "ein",
    "mat_inv",
    "mat_det",
    "build_matrix",
    "pack",
    "max_abs",
    "real_value",
]


def real_value(x):
    """Recursively strip derivative structure, returning plain floats/arrays."""
    while True:
        if hasattr(x, "val"):
            x = x.val
        elif hasattr(x, "coeffs"):
            x = x.coeffs[0]
        elif isinstance(x, np.ndarray) and x.dtype == object:
            reals = [real_value(el) for el in x.reshape(-1)]
            batch = np.broadcast_shapes(*[np.shape(r) for r in reals])
            out = np.empty(x.shape + batch)
            flat = out.reshape((-1,) + batch)
            for i, r in enumerate(reals):
                flat[i] = r
            return out
        else:
            return x


def _is_object(a):
    return isinstance(a, np.ndarray) and a.dtype == object


def ein(spec, *ops):
    """np.einsum with an explicit loop fallback for object-dtype operands.

    ``spec`` must use the trailing-``...`` convention for every operand and
    the output.  numpy's own object-dtype einsum handles most cases; the
    fallback covers mixed object/float operands it occasionally rejects.
    """
    try:
        return np.einsum(spec, *ops)
    except (TypeError, ValueError):
        if not any(_is_object(np.asarray(op)) for op in ops):
            raise
        return _object_einsum(spec, *ops)


def _object_einsum(spec, *ops):
    lhs, rhs = spec.split("->")
    in_specs = [s.replace("...", "") for s in lhs.split(",")]
    out_spec = rhs.replace("...", "")
    ops = [np.asarray(op, dtype=object) for op in ops]
    dims = {}
    for s, op in zip(in_specs, ops):
        if op.ndim != len(s):
            raise ValueError("object einsum fallback requires batch-free operands")
        for ch, d in zip(s, op.shape):
            dims.setdefault(ch, d)
    sum_idx = sorted(set("".join(in_specs)) - set(out_spec))
    out_shape = tuple(dims[ch] for ch in out_spec)
    out = np.empty(out_shape, dtype=object) if out_shape else None
    for out_key in np.ndindex(*out_shape) if out_shape else [()]:
        env = dict(zip(out_spec, out_key))
        total = 0.0
        for sum_key in np.ndindex(*[dims[ch] for ch in sum_idx]):
            env.update(zip(sum_idx, sum_key))
            term = None
            for s, op in zip(in_specs, ops):
                factor = op[tuple(env[ch] for ch in s)] if s else op[()]
                term = factor if term is None else term * factor
            total = total + term
        if out is None:
            return total
        out[out_key] = total
    return out


def pack(shape, entry_fn):
    """Assemble a tensor field value from per-entry results.

    ``entry_fn(idx)`` is called for every index tuple of ``shape``.
    Entries may be floats, broadcastable batch arrays, or derivative
    scalars.  Plain numeric entries produce a float array with trailing
    batch axes; any exotic entry produces an object array of scalars.
    """
    entries = [entry_fn(idx) for idx in np.ndindex(*shape)]
    exotic = any(
        not isinstance(e, (int, float, np.integer, np.floating, np.ndarray))
        or (isinstance(e, np.ndarray) and e.dtype == object)
        for e in entries
    )
    if exotic:
        out = np.empty(shape, dtype=object)
        flat = out.reshape(-1)
        for i, e in enumerate(entries):
            flat[i] = e
        return out
    batch = np.broadcast_shapes(*[np.shape(e) for e in entries])
    out = np.empty(shape + batch, dtype=float)
    flat = out.reshape((-1,) + batch)
    for i, e in enumerate(entries):
        flat[i] = np.broadcast_to(e, batch)
    return out


def build_matrix(rows):
    """Assemble a (d, d) field value from nested entry lists.

    Entries may be floats, broadcastable batch arrays, or derivative
    scalars.  Plain numeric entries produce a float array with trailing
    batch axes; any exotic entry produces an object array of scalars.
    """
    d = len(rows)
    return pack((d, d), lambda ij: rows[ij[0]][ij[1]])


def _det2(m):
    return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]


def mat_det(m):
    """Determinant of a (d, d[, batch]) matrix field value, d <= 3.

    Cofactor expansion keeps the computation generic over derivative
    scalars; the float path could use np.linalg but small fixed formulas
    behave identically and keep one code path.
    """
    d = m.shape[0]
    if d == 1:
        return m[0, 0]
    if d == 2:
        return _det2(m)
    if d == 3:
        return (
            m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
            - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
        )
    raise ValueError(f"mat_det supports d <= 3, got {d}")


def mat_inv(m):
    """Adjugate inverse of a (d, d[, batch]) matrix field value, d <= 3."""
    d = m.shape[0]
    det = mat_det(m)
    if d == 1:
        inv = np.empty_like(m)
        inv[0, 0] = 1.0 / det
        return inv
    if d == 2:
        rows = [[m[1, 1] / det, -m[0, 1] / det], [-m[1, 0] / det, m[0, 0] / det]]
        return build_matrix(rows)
    if d == 3:
        c = [[None] * 3 for _ in range(3)]
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != i]
                s = [k for k in range(3) if k != j]
                minor = m[r[0], s[0]] * m[r[1], s[1]] - m[r[0], s[1]] * m[r[1], s[0]]
                sign = 1.0 if (i + j) % 2 == 0 else -1.0
                c[j][i] = sign * minor / det  # transposed cofactor
        return build_matrix(c)
    raise ValueError(f"mat_inv supports d <= 3, got {d}")


def max_abs(arr):
    """Max absolute entry of an array, descending through derivative scalars."""
    vals = real_value(np.asarray(arr))
    if np.shape(vals) == ():
        return abs(float(vals))
    return float(np.max(np.abs(vals))) if np.size(vals) else 0.0
