"""Row bookkeeping for dataclasses whose array fields share a leading axis.

A record with 0-d / per-item arrays describes one item (a cloud, an output
node).  The same dataclass with an extra leading axis on every array is a
bank of items, which lets the learner update all clouds in one numpy call.
Nested dataclasses (the moment accumulators) are traversed recursively.
"""

from dataclasses import fields, is_dataclass

import numpy as np


def _map(obj, fn):
    kwargs = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        kwargs[f.name] = _map(value, fn) if is_dataclass(value) else fn(value)
    return type(obj)(**kwargs)


def _zip_map(a, b, fn):
    kwargs = {}
    for f in fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        kwargs[f.name] = _zip_map(va, vb, fn) if is_dataclass(va) else fn(va, vb)
    return type(a)(**kwargs)


def as_arrays(obj):
    """Coerce every leaf to a float or int ndarray (0-d for scalars)."""
    return _map(obj, lambda v: np.array(v))


def row(bank, i):
    """Copy of item ``i`` as a standalone record."""
    return _map(bank, lambda v: np.array(v[i]))


def view(bank, i):
    """One-item bank whose arrays are views into ``bank``; writes go through."""
    return _map(bank, lambda v: v[i:i + 1])


def stack(records, template=None):
    """Bank built from a sequence of records (``template`` supplies empty shapes)."""
    records = list(records)
    if not records:
        return _map(template, lambda v: np.empty((0,) + np.shape(v), dtype=np.asarray(v).dtype))
    first = records[0]
    out = _map(first, lambda v: [v])
    for rec in records[1:]:
        out = _zip_map(out, rec, lambda acc, v: acc + [v])
    return _map(out, lambda vs: np.stack([np.asarray(v) for v in vs]))


def append(bank, record):
    return _zip_map(bank, record, lambda b, r: np.concatenate([b, np.asarray(r)[None]]))


def delete(bank, i):
    return _map(bank, lambda v: np.delete(v, i, axis=0))


def copy(obj):
    return _map(obj, np.copy)


def size(bank):
    for f in fields(bank):
        value = getattr(bank, f.name)
        if is_dataclass(value):
            return size(value)
        return np.shape(value)[0]
    return 0


def leaves(obj, prefix=""):
    """Flat ``{dotted_name: array}`` view used by snapshots."""
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            out.update(leaves(value, key + "."))
        else:
            out[key] = value
    return out


def from_leaves(cls_template, flat, prefix=""):
    """Inverse of :func:`leaves`, using ``cls_template`` for the nesting."""
    kwargs = {}
    for f in fields(cls_template):
        value = getattr(cls_template, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            kwargs[f.name] = from_leaves(value, flat, key + ".")
        else:
            kwargs[f.name] = flat[key]
    return type(cls_template)(**kwargs)


def equal(a, b):
    """Bitwise equality of two records/banks."""
    la, lb = leaves(a), leaves(b)
    if la.keys() != lb.keys():
        return False
    return all(np.array_equal(la[k], lb[k]) and np.asarray(la[k]).dtype == np.asarray(lb[k]).dtype
               for k in la)
