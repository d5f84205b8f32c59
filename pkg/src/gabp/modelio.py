"""JSON model files.

Layout::

    {"kind": "linear",
     "nodes": [{"id": 1, "dim": 2, "W": [[...], [...]]}, ...],
     "edges": [{"i": 1, "j": 2, "A_ji": [[...]], "A_ij": [[...]], "R": [[...]], "y": [...]}, ...],
     "ground_truth": {"1": [...], ...}}            # optional

    {"kind": "gmrf", "n": 3, "J": [[i, j, value], ...], "h": [...]}

Matrices are nested row lists, ``J`` is a list of 1-based COO triplets that
must include both ``(i, j)`` and ``(j, i)``. Floats are written with 17
significant digits so a save/load round trip is bit exact.
"""

import hashlib
import json
import math

import numpy as np

from .model import EdgeObservation, GmrfModel, LinearGaussianModel, NodeParams


class ModelFormatError(ValueError):
    def __init__(self, message, field=None, location=None):
        self.field = field
        self.location = location
        parts = [message]
        if field is not None:
            parts.append(f"field={field}")
        if location is not None:
            parts.append(f"at {location}")
        super().__init__(" ".join(parts))


def _fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite values cannot be written to a model file")
    if x == int(x) and abs(x) < 1e16:
        return repr(float(x))
    return format(x, ".17g")


def dumps(obj, indent=None, _level=0):
    """``json.dumps`` replacement that renders floats with 17 significant digits."""
    pad = "" if indent is None else "\n" + " " * (indent * (_level + 1))
    end = "" if indent is None else "\n" + " " * (indent * _level)
    sep = ", " if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # keep numeric rows on one line
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[" + sep.join(items) + end + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(float(obj)):
            return json.dumps(None)
        return _fmt_float(obj)
    return json.dumps(obj)


def _rows(a):
    return [[float(v) for v in row] for row in np.atleast_2d(a)]


def to_dict(model):
    if model.kind == "gmrf":
        rows, cols = np.nonzero(model.J)
        return {
            "kind": "gmrf",
            "n": model.n,
            "J": [[int(r) + 1, int(c) + 1, float(model.J[r, c])] for r, c in zip(rows, cols)],
            "h": [float(v) for v in model.h],
        }
    doc = {
        "kind": "linear",
        "nodes": [{"id": n.node_id, "dim": n.dim, "W": _rows(n.prior_cov)} for n in model.nodes],
        "edges": [
            {
                "i": e.i,
                "j": e.j,
                "A_ji": _rows(e.a_ji),
                "A_ij": _rows(e.a_ij),
                "R": _rows(e.noise_cov),
                "y": [float(v) for v in e.y],
            }
            for e in model.edges
        ],
    }
    if model.ground_truth is not None:
        doc["ground_truth"] = {str(k): [float(v) for v in x] for k, x in sorted(model.ground_truth.items())}
    return doc


def model_text(model):
    return dumps(to_dict(model), indent=1) + "\n"


def digest(model):
    """SHA-256 of the canonical file rendering."""
    return hashlib.sha256(dumps(to_dict(model)).encode()).hexdigest()


def save(model, path):
    with open(path, "w") as fh:
        fh.write(model_text(model))


def load(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid JSON: {exc}") from exc
    return from_dict(doc)


def _require(doc, key, location):
    if not isinstance(doc, dict) or key not in doc:
        if key == "y":
            raise ModelFormatError("missing observation", field="y", location=location)
        raise ModelFormatError(f"missing field {key!r}", field=key, location=location)
    return doc[key]


def _matrix(value, field, location, shape=None):
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError("not a numeric matrix", field=field, location=location) from exc
    if a.ndim != 2:
        raise ModelFormatError("expected a nested row list", field=field, location=location)
    if shape is not None and a.shape != shape:
        raise ModelFormatError(
            f"dimension mismatch: shape {a.shape}, expected {shape}", field=field, location=location
        )
    return a


def _vector(value, field, location):
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError("not a numeric vector", field=field, location=location) from exc
    if a.ndim != 1:
        raise ModelFormatError("expected a flat list", field=field, location=location)
    return a


def from_dict(doc):
    kind = _require(doc, "kind", "document")
    if kind == "gmrf":
        return _gmrf_from_dict(doc)
    if kind == "linear":
        return _linear_from_dict(doc)
    raise ModelFormatError(f"unknown kind {kind!r}", field="kind", location="document")


def _gmrf_from_dict(doc):
    n = _require(doc, "n", "document")
    if not isinstance(n, int) or n < 1:
        raise ModelFormatError("n must be a positive integer", field="n", location="document")
    h = _vector(_require(doc, "h", "document"), "h", "document")
    if h.shape != (n,):
        raise ModelFormatError(f"dimension mismatch: h has length {h.shape[0]}, expected {n}", field="h", location="document")
    J = np.zeros((n, n))
    seen = set()
    for k, trip in enumerate(_require(doc, "J", "document")):
        loc = f"J entry {k}"
        if not isinstance(trip, list) or len(trip) != 3:
            raise ModelFormatError("expected [i, j, value]", field="J", location=loc)
        i, j, v = trip
        if not (isinstance(i, int) and isinstance(j, int) and 1 <= i <= n and 1 <= j <= n):
            raise ModelFormatError("index out of range", field="J", location=loc)
        if (i, j) in seen:
            raise ModelFormatError("duplicate entry", field="J", location=f"({i},{j})")
        seen.add((i, j))
        J[i - 1, j - 1] = float(v)
    if not np.array_equal(J, J.T):
        r, c = np.argwhere(J != J.T)[0]
        raise ModelFormatError("non-symmetric J", field="J", location=f"({r + 1},{c + 1})")
    return GmrfModel(J, h)


def _linear_from_dict(doc):
    nodes = []
    dims = {}
    for k, nd in enumerate(_require(doc, "nodes", "document")):
        loc = f"node entry {k}"
        nid = _require(nd, "id", loc)
        dim = _require(nd, "dim", loc)
        if not isinstance(nid, int) or not isinstance(dim, int) or dim < 1:
            raise ModelFormatError("id and dim must be integers, dim >= 1", field="dim", location=loc)
        if nid in dims:
            raise ModelFormatError("duplicate node id", field="id", location=f"node {nid}")
        w = _matrix(_require(nd, "W", f"node {nid}"), "W", f"node {nid}", (dim, dim))
        dims[nid] = dim
        nodes.append(NodeParams(nid, dim, w))
    edges = []
    for k, ed in enumerate(_require(doc, "edges", "document")):
        i = _require(ed, "i", f"edge entry {k}")
        j = _require(ed, "j", f"edge entry {k}")
        loc = f"edge ({i},{j})"
        if i not in dims or j not in dims:
            raise ModelFormatError("unknown endpoint", field="i/j", location=loc)
        y = _vector(_require(ed, "y", loc), "y", loc)
        m = y.shape[0]
        try:
            a_ji = _matrix(_require(ed, "A_ji", loc), "A_ji", loc, (m, dims[i]))
            a_ij = _matrix(_require(ed, "A_ij", loc), "A_ij", loc, (m, dims[j]))
            r = _matrix(_require(ed, "R", loc), "R", loc, (m, m))
        except ModelFormatError as exc:
            if "dimension mismatch" in str(exc):
                raise ModelFormatError(f"dimension mismatch edge ({i},{j})", field=exc.field, location=loc) from exc
            raise
        edges.append(EdgeObservation(i, j, a_ji, a_ij, r, y))
    truth = None
    if "ground_truth" in doc:
        truth = {int(k): _vector(v, "ground_truth", f"node {k}") for k, v in doc["ground_truth"].items()}
    return LinearGaussianModel(tuple(nodes), tuple(edges), ground_truth=truth)
