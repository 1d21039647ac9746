"""JSON instance files and JSON/CSV report emission."""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from maxent.errors import DomainError, IntegrityError, ParseError, ValidationError
from maxent.oracles import ExplicitOracle, ProductFormOracle, SpanningTreeOracle
from maxent.support import FacetSystem, affine_hull

SCHEMA_VERSION = 1


@dataclass
class Instance:
    oracle: object
    theta: np.ndarray | None = None
    facets: FacetSystem | None = None
    kind: str = "explicit"
    extra: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return self.oracle.dimension


def _require(d, key, where=None):
    if key not in d:
        raise ParseError("missing required field", field=key if where is None else f"{where}.{key}")
    return d[key]


def _matrix(value, name, integer=False):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError("must be a numeric array", field=name) from None
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if name.endswith("support") else arr
    if integer and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ParseError("entries must be integers", field=name)
    return arr


def _vector(value, name, length=None):
    try:
        arr = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ParseError("must be a numeric vector", field=name) from None
    if length is not None and arr.shape[0] != length:
        raise ParseError(f"expected {length} entries, got {arr.shape[0]}", field=name)
    if not np.all(np.isfinite(arr)):
        raise ParseError("entries must be finite", field=name)
    return arr


def _build_oracle(d):
    spec = d.get("oracle", {"type": "explicit"})
    if not isinstance(spec, dict):
        raise ParseError("must be an object", field="oracle")
    kind = spec.get("type", "explicit")
    try:
        if kind == "explicit":
            pts = _matrix(_require(d, "support"), "support", integer=True)
            if pts.ndim != 2:
                raise ParseError("must be a list of integer vectors", field="support")
            w = d.get("log_weights")
            w = np.zeros(pts.shape[0]) if w is None else _vector(w, "log_weights", pts.shape[0])
            return kind, ExplicitOracle(pts.astype(np.int64), w, d.get("declared_L_p"))
        if kind == "product_form":
            A = _matrix(_require(spec, "A", "oracle"), "oracle.A")
            r = _vector(_require(spec, "r", "oracle"), "oracle.r")
            return kind, ProductFormOracle(A, r)
        if kind == "spanning_tree":
            nv = int(_require(spec, "num_vertices", "oracle"))
            edges = _require(spec, "edges", "oracle")
            w = spec.get("edge_log_weights")
            w = None if w is None else _vector(w, "oracle.edge_log_weights", len(edges))
            return kind, SpanningTreeOracle(nv, edges, w)
    except DomainError as exc:
        raise ValidationError(str(exc)) from exc
    raise ParseError(f"unknown oracle type {kind!r}", field="oracle.type")


def instance_from_dict(d):
    """Validate a parsed instance; bounds declared in the file are checked against recomputed ones."""
    if not isinstance(d, dict):
        raise ParseError("instance must be a JSON object")
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version {version}", field="schema_version")
    kind, oracle = _build_oracle(d)
    m = oracle.dimension
    if "dimension" in d and int(d["dimension"]) != m:
        raise ValidationError(f"dimension {d['dimension']} does not match the support ({m})")
    theta = None
    if d.get("theta") is not None:
        theta = _vector(d["theta"], "theta", m)
    facets = None
    if d.get("facets") is not None:
        fd = d["facets"]
        A = _matrix(_require(fd, "A", "facets"), "facets.A", integer=True).reshape(-1, m)
        b = _vector(_require(fd, "b", "facets"), "facets.b", A.shape[0])
        origin = basis = None
        if isinstance(oracle, ExplicitOracle):
            origin, basis = affine_hull(oracle.points)
        facets = FacetSystem.from_arrays(A, b, declared_M=fd.get("M", d.get("declared_M")),
                                         origin=origin, subspace_basis=basis)
        if isinstance(oracle, ExplicitOracle):
            try:
                facets.check_support(oracle.points)
            except IntegrityError as exc:
                raise ValidationError(str(exc)) from exc
    extra = {k: v for k, v in d.items()
             if k not in {"schema_version", "dimension", "support", "log_weights", "theta",
                          "facets", "oracle", "declared_M", "declared_L_p"}}
    return Instance(oracle, theta, facets, kind, extra)


def load_instance(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                         field="<document>") from None
    return instance_from_dict(data)


def instance_to_dict(inst):
    out = {"schema_version": SCHEMA_VERSION, "dimension": int(inst.dimension)}
    o = inst.oracle
    if inst.kind == "explicit":
        out["support"] = o.points.tolist()
        out["log_weights"] = [float(v) for v in o.log_weights]
    elif inst.kind == "product_form":
        out["oracle"] = {"type": "product_form", "A": o.A.tolist(), "r": o.r.tolist()}
    else:
        out["oracle"] = {"type": "spanning_tree", "num_vertices": o.num_vertices,
                         "edges": [list(e) for e in o.edges],
                         "edge_log_weights": [float(v) for v in o.edge_log_weights]}
    if inst.theta is not None:
        out["theta"] = [float(v) for v in inst.theta]
    if inst.facets is not None:
        out["facets"] = {"A": inst.facets.A.tolist(), "b": [float(v) for v in inst.facets.b]}
    out.update(inst.extra)
    return out


def dumps_instance(inst):
    return json.dumps(instance_to_dict(inst), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return str(v)  # JSON has no inf/nan literals
        return v
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def format_report(report, fmt="json", deterministic=False, kind=None):
    """Serialize a report. JSON gets a header object; CSV gets ``#`` header lines.

    ``report`` is a dict / object with ``to_dict`` (JSON) or a list of rows
    whose first row is the column header (CSV). Floats are written with
    ``repr`` precision so values round-trip exactly.
    """
    header = {"schema_version": SCHEMA_VERSION}
    if kind:
        header["kind"] = kind
    if not deterministic:
        header["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    if fmt == "json":
        body = _jsonable(report)
        return json.dumps({"header": header, "report": body}, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        for k, v in header.items():
            buf.write(f"# {k}={v}\n")
        writer = csv.writer(buf, lineterminator="\n")
        for row in report:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}")


def emit_report(report, path=None, fmt="json", deterministic=False, kind=None, stream=None):
    text = format_report(report, fmt, deterministic, kind)
    if path is None:
        if stream is not None:
            stream.write(text)
        return text
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text
