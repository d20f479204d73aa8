"""Input files and the JSON result document.

Samples file (CSV)::

    group,x1,x2
    A,0,1
    B,1,1

Optional support file (CSV, header ``x1,...,xd``). Without one, the support
is the set of distinct observed rows in increasing lexicographic order.

Measures file (JSON)::

    {"support": [[5], [10]],
     "groups": [{"name": "A", "weights": [0.5, 0.5], "n": 40}, ...]}
"""
from __future__ import annotations

import csv
import json
import json.decoder
import json.scanner
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateSupportPoint, ParseError, SupportMismatch, ValidationError
from .measures import Measure, MeasureCollection, SupportSpace, canonical_point

SUM_TOL = 1e-9


@dataclass
class Dataset:
    """A validated collection, plus raw support indices when samples were read."""

    collection: MeasureCollection
    groups: list[np.ndarray] | None = None
    source: str = ""


def _read_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=str(path)) from None
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty file", path=str(path))
    return rows


def _coords(cells, line, path):
    try:
        return canonical_point([c.strip() for c in cells])
    except ValidationError as exc:
        raise ParseError(str(exc), line=line, path=str(path)) from None


def read_support(path) -> SupportSpace:
    rows = _read_csv(path)
    (hline, header), body = rows[0], rows[1:]
    d = len(header)
    pts = []
    for line, r in body:
        if len(r) != d:
            raise ParseError(f"expected {d} columns, got {len(r)}", line=line, path=str(path))
        pts.append(_coords(r, line, path))
    if not pts:
        raise ParseError("support file lists no points", path=str(path))
    return SupportSpace(pts)


def read_samples(path, support_path=None) -> Dataset:
    rows = _read_csv(path)
    (hline, header), body = rows[0], rows[1:]
    if not header or header[0].strip().lower() != "group" or len(header) < 2:
        raise ParseError("header must be 'group,x1,...,xd'", line=hline, path=str(path))
    d = len(header) - 1
    order: dict[str, list] = {}
    lines: dict[str, list] = {}
    for line, r in body:
        if len(r) != d + 1:
            raise ParseError(f"expected {d + 1} columns, got {len(r)}", line=line, path=str(path))
        name = r[0].strip()
        if not name:
            raise ParseError("empty group label", line=line, path=str(path))
        order.setdefault(name, []).append(_coords(r[1:], line, path))
        lines.setdefault(name, []).append(line)
    if len(order) < 2:
        raise ValidationError(f"need at least two groups, found {len(order)}")
    if support_path is not None:
        support = read_support(support_path)
        if support.d != d:
            raise SupportMismatch(f"support has dimension {support.d}, samples have {d}")
    else:
        keys = sorted({p for pts in order.values() for p in pts})
        support = SupportSpace(keys)
    groups = []
    for name, pts in order.items():
        idx = []
        for p, line in zip(pts, lines[name]):
            try:
                idx.append(support.index_of(p))
            except ValidationError as exc:
                raise ParseError(str(exc), line=line, path=str(path)) from None
        groups.append(np.array(idx, dtype=np.int64))
    measures = tuple(Measure.from_counts(np.bincount(g, minlength=support.N), support) for g in groups)
    return Dataset(MeasureCollection(measures, tuple(order)), groups, str(path))


class _LocatedDict(dict):
    line = None


def _located_object(s_and_end, *args):
    s, end = s_and_end
    obj, new_end = json.decoder.JSONObject(s_and_end, *args)
    out = _LocatedDict(obj)
    out.line = s.count("\n", 0, end) + 1
    return out, new_end


class _LocatingDecoder(json.JSONDecoder):
    """Records the starting line of every JSON object for error messages."""

    def __init__(self):
        super().__init__()
        self.parse_object = _located_object
        self.scan_once = json.scanner.py_make_scanner(self)


def read_measures(path) -> Dataset:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=str(path)) from None
    try:
        doc = _LocatingDecoder().decode(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=str(path)) from None
    if not isinstance(doc, dict) or "support" not in doc or "groups" not in doc:
        raise ParseError("expected an object with 'support' and 'groups'", line=1, path=str(path))
    try:
        support = SupportSpace(doc["support"])
    except DuplicateSupportPoint:
        raise
    except (TypeError, ValidationError) as exc:
        raise ParseError(f"bad support: {exc}", line=getattr(doc, "line", None), path=str(path)) from None
    groups = doc["groups"]
    if not isinstance(groups, list):
        raise ParseError("'groups' must be a list", line=doc.line, path=str(path))
    measures, names = [], []
    for i, g in enumerate(groups):
        line = getattr(g, "line", None)
        if not isinstance(g, dict) or "weights" not in g:
            raise ParseError(f"group {i} needs 'weights'", line=line, path=str(path))
        try:
            w = np.array(g["weights"], dtype=float)
        except (TypeError, ValueError):
            raise ParseError(f"group {i}: weights must be numbers", line=line, path=str(path)) from None
        if w.ndim != 1 or w.size != support.N:
            raise ParseError(f"group {i}: {w.size} weights for {support.N} support points",
                             line=line, path=str(path))
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ParseError(f"group {i}: weights must be finite and nonnegative", line=line, path=str(path))
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise ParseError(f"group {i}: weights sum to {float(w.sum())!r}, not 1", line=line, path=str(path))
        n = g.get("n")
        if n is not None and (not isinstance(n, int) or isinstance(n, bool) or n < 1):
            raise ParseError(f"group {i}: n must be a positive integer", line=line, path=str(path))
        measures.append(Measure(w / w.sum(), support, n))
        names.append(str(g.get("name", f"group{i + 1}")))
    if len(measures) < 2:
        raise ValidationError(f"need at least two groups, found {len(measures)}")
    return Dataset(MeasureCollection(tuple(measures), tuple(names)), None, str(path))


def write_measures(path, collection: MeasureCollection):
    doc = {
        "support": collection.support.points.tolist(),
        "groups": [
            {"name": (collection.names or [f"group{i + 1}" for i in range(collection.k)])[i],
             "weights": m.weights.tolist(), "n": m.sample_size}
            for i, m in enumerate(collection.measures)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_samples(path, groups, support: SupportSpace, names=None):
    names = names or [f"group{i + 1}" for i in range(len(groups))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group"] + [f"x{j + 1}" for j in range(support.d)])
        labels = support.labels()
        for name, g in zip(names, groups):
            for i in g:
                w.writerow([name] + labels[int(i)].split(" "))


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj) + 0.0  # folds -0.0 into 0.0
        return v if np.isfinite(v) else None
    return obj


def dumps_document(doc: dict) -> str:
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"
