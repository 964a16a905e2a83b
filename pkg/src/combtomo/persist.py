"""Model, dataset and table files.

Floats are written with 17 significant digits, so every number survives a
write/read cycle bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cis import CISSet, DimensionProfile, ProfileError
from .simulator import Dataset, ExperimentRecord, OutcomeSequence
from .stiefel import orthonormality_residual
from .tensor import DimensionError

MODEL_FORMAT = "combtomo-model"
MODEL_VERSION = 1
ON_MANIFOLD_LIMIT = 1e-8


class SchemaError(ValueError):
    """A file parsed but does not have the expected structure."""


def fmt_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    return format(x, ".17g")


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        # numeric leaves stay on one line
        if all(not isinstance(v, (dict, list, tuple)) for v in obj) or _is_row(obj):
            return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    return json.dumps(str(obj))


def _is_row(obj) -> bool:
    # a matrix row: list of [re, im] pairs
    return all(isinstance(v, (list, tuple)) and len(v) == 2
               and all(isinstance(c, (float, int, np.floating)) for c in v) for v in obj)


def dumps(obj, indent: int = 1) -> str:
    return _emit(obj, indent, 0) + "\n"


def matrix_to_json(m: np.ndarray) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_json(rows, where: str) -> np.ndarray:
    try:
        a = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: matrix entries must be [re, im] pairs") from exc
    if a.ndim != 3 or a.shape[2] != 2:
        raise SchemaError(f"{where}: expected a nested array of [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def model_to_dict(cis: CISSet, meta: dict | None = None) -> dict:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "profile": cis.profile.to_dict()}
    if meta:
        doc["meta"] = meta
    doc["comb"] = [matrix_to_json(v) for v in cis.comb.isometries]
    doc["instruments"] = [[matrix_to_json(ins.stack) for ins in slot] for slot in cis.instruments]
    doc["states"] = [matrix_to_json(s.purification) for s in cis.states]
    return doc


def model_from_dict(doc: dict, check_manifold: bool = True) -> CISSet:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise SchemaError("not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise SchemaError(f"unsupported model version {doc.get('version')!r}")
    extra = set(doc) - {"format", "version", "profile", "meta", "comb", "instruments", "states"}
    if extra:
        raise SchemaError(f"unknown model keys {sorted(extra)}")
    try:
        profile = DimensionProfile.from_dict(doc["profile"])
        point = [matrix_from_json(m, f"comb[{t}]") for t, m in enumerate(doc["comb"])]
        point += [matrix_from_json(m, f"instruments[{t}][{v}]")
                  for t, slot in enumerate(doc["instruments"]) for v, m in enumerate(slot)]
        point += [matrix_from_json(m, f"states[{u}]") for u, m in enumerate(doc["states"])]
        cis = CISSet.from_point(profile, point)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed model file: {exc}") from exc
    except (ProfileError, DimensionError) as exc:
        raise SchemaError(str(exc)) from exc
    if check_manifold:
        worst = max(orthonormality_residual(x) for x in point)
        if worst > ON_MANIFOLD_LIMIT:
            raise SchemaError(f"model factors are not isometries (residual {worst:.2e})")
    return cis


def write_model(path: str | Path, cis: CISSet, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps(model_to_dict(cis, meta)))
    return path


def read_model(path: str | Path, check_manifold: bool = True) -> CISSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(doc, check_manifold)


RECORD_KEYS = ("u", "v", "x", "L", "value", "kind", "shots")


def record_line(r: ExperimentRecord) -> str:
    s = r.sequence
    return ('{"u": %d, "v": [%s], "x": [%s], "L": %d, "value": %s, "kind": %s, "shots": %d}'
            % (s.u, ", ".join(map(str, s.v)), ", ".join(map(str, s.x)), s.length,
               fmt_float(r.value), json.dumps(r.kind), r.shots))


def write_dataset(path: str | Path, data: Dataset) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for r in data.records:
            fh.write(record_line(r) + "\n")
    return path


def read_dataset(path: str | Path) -> Dataset:
    records = []
    with Path(path).open() as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{n}: invalid JSON") from exc
            if not isinstance(doc, dict) or set(doc) != set(RECORD_KEYS):
                raise SchemaError(f"{path}:{n}: record keys must be {list(RECORD_KEYS)}")
            try:
                seq = OutcomeSequence(int(doc["u"]), tuple(int(i) for i in doc["v"]),
                                      tuple(int(i) for i in doc["x"]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{n}: {exc}") from exc
            if doc["L"] != seq.length or doc["kind"] not in ("exact", "frequency"):
                raise SchemaError(f"{path}:{n}: inconsistent length or kind")
            records.append(ExperimentRecord(seq, float(doc["value"]), doc["kind"], int(doc["shots"])))
    return Dataset(records)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(c) if isinstance(c, (float, np.floating)) else c for c in row])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


def sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
