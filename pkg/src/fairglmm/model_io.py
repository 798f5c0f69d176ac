"""Plain-text model files.

Layout, one record per line, fields separated by a single tab::

    fairglmm-model	1
    estimator	fair-glmm
    beta0	<float>
    beta	<feature name>	<float>      (one line per feature, in order)
    b	<stratum id as JSON>	<float>     (one line per stratum, in order)
    q	<float>
    meta	<key>	<value>                (any number)
    encoding	<JSON list of column specs>  (optional)

Floats are written with ``repr`` so a reload reproduces them bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import DataError, ModelParams
from .ingest import ColumnSpec

MAGIC = "fairglmm-model"
VERSION = 1


@dataclass
class ModelFile:
    estimator: str
    params: ModelParams
    feature_names: list[str]
    stratum_ids: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)
    encoding: list[ColumnSpec] | None = None


def _id_json(value) -> str:
    return json.dumps(value.item() if isinstance(value, np.generic) else value)


def write_model(model: ModelFile, path) -> None:
    p = model.params
    if len(model.feature_names) != p.beta.shape[0] or len(model.stratum_ids) != p.b.shape[0]:
        raise ValueError("feature names or stratum ids do not match the parameters")
    lines = [f"{MAGIC}\t{VERSION}", f"estimator\t{model.estimator}", f"beta0\t{float(p.beta0)!r}"]
    lines += [f"beta\t{name}\t{float(v)!r}" for name, v in zip(model.feature_names, p.beta)]
    lines += [f"b\t{_id_json(i)}\t{float(v)!r}" for i, v in zip(model.stratum_ids, p.b)]
    lines.append(f"q\t{float(p.q)!r}")
    lines += [f"meta\t{k}\t{v}" for k, v in model.meta.items()]
    if model.encoding is not None:
        lines.append("encoding\t" + json.dumps([s.to_dict() for s in model.encoding]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_model(path) -> ModelFile:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split("\t")[0] != MAGIC:
        raise DataError(f"{path} is not a model file")
    version = int(lines[0].split("\t")[1])
    if version != VERSION:
        raise DataError(f"unsupported model file version {version}")
    estimator, beta0, q = "", 0.0, 0.0
    names, beta, ids, b, meta, encoding = [], [], [], [], {}, None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        kind, *rest = line.split("\t")
        try:
            if kind == "estimator":
                estimator = rest[0]
            elif kind == "beta0":
                beta0 = float(rest[0])
            elif kind == "beta":
                names.append(rest[0])
                beta.append(float(rest[1]))
            elif kind == "b":
                ids.append(json.loads(rest[0]))
                b.append(float(rest[1]))
            elif kind == "q":
                q = float(rest[0])
            elif kind == "meta":
                meta[rest[0]] = rest[1] if len(rest) > 1 else ""
            elif kind == "encoding":
                encoding = [ColumnSpec.from_dict(d) for d in json.loads(rest[0])]
            else:
                raise DataError(f"{path}:{lineno}: unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed record") from exc
    params = ModelParams(beta0, np.asarray(beta, dtype=float), np.asarray(b, dtype=float), q)
    return ModelFile(estimator, params, names, np.asarray(ids), meta, encoding)
