"""CSV readers and the JSON model file."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .classify import ClassifierModel
from .errors import DomainError
from .stats import ClassBlock, LabeledDataset

SCHEMA_VERSION = 1


class InputFormatError(DomainError):
    """A CSV or model file does not follow the documented layout."""


def file_fingerprint(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _float(value: str, line: int, column: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise InputFormatError(f"line {line}: column {column!r}: not a number: {value!r}") from None
    if not math.isfinite(out):
        raise InputFormatError(f"line {line}: column {column!r}: non-finite value {value!r}")
    return out


def read_labeled_csv(path, group_mean: Optional[str] = None) -> LabeledDataset:
    """Read ``class_id,x1,...,xp`` rows (header required) into a dataset.

    With ``group_mean`` naming a column, rows sharing a class id and a value of
    that column are averaged first (technical replicates); the column itself
    is not a feature.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputFormatError(f"{path}: empty file") from None
        if len(header) < 2:
            raise InputFormatError("line 1: need a class id column and at least one feature")
        group_col = None
        if group_mean is not None:
            if group_mean not in header[1:]:
                raise InputFormatError(f"line 1: no column named {group_mean!r}")
            group_col = header.index(group_mean)
        feature_cols = [c for c in range(1, len(header)) if c != group_col]
        if not feature_cols:
            raise InputFormatError("line 1: no feature columns")
        rows: dict[str, dict[str, list[list[float]]]] = {}
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputFormatError(f"line {line}: expected {len(header)} columns, got {len(row)}")
            key = row[group_col] if group_col is not None else str(line)
            values = [_float(row[c], line, header[c]) for c in feature_cols]
            rows.setdefault(row[0], {}).setdefault(key, []).append(values)
    if not rows:
        raise InputFormatError(f"{path}: no data rows")
    blocks = []
    for cid, groups in rows.items():
        obs = np.array([np.mean(v, axis=0) for v in groups.values()])
        blocks.append(ClassBlock(cid, obs))
    return LabeledDataset(len(feature_cols), blocks)


def read_query_csv(path, p: int) -> tuple[list[str], np.ndarray]:
    """Queries with ``p`` feature columns and an optional leading id column.

    Without an id column, queries are numbered from 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(csv.reader(fh))
    lines = [r for r in lines if r and any(cell.strip() for cell in r)]
    if not lines:
        return [], np.empty((0, p))
    header, body = lines[0], lines[1:]
    if len(header) == p + 1:
        has_id = True
    elif len(header) == p:
        has_id = False
    else:
        raise InputFormatError(f"line 1: model has p={p} features, query header has {len(header)} columns")
    ids, values = [], []
    for line, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputFormatError(f"line {line}: expected {len(header)} columns, got {len(row)}")
        cells = row[1:] if has_id else row
        ids.append(row[0] if has_id else str(line - 1))
        values.append([_float(c, line, header[j + has_id]) for j, c in enumerate(cells)])
    return ids, np.array(values, dtype=float).reshape(-1, p)


def _tolist(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def model_to_dict(model: ClassifierModel, provenance: Optional[dict] = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "p": model.p,
        "class_ids": list(model.class_ids),
        "means": _tolist(model.means),
        "weights": _tolist(model.weights),
        "covariances": _tolist(model.covariances),
        "adjusted_covariances": _tolist(model.adjusted_covariances),
        "tau": _tolist(model.tau),
        "df_mode": model.df_mode,
        "use_adjusted": bool(model.use_adjusted),
        "provenance": provenance or {},
    }
    if model.fit is not None:
        fit = model.fit
        doc["fit"] = {
            "loglik": fit.loglik,
            "bic": fit.bic,
            "n_iter": fit.n_iter,
            "converged": fit.converged,
            "variant": fit.variant,
        }
    return doc


def write_model(path, model: ClassifierModel, provenance: Optional[dict] = None) -> None:
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(model_to_dict(model, provenance), indent=1) + "\n", encoding="utf-8")


def model_from_dict(doc: dict) -> ClassifierModel:
    try:
        version = doc["schema_version"]
        if version != SCHEMA_VERSION:
            raise InputFormatError(f"unsupported model schema_version {version}")
        kind = doc["kind"]
        p = int(doc["p"])
        class_ids = [str(c) for c in doc["class_ids"]]
        means = np.array(doc["means"], dtype=float).reshape(len(class_ids), p)
        covs = np.array(doc["covariances"], dtype=float)
        covs = covs.reshape(-1, p, p)
        tau = None if doc.get("tau") is None else np.array(doc["tau"], dtype=float)
        weights = None if doc.get("weights") is None else np.array(doc["weights"], dtype=float)
        adjusted = doc.get("adjusted_covariances")
        adjusted = None if adjusted is None else np.array(adjusted, dtype=float).reshape(-1, p, p)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"malformed model file: {exc}") from None
    for name, stack in (("covariances", covs), ("adjusted_covariances", adjusted)):
        if stack is None:
            continue
        scale = max(1.0, float(np.abs(stack).max()))
        if np.abs(stack - np.swapaxes(stack, 1, 2)).max() > 1e-9 * scale:
            raise InputFormatError(f"model file: {name} are not symmetric")
    expected = {"lda": 1, "qda": len(class_ids)}.get(kind)
    if expected is not None and covs.shape[0] != expected:
        raise InputFormatError(f"model file: {kind} needs {expected} covariance matrices, got {covs.shape[0]}")
    try:
        return ClassifierModel(
            kind=kind,
            class_ids=class_ids,
            means=means,
            covariances=covs,
            tau=tau,
            weights=weights,
            adjusted_covariances=adjusted,
            use_adjusted=bool(doc.get("use_adjusted", False)),
            df_mode=doc.get("df_mode", "n"),
        )
    except DomainError as exc:
        raise InputFormatError(f"model file: {exc}") from None


def read_model(path) -> ClassifierModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc)
