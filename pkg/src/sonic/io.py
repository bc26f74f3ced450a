"""File formats: panel CSV, truth JSON and model JSON.

Panel CSV
    Header row of node ids, then one row per time point.  A missing entry is
    an empty field.  Floats are written with ``repr`` so they round-trip
    exactly.

Model / truth JSON
    ``V`` is stored as sparse ``[row, col, value]`` triplets.  The full
    operator is ``theta_from_factors(Clustering(labels, k), V)``.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .panel import Clustering, GroundTruth, Panel, SonicModel

MODEL_FORMAT = "sonic-model/1"
TRUTH_FORMAT = "sonic-truth/1"


class FormatError(ValueError):
    """Malformed input file."""


def _fmt(x: float) -> str:
    return repr(float(x))


def write_panel_csv(panel: Panel, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(panel_to_csv(panel))


def panel_to_csv(panel: Panel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(panel.node_ids)
    for values, mask in zip(panel.values, panel.mask):
        w.writerow([_fmt(x) if m else "" for x, m in zip(values, mask)])
    return buf.getvalue()


def read_panel_csv(path, zeros_are_missing: bool = False) -> Panel:
    with open(path, newline="") as fh:
        return panel_from_csv(fh.read(), zeros_are_missing)


def panel_from_csv(text: str, zeros_are_missing: bool = False) -> Panel:
    """Parse a panel; ``zeros_are_missing`` also treats literal zeros as unobserved."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if len(rows) < 3:
        raise FormatError("panel CSV needs a header and at least two data rows")
    header = [h.strip() for h in rows[0]]
    n = len(header)
    values = np.zeros((len(rows) - 1, n))
    mask = np.zeros((len(rows) - 1, n), dtype=bool)
    for t, row in enumerate(rows[1:]):
        if len(row) != n:
            raise FormatError(f"data row {t + 1} has {len(row)} fields, expected {n}")
        for i, field in enumerate(row):
            field = field.strip()
            if not field:
                continue
            try:
                x = float(field)
            except ValueError:
                raise FormatError(f"row {t + 1}, column {header[i]!r}: not a number: {field!r}") from None
            if zeros_are_missing and x == 0.0:
                continue
            values[t, i] = x
            mask[t, i] = True
    try:
        return Panel(values, mask, tuple(header))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def _triplets(v: np.ndarray) -> list[list]:
    rows, cols = np.nonzero(v)
    return [[int(r), int(c), float(v[r, c])] for r, c in zip(rows, cols)]


def _from_triplets(triplets, n: int, k: int) -> np.ndarray:
    v = np.zeros((n, k))
    for r, c, x in triplets:
        v[int(r), int(c)] = float(x)
    return v


def dump_json(obj: dict, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False, allow_nan=True) + "\n"
    Path(path).write_text(text)


def truth_to_dict(truth: GroundTruth, config: dict | None = None, rng: str | None = None) -> dict:
    return {
        "format": TRUTH_FORMAT,
        "n": truth.clustering.n,
        "k": truth.clustering.k,
        "labels": truth.clustering.labels.tolist(),
        "v_star": _triplets(truth.v_star),
        "config": config or {},
        "rng": rng,
    }


def truth_from_dict(d: dict) -> GroundTruth:
    if d.get("format") != TRUTH_FORMAT:
        raise FormatError(f"not a truth file (format={d.get('format')!r})")
    c = Clustering(np.asarray(d["labels"], dtype=np.int64), int(d["k"]))
    return GroundTruth.from_factors(c, _from_triplets(d["v_star"], int(d["n"]), int(d["k"])))


def model_to_dict(model: SonicModel, node_ids=None, provenance: dict | None = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "n": model.n,
        "k": model.k,
        "node_ids": list(node_ids) if node_ids is not None else None,
        "labels": model.clustering.labels.tolist(),
        "v": _triplets(model.v),
        "lambda": model.lam,
        "risk": model.risk,
        "iterations": model.iterations,
        "converged": model.converged,
        "restarts_used": model.restarts_used,
        "best_restart": model.best_restart,
        "restart_seeds": [int(s) for s in model.restart_seeds],
        "risk_history": list(model.history),
        "provenance": provenance or {},
    }


def model_from_dict(d: dict) -> SonicModel:
    if d.get("format") != MODEL_FORMAT:
        raise FormatError(f"not a model file (format={d.get('format')!r})")
    n, k = int(d["n"]), int(d["k"])
    c = Clustering(np.asarray(d["labels"], dtype=np.int64), k)
    return SonicModel(
        clustering=c,
        v=_from_triplets(d["v"], n, k),
        lam=float(d["lambda"]),
        risk=float(d["risk"]),
        iterations=int(d.get("iterations", 0)),
        restarts_used=int(d.get("restarts_used", 1)),
        converged=bool(d.get("converged", True)),
        best_restart=int(d.get("best_restart", 0)),
        restart_seeds=tuple(d.get("restart_seeds", ())),
        history=tuple(d.get("risk_history", ())),
    )


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
