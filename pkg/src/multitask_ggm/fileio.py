"""CSV ingestion, sample covariances and result persistence."""

from __future__ import annotations

import csv
import hashlib
import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DegenerateInputError

SYMMETRY_RTOL = 1e-10
SCHEMA_VERSION = 1
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class MatrixFormatError(ValueError):
    """A CSV file is not a valid numeric matrix for its role."""


@dataclass(frozen=True)
class MatrixFile:
    data: np.ndarray
    role: str
    path: str

    @property
    def shape(self):
        return self.data.shape


def _is_number(cell: str) -> bool:
    return bool(_NUMBER.match(cell.strip()))


def load_matrix_csv(path, role: str) -> MatrixFile:
    """Read a comma-separated numeric matrix.

    A first line holding any non-numeric cell is treated as a header.
    ``role`` is ``"samples"`` (rows are observations) or ``"covariance"``
    (square; symmetrized when asymmetry is within 1e-10 relative).
    """
    if role not in ("samples", "covariance"):
        raise ValueError(f"unknown role {role!r}")
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh)
                    if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise FileNotFoundError(
            f"cannot read {path}: {exc.strerror}") from exc
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        first_line = 2
    else:
        first_line = 1
    if not rows:
        raise MatrixFormatError(f"{path}: no numeric rows")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first_line
        if len(row) != width:
            raise MatrixFormatError(
                f"{path}: row {line} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            if not _is_number(cell):
                raise MatrixFormatError(
                    f"{path}: non-numeric cell {cell!r} at row {line}, "
                    f"column {j + 1}")
            values[i, j] = float(cell)
    if role == "covariance":
        values = _check_symmetric(values, path)
    return MatrixFile(data=values, role=role, path=str(path))


def _check_symmetric(a: np.ndarray, path) -> np.ndarray:
    if a.shape[0] != a.shape[1]:
        raise MatrixFormatError(
            f"{path}: covariance must be square, "
            f"got {a.shape[0]}x{a.shape[1]}")
    diff = np.abs(a - a.T)
    worst = float(diff.max())
    if worst == 0.0:
        return a
    scale = float(np.abs(a).max())
    if worst > SYMMETRY_RTOL * scale:
        i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
        raise MatrixFormatError(
            f"{path}: covariance not symmetric at row {i + 1}, column {j + 1} "
            f"(difference {worst:g})")
    warnings.warn(
        f"{path}: symmetrizing covariance (max asymmetry {worst:g})",
        stacklevel=3)
    return 0.5 * (a + a.T)


def sample_covariance(samples, center: bool = True):
    """Maximum-likelihood covariance (divisor T) and the sample count T."""
    x = samples.data if isinstance(samples, MatrixFile) else np.asarray(
        samples, dtype=float)
    t = x.shape[0]
    if t < (2 if center else 1):
        raise DegenerateInputError(
            f"need at least {2 if center else 1} samples, got {t}")
    if center:
        x = x - x.mean(axis=0)
    cov = (x.T @ x) / t
    return 0.5 * (cov + cov.T), t


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def format_matrix(a: np.ndarray) -> str:
    return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in a)


def write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def json_safe(value):
    """Replace non-finite floats with ``None`` recursively."""
    if isinstance(value, float):
        return value if np.isfinite(value) else None
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    return value


def write_results(precs, report, manifest: dict, out_dir,
                  include_timing: bool = False) -> dict:
    """Write precision CSVs, ``fit_report.json`` and ``run_manifest.json``.

    Artifact paths recorded in the manifest are relative to ``out_dir``.
    Wall time is omitted unless ``include_timing`` so that reruns are
    byte-identical.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        names = []
        if precs is not None:
            for k, mat in enumerate(precs.matrices):
                name = f"task_{k}_precision.csv"
                (out / name).write_text(format_matrix(mat))
                names.append(name)
                paths[name] = out / name
        report_dict = report.to_dict(include_timing=include_timing)
        report_dict["schema_version"] = SCHEMA_VERSION
        write_json(out / "fit_report.json", json_safe(report_dict))
        paths["fit_report.json"] = out / "fit_report.json"
        manifest = dict(manifest)
        manifest["schema_version"] = SCHEMA_VERSION
        manifest["artifacts"] = {"precisions": names,
                                 "fit_report": "fit_report.json"}
        manifest["report_summary"] = json_safe({
            "sweeps_run": report.sweeps_run,
            "converged": report.converged,
            "final_objective": (float(report.objective_trace[-1])
                                if report.objective_trace else None),
            "newton_fallbacks": report.newton_fallbacks,
        })
        write_json(out / "run_manifest.json", json_safe(manifest))
        paths["run_manifest.json"] = out / "run_manifest.json"
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return paths


def load_schema(name: str) -> dict:
    """Bundled JSON schema, e.g. ``load_schema("fit_report")``."""
    from importlib import resources
    text = resources.files(__package__).joinpath(
        "schemas", f"{name}.v{SCHEMA_VERSION}.json").read_text()
    return json.loads(text)
