"""Evaluation, classifier-spectrum analysis and CSV metric emission.

CSV schema (stable, golden-tested):
    metrics.csv  round,participants,accuracy,loss_ce,loss_he,loss_var,loss_total,grad_sq_norm
    spectrum.csv run_label,rank,sigma,sigma_normalized

Reals are written with 17 significant digits so parsing them back is
bit-exact; participants are ';'-joined client ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .federation import RoundRecord
from .model import ParamVector, forward
from .numeric import singular_values

METRICS_HEADER = "round,participants,accuracy,loss_ce,loss_he,loss_var,loss_total,grad_sq_norm"
SPECTRUM_HEADER = "run_label,rank,sigma,sigma_normalized"


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def evaluate_accuracy(params: ParamVector, test: Dataset) -> float:
    """Argmax accuracy under eval-mode forward; ties break to the lowest class."""
    if len(test) == 0:
        raise ValueError("evaluate_accuracy: empty test set")
    trace = forward(params, test.x, "eval")
    pred = np.argmax(trace.p, axis=1)
    return float(np.mean(pred == test.y))


@dataclass
class SpectrumReport:
    sigmas: np.ndarray
    normalized: np.ndarray
    entropy: float


def classifier_spectrum(params: ParamVector) -> SpectrumReport:
    """Singular-value profile of the classifier weight matrix (bias excluded).

    The scalar summary is the entropy of p_i = sigma_i^2 / sum sigma_j^2;
    a flat spectrum scores ln(rank), a rank-1 spectrum scores 0.
    """
    w = params.view("cls.w")
    sigmas = singular_values(w)
    top = sigmas[0] if sigmas[0] > 0.0 else 1.0
    normalized = sigmas / top
    power = sigmas**2
    total = power.sum()
    entropy = 0.0
    if total > 0.0:
        p = power / total
        nz = p > 0.0
        entropy = float(-np.sum(p[nz] * np.log(p[nz])))
    return SpectrumReport(sigmas, normalized, entropy)


@dataclass
class MetricsTable:
    records: list[RoundRecord]
    run_label: str = ""
    seed: int = 0
    algorithm: str = ""
    config_digest: str = ""

    def __post_init__(self):
        rounds = [r.round_index for r in self.records]
        if rounds != list(range(len(rounds))):
            raise ValueError("MetricsTable: round indices must be contiguous from 0")

    def final_accuracy(self) -> float:
        if not self.records:
            raise ValueError("MetricsTable: no rounds recorded")
        return self.records[-1].accuracy


def metrics_csv_lines(table: MetricsTable) -> list[str]:
    lines = [METRICS_HEADER]
    for r in table.records:
        participants = ";".join(str(i) for i in r.participants)
        lines.append(",".join([
            str(r.round_index),
            participants,
            _fmt(r.accuracy),
            _fmt(r.mean_losses.ce),
            _fmt(r.mean_losses.he),
            _fmt(r.mean_losses.var),
            _fmt(r.mean_losses.total),
            _fmt(r.grad_sq_norm),
        ]))
    return lines


def write_metrics_csv(table: MetricsTable, path) -> None:
    _write_lines(path, metrics_csv_lines(table))


def spectrum_csv_lines(reports: list[tuple[str, SpectrumReport]]) -> list[str]:
    lines = [SPECTRUM_HEADER]
    for label, rep in reports:
        for rank, (s, ns) in enumerate(zip(rep.sigmas, rep.normalized)):
            lines.append(f"{label},{rank},{_fmt(s)},{_fmt(ns)}")
    return lines


def write_spectrum_csv(reports: list[tuple[str, SpectrumReport]], path) -> None:
    _write_lines(path, spectrum_csv_lines(reports))


def _write_lines(path, lines: list[str]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics file {path}: {exc}") from exc


def read_metrics_csv(path) -> list[dict]:
    """Parse a metrics.csv back into per-round dicts (floats bit-exact)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"read_metrics_csv: unexpected header in {path}")
    cols = METRICS_HEADER.split(",")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        row: dict = dict(zip(cols, parts))
        row["round"] = int(row["round"])
        row["participants"] = [int(v) for v in row["participants"].split(";") if v]
        for key in cols[2:]:
            row[key] = float(row[key])
        out.append(row)
    return out
