"""Evaluation metrics and replicate aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .model import InputError, PhiTensor

METRICS = ("sigma_err", "precision_err", "l2_sq_err", "tpr", "fpr", "runtime")


def _mean_frobenius(estimates, truth) -> float:
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.ndim == 2 and tru.ndim == 3 and est.shape == tru.shape[1:]:
        est = np.broadcast_to(est, tru.shape)
    if est.shape != tru.shape:
        raise InputError(f"shape mismatch {est.shape} vs {tru.shape}")
    return float(np.mean(np.linalg.norm(est - tru, axis=(1, 2))))


def sigma_error(estimates, truth) -> float:
    """``n^-1 sum_i ||Sigma_hat_i - Sigma*_i||_F``; a single p x p estimate is
    compared against every subject."""
    return _mean_frobenius(estimates, truth)


def precision_error(estimates, truth) -> float:
    return _mean_frobenius(estimates, truth)


def phi_l2_error(fitted: PhiTensor, truth: PhiTensor) -> float:
    if (fitted.p, fitted.q) != (truth.p, truth.q):
        raise InputError("phi shapes differ")
    return float(np.sum((fitted.coef - truth.coef) ** 2))


def support_rates(fitted: PhiTensor, true_support, include_intercept: bool = True):
    """``(tpr, fpr)`` over the phi coordinates; tpr is NaN when truth is empty."""
    truth = {c for c in true_support if include_intercept or c[2] > 0}
    found = {c for c in fitted.support() if include_intercept or c[2] > 0}
    total = fitted.p * (fitted.p - 1) // 2 * (fitted.q + (1 if include_intercept else 0))
    tpr = len(found & truth) / len(truth) if truth else math.nan
    negatives = total - len(truth)
    fpr = len(found - truth) / negatives if negatives > 0 else math.nan
    return tpr, fpr


@dataclass
class BenchmarkReport:
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    pd_checks: int = 0
    pd_violations: int = 0
    timings: list = field(default_factory=list)
    certificates: list = field(default_factory=list)

    def merge(self, other: "BenchmarkReport") -> None:
        self.records += other.records
        self.failures += other.failures
        self.pd_checks += other.pd_checks
        self.pd_violations += other.pd_violations
        self.timings += other.timings
        self.certificates += other.certificates

    def add(self, config: str, method: str, replicate: int, **values) -> None:
        self.records.append({"config": config, "method": method, "replicate": replicate, **values})

    def aggregate(self) -> list[dict]:
        rows = []
        keys = sorted({(r["config"], r["method"]) for r in self.records}, key=str)
        for config, method in keys:
            recs = [r for r in self.records if r["config"] == config and r["method"] == method]
            row = {"config": config, "method": method, "replicates": len(recs)}
            for m in METRICS:
                vals = np.array([r[m] for r in recs if r.get(m) is not None and not _isnan(r[m])], float)
                if vals.size == 0:
                    row[m] = None
                    continue
                sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
                row[m] = {"mean": float(vals.mean()), "sd": sd, "se": sd / math.sqrt(vals.size)}
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["config", "method", "replicate", "metric", "value"])
        for r in self.records:
            for m in METRICS:
                if m in r and r[m] is not None:
                    w.writerow([r["config"], r["method"], r["replicate"], m, repr(float(r[m]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BenchmarkReport":
        """Rebuild records from :meth:`to_csv` output."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["config", "method", "replicate", "metric", "value"]:
            raise InputError("not a benchmark CSV (bad header)")
        merged: dict = {}
        for i, r in enumerate(rows[1:], 2):
            if len(r) != 5:
                raise InputError(f"benchmark CSV row {i}: expected 5 cells")
            config, method, rep, metric, value = r
            try:
                key = (config, method, int(rep))
                merged.setdefault(key, {})[metric] = float(value)
            except ValueError:
                raise InputError(f"benchmark CSV row {i}: bad number") from None
        out = cls()
        for (config, method, rep), vals in merged.items():
            out.add(config, method, rep, **vals)
        return out

    def to_markdown(self) -> str:
        agg = self.aggregate()
        lines = ["| config | method | reps | Sigma error | precision error | seconds |",
                 "|---|---|---|---|---|---|"]
        for row in agg:
            lines.append(f"| {row['config']} | {row['method']} | {row['replicates']} | "
                         f"{_fmt(row['sigma_err'])} | {_fmt(row['precision_err'])} | "
                         f"{_fmt(row['runtime'], 1)} |")
        cd = [row for row in agg if row["l2_sq_err"] is not None]
        if cd:
            lines += ["", "| config | method | l2^2 error | TPR | FPR |", "|---|---|---|---|---|"]
            for row in cd:
                lines.append(f"| {row['config']} | {row['method']} | {_fmt(row['l2_sq_err'], 4)} | "
                             f"{_fmt(row['tpr'], 4)} | {_fmt(row['fpr'], 4)} |")
        lines += ["", "Cells: mean (sd; se = sd/sqrt(reps)).",
                  f"PD checks: {self.pd_checks}, violations: {self.pd_violations}."]
        if self.failures:
            lines += ["", f"Failures: {len(self.failures)}"]
            lines += [f"- {f['config']} / {f['method']} / replicate {f['replicate']}: {f['error']}"
                      for f in self.failures]
        return "\n".join(lines) + "\n"


def _isnan(v) -> bool:
    try:
        return math.isnan(v)
    except TypeError:
        return False


def _fmt(stat, digits: int = 2) -> str:
    if stat is None:
        return "n/a"
    return f"{stat['mean']:.{digits}f} ({stat['sd']:.{digits}f}; {stat['se']:.{digits}f})"
