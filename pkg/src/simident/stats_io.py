"""Experiment tables, the discontinuity CATE sweep, and CSV/JSON persistence."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import designs, sbi
from .scm import EstimandSpec

TABLE_HEADER = ["design", "family", "n", "k", "lambda", "seed", "dq_norm", "dq_se",
                "decision", "ground_truth", "match"]
SWEEP_HEADER = ["distance", "dq_mean", "dq_se", "n", "k", "seed"]
RAW_PREFIX = "raw:"


def _f(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class ExperimentRow:
    design: str
    family: str
    n: int
    k: int
    lam: float
    seed: int
    dq_norm: float
    dq_se: float
    decision: str
    ground_truth: str
    normalized: bool = True   # False when the true effect is 0

    def __post_init__(self):
        if self.dq_norm < 0 or self.dq_se < 0:
            raise ValueError("gap statistics must be non-negative")

    @property
    def match(self) -> bool | None:
        if self.ground_truth not in (designs.ID, designs.NOT_ID):
            return None
        return self.decision == self.ground_truth


def decision_label(identifiable: bool) -> str:
    return designs.ID if identifiable else designs.NOT_ID


def row_from_report(report: sbi.SbiReport, ground_truth: str | None) -> ExperimentRow:
    k = len(report.trials)
    se = report.sigma / math.sqrt(k)
    cfg = report.config
    if report.q_true == 0:
        norm, dq, dse = False, report.mu, se
    else:
        norm, dq, dse = True, report.mu / abs(report.q_true), se / abs(report.q_true)
    return ExperimentRow(report.design, report.family, cfg["n"], k, cfg["optim"]["lam"],
                         cfg["seed"], dq, dse, decision_label(report.decision),
                         ground_truth or designs.UNKNOWN, norm)


def table_reproduce(families=("linear",), n: int | None = None, k: int | None = None,
                    seed: int = 0, designs_subset=None, jobs: int = 1,
                    progress=None, optim_overrides: dict | None = None
                    ) -> list[ExperimentRow]:
    """Run the SBI test on every catalog design of the given families.

    ``n``, ``k`` and the optimiser settings default to the desk-scale values
    of :func:`sbi.default_config` for each family.
    """
    rows = []
    for family in families:
        overrides = {"seed": seed, "jobs": jobs}
        if n is not None:
            overrides["n"] = n
        if k is not None:
            overrides["k"] = k
        config = sbi.default_config(family, **overrides)
        if optim_overrides:
            config = replace(config, optim=replace(config.optim, **optim_overrides))
        for entry in designs.list_catalog():
            name, fam = entry.key
            if fam != family or (designs_subset and name not in designs_subset):
                continue
            report = sbi.run(name, family, config)
            rows.append(row_from_report(report, entry.ground_truth_id))
            if progress is not None:
                progress(rows[-1])
    return rows


# -- discontinuity sweep ----------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    distance: float
    dq_mean: float
    dq_se: float
    n: int
    k: int
    seed: int


def rdd_cate_sweep(family: str, distances, config: sbi.SbiConfig, covariate: str = "X",
                   normalize: bool = False) -> list[SweepRow]:
    """Effect gap of the conditional effect at increasing distance from the
    cutoff (covariate value 0); one SBI run per distance.

    With ``normalize`` the gap and its standard error are divided by the true
    conditional effect at that point (left raw when it is exactly 0).
    """
    rows = []
    for d in sorted(float(x) for x in distances):
        if d < 0:
            raise ValueError("distances must be non-negative")
        est = EstimandSpec("CATE", conditioning=(covariate, d))
        report = sbi.run("rdd", family, replace(config, estimand=est))
        k = len(report.trials)
        scale = abs(report.q_true) if normalize and report.q_true != 0 else 1.0
        rows.append(SweepRow(d, report.mu / scale, report.sigma / math.sqrt(k) / scale,
                             config.n, k, config.seed))
    return rows


# -- CSV ---------------------------------------------------------------------

def _bool(s: str) -> bool | None:
    return {"true": True, "false": False, "na": None}[s]


def _bool_str(b: bool | None) -> str:
    return "na" if b is None else str(b).lower()


def rows_to_csv(rows: list[ExperimentRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in rows:
        dq = _f(r.dq_norm) if r.normalized else RAW_PREFIX + _f(r.dq_norm)
        w.writerow([r.design, r.family, r.n, r.k, _f(r.lam), r.seed, dq, _f(r.dq_se),
                    r.decision, r.ground_truth, _bool_str(r.match)])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ExperimentRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != TABLE_HEADER:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for rec in reader:
        d = dict(zip(header, rec))
        dq, normalized = d["dq_norm"], True
        if dq.startswith(RAW_PREFIX):
            dq, normalized = dq[len(RAW_PREFIX):], False
        row = ExperimentRow(d["design"], d["family"], int(d["n"]), int(d["k"]),
                            float(d["lambda"]), int(d["seed"]), float(dq), float(d["dq_se"]),
                            d["decision"], d["ground_truth"], normalized)
        if _bool_str(row.match) != d["match"]:
            raise ValueError(f"inconsistent match flag in row {rec}")
        rows.append(row)
    return rows


def sweep_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([_f(r.distance), _f(r.dq_mean), _f(r.dq_se), r.n, r.k, r.seed])
    return buf.getvalue()


def sweep_from_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    if next(reader) != SWEEP_HEADER:
        raise ValueError("unexpected sweep header")
    return [SweepRow(float(a), float(b), float(c), int(n), int(k), int(s))
            for a, b, c, n, k, s in reader]


# -- JSON --------------------------------------------------------------------

def _num(x):
    """JSON-safe float: non-finite values become strings."""
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _unnum(x):
    return float(x)


TRIAL_KEYS = ("q1", "q2", "dq", "loglik1", "loglik2", "loglik_true", "q_true")


def report_to_dict(report: sbi.SbiReport) -> dict:
    """Report as plain data.  Wall times are left out so reruns are
    byte-identical."""
    return {
        "design": report.design,
        "family": report.family,
        "trials": [{**{k: _num(getattr(t, k)) for k in TRIAL_KEYS}, "seed_index": t.seed_index}
                   for t in report.trials],
        "mu_dq": _num(report.mu),
        "sigma_dq": _num(report.sigma),
        "z": _num(report.z),
        "decision": bool(report.decision),
        "q_true": _num(report.q_true),
        "threshold": _num(report.threshold),
        "failed_trials": report.failed_trials,
        "config": report.config,
    }


def report_to_json(report: sbi.SbiReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> sbi.SbiReport:
    d = json.loads(text)
    trials = [sbi.TrialResult(*(_unnum(t[k]) for k in TRIAL_KEYS), wall_time=0.0,
                              seed_index=int(t["seed_index"])) for t in d["trials"]]
    return sbi.SbiReport(d["design"], d["family"], trials, _unnum(d["mu_dq"]),
                         _unnum(d["sigma_dq"]), _unnum(d["z"]), bool(d["decision"]),
                         _unnum(d["q_true"]), _unnum(d["threshold"]), int(d["failed_trials"]),
                         d["config"])


def to_json(obj) -> str:
    """Deterministic JSON for dataclass results (baseline, diagnostics)."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.ndarray):
            return clean(v.tolist())
        if isinstance(v, (float, np.floating)):
            return _num(v)
        if isinstance(v, np.integer):
            return int(v)
        return v

    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"
