"""Structural causal models: priors, simulation, counterfactuals, likelihood.

A design is an ordered list of structural equations.  Each stochastic
equation has the form ``V = beta . phi(parents) + eps_V`` with
``eps_V ~ N(0, exp(log_var_V))``; ``phi`` is the identity (linear family) or
a quadratic basis.  Root variables are pure noise, the discontinuity
design's treatment is a deterministic indicator, and in the GP family the
outcome equation is a draw from a Gaussian process (see :mod:`simident.gp`).

Counterfactuals follow abduction: the exogenous noise of every equation is
recovered as the residual of the observed data under the model, then the
descendants of the treatment are re-evaluated with the treatment forced.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import gp as _gp

LOG_2PI = math.log(2.0 * math.pi)

FORMS = ("noise", "linear", "quadratic", "rdd_quadratic", "indicator", "gp")


@dataclass(frozen=True)
class Prior:
    """Independent normal prior with shared variance ``var`` per entry."""

    mean: tuple[float, ...]
    var: float
    log_scale: bool = False

    @property
    def size(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class Equation:
    output: str
    parents: tuple[str, ...] = ()
    form: str = "linear"
    coef: str | None = None
    log_var: str | None = None


@dataclass(frozen=True)
class ConfounderSpec:
    name: str = "U"
    var: float = 0.3
    group_size: int | None = None

    def count(self, n: int) -> int:
        if self.group_size is None:
            return n
        return -(-n // self.group_size)


@dataclass(frozen=True)
class DesignSpec:
    name: str
    family: str
    equations: tuple[Equation, ...]
    param_priors: Mapping[str, Prior]
    confounder: ConfounderSpec | None
    observed: tuple[str, ...]
    treatment: str = "T"
    outcome: str = "Y"

    def __post_init__(self):
        known = set() if self.confounder is None else {self.confounder.name}
        for eq in self.equations:
            if eq.form not in FORMS:
                raise ValueError(f"unknown form {eq.form!r}")
            missing = [p for p in eq.parents if p not in known]
            if missing:
                raise ValueError(f"equation {eq.output} uses {missing} before definition")
            known.add(eq.output)
            for name in (eq.coef, eq.log_var):
                if name is not None and name not in self.param_priors:
                    raise ValueError(f"parameter {name!r} has no prior")

    @property
    def grouped(self) -> bool:
        return self.confounder is not None and self.confounder.group_size is not None

    def equation(self, output: str) -> Equation:
        for eq in self.equations:
            if eq.output == output:
                return eq
        raise KeyError(output)

    def descendants(self, var: str) -> set[str]:
        out = {var}
        for eq in self.equations:
            if any(p in out for p in eq.parents):
                out.add(eq.output)
        out.discard(var)
        return out


@dataclass
class ScmSample:
    params: dict[str, np.ndarray]
    confounders: np.ndarray
    noise: dict[str, np.ndarray]
    # GP family only: the sampled outcome function
    outcome_fn: _gp.RffFunction | None = None

    @property
    def n(self) -> int:
        return len(next(iter(self.noise.values())))


@dataclass
class Dataset:
    n: int
    columns: dict[str, np.ndarray]
    object_of: np.ndarray | None = None

    def __post_init__(self):
        for k, v in self.columns.items():
            if len(v) != self.n:
                raise ValueError(f"column {k} has length {len(v)}, expected {self.n}")
        if self.object_of is not None and len(self.object_of) != self.n:
            raise ValueError("object map length mismatch")


@dataclass(frozen=True)
class EstimandSpec:
    kind: str = "SATE"
    treatment_var: str = "T"
    t_prime: float = 1.0
    t_double_prime: float = 0.0
    conditioning: tuple[str, float] | None = None

    def __post_init__(self):
        if self.t_prime == self.t_double_prime:
            raise ValueError("t_prime and t_double_prime must differ")
        if self.kind not in ("SATE", "CATE"):
            raise ValueError(f"unknown estimand kind {self.kind!r}")
        if self.kind == "CATE" and self.conditioning is None:
            raise ValueError("CATE needs a conditioning (covariate, value)")


# -- feature maps -----------------------------------------------------------

def basis(form: str, cols: list[np.ndarray]) -> np.ndarray:
    if form == "linear":
        return np.stack(cols, axis=-1)
    if form == "quadratic":
        if len(cols) == 1:
            (a,) = cols
            return np.stack([a, a * a], axis=-1)
        if len(cols) == 2:
            a, b = cols
            return np.stack([a, a * a, b, b * b, a * b], axis=-1)
        raise ValueError(f"quadratic basis supports 1 or 2 parents, got {len(cols)}")
    if form == "rdd_quadratic":
        t, x = cols
        return np.stack([t, x, x * x, t * x], axis=-1)
    raise ValueError(f"form {form!r} has no basis")


def basis_jacobian(form: str, cols: list[np.ndarray]) -> list[np.ndarray]:
    """d phi / d parent_p for each parent, each shaped (n, n_features)."""
    n = len(cols[0])
    one, zero = np.ones(n), np.zeros(n)
    if form == "linear":
        out = []
        for p in range(len(cols)):
            j = np.zeros((n, len(cols)))
            j[:, p] = 1.0
            out.append(j)
        return out
    if form == "quadratic":
        if len(cols) == 1:
            (a,) = cols
            return [np.stack([one, 2 * a], axis=-1)]
        a, b = cols
        return [
            np.stack([one, 2 * a, zero, zero, b], axis=-1),
            np.stack([zero, zero, one, 2 * b, a], axis=-1),
        ]
    if form == "rdd_quadratic":
        t, x = cols
        return [
            np.stack([one, zero, zero, x], axis=-1),
            np.stack([zero, one, 2 * x, t], axis=-1),
        ]
    raise ValueError(f"form {form!r} has no basis")


def parent_slopes(form: str, cols: list[np.ndarray], beta) -> list[np.ndarray]:
    """d (phi . beta) / d parent_p for each parent; equals basis_jacobian @ beta.

    Linear forms return scalars (constant slopes)."""
    b = np.asarray(beta, dtype=float)
    if form == "linear":
        return [float(b[p]) for p in range(len(cols))]
    if form == "quadratic":
        if len(cols) == 1:
            (a,) = cols
            return [b[0] + 2 * b[1] * a]
        a, c = cols
        return [b[0] + 2 * b[1] * a + b[4] * c, b[2] + 2 * b[3] * c + b[4] * a]
    if form == "rdd_quadratic":
        t, x = cols
        return [b[0] + b[3] * x, b[1] + 2 * b[2] * x + b[3] * t]
    raise ValueError(f"form {form!r} has no basis")


def object_map(design: DesignSpec, n: int) -> np.ndarray | None:
    if not design.grouped:
        return None
    return np.arange(n) // design.confounder.group_size


def expand_confounders(design: DesignSpec, confounders: np.ndarray,
                       object_of: np.ndarray | None) -> np.ndarray:
    if design.grouped:
        return confounders[object_of]
    return confounders


# -- prior sampling and simulation -----------------------------------------

def draw_params(design: DesignSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, prior in design.param_priors.items():
        draw = rng.normal(np.asarray(prior.mean), math.sqrt(prior.var))
        params[name] = float(draw[0]) if name.startswith("log_") else draw
    return params


def draw_noise(design: DesignSpec, params: Mapping, n: int,
               rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        eq.output: rng.normal(0.0, math.sqrt(math.exp(params[eq.log_var])), size=n)
        for eq in design.equations if eq.log_var is not None
    }


def sample_prior(design: DesignSpec, n: int, rng: np.random.Generator) -> ScmSample:
    if n < 1:
        raise ValueError("n must be >= 1")
    params = draw_params(design, rng)
    if design.confounder is not None:
        c = design.confounder
        confounders = rng.normal(0.0, math.sqrt(c.var), size=c.count(n))
    else:
        confounders = np.zeros(0)
    outcome_fn = None
    if design.family == "gp":
        eq = design.equation(design.outcome)
        outcome_fn = _gp.RffFunction.sample(
            [math.exp(params[f"log_l_{d}"]) for d in eq.parents],
            [math.exp(params[f"log_s_{d}"]) for d in eq.parents],
            rng,
        )
    noise = draw_noise(design, params, n, rng)
    return ScmSample(params, confounders, noise, outcome_fn)


def resample_noise(design: DesignSpec, sample: ScmSample, n: int,
                   rng: np.random.Generator) -> ScmSample:
    """Same functions and confounders, fresh exogenous noise."""
    return replace(sample, noise=draw_noise(design, sample.params, n, rng))


def _mean(eq: Equation, params: Mapping, vals: Mapping[str, np.ndarray],
          outcome_fn=None) -> np.ndarray:
    cols = [vals[p] for p in eq.parents]
    if eq.form == "indicator":
        return (cols[0] > 0).astype(float)
    if eq.form == "gp":
        return outcome_fn(*cols)
    return basis(eq.form, cols) @ np.asarray(params[eq.coef])


def simulate(design: DesignSpec, sample: ScmSample) -> Dataset:
    n = sample.n
    obj = object_map(design, n)
    vals: dict[str, np.ndarray] = {}
    if design.confounder is not None:
        vals[design.confounder.name] = expand_confounders(design, sample.confounders, obj)
    for eq in design.equations:
        if eq.form == "noise":
            vals[eq.output] = sample.noise[eq.output].copy()
            continue
        v = _mean(eq, sample.params, vals, sample.outcome_fn)
        if eq.log_var is not None:
            v = v + sample.noise[eq.output]
        vals[eq.output] = v
    return Dataset(n, {k: vals[k] for k in design.observed}, obj)


# -- counterfactuals --------------------------------------------------------

def _check_parametric(design: DesignSpec):
    if design.family not in ("linear", "quadratic"):
        raise ValueError(f"{design.family} family is not parametric")


def _factual_values(design, confounders, dataset) -> dict[str, np.ndarray]:
    vals = dict(dataset.columns)
    if design.confounder is not None:
        vals[design.confounder.name] = expand_confounders(
            design, np.asarray(confounders, dtype=float), dataset.object_of)
    return vals


def _virtual_instance(design: DesignSpec, params, estimand: EstimandSpec) -> Dataset:
    """Single noise-free instance with the conditioning covariate fixed."""
    var, value = estimand.conditioning
    vals: dict[str, np.ndarray] = {}
    if design.confounder is not None:
        vals[design.confounder.name] = np.zeros(1)
    for eq in design.equations:
        if eq.output == var:
            vals[eq.output] = np.array([float(value)])
        else:
            vals[eq.output] = _mean(eq, params, vals) if eq.form != "noise" else np.zeros(1)
    obj = np.zeros(1, dtype=int) if design.grouped else None
    return Dataset(1, {k: vals[k] for k in design.observed}, obj)


def _counterfactual_world(design, params, vals, treatment, t) -> dict[str, np.ndarray]:
    desc = design.descendants(treatment)
    cf = dict(vals)
    cf[treatment] = np.full_like(vals[treatment], float(t))
    for eq in design.equations:
        if eq.output not in desc:
            continue
        beta = np.asarray(params[eq.coef])
        shift = basis(eq.form, [cf[p] for p in eq.parents]) - basis(eq.form, [vals[p] for p in eq.parents])
        cf[eq.output] = vals[eq.output] + shift @ beta
    return cf


def counterfactual_outcomes(design: DesignSpec, sample: ScmSample, dataset: Dataset,
                            estimand: EstimandSpec) -> tuple[np.ndarray, np.ndarray]:
    """Outcomes under do(T=t') and do(T=t''), reusing confounders and noise."""
    _check_parametric(design)
    return counterfactual_pair(design, sample.params, sample.confounders, dataset, estimand)


def counterfactual_pair(design, params, confounders, dataset, estimand):
    _check_parametric(design)
    if estimand.kind == "CATE":
        dataset = _virtual_instance(design, params, estimand)
        confounders = np.zeros(max(1, len(np.atleast_1d(confounders))))
    vals = _factual_values(design, confounders, dataset)
    tr = estimand.treatment_var
    y1 = _counterfactual_world(design, params, vals, tr, estimand.t_prime)[design.outcome]
    y0 = _counterfactual_world(design, params, vals, tr, estimand.t_double_prime)[design.outcome]
    return y1, y0


def estimand_value(estimand: EstimandSpec, y_prime, y_double_prime) -> float:
    y1 = np.asarray(y_prime, dtype=float)
    y0 = np.asarray(y_double_prime, dtype=float)
    if y1.shape != y0.shape:
        raise ValueError("counterfactual vectors differ in length")
    if y1.size == 0:
        raise ValueError("empty counterfactual vectors")
    return float(np.mean(y1 - y0))


def true_effect(design: DesignSpec, sample: ScmSample, dataset: Dataset,
                estimand: EstimandSpec) -> float:
    """Q of the generating model on this dataset (any family)."""
    if design.family == "gp":
        fn = sample.outcome_fn
        eq = design.equation(design.outcome)
        if estimand.kind == "CATE":
            z = [np.array([float(estimand.conditioning[1])])]
        else:
            vals = _factual_values(design, sample.confounders, dataset)
            z = [vals[p] for p in eq.parents[1:]]
        m = len(z[0]) if z else 1
        y1 = fn(np.full(m, estimand.t_prime), *z)
        y0 = fn(np.full(m, estimand.t_double_prime), *z)
        return estimand_value(estimand, y1, y0)
    y1, y0 = counterfactual_outcomes(design, sample, dataset, estimand)
    return estimand_value(estimand, y1, y0)


# -- likelihood -------------------------------------------------------------

def _rows(dataset: Dataset, rows) -> np.ndarray:
    return np.arange(dataset.n) if rows is None else np.asarray(rows)


def _row_values(design, confounders, dataset, rows):
    vals = {k: v[rows] for k, v in dataset.columns.items()}
    if design.confounder is not None:
        u = np.asarray(confounders, dtype=float)
        idx = dataset.object_of[rows] if design.grouped else rows
        vals[design.confounder.name] = u[idx]
    return vals


def log_likelihood(design: DesignSpec, params: Mapping, confounders, dataset: Dataset,
                   rows=None, *, skip_gp: bool = False) -> float:
    """Sum of Gaussian log densities of the observed variables given parents.

    Returns ``-inf`` when discontinuity-design data contradict the indicator.
    ``skip_gp`` evaluates only the non-GP equations of a GP design.
    """
    if not skip_gp:
        _check_parametric(design)
    rows = _rows(dataset, rows)
    vals = _row_values(design, confounders, dataset, rows)
    total = 0.0
    for eq in design.equations:
        if eq.form == "indicator":
            if np.any(vals[eq.output] != (vals[eq.parents[0]] > 0)):
                return -math.inf
            continue
        if eq.form == "gp" or eq.output not in vals:
            continue
        lv = float(params[eq.log_var])
        r = vals[eq.output]
        if eq.form != "noise":
            r = r - _mean(eq, params, vals)
        total += -0.5 * (len(r) * (LOG_2PI + lv) + float(r @ r) * math.exp(-lv))
    return total


def log_likelihood_grad(design: DesignSpec, params: Mapping, confounders, dataset: Dataset,
                        rows=None, *, skip_gp: bool = False) -> tuple[float, dict]:
    """Log-likelihood and its exact gradient.

    The gradient map has one entry per parameter (same shape as the value)
    plus ``"confounders"`` shaped like the confounder vector.
    """
    if not skip_gp:
        _check_parametric(design)
    rows = _rows(dataset, rows)
    vals = _row_values(design, confounders, dataset, rows)
    grads = {k: np.zeros_like(np.asarray(v, dtype=float)) if np.ndim(v) else 0.0
             for k, v in params.items()}
    u_name = design.confounder.name if design.confounder is not None else None
    u_rows = np.zeros(len(rows))
    total = 0.0
    for eq in design.equations:
        if eq.form == "indicator":
            if np.any(vals[eq.output] != (vals[eq.parents[0]] > 0)):
                return -math.inf, grads
            continue
        if eq.form == "gp" or eq.output not in vals:
            continue
        lv = float(params[eq.log_var])
        prec = math.exp(-lv)
        if eq.form == "noise":
            r = vals[eq.output]
        else:
            cols = [vals[p] for p in eq.parents]
            beta = np.asarray(params[eq.coef], dtype=float)
            phi = basis(eq.form, cols)
            r = vals[eq.output] - phi @ beta
            grads[eq.coef] = grads[eq.coef] + prec * (r @ phi)
            if u_name in eq.parents:
                slope = parent_slopes(eq.form, cols, beta)[eq.parents.index(u_name)]
                u_rows += prec * r * slope
        rr = float(r @ r)
        total += -0.5 * (len(r) * (LOG_2PI + lv) + rr * prec)
        grads[eq.log_var] = grads[eq.log_var] + (-0.5 * len(r) + 0.5 * rr * prec)
    if u_name is not None:
        u = np.zeros(len(confounders))
        idx = dataset.object_of[rows] if design.grouped else rows
        np.add.at(u, idx, u_rows)
        grads["confounders"] = u
    else:
        grads["confounders"] = np.zeros(0)
    return total, grads


# -- plain-text archives ----------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _table(header: list[str], cols: list[np.ndarray]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in zip(*cols):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _read_table(lines: list[str]) -> tuple[list[str], np.ndarray]:
    header = lines[0].strip().split(",")
    data = [[float(x) for x in ln.strip().split(",")] for ln in lines[1:] if ln.strip()]
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    return header, arr


def dataset_to_text(dataset: Dataset) -> str:
    names = list(dataset.columns)
    cols = [dataset.columns[k] for k in names]
    if dataset.object_of is not None:
        names.append("object")
        cols.append(dataset.object_of.astype(float))
    return _table(names, cols)


def dataset_from_text(text: str) -> Dataset:
    header, arr = _read_table(text.strip().splitlines())
    columns = {h: arr[:, i].copy() for i, h in enumerate(header) if h != "object"}
    obj = arr[:, header.index("object")].astype(int) if "object" in header else None
    return Dataset(arr.shape[0], columns, obj)


def sample_to_text(sample: ScmSample) -> str:
    """Parameter lines, confounder line, then the noise table.

    GP outcome functions are not archived.
    """
    lines = []
    for k, v in sample.params.items():
        vals = np.atleast_1d(np.asarray(v, dtype=float))
        kind = "vector" if np.ndim(v) else "scalar"
        lines.append(f"#param {k} {kind} " + " ".join(_fmt(x) for x in vals))
    lines.append("#confounders " + " ".join(_fmt(x) for x in sample.confounders))
    names = list(sample.noise)
    return "\n".join(lines) + "\n" + _table(names, [sample.noise[k] for k in names])


def sample_from_text(text: str) -> ScmSample:
    params, confounders, table = {}, np.zeros(0), []
    for ln in text.splitlines():
        if ln.startswith("#param "):
            _, name, kind, *vals = ln.split(" ")
            arr = np.array([float(x) for x in vals])
            params[name] = arr if kind == "vector" else float(arr[0])
        elif ln.startswith("#confounders"):
            parts = ln.split(" ")[1:]
            confounders = np.array([float(x) for x in parts if x])
        elif ln.strip():
            table.append(ln)
    header, arr = _read_table(table)
    noise = {h: arr[:, i].copy() for i, h in enumerate(header)}
    return ScmSample(params, confounders, noise)
