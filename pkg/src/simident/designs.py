"""Catalog of the seven causal designs in linear, quadratic and GP form.

Every prior below is a normal with the stated mean and variance; names
starting with ``log_`` live on the log scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .scm import ConfounderSpec, DesignSpec, Equation, Prior, basis

DESIGN_NAMES = (
    "unconfounded",
    "confounded",
    "backdoor",
    "frontdoor",
    "iv",
    "within_subjects",
    "rdd",
)
FAMILIES = ("linear", "quadratic", "gp")
GP_DESIGNS = ("unconfounded", "confounded", "iv", "within_subjects", "rdd")

ID = "ID"
NOT_ID = "NotID"
UNKNOWN = "Unknown"

PRIOR_VAR = 0.3
GROUP_SIZE = 25


class UnknownDesignError(KeyError):
    pass


@dataclass(frozen=True)
class CatalogEntry:
    key: tuple[str, str]
    spec: DesignSpec
    ground_truth_id: str
    # nonparametric column of the results table; only informative for gp
    nonparametric_id: str


def _n(*mean: float, log: bool = False) -> Prior:
    return Prior(tuple(float(m) for m in mean), PRIOR_VAR, log_scale=log)


def _lv(mean: float) -> Prior:
    return _n(mean, log=True)


def _confounder(grouped: bool = False) -> ConfounderSpec:
    return ConfounderSpec("U", PRIOR_VAR, GROUP_SIZE if grouped else None)


def _linear(name: str) -> DesignSpec:
    lin = "linear"
    if name == "unconfounded":
        eqs = (
            Equation("T", (), "noise", None, "log_var_T"),
            Equation("Y", ("T",), lin, "beta_Y", "log_var_Y"),
        )
        priors = {"beta_Y": _n(1), "log_var_T": _lv(-1), "log_var_Y": _lv(-3)}
        return DesignSpec(name, lin, eqs, priors, None, ("T", "Y"))
    if name in ("confounded", "within_subjects"):
        eqs = (
            Equation("T", ("U",), lin, "beta_T", "log_var_T"),
            Equation("Y", ("T", "U"), lin, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(0.5),
            "beta_Y": _n(1, 0.5),
            "log_var_T": _lv(-1),
            "log_var_Y": _lv(-3),
        }
        conf = _confounder(grouped=name == "within_subjects")
        return DesignSpec(name, lin, eqs, priors, conf, ("T", "Y"))
    if name == "backdoor":
        eqs = (
            Equation("X", (), "noise", None, "log_var_X"),
            Equation("T", ("X",), lin, "beta_T", "log_var_T"),
            Equation("Y", ("T", "X"), lin, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(0.5),
            "beta_Y": _n(1, 0.5),
            "log_var_X": _lv(-3),
            "log_var_T": _lv(-1),
            "log_var_Y": _lv(-3),
        }
        return DesignSpec(name, lin, eqs, priors, None, ("X", "T", "Y"))
    if name == "frontdoor":
        eqs = (
            Equation("T", ("U",), lin, "beta_T", "log_var_T"),
            Equation("X", ("T",), lin, "beta_X", "log_var_X"),
            Equation("Y", ("X", "U"), lin, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(0.5),
            "beta_X": _n(1),
            "beta_Y": _n(1, 0.5),
            "log_var_T": _lv(-2),
            "log_var_X": _lv(0),
            "log_var_Y": _lv(-3),
        }
        return DesignSpec(name, lin, eqs, priors, _confounder(), ("T", "X", "Y"))
    if name == "iv":
        eqs = (
            Equation("I", (), "noise", None, "log_var_I"),
            Equation("T", ("I", "U"), lin, "beta_T", "log_var_T"),
            Equation("Y", ("T", "U"), lin, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(2, 0.5),
            "beta_Y": _n(1, 0.5),
            "log_var_I": _lv(0),
            "log_var_T": _lv(-1),
            "log_var_Y": _lv(-3),
        }
        return DesignSpec(name, lin, eqs, priors, _confounder(), ("I", "T", "Y"))
    if name == "rdd":
        eqs = (
            Equation("X", (), "noise", None, "log_var_X"),
            Equation("T", ("X",), "indicator"),
            Equation("Y", ("T", "X"), lin, "beta_Y", "log_var_Y"),
        )
        priors = {"beta_Y": _n(1, 0.5), "log_var_X": _lv(-1), "log_var_Y": _lv(-3)}
        return DesignSpec(name, lin, eqs, priors, None, ("X", "T", "Y"))
    raise UnknownDesignError(name)


def _quadratic(name: str) -> DesignSpec:
    q = "quadratic"
    b5 = (1, 0, 0.5, 0, 0)
    if name == "unconfounded":
        eqs = (
            Equation("T", (), "noise", None, "log_var_T"),
            Equation("Y", ("T",), q, "beta_Y", "log_var_Y"),
        )
        priors = {"beta_Y": _n(1, 0), "log_var_T": _lv(-1), "log_var_Y": _lv(-3)}
        return DesignSpec(name, q, eqs, priors, None, ("T", "Y"))
    if name in ("confounded", "within_subjects"):
        eqs = (
            Equation("T", ("U",), q, "beta_T", "log_var_T"),
            Equation("Y", ("T", "U"), q, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(1, 0),
            "beta_Y": _n(*b5),
            "log_var_T": _lv(-1),
            "log_var_Y": _lv(-3),
        }
        conf = _confounder(grouped=name == "within_subjects")
        return DesignSpec(name, q, eqs, priors, conf, ("T", "Y"))
    if name == "backdoor":
        eqs = (
            Equation("X", (), "noise", None, "log_var_X"),
            Equation("T", ("X",), q, "beta_T", "log_var_T"),
            Equation("Y", ("T", "X"), q, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(1, 0),
            "beta_Y": _n(*b5),
            "log_var_X": _lv(-3),
            "log_var_T": _lv(-1),
            "log_var_Y": _lv(-3),
        }
        return DesignSpec(name, q, eqs, priors, None, ("X", "T", "Y"))
    if name == "frontdoor":
        eqs = (
            Equation("T", ("U",), q, "beta_T", "log_var_T"),
            Equation("X", ("T",), q, "beta_X", "log_var_X"),
            Equation("Y", ("X", "U"), q, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(1, 0),
            "beta_X": _n(1, 0),
            "beta_Y": _n(*b5),
            "log_var_T": _lv(-2),
            "log_var_X": _lv(0),
            "log_var_Y": _lv(-3),
        }
        return DesignSpec(name, q, eqs, priors, _confounder(), ("T", "X", "Y"))
    if name == "iv":
        eqs = (
            Equation("I", (), "noise", None, "log_var_I"),
            Equation("T", ("I", "U"), q, "beta_T", "log_var_T"),
            Equation("Y", ("T", "U"), q, "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_T": _n(*b5),
            "beta_Y": _n(*b5),
            "log_var_I": _lv(0),
            "log_var_T": _lv(-1),
            "log_var_Y": _lv(-3),
        }
        return DesignSpec(name, q, eqs, priors, _confounder(), ("I", "T", "Y"))
    if name == "rdd":
        eqs = (
            Equation("X", (), "noise", None, "log_var_X"),
            Equation("T", ("X",), "indicator"),
            Equation("Y", ("T", "X"), "rdd_quadratic", "beta_Y", "log_var_Y"),
        )
        priors = {
            "beta_Y": _n(1, 0.5, 0, 0),
            "log_var_X": _lv(-1),
            "log_var_Y": _lv(-3),
        }
        return DesignSpec(name, q, eqs, priors, None, ("X", "T", "Y"))
    raise UnknownDesignError(name)


def gp_design_structure(name: str) -> dict:
    """Outcome kernel layout for a GP design.

    Returns a dict with the kernel input dimensions (``dims``), the covariate
    entering the kernel besides treatment (``covariate``, or None), whether
    that covariate is latent, and the log-hyperparameter names.
    """
    if name not in GP_DESIGNS:
        if name in DESIGN_NAMES:
            raise UnknownDesignError(f"no gp variant of design {name!r}")
        raise UnknownDesignError(name)
    cov = {"unconfounded": None, "rdd": "X"}.get(name, "U")
    dims = ("T",) if cov is None else ("T", cov)
    hyper = []
    for d in dims:
        hyper += [f"log_l_{d}", f"log_s_{d}"]
    return {
        "dims": dims,
        "covariate": cov,
        "latent": cov == "U",
        "grouped": name == "within_subjects",
        "hyper": tuple(hyper),
    }


def _gp(name: str) -> DesignSpec:
    structure = gp_design_structure(name)
    lin = _linear(name)
    eqs = tuple(
        Equation("Y", ("T",) + ((structure["covariate"],) if structure["covariate"] else ()),
                 "gp", None, "log_var_Y")
        if eq.output == "Y" else eq
        for eq in lin.equations
    )
    priors = {k: v for k, v in lin.param_priors.items() if k != "beta_Y"}
    for h in structure["hyper"]:
        priors[h] = _lv(0)
    return DesignSpec(name, "gp", eqs, priors, lin.confounder, lin.observed)


_LABELS = {
    # design: (linear, quadratic, gp, nonparametric)
    "unconfounded": (ID, ID, ID, ID),
    "confounded": (NOT_ID, NOT_ID, NOT_ID, NOT_ID),
    "backdoor": (ID, ID, None, ID),
    "frontdoor": (ID, ID, None, ID),
    "iv": (ID, NOT_ID, UNKNOWN, NOT_ID),
    "within_subjects": (ID, ID, UNKNOWN, ID),
    "rdd": (ID, ID, UNKNOWN, NOT_ID),
}


def _build_catalog() -> dict[tuple[str, str], CatalogEntry]:
    out = {}
    for family in FAMILIES:
        col = FAMILIES.index(family)
        for name in DESIGN_NAMES:
            if family == "gp" and name not in GP_DESIGNS:
                continue
            builder = {"linear": _linear, "quadratic": _quadratic, "gp": _gp}[family]
            out[(name, family)] = CatalogEntry(
                (name, family), builder(name), _LABELS[name][col], _LABELS[name][3]
            )
    return out


CATALOG = _build_catalog()


def get_entry(name: str, family: str) -> CatalogEntry:
    if family not in FAMILIES:
        raise UnknownDesignError(f"unknown family {family!r}")
    if name not in DESIGN_NAMES:
        raise UnknownDesignError(f"unknown design {name!r}")
    try:
        return CATALOG[(name, family)]
    except KeyError:
        raise UnknownDesignError(f"design {name!r} has no {family} variant") from None


def get_design(name: str, family: str) -> DesignSpec:
    return get_entry(name, family).spec


def list_catalog() -> list[CatalogEntry]:
    return list(CATALOG.values())


def quadratic_basis(*parents, rdd: bool = False) -> np.ndarray:
    """Quadratic feature expansion of one or two parent values (or columns).

    ``rdd=True`` gives the discontinuity-design basis [T, X, X^2, T*X]
    for parents (T, X).
    """
    cols = [np.asarray(p, dtype=float) for p in parents]
    if rdd and len(cols) != 2:
        raise ValueError("rdd basis needs (T, X)")
    return basis("rdd_quadratic" if rdd else "quadratic", cols)


def catalog_serialization() -> str:
    """Canonical JSON text of every catalog entry (priors, forms, labels)."""
    rows = []
    for (name, family), entry in sorted(CATALOG.items()):
        spec = entry.spec
        rows.append({
            "name": name,
            "family": family,
            "ground_truth": entry.ground_truth_id,
            "equations": [
                [e.output, list(e.parents), e.form, e.coef, e.log_var] for e in spec.equations
            ],
            "priors": {k: [list(p.mean), p.var, p.log_scale] for k, p in spec.param_priors.items()},
            "confounder": None if spec.confounder is None else [
                spec.confounder.name, spec.confounder.var, spec.confounder.group_size
            ],
        })
    return json.dumps(rows, sort_keys=True, separators=(",", ":"))


def catalog_checksum() -> str:
    return hashlib.sha256(catalog_serialization().encode()).hexdigest()
