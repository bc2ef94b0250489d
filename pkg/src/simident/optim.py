"""Two-particle objective and its Adam-based maximisation.

The objective for particles p1, p2 on a dataset is

    L = loglik(p1) + loglik(p2) + lam * |Q(p1) - Q(p2)|

where each particle is a flat vector holding the structural parameters,
the latent confounders and, for GP designs, the inducing counterfactuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp as _gp
from . import scm
from .scm import Dataset, DesignSpec, EstimandSpec


class OptimAbort(FloatingPointError):
    """Raised when a gradient or parameter becomes non-finite."""


@dataclass(frozen=True)
class Layout:
    slices: dict[str, slice]
    size: int

    def __getitem__(self, name) -> slice:
        return self.slices[name]

    def __contains__(self, name) -> bool:
        return name in self.slices

    @property
    def names(self):
        return list(self.slices)


@dataclass
class ParticlePair:
    p1: np.ndarray
    p2: np.ndarray
    layout: Layout

    def swapped(self) -> "ParticlePair":
        return ParticlePair(self.p2, self.p1, self.layout)

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.p1, self.p2])

    @classmethod
    def from_joint(cls, x, layout) -> "ParticlePair":
        return cls(x[: layout.size].copy(), x[layout.size:].copy(), layout)


@dataclass(frozen=True)
class OptimConfig:
    epochs: int = 50
    batch_size: int = 30
    lam: float = 1.0
    scaling: str = "minibatch"   # minibatch | none
    single_instance: bool = False
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.scaling not in ("minibatch", "none"):
            raise ValueError(f"unknown scaling mode {self.scaling!r}")


class ParticleModel:
    """Flat-vector view of one design on one dataset.

    Provides the log-likelihood of a particle (optionally on a minibatch of
    rows), the estimand, and the exact gradients of both.
    """

    def __init__(self, design: DesignSpec, dataset: Dataset, estimand: EstimandSpec):
        self.design = design
        self.data = dataset
        self.estimand = estimand
        self.is_gp = design.family == "gp"
        self.theta_names = list(design.param_priors)
        slices, off = {}, 0
        for name in self.theta_names:
            size = design.param_priors[name].size
            slices[name] = slice(off, off + size)
            off += size
        self.n_theta = off
        self.u_count = 0
        if design.confounder is not None:
            self.u_count = design.confounder.count(dataset.n)
            slices["U"] = slice(off, off + self.u_count)
            off += self.u_count
        if self.is_gp:
            self._setup_gp()
            slices["Ycf"] = slice(off, off + 2 * self.m)
            off += 2 * self.m
        self.layout = Layout(slices, off)

    # -- layout ---------------------------------------------------------
    def unpack(self, x):
        params = {}
        for name in self.theta_names:
            v = x[self.layout[name]]
            params[name] = float(v[0]) if name.startswith("log_") else v
        U = x[self.layout["U"]] if "U" in self.layout else np.zeros(0)
        Ycf = x[self.layout["Ycf"]] if self.is_gp else None
        return params, U, Ycf

    def pack(self, params, U=None, Ycf=None) -> np.ndarray:
        x = np.zeros(self.layout.size)
        for name in self.theta_names:
            x[self.layout[name]] = params[name]
        if "U" in self.layout:
            x[self.layout["U"]] = U
        if self.is_gp:
            x[self.layout["Ycf"]] = Ycf
        return x

    def _u_index(self, rows):
        if self.design.grouped:
            return self.data.object_of[rows]
        return rows

    # -- gp plumbing ----------------------------------------------------
    def _setup_gp(self):
        eq = self.design.equation(self.design.outcome)
        self.cov = eq.parents[1] if len(eq.parents) > 1 else None
        self.latent = self.design.confounder is not None and self.cov == self.design.confounder.name
        extra = []
        if self.estimand.kind == "CATE":
            var, value = self.estimand.conditioning
            if var != self.cov or self.latent:
                raise ValueError("CATE must condition on the observed kernel covariate")
            extra = [float(value)]
        self.n_extra = len(extra)
        self.extra = np.array(extra)
        self.m = self.data.n + self.n_extra
        self.hyper_names = [f"log_{k}_{d}" for d in eq.parents for k in ("l", "s")]
        w = np.zeros(self.m)
        if self.estimand.kind == "CATE":
            w[self.data.n:] = 1.0 / self.n_extra
        else:
            w[: self.data.n] = 1.0 / self.data.n
        self.cf_weights = w

    def _hyper(self, params) -> _gp.KernelHyper:
        eq = self.design.equation(self.design.outcome)
        return _gp.KernelHyper(
            {d: params[f"log_l_{d}"] for d in eq.parents},
            {d: params[f"log_s_{d}"] for d in eq.parents},
            params["log_var_Y"],
        )

    def _kernel_inputs(self, U, rows) -> _gp.KernelInputs:
        cols = self.data.columns
        est = self.estimand
        T = cols[self.design.treatment][rows]
        if self.cov is None:
            return _gp.KernelInputs(T, est.t_prime, est.t_double_prime, m=self.m)
        if self.latent:
            Z = U[self._u_index(rows)]
            Zcf = U[self._u_index(np.arange(self.data.n))]
        else:
            Z = cols[self.cov][rows]
            Zcf = cols[self.cov]
        Zcf = np.concatenate([Zcf, self.extra])
        return _gp.KernelInputs(T, est.t_prime, est.t_double_prime, Z=Z, Zcf=Zcf, cov=self.cov)

    # -- likelihood -----------------------------------------------------
    def loglik(self, x, rows=None) -> float:
        params, U, Ycf = self.unpack(x)
        rows = np.arange(self.data.n) if rows is None else np.asarray(rows)
        ll = scm.log_likelihood(self.design, params, U, self.data, rows, skip_gp=self.is_gp)
        if self.is_gp and math.isfinite(ll):
            inputs = self._kernel_inputs(U, rows)
            Y = self.data.columns[self.design.outcome][rows]
            ll += _gp.gp_loglik(inputs, self._hyper(params), Y, Ycf)
        return ll

    def loglik_grad(self, x, rows=None):
        params, U, Ycf = self.unpack(x)
        rows = np.arange(self.data.n) if rows is None else np.asarray(rows)
        ll, g = scm.log_likelihood_grad(self.design, params, U, self.data, rows,
                                        skip_gp=self.is_gp)
        out = np.zeros(self.layout.size)
        for name in self.theta_names:
            out[self.layout[name]] = g[name]
        if "U" in self.layout:
            out[self.layout["U"]] = g["confounders"]
        if self.is_gp:
            inputs = self._kernel_inputs(U, rows)
            Y = self.data.columns[self.design.outcome][rows]
            lly, gy = _gp.gp_loglik_and_grad(inputs, self._hyper(params), Y, Ycf)
            ll += lly
            for h in self.hyper_names:
                out[self.layout[h]] += gy[h]
            out[self.layout["log_var_Y"]] += gy["log_var_y"]
            out[self.layout["Ycf"]] = gy["Ycf"]
            if self.latent:
                gU = np.zeros(self.u_count)
                np.add.at(gU, self._u_index(rows), gy["Z"])
                np.add.at(gU, self._u_index(np.arange(self.data.n)), gy["Zcf"][: self.data.n])
                out[self.layout["U"]] += gU
        return ll, out

    # -- estimand -------------------------------------------------------
    def effect(self, x) -> float:
        params, U, Ycf = self.unpack(x)
        if self.is_gp:
            m = self.m
            return float(self.cf_weights @ (Ycf[:m] - Ycf[m:]))
        y1, y0 = scm.counterfactual_pair(self.design, params, U, self.data, self.estimand)
        return scm.estimand_value(self.estimand, y1, y0)

    def effect_grad(self, x, instance: int | None = None):
        """(Q, dQ/dx).  ``instance`` selects the single-instance GP gradient."""
        params, U, Ycf = self.unpack(x)
        g = np.zeros(self.layout.size)
        if self.is_gp:
            m = self.m
            w = self.cf_weights
            if instance is not None:
                w = np.zeros(m)
                w[instance] = 1.0
            sl = self.layout["Ycf"]
            g[sl] = np.concatenate([w, -w])
            return float(self.cf_weights @ (Ycf[:m] - Ycf[m:])), g
        return self._parametric_effect_grad(params, U, g)

    def _parametric_effect_grad(self, params, U, g):
        """Reverse-mode derivative of Q through the counterfactual equations."""
        design, est = self.design, self.estimand
        if est.kind == "CATE":
            data = scm._virtual_instance(design, params, est)
            U = np.zeros(max(1, len(U)))
        else:
            data = self.data
        vals = scm._factual_values(design, U, data)
        n = data.n
        u_name = design.confounder.name if design.confounder is not None else None
        tr = est.treatment_var
        desc = design.descendants(tr)
        eqs = [eq for eq in design.equations if eq.output in desc]
        gu_rows = np.zeros(n)
        q = 0.0
        for t, sign in ((est.t_prime, 1.0), (est.t_double_prime, -1.0)):
            cf = dict(vals)
            cf[tr] = np.full(n, float(t))
            cache = []
            for eq in eqs:
                beta = np.asarray(params[eq.coef], dtype=float)
                cols_cf = [cf[p] for p in eq.parents]
                cols_f = [vals[p] for p in eq.parents]
                dphi = scm.basis(eq.form, cols_cf) - scm.basis(eq.form, cols_f)
                cf[eq.output] = vals[eq.output] + dphi @ beta
                cache.append((eq, beta, cols_cf, cols_f, dphi))
            q += sign * float(np.mean(cf[design.outcome]))
            adj = {design.outcome: np.full(n, sign / n)}
            for eq, beta, cols_cf, cols_f, dphi in reversed(cache):
                a = adj.pop(eq.output, None)
                if a is None:
                    continue
                g[self.layout[eq.coef]] += a @ dphi
                slope_cf = scm.parent_slopes(eq.form, cols_cf, beta)
                for k, p in enumerate(eq.parents):
                    if p in desc:
                        adj[p] = adj.get(p, 0.0) + a * slope_cf[k]
                    elif p == u_name:
                        slope_f = scm.parent_slopes(eq.form, cols_f, beta)
                        gu_rows += a * (slope_cf[k] - slope_f[k])
        if "U" in self.layout and est.kind == "SATE":
            gu = np.zeros(self.u_count)
            np.add.at(gu, self._u_index(np.arange(n)), gu_rows)
            g[self.layout["U"]] = gu
        return q, g

    # -- initialisation -------------------------------------------------
    def init_particle(self, rng: np.random.Generator) -> np.ndarray:
        """Independent draw from the prior (parameters, confounders, Ycf)."""
        params = scm.draw_params(self.design, rng)
        U = None
        if self.design.confounder is not None:
            U = rng.normal(0.0, math.sqrt(self.design.confounder.var), size=self.u_count)
        Ycf = None
        if self.is_gp:
            inputs = self._kernel_inputs(U, np.arange(self.data.n))
            Ycf = _gp.sample_inducing(inputs, self._hyper(params), rng)
        return self.pack(params, U, Ycf)


# -- objective ---------------------------------------------------------------

def objective(pair: ParticlePair, model: ParticleModel, lam: float) -> float:
    q1, q2 = model.effect(pair.p1), model.effect(pair.p2)
    return model.loglik(pair.p1) + model.loglik(pair.p2) + lam * abs(q1 - q2)


def repulsion_grad(pair: ParticlePair, model: ParticleModel, instance=None):
    """Gradients of |Q1 - Q2| for each particle; ties take the Q1 <= Q2 branch."""
    q1, g1 = model.effect_grad(pair.p1, instance)
    q2, g2 = model.effect_grad(pair.p2, instance)
    sign = 1.0 if q1 > q2 else -1.0
    return sign * g1, -sign * g2, (q1, q2)


def objective_grad(pair: ParticlePair, model: ParticleModel, lam: float, rows=None,
                   scale: float = 1.0, instance=None):
    """Value and gradient of the objective (likelihood terms scaled by ``scale``)."""
    l1, gl1 = model.loglik_grad(pair.p1, rows)
    l2, gl2 = model.loglik_grad(pair.p2, rows)
    r1, r2, (q1, q2) = repulsion_grad(pair, model, instance)
    value = scale * (l1 + l2) + lam * abs(q1 - q2)
    grad = np.concatenate([scale * gl1 + lam * r1, scale * gl2 + lam * r2])
    return value, grad


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size, alpha=0.01, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(0, np.zeros(size), np.zeros(size), alpha, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, active=None):
    """One bias-corrected Adam ascent step; returns (state, params).

    ``active`` (boolean mask) restricts the update: inactive coordinates keep
    their value and their moment estimates.
    """
    if not np.all(np.isfinite(grad)):
        raise OptimAbort(f"non-finite gradient at step {state.step + 1}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    step = state.alpha * mhat / (np.sqrt(vhat) + state.eps)
    if active is not None:
        m = np.where(active, m, state.m)
        v = np.where(active, v, state.v)
        step = np.where(active, step, 0.0)
    new = params + step
    if not np.all(np.isfinite(new)):
        raise OptimAbort(f"non-finite parameters at step {t}")
    return replace(state, step=t, m=m, v=v), new


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield perm[start:start + batch_size]


def optimize(pair: ParticlePair, model: ParticleModel, config: OptimConfig,
             rng: np.random.Generator, callback=None) -> ParticlePair:
    """Maximise the two-particle objective with minibatched Adam.

    One Adam step per minibatch; the likelihood gradient of a batch is
    scaled by n/|batch| and the repulsion term uses the full data.
    """
    n = model.data.n
    bs = min(config.batch_size, n)
    scale = n / bs if config.scaling == "minibatch" else 1.0
    x = pair.joint
    state = AdamState.fresh(len(x), config.alpha, config.beta1, config.beta2, config.eps)
    size = pair.layout.size
    # single-instance draws come from the points the estimand weights (uniformly)
    support = np.flatnonzero(model.cf_weights) if model.is_gp else None
    for epoch in range(config.epochs):
        for rows in _batches(n, bs, rng):
            instance = None
            if model.is_gp and config.single_instance:
                instance = int(support[rng.integers(len(support))])
            cur = ParticlePair(x[:size], x[size:], pair.layout)
            _, g = objective_grad(cur, model, config.lam, rows, scale, instance)
            state, x = adam_step(state, x, g)
        if callback is not None:
            callback(epoch, ParticlePair.from_joint(x, pair.layout))
    return ParticlePair.from_joint(x, pair.layout)


def init_pair(model: ParticleModel, rng: np.random.Generator) -> ParticlePair:
    r1, r2 = rng.spawn(2)
    return ParticlePair(model.init_particle(r1), model.init_particle(r2), model.layout)
