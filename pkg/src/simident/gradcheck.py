"""Finite-difference checks of the analytic gradients.

Derivatives are estimated with Ridders' extrapolation of central
differences, which stays accurate on the badly conditioned GP kernels
where a single fixed step does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import designs, gp, optim, scm

RTOL = 1e-4
ATOL = 1e-7


def ridders(f, x: float, h: float = 1e-2, shrink: float = 1.4, order: int = 10):
    """Derivative of scalar f at x with an error estimate (Ridders' method)."""
    a = np.zeros((order, order))
    a[0, 0] = (f(x + h) - f(x - h)) / (2 * h)
    best, err = a[0, 0], np.inf
    c2 = shrink * shrink
    for i in range(1, order):
        h /= shrink
        a[0, i] = (f(x + h) - f(x - h)) / (2 * h)
        fac = c2
        for j in range(1, i + 1):
            a[j, i] = (a[j - 1, i] * fac - a[j - 1, i - 1]) / (fac - 1.0)
            fac *= c2
            e = max(abs(a[j, i] - a[j - 1, i]), abs(a[j, i] - a[j - 1, i - 1]))
            if e <= err:
                err, best = e, a[j, i]
        if abs(a[i, i] - a[i - 1, i - 1]) >= 2 * err:
            break
    return best, err


def numeric_grad(fun, x: np.ndarray, steps=(1e-1, 1e-2, 1e-3, 1e-4)) -> np.ndarray:
    """Ridders derivative per coordinate, keeping the start step whose own
    error estimate is smallest (large steps fail near kernel collisions,
    small ones drown in roundoff)."""
    out = np.zeros_like(x)
    for i in range(len(x)):
        def f(v, i=i):
            y = x.copy()
            y[i] = v
            return fun(y)
        scale = max(1.0, abs(x[i]))
        trials = [ridders(f, x[i], h * scale) for h in steps]
        out[i] = min(trials, key=lambda t: t[1])[0]
    return out


def close(analytic, numeric, rtol=RTOL, atol=ATOL) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    return (diff <= atol) | (diff <= rtol * np.maximum(np.abs(analytic), np.abs(numeric)))


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    coords: int

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name} coords={self.coords} worst_rel={self.worst:.2e}"


def _worst(analytic, numeric) -> float:
    diff = np.abs(analytic - numeric)
    rel = diff / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ATOL / RTOL)
    return float(rel.max()) if rel.size else 0.0


def random_state(key, n: int, rng: np.random.Generator, lam: float = 1.0):
    design = designs.get_design(*key)
    sample = scm.sample_prior(design, n, rng)
    data = scm.simulate(design, sample)
    model = optim.ParticleModel(design, data, scm.EstimandSpec())
    return model, optim.init_pair(model, rng)


def check_objective(key, rng: np.random.Generator, n: int = 6, lam: float = 1.0) -> CheckResult:
    """Full two-particle objective gradient against Ridders differences."""
    model, pair = random_state(key, n, rng, lam)
    _, g = optim.objective_grad(pair, model, lam)
    layout = model.layout

    def fun(x):
        return optim.objective(optim.ParticlePair.from_joint(x, layout), model, lam)

    num = numeric_grad(fun, pair.joint)
    ok = close(g, num)
    return CheckResult(f"objective {key[0]}/{key[1]}", bool(ok.all()), _worst(g, num), len(g))


def check_kernel_partials(rng: np.random.Generator, n: int = 4) -> CheckResult:
    """Kernel-block partial derivatives for every symbol of a covariate kernel."""
    T, Z = rng.normal(size=n), rng.normal(size=n)
    log_l = {"T": rng.normal(0, .3), "U": rng.normal(0, .3)}
    log_s = {"T": rng.normal(0, .3), "U": rng.normal(0, .3)}

    def blocks(T=T, Z=Z, log_l=log_l, log_s=log_s):
        inp = gp.KernelInputs(T, 1.0, 0.0, Z=Z, Zcf=Z, cov="U")
        b = gp.build_blocks(inp, gp.KernelHyper(log_l, log_s, -1.0))
        return inp, gp.KernelHyper(log_l, log_s, -1.0), (b.K, b.Kstar, b.Kstarstar)

    def perturbed(sym, v):
        if ":" in sym:
            z = Z.copy()
            z[int(sym.split(":")[1])] = v
            return blocks(Z=z)[2]
        kind, dim = sym.split("_")
        ll, ls = dict(log_l), dict(log_s)
        (ll if kind == "l" else ls)[dim] = np.log(v)
        return blocks(log_l=ll, log_s=ls)[2]

    inputs, hyper, _ = blocks()
    worst, passed, count = 0.0, True, 0
    for sym in ["l_T", "s_T", "l_U", "s_U"] + [f"U:{j}" for j in range(n)]:
        if ":" in sym:
            x0 = float(Z[int(sym.split(":")[1])])
        else:
            kind, dim = sym.split("_")
            x0 = float(np.exp((log_l if kind == "l" else log_s)[dim]))
        analytic = gp.kernel_partials(inputs, hyper, sym)
        for block in range(3):
            num = np.zeros(analytic[block].shape)
            for idx in np.ndindex(num.shape):
                num[idx], _ = ridders(lambda v: perturbed(sym, v)[block][idx], x0, 1e-2)
            passed &= bool(close(analytic[block], num).all())
            worst = max(worst, _worst(analytic[block], num))
            count += num.size
    return CheckResult("kernel partials", passed, worst, count)


def run_all(seed: int = 0, states: int = 2, n: int = 6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [check_kernel_partials(rng)]
    for entry in designs.list_catalog():
        for _ in range(states):
            results.append(check_objective(entry.key, rng, n))
    return results
