"""Gaussian-process outcome model conditioned on inducing counterfactuals.

The outcome function f(T, Z) has a zero-mean GP prior with a product kernel
``k(T, T') * k(Z, Z')`` where ``k(x, x'; l, s) = s * exp(-(x - x')**2 / l)``
(no factor of two, lengthscale not squared).  ``Z`` is an optional second
input: a latent confounder or an observed covariate.

Inducing counterfactuals ``Ycf = [Y', Y'']`` are the function values at
``(t', Zcf_j)`` and ``(t'', Zcf_j)``.  The factual outcomes given ``Ycf`` are
Gaussian with

    mu    = Ks @ inv(Kss) @ Ycf
    Sigma = K - Ks @ inv(Kss) @ Ks.T + var_y * I

where ``K`` is the factual kernel matrix (n x n), ``Ks`` the cross-covariance
between factual and inducing values (n x 2m) and ``Kss`` the inducing
covariance (2m x 2m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

LOG_2PI = math.log(2.0 * math.pi)
JITTER_LEVELS = (1e-8, 1e-6, 1e-4)


class GpSingularError(np.linalg.LinAlgError):
    pass


def rbf(x, xp, l, s):
    d = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
    return s * np.exp(-(d * d) / l)


def _sq_dist(a, b):
    d = np.asarray(a, dtype=float)[:, None] - np.asarray(b, dtype=float)[None, :]
    return d * d


@dataclass
class RffFunction:
    """A fixed function drawn (approximately) from the product-RBF GP prior.

    Random Fourier features: the spectral density of ``s exp(-d^2 / l)`` is
    normal with variance ``2 / l`` per input dimension.
    """

    omega: np.ndarray
    phase: np.ndarray
    weights: np.ndarray
    scale: float

    @classmethod
    def sample(cls, lengthscales, scales, rng: np.random.Generator,
               n_features: int = 4096) -> "RffFunction":
        ls = np.asarray(lengthscales, dtype=float)
        omega = rng.normal(size=(n_features, len(ls))) * np.sqrt(2.0 / ls)
        phase = rng.uniform(0.0, 2.0 * math.pi, size=n_features)
        weights = rng.normal(size=n_features)
        return cls(omega, phase, weights, float(np.prod(scales)))

    def __call__(self, *cols) -> np.ndarray:
        x = np.stack([np.asarray(c, dtype=float) for c in cols], axis=-1)
        feats = np.cos(x @ self.omega.T + self.phase)
        return math.sqrt(2.0 * self.scale / len(self.weights)) * (feats @ self.weights)


@dataclass
class KernelHyper:
    """Per-dimension lengthscale/scale and the outcome noise, all log-stored."""

    log_l: dict[str, float]
    log_s: dict[str, float]
    log_var_y: float

    def l(self, d):
        return math.exp(self.log_l[d])

    def s(self, d):
        return math.exp(self.log_s[d])

    @property
    def var_y(self):
        return math.exp(self.log_var_y)


@dataclass
class KernelInputs:
    """Kernel inputs: factual rows plus the inducing covariate locations.

    ``cov`` names the second kernel dimension (None for a treatment-only
    kernel); ``m`` is the number of inducing pairs when ``Zcf`` is absent.
    """

    T: np.ndarray
    t1: float
    t0: float
    Z: np.ndarray | None = None
    Zcf: np.ndarray | None = None
    cov: str | None = None
    m: int | None = None

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        if self.t1 == self.t0:
            raise ValueError("t1 and t0 must differ")
        arrays = [self.T] + [a for a in (self.Z, self.Zcf) if a is not None]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("non-finite kernel input")
        if self.cov is not None and (self.Z is None or self.Zcf is None):
            raise ValueError("covariate kernel needs Z and Zcf")

    @property
    def n_cf(self) -> int:
        return len(self.Zcf) if self.Zcf is not None else int(self.m)


@dataclass
class KernelBlocks:
    K: np.ndarray
    Kstar: np.ndarray
    Kstarstar: np.ndarray
    # factors kept for the partial derivatives
    KT: np.ndarray = field(repr=False, default=None)
    kt1: np.ndarray = field(repr=False, default=None)
    kt0: np.ndarray = field(repr=False, default=None)
    ktt: float = 0.0
    sT: float = 0.0
    KZ: np.ndarray = field(repr=False, default=None)
    KZs: np.ndarray = field(repr=False, default=None)
    KZss: np.ndarray = field(repr=False, default=None)


def _treatment_block(sT, ktt):
    return np.array([[sT, ktt], [ktt, sT]])


def build_blocks(inputs: KernelInputs, hyper: KernelHyper) -> KernelBlocks:
    T, n, m = inputs.T, len(inputs.T), inputs.n_cf
    lT, sT = hyper.l("T"), hyper.s("T")
    KT = rbf(T[:, None], T[None, :], lT, sT)
    kt1 = rbf(T, inputs.t1, lT, sT)
    kt0 = rbf(T, inputs.t0, lT, sT)
    ktt = float(rbf(inputs.t1, inputs.t0, lT, sT))
    if inputs.cov is None:
        KZ, KZs, KZss = np.ones((n, n)), np.ones((n, m)), np.ones((m, m))
    else:
        c = inputs.cov
        lZ, sZ = hyper.l(c), hyper.s(c)
        KZ = rbf(inputs.Z[:, None], inputs.Z[None, :], lZ, sZ)
        KZs = rbf(inputs.Z[:, None], inputs.Zcf[None, :], lZ, sZ)
        KZss = rbf(inputs.Zcf[:, None], inputs.Zcf[None, :], lZ, sZ)
    K = KT * KZ
    Kstar = np.hstack([kt1[:, None] * KZs, kt0[:, None] * KZs])
    Kss = np.kron(_treatment_block(sT, ktt), KZss)
    return KernelBlocks(K, Kstar, Kss, KT, kt1, kt0, ktt, sT, KZ, KZs, KZss)


def _cholesky(M: np.ndarray, levels=(0.0,) + JITTER_LEVELS):
    """Lower Cholesky factor with escalating relative jitter.

    Returns (factor, absolute jitter added, relative level used).
    """
    scale = float(np.mean(np.diag(M)))
    eye = np.eye(len(M))
    for level in levels:
        try:
            c = linalg.cho_factor(M + level * scale * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(c[0])) and np.all(np.diag(c[0]) > 0):
            return c, level * scale, level
    raise GpSingularError("matrix not positive definite after maximal jitter")


def conditional(blocks: KernelBlocks, Ycf, var_y: float):
    """Mean and covariance of the factual outcomes given the inducing values."""
    cf, _, _ = _cholesky(blocks.Kstarstar, JITTER_LEVELS)
    W = linalg.cho_solve(cf, blocks.Kstar.T, check_finite=False)
    # W' Ycf rather than Ks (inv(Kss) Ycf): duplicated inducing inputs make
    # inv(Kss) Ycf huge along the null direction and the product cancels badly
    mu = W.T @ np.asarray(Ycf, dtype=float)
    Sigma = blocks.K - blocks.Kstar @ W + var_y * np.eye(len(blocks.K))
    return mu, 0.5 * (Sigma + Sigma.T)


def mvn_logpdf(y, mu, Sigma) -> float:
    y = np.asarray(y, dtype=float)
    r = y - np.asarray(mu, dtype=float)
    c, _, _ = _cholesky(np.asarray(Sigma, dtype=float))
    beta = linalg.cho_solve(c, r, check_finite=False)
    return float(-0.5 * r @ beta - np.sum(np.log(np.diag(c[0]))) - 0.5 * len(y) * LOG_2PI)


def _symbol(wrt: str, inputs: KernelInputs):
    """Parse 'l_T', 's_U', 'U:3' style symbols."""
    if ":" in wrt:
        name, idx = wrt.split(":")
        if name != inputs.cov:
            raise KeyError(f"unknown symbol {wrt!r}")
        return "z", int(idx)
    kind, _, dim = wrt.partition("_")
    if kind not in ("l", "s") or dim not in ("T", inputs.cov):
        raise KeyError(f"unknown symbol {wrt!r}")
    return kind, dim


def kernel_partials(inputs: KernelInputs, hyper: KernelHyper, wrt: str):
    """Partials (dK, dKs, dKss) with respect to one natural-scale symbol.

    Symbols: ``l_T``, ``s_T``, ``l_<cov>``, ``s_<cov>`` and ``<cov>:j`` for
    the j-th latent covariate value, where j indexes a shared vector that
    both ``Z`` and ``Zcf`` were drawn from; here ``Z`` and ``Zcf`` are taken
    to be that vector (index j in both).
    """
    b = build_blocks(inputs, hyper)
    n, m = len(inputs.T), inputs.n_cf
    kind, arg = _symbol(wrt, inputs)
    zeros_n, zeros_m = np.zeros((n, n)), np.zeros((n, m))
    dKT, dkt1, dkt0, dktt, dsT = zeros_n, np.zeros(n), np.zeros(n), 0.0, 0.0
    dKZ, dKZs, dKZss = zeros_n, zeros_m, np.zeros((m, m))
    T = inputs.T
    if kind in ("l", "s") and arg == "T":
        lT, sT = hyper.l("T"), hyper.s("T")
        if kind == "l":
            dKT = _sq_dist(T, T) / lT**2 * b.KT
            dkt1 = (T - inputs.t1) ** 2 / lT**2 * b.kt1
            dkt0 = (T - inputs.t0) ** 2 / lT**2 * b.kt0
            dktt = (inputs.t1 - inputs.t0) ** 2 / lT**2 * b.ktt
        else:
            dKT, dkt1, dkt0, dktt, dsT = b.KT / sT, b.kt1 / sT, b.kt0 / sT, b.ktt / sT, 1.0
    elif kind in ("l", "s"):
        lZ, sZ = hyper.l(arg), hyper.s(arg)
        Z, Zcf = inputs.Z, inputs.Zcf
        if kind == "l":
            dKZ = _sq_dist(Z, Z) / lZ**2 * b.KZ
            dKZs = _sq_dist(Z, Zcf) / lZ**2 * b.KZs
            dKZss = _sq_dist(Zcf, Zcf) / lZ**2 * b.KZss
        else:
            dKZ, dKZs, dKZss = b.KZ / sZ, b.KZs / sZ, b.KZss / sZ
    else:
        j = arg
        lZ = hyper.l(inputs.cov)
        Z, Zcf = inputs.Z, inputs.Zcf
        # d k(a, b) / d a = -2 (a - b) / l * k(a, b)
        ez = (np.arange(n) == j).astype(float)
        ec = (np.arange(m) == j).astype(float)
        dZ = Z[:, None] - Z[None, :]
        dKZ = -2.0 * dZ / lZ * b.KZ * (ez[:, None] - ez[None, :])
        dZs = Z[:, None] - Zcf[None, :]
        dKZs = -2.0 * dZs / lZ * b.KZs * (ez[:, None] - ec[None, :])
        dZss = Zcf[:, None] - Zcf[None, :]
        dKZss = -2.0 * dZss / lZ * b.KZss * (ec[:, None] - ec[None, :])
    dK = dKT * b.KZ + b.KT * dKZ
    dKs = np.hstack([dkt1[:, None] * b.KZs + b.kt1[:, None] * dKZs,
                     dkt0[:, None] * b.KZs + b.kt0[:, None] * dKZs])
    dKss = (np.kron(_treatment_block(dsT, dktt), b.KZss)
            + np.kron(_treatment_block(b.sT, b.ktt), dKZss))
    return dK, dKs, dKss


@dataclass
class _Solved:
    ll: float
    r: np.ndarray
    alpha: np.ndarray      # inv(Kss) Ycf
    W: np.ndarray          # inv(Kss) Ks.T
    Gmu: np.ndarray        # dL/dmu = inv(Sigma) r
    GS: np.ndarray         # dL/dSigma
    jitter_level: float


def _solve(blocks: KernelBlocks, Y, Ycf, var_y) -> _Solved:
    cf, _, level = _cholesky(blocks.Kstarstar, JITTER_LEVELS)
    alpha = linalg.cho_solve(cf, Ycf, check_finite=False)
    W = linalg.cho_solve(cf, blocks.Kstar.T, check_finite=False)
    mu = W.T @ Ycf
    Sigma = blocks.K - blocks.Kstar @ W
    Sigma = 0.5 * (Sigma + Sigma.T) + var_y * np.eye(len(Y))
    cs, _, _ = _cholesky(Sigma)
    r = Y - mu
    Gmu = linalg.cho_solve(cs, r, check_finite=False)
    Sinv = linalg.cho_solve(cs, np.eye(len(Y)), check_finite=False)
    ll = float(-0.5 * r @ Gmu - np.sum(np.log(np.diag(cs[0]))) - 0.5 * len(Y) * LOG_2PI)
    GS = -0.5 * (Sinv - np.outer(Gmu, Gmu))
    return _Solved(ll, r, alpha, W, Gmu, GS, level)


def _chain(blocks: KernelBlocks, sol: _Solved, dK, dKs, dKss, dYcf=None, dvar=0.0) -> float:
    """dL/ds = grad_mu . dmu/ds + <grad_Sigma, dSigma/ds>.

    dmu    = dKs a - Ks A dKss a + Ks A dYcf            (A = inv(Kss), a = A Ycf)
    dSigma = dK - dKs A Ks' + Ks A dKss A Ks' - Ks A dKs' + dvar I
    """
    Ks_A = sol.W.T
    dmu = dKs @ sol.alpha - Ks_A @ (dKss @ sol.alpha)
    if dYcf is not None:
        dmu = dmu + Ks_A @ dYcf
    tmp = dKs @ sol.W
    dSigma = dK - tmp - tmp.T + Ks_A @ dKss @ sol.W
    if dvar:
        dSigma = dSigma + dvar * np.eye(len(dK))
    return float(sol.Gmu @ dmu + np.sum(sol.GS * dSigma))


def gp_loglik_and_grad(inputs: KernelInputs, hyper: KernelHyper, Y, Ycf):
    """Outcome log density log N(Y; mu, Sigma) and its gradient.

    Gradient keys: ``log_l_<d>``, ``log_s_<d>`` and ``log_var_y`` (log
    scale), ``Ycf``, and for a latent covariate ``Z`` / ``Zcf`` holding
    partials with respect to each factual and inducing covariate value.
    Hyperparameter partials are assembled through the mean/covariance chain
    from :func:`kernel_partials`; the covariate and ``Ycf`` partials use the
    equivalent adjoint (reverse) form.
    """
    Y = np.asarray(Y, dtype=float)
    Ycf = np.asarray(Ycf, dtype=float)
    blocks = build_blocks(inputs, hyper)
    sol = _solve(blocks, Y, Ycf, hyper.var_y)
    grads: dict = {}
    # jitter is level * mean(diag(Kss)); carry its dependence on the scales
    jit = sol.jitter_level
    dims = ("T",) if inputs.cov is None else ("T", inputs.cov)
    for d in dims:
        for kind in ("l", "s"):
            dK, dKs, dKss = kernel_partials(inputs, hyper, f"{kind}_{d}")
            if jit:
                dKss = dKss + jit * float(np.mean(np.diag(dKss))) * np.eye(len(dKss))
            nat = _chain(blocks, sol, dK, dKs, dKss)
            val = hyper.l(d) if kind == "l" else hyper.s(d)
            grads[f"log_{kind}_{d}"] = nat * val
    grads["log_var_y"] = float(np.trace(sol.GS)) * hyper.var_y
    grads["Ycf"] = sol.W @ sol.Gmu

    if inputs.cov is not None:
        m = inputs.n_cf
        G_K = sol.GS
        G_Ks = np.outer(sol.Gmu, sol.alpha) - 2.0 * sol.GS @ sol.W.T
        G_Kss = sol.W @ sol.GS @ sol.W.T - np.outer(sol.W @ sol.Gmu, sol.alpha)
        lZ = hyper.l(inputs.cov)
        Z, Zcf = inputs.Z, inputs.Zcf
        # covariate enters through KZ (rows x rows), KZs (rows x cf), KZss (cf x cf)
        H = G_K * blocks.KT
        D = -2.0 * (Z[:, None] - Z[None, :]) / lZ * blocks.KZ
        HD = H * D
        gZ = HD.sum(1) - HD.sum(0)
        Hs = G_Ks[:, :m] * blocks.kt1[:, None] + G_Ks[:, m:] * blocks.kt0[:, None]
        HDs = Hs * (-2.0 * (Z[:, None] - Zcf[None, :]) / lZ * blocks.KZs)
        gZ = gZ + HDs.sum(1)
        gZcf = -HDs.sum(0)
        C = _treatment_block(blocks.sT, blocks.ktt)
        Hss = sum(C[a, b] * G_Kss[a * m:(a + 1) * m, b * m:(b + 1) * m]
                  for a in range(2) for b in range(2))
        HDss = Hss * (-2.0 * (Zcf[:, None] - Zcf[None, :]) / lZ * blocks.KZss)
        gZcf = gZcf + HDss.sum(1) - HDss.sum(0)
        grads["Z"] = gZ
        grads["Zcf"] = gZcf
    return sol.ll, grads


def gp_loglik(inputs: KernelInputs, hyper: KernelHyper, Y, Ycf) -> float:
    blocks = build_blocks(inputs, hyper)
    mu, Sigma = conditional(blocks, Ycf, hyper.var_y)
    return mvn_logpdf(Y, mu, Sigma)


def sample_inducing(inputs: KernelInputs, hyper: KernelHyper, rng: np.random.Generator):
    """Draw Ycf from its GP prior (used to initialise particles)."""
    blocks = build_blocks(inputs, hyper)
    cf, _, _ = _cholesky(blocks.Kstarstar, JITTER_LEVELS)
    return np.tril(cf[0]) @ rng.normal(size=len(blocks.Kstarstar))
