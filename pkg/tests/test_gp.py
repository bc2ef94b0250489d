import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from simident import gp
from simident.gradcheck import close, numeric_grad


def k1(a, b, l, s):
    return s * math.exp(-(a - b) ** 2 / l)


def make_inputs(rng, n=4, m=None, spread=3.0, cov="U"):
    m = n if m is None else m
    T = rng.uniform(-spread, spread, n)
    if cov is None:
        return gp.KernelInputs(T, 1.0, 0.0, m=m)
    Z = rng.uniform(-spread, spread, n)
    Zcf = rng.uniform(-spread, spread, m)
    return gp.KernelInputs(T, 1.0, 0.0, Z=Z, Zcf=Zcf, cov=cov)


def make_hyper(rng, cov="U", log_var_y=-1.0):
    dims = ["T"] + ([cov] if cov else [])
    return gp.KernelHyper({d: rng.normal(0, .3) for d in dims},
                          {d: rng.normal(0, .3) for d in dims}, log_var_y)


def test_rbf_convention():
    assert gp.rbf(0.3, 0.3, 2.0, 1.7) == pytest.approx(1.7)
    assert gp.rbf(0.0, 1.0, 2.0, 3.0) == pytest.approx(3.0 * math.exp(-0.5))


def test_blocks_match_pairwise_kernel():
    rng = np.random.default_rng(0)
    inp, hyp = make_inputs(rng, 3, 4), make_hyper(rng)
    b = gp.build_blocks(inp, hyp)
    lT, sT, lU, sU = hyp.l("T"), hyp.s("T"), hyp.l("U"), hyp.s("U")

    def k(t, z, t2, z2):
        return k1(t, t2, lT, sT) * k1(z, z2, lU, sU)

    n, m = 3, 4
    for i in range(n):
        for j in range(n):
            assert b.K[i, j] == pytest.approx(k(inp.T[i], inp.Z[i], inp.T[j], inp.Z[j]), rel=1e-13)
        for a, t in enumerate((1.0, 0.0)):
            for j in range(m):
                assert b.Kstar[i, a * m + j] == pytest.approx(
                    k(inp.T[i], inp.Z[i], t, inp.Zcf[j]), rel=1e-13)
    for a, t in enumerate((1.0, 0.0)):
        for c, t2 in enumerate((1.0, 0.0)):
            for i in range(m):
                for j in range(m):
                    assert b.Kstarstar[a * m + i, c * m + j] == pytest.approx(
                        k(t, inp.Zcf[i], t2, inp.Zcf[j]), rel=1e-13)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_mvn_logpdf_matches_dense_oracle(n):
    rng = np.random.default_rng(n)
    A = rng.normal(size=(n, n))
    S = A @ A.T + 0.5 * np.eye(n)
    y, mu = rng.normal(size=n), rng.normal(size=n)
    r = y - mu
    sign, logdet = np.linalg.slogdet(S)
    dense = -0.5 * (r @ np.linalg.solve(S, r) + logdet + n * math.log(2 * math.pi))
    got = gp.mvn_logpdf(y, mu, S)
    assert got == pytest.approx(dense, rel=1e-10)
    assert got == pytest.approx(multivariate_normal(mu, S).logpdf(y), rel=1e-10)


def test_conditional_matches_dense_gaussian_conditioning():
    rng = np.random.default_rng(3)
    inp, hyp = make_inputs(rng, 4, 3, spread=4.0), make_hyper(rng)
    b = gp.build_blocks(inp, hyp)
    Ycf = rng.normal(size=6)
    mu, Sigma = gp.conditional(b, Ycf, hyp.var_y)
    Kss = b.Kstarstar + 1e-8 * np.mean(np.diag(b.Kstarstar)) * np.eye(6)
    want_mu = b.Kstar @ np.linalg.solve(Kss, Ycf)
    want_S = b.K - b.Kstar @ np.linalg.solve(Kss, b.Kstar.T) + hyp.var_y * np.eye(4)
    assert np.allclose(mu, want_mu, rtol=1e-8, atol=1e-10)
    assert np.allclose(Sigma, want_S, rtol=1e-8, atol=1e-10)


def test_loglik_value_routes_agree():
    rng = np.random.default_rng(4)
    inp, hyp = make_inputs(rng, 5), make_hyper(rng)
    Y, Ycf = rng.normal(size=5), rng.normal(size=10)
    ll, _ = gp.gp_loglik_and_grad(inp, hyp, Y, Ycf)
    assert ll == pytest.approx(gp.gp_loglik(inp, hyp, Y, Ycf), rel=1e-10)


@pytest.mark.parametrize("sym", ["l_T", "s_T", "l_U", "s_U", "U:0", "U:2"])
def test_kernel_partials_finite_differences(sym):
    rng = np.random.default_rng(5)
    n = 3
    T, Z = rng.normal(size=n), rng.normal(size=n)
    log_l = {"T": 0.2, "U": -0.1}
    log_s = {"T": -0.3, "U": 0.25}

    def blocks(x):
        ll, ls, z = dict(log_l), dict(log_s), Z.copy()
        if ":" in sym:
            z[int(sym[2:])] = x
        else:
            kind, d = sym.split("_")
            (ll if kind == "l" else ls)[d] = math.log(x)
        b = gp.build_blocks(gp.KernelInputs(T, 1.0, 0.0, Z=z, Zcf=z, cov="U"),
                            gp.KernelHyper(ll, ls, -1.0))
        return np.concatenate([b.K.ravel(), b.Kstar.ravel(), b.Kstarstar.ravel()])

    if ":" in sym:
        x0 = Z[int(sym[2:])]
    else:
        kind, d = sym.split("_")
        x0 = math.exp((log_l if kind == "l" else log_s)[d])
    inp = gp.KernelInputs(T, 1.0, 0.0, Z=Z, Zcf=Z, cov="U")
    analytic = np.concatenate([a.ravel() for a in gp.kernel_partials(inp, gp.KernelHyper(log_l, log_s, -1.0), sym)])
    h = 1e-6
    fd = (blocks(x0 + h) - blocks(x0 - h)) / (2 * h)
    assert np.allclose(analytic, fd, rtol=1e-6, atol=1e-8)


def test_lengthscale_partial_is_natural_scale():
    # d k / d l = d^2 / l^2 k ; the log-scale derivative is l times that
    d, l, s = 0.7, 1.3, 0.9
    k = k1(0.0, d, l, s)
    h = 1e-6
    fd_nat = (k1(0, d, l + h, s) - k1(0, d, l - h, s)) / (2 * h)
    assert fd_nat == pytest.approx(d * d / l**2 * k, rel=1e-8)
    fd_log = (k1(0, d, l * math.exp(h), s) - k1(0, d, l * math.exp(-h), s)) / (2 * h)
    assert fd_log == pytest.approx(d * d / l * k, rel=1e-8)


@pytest.mark.parametrize("cov", [None, "U"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loglik_gradient_against_finite_differences(cov, seed):
    rng = np.random.default_rng(seed)
    n = 4
    inp = make_inputs(rng, n, cov=cov)
    hyp = make_hyper(rng, cov)
    Y, Ycf = rng.normal(size=n), rng.normal(size=2 * n)
    _, g = gp.gp_loglik_and_grad(inp, hyp, Y, Ycf)
    dims = ["T"] + ([cov] if cov else [])
    names = [f"log_{k}_{d}" for d in dims for k in ("l", "s")] + ["log_var_y"]

    def unpack(x):
        ll = {d: x[2 * i] for i, d in enumerate(dims)}
        ls = {d: x[2 * i + 1] for i, d in enumerate(dims)}
        h = gp.KernelHyper(ll, ls, x[2 * len(dims)])
        rest = x[2 * len(dims) + 1:]
        ycf = rest[: 2 * n]
        if cov is None:
            return gp.KernelInputs(inp.T, 1.0, 0.0, m=n), h, ycf
        z, zcf = rest[2 * n: 3 * n], rest[3 * n:]
        return gp.KernelInputs(inp.T, 1.0, 0.0, Z=z, Zcf=zcf, cov=cov), h, ycf

    x0 = [hyp.log_l[d] if k == "l" else hyp.log_s[d] for d in dims for k in ("l", "s")]
    x0 = np.array(x0 + [hyp.log_var_y] + list(Ycf)
                  + ([] if cov is None else list(inp.Z) + list(inp.Zcf)))
    analytic = np.array([g[k] for k in names] + list(g["Ycf"])
                        + ([] if cov is None else list(g["Z"]) + list(g["Zcf"])))

    def f(x):
        i, h, ycf = unpack(x)
        return gp.gp_loglik(i, h, Y, ycf)

    num = numeric_grad(f, x0)
    assert close(analytic, num).all(), np.max(np.abs(analytic - num))


def test_forward_chain_and_adjoint_agree():
    """Ycf and covariate gradients by the adjoint form equal the forward chain
    assembled from the kernel partials (two independent routes)."""
    rng = np.random.default_rng(8)
    n = 4
    T, Z = rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)
    inp = gp.KernelInputs(T, 1.0, 0.0, Z=Z, Zcf=Z, cov="U")
    hyp = make_hyper(rng)
    Y, Ycf = rng.normal(size=n), rng.normal(size=2 * n)
    _, g = gp.gp_loglik_and_grad(inp, hyp, Y, Ycf)
    blocks = gp.build_blocks(inp, hyp)
    sol = gp._solve(blocks, Y, Ycf, hyp.var_y)
    zeros = (np.zeros((n, n)), np.zeros((n, 2 * n)), np.zeros((2 * n, 2 * n)))
    for j in range(2 * n):
        e = np.zeros(2 * n)
        e[j] = 1.0
        fwd = gp._chain(blocks, sol, *zeros, dYcf=e)
        assert fwd == pytest.approx(g["Ycf"][j], rel=1e-9, abs=1e-12)
    jit = sol.jitter_level
    for j in range(n):
        dK, dKs, dKss = gp.kernel_partials(inp, hyp, f"U:{j}")
        if jit:
            dKss = dKss + jit * float(np.mean(np.diag(dKss))) * np.eye(2 * n)
        fwd = gp._chain(blocks, sol, dK, dKs, dKss)
        assert fwd == pytest.approx(g["Z"][j] + g["Zcf"][j], rel=1e-7, abs=1e-10)


def test_jitter_handles_duplicate_inducing_points():
    rng = np.random.default_rng(9)
    Z = np.repeat(rng.normal(size=2), 3)         # shared confounder per object
    inp = gp.KernelInputs(rng.normal(size=6), 1.0, 0.0, Z=Z, Zcf=Z, cov="U")
    hyp = make_hyper(rng)
    ll, g = gp.gp_loglik_and_grad(inp, hyp, rng.normal(size=6), rng.normal(size=12))
    assert math.isfinite(ll) and np.all(np.isfinite(g["Ycf"]))


def test_cholesky_gives_up_on_indefinite_matrix():
    with pytest.raises(gp.GpSingularError):
        gp._cholesky(-np.eye(3))


def test_kernel_inputs_validation():
    with pytest.raises(ValueError):
        gp.KernelInputs(np.zeros(2), 1.0, 1.0, m=2)
    with pytest.raises(ValueError):
        gp.KernelInputs(np.array([0.0, np.nan]), 1.0, 0.0, m=2)
    with pytest.raises(ValueError):
        gp.KernelInputs(np.zeros(2), 1.0, 0.0, cov="U")


def test_sample_inducing_covariance():
    rng = np.random.default_rng(10)
    inp = make_inputs(rng, 2, cov="U", spread=1.0)
    hyp = make_hyper(rng)
    draws = np.array([gp.sample_inducing(inp, hyp, rng) for _ in range(6000)])
    Kss = gp.build_blocks(inp, hyp).Kstarstar
    assert np.allclose(np.cov(draws.T), Kss, atol=0.08 * np.max(np.diag(Kss)))


def test_random_feature_function_covariance():
    rng = np.random.default_rng(11)
    l, s = (0.8, 1.5), (1.2, 0.7)
    a, b = np.array([0.2]), np.array([-0.4])
    za, zb = np.array([0.5]), np.array([0.1])
    vals = []
    for _ in range(800):
        f = gp.RffFunction.sample(l, s, rng, n_features=512)
        vals.append((f(a, za)[0], f(b, zb)[0]))
    vals = np.array(vals)
    want = s[0] * s[1] * math.exp(-(0.6**2) / l[0] - (0.4**2) / l[1])
    assert np.mean(vals[:, 0] * vals[:, 1]) == pytest.approx(want, abs=0.15)
    assert np.mean(vals[:, 0] ** 2) == pytest.approx(s[0] * s[1], rel=0.15)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.1, 5))
@settings(max_examples=60, deadline=None)
def test_rbf_symmetric_and_bounded(x, y, l, s):
    assert gp.rbf(x, y, l, s) == gp.rbf(y, x, l, s)
    assert 0 <= gp.rbf(x, y, l, s) <= s
