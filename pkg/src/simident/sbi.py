"""Simulation-based identifiability: repeated two-particle trials and the
threshold test on the effect gap."""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special, stats

from . import designs, optim, scm
from .scm import DesignSpec, EstimandSpec, ScmSample

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SbiConfig:
    n: int = 5000
    k: int = 10
    t: float = 0.05
    t_mode: str = "fraction"      # fraction of |Q*| or absolute
    p: float = 0.05
    optim: optim.OptimConfig = field(default_factory=optim.OptimConfig)
    estimand: EstimandSpec = field(default_factory=EstimandSpec)
    seed: int = 0
    max_retries: int = 5
    calibration_margin: float | None = None   # default 2 sqrt(n)
    jobs: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if self.t_mode not in ("fraction", "absolute"):
            raise ValueError(f"unknown t_mode {self.t_mode!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def lam(self) -> float:
        return self.optim.lam


@dataclass(frozen=True)
class TrialResult:
    q1: float
    q2: float
    dq: float
    loglik1: float
    loglik2: float
    loglik_true: float
    q_true: float
    wall_time: float
    seed_index: int


@dataclass
class SbiReport:
    design: str
    family: str
    trials: list[TrialResult]
    mu: float
    sigma: float
    z: float
    decision: bool
    q_true: float
    threshold: float
    failed_trials: int
    config: dict

    @property
    def dq_norm(self) -> float | None:
        return None if self.q_true == 0 else self.mu / abs(self.q_true)


def default_config(family: str, **overrides) -> SbiConfig:
    """Desk-scale defaults: n=5000, batch 30, 50 epochs (parametric); n=50,
    batch 10, 2000 epochs (GP)."""
    if family == "gp":
        base = dict(n=50, k=5, optim=optim.OptimConfig(epochs=2000, batch_size=10))
    else:
        base = dict(n=5000, k=10, optim=optim.OptimConfig(epochs=50, batch_size=30))
    base.update(overrides)
    return SbiConfig(**base)


# -- decision rule -----------------------------------------------------------

def normal_cdf(z: float) -> float:
    return float(special.ndtr(z))


def z_statistic(mu: float, sigma: float, k: int, t: float) -> float:
    if sigma == 0:
        return -math.inf if mu <= t else math.inf
    return (mu - t) * math.sqrt(k) / sigma


def decide(mu: float, sigma: float, k: int, t: float, p: float) -> bool:
    """True (identifiable) iff Phi((mu - t) sqrt(k) / sigma) < p.

    sigma is the sample standard deviation of the gaps.  With sigma = 0 the
    rule reduces to mu <= t.
    """
    if sigma == 0:
        return mu <= t
    return normal_cdf(z_statistic(mu, sigma, k, t)) < p


def summarize(dqs) -> tuple[float, float]:
    dqs = np.asarray(dqs, dtype=float)
    mu = float(np.mean(dqs))
    sigma = float(np.std(dqs, ddof=1)) if len(dqs) > 1 else 0.0
    if np.all(dqs == dqs[0]):
        sigma = 0.0
    return mu, sigma


# -- trials ------------------------------------------------------------------

def true_log_likelihood(design: DesignSpec, sample: ScmSample, dataset: scm.Dataset) -> float:
    """log P(data | generating functions and confounders)."""
    if design.family != "gp":
        return scm.log_likelihood(design, sample.params, sample.confounders, dataset)
    ll = scm.log_likelihood(design, sample.params, sample.confounders, dataset, skip_gp=True)
    eq = design.equation(design.outcome)
    vals = scm._factual_values(design, sample.confounders, dataset)
    r = dataset.columns[design.outcome] - sample.outcome_fn(*[vals[p] for p in eq.parents])
    lv = float(sample.params[eq.log_var])
    return ll - 0.5 * (len(r) * (LOG_2PI + lv) + float(r @ r) * math.exp(-lv))


def run_trial(design: DesignSpec, sample: ScmSample, config: SbiConfig,
              seed, seed_index: int = 0) -> TrialResult:
    """Fresh noise on the fixed model, then one optimised particle pair."""
    start = time.perf_counter()
    data_rng, init_rng, opt_rng = map(np.random.default_rng, _fresh_seed(seed).spawn(3))
    truth = scm.resample_noise(design, sample, config.n, data_rng)
    data = scm.simulate(design, truth)
    model = optim.ParticleModel(design, data, config.estimand)
    pair = optim.init_pair(model, init_rng)
    pair = optim.optimize(pair, model, config.optim, opt_rng)
    q1, q2 = model.effect(pair.p1), model.effect(pair.p2)
    ll1, ll2 = model.loglik(pair.p1), model.loglik(pair.p2)
    ll_true = true_log_likelihood(design, truth, data)
    q_true = scm.true_effect(design, truth, data, config.estimand)
    if not all(map(math.isfinite, (q1, q2, ll1, ll2))):
        raise optim.OptimAbort("non-finite trial outcome")
    margin = config.calibration_margin
    margin = 2.0 * math.sqrt(config.n) if margin is None else margin
    if min(ll1, ll2) < ll_true - margin:
        warnings.warn(
            f"{design.name}/{design.family}: particle log-likelihood {min(ll1, ll2):.1f} "
            f"is more than {margin:.1f} below the generating model's {ll_true:.1f}; "
            "consider a smaller lambda", RuntimeWarning, stacklevel=2)
    return TrialResult(q1, q2, abs(q1 - q2), ll1, ll2, ll_true, q_true,
                       time.perf_counter() - start, seed_index)


def _fresh_seed(seed) -> np.random.SeedSequence:
    # spawning mutates a SeedSequence, so never spawn from the caller's object
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key,
                                      pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)


def _trial_job(args):
    design, sample, config, seed, idx = args
    try:
        return run_trial(design, sample, config, seed, idx)
    except (optim.OptimAbort, np.linalg.LinAlgError, FloatingPointError) as exc:
        return exc


def _map(jobs, args):
    if jobs <= 1:
        return [_trial_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_job, args))


def run(design_name: str, family: str, config: SbiConfig) -> SbiReport:
    """Sample one model from the prior, run k trials, apply the test."""
    design = designs.get_design(design_name, family)
    root = np.random.SeedSequence(config.seed)
    model_seed, *trial_seeds = root.spawn(1 + config.k + config.max_retries)
    sample = scm.sample_prior(design, config.n, np.random.default_rng(model_seed))
    args = [(design, sample, config, trial_seeds[i], i) for i in range(config.k)]
    results = _map(config.jobs, args)
    trials = [r for r in results if isinstance(r, TrialResult)]
    failed = len(results) - len(trials)
    next_idx = config.k
    while len(trials) < config.k:
        if next_idx >= len(trial_seeds):
            raise RuntimeError(f"{failed} trials failed; fewer than k={config.k} succeeded")
        r = _trial_job((design, sample, config, trial_seeds[next_idx], next_idx))
        next_idx += 1
        if isinstance(r, TrialResult):
            trials.append(r)
        else:
            failed += 1
    return build_report(design, trials, config, failed)


def build_report(design: DesignSpec, trials: list[TrialResult], config: SbiConfig,
                 failed: int = 0) -> SbiReport:
    mu, sigma = summarize([t.dq for t in trials])
    q_true = float(np.mean([t.q_true for t in trials]))
    t = config.t * abs(q_true) if config.t_mode == "fraction" else config.t
    k = len(trials)
    return SbiReport(
        design=design.name, family=design.family, trials=trials, mu=mu, sigma=sigma,
        z=z_statistic(mu, sigma, k, t), decision=decide(mu, sigma, k, t, config.p),
        q_true=q_true, threshold=t, failed_trials=failed, config=config_echo(config))


def config_echo(config: SbiConfig) -> dict:
    d = asdict(config)
    d.pop("jobs")
    d["estimand"]["conditioning"] = (list(d["estimand"]["conditioning"])
                                     if d["estimand"]["conditioning"] is not None else None)
    return d


# -- likelihood-ratio diagnostic --------------------------------------------

@dataclass
class LikelihoodRatioCurve:
    n_grid: list[int]
    mean_log_lr: list[float]
    samples: np.ndarray          # repetitions x len(n_grid)

    @property
    def spearman(self) -> float:
        ns = np.repeat([self.n_grid], len(self.samples), axis=0).ravel()
        return float(stats.spearmanr(ns, self.samples.ravel()).statistic)

    @property
    def linear_r2(self) -> float:
        fit = stats.linregress(self.n_grid, self.mean_log_lr)
        return float(fit.rvalue**2)


def likelihood_ratio_diagnostic(design_name: str, family: str, n_grid, reps: int = 10,
                                perturb: float = 0.1, seed: int = 0) -> LikelihoodRatioCurve:
    """Mean log P(data | perturbed model) - log P(data | true model) vs n.

    The perturbed model shifts every structural coefficient by ``perturb``
    and keeps the confounders.
    """
    design = designs.get_design(design_name, family)
    if design.family == "gp":
        raise ValueError("diagnostic needs a parametric family")
    rng = np.random.default_rng(seed)
    n_grid = [int(n) for n in n_grid]
    out = np.zeros((reps, len(n_grid)))
    for r in range(reps):
        truth = scm.sample_prior(design, max(n_grid), rng)
        shifted = {k: (v if k.startswith("log_") else v + perturb) for k, v in truth.params.items()}
        for j, n in enumerate(n_grid):
            count = design.confounder.count(n) if design.confounder is not None else 0
            sample = ScmSample(truth.params, truth.confounders[:count],
                               scm.draw_noise(design, truth.params, n, rng))
            data = scm.simulate(design, sample)
            out[r, j] = (scm.log_likelihood(design, shifted, sample.confounders, data)
                         - scm.log_likelihood(design, truth.params, sample.confounders, data))
    return LikelihoodRatioCurve(n_grid, [float(v) for v in out.mean(axis=0)], out)
