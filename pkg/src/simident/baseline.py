"""Profile-likelihood baseline: nudge one structural parameter, re-fit the
rest, and track how far the effect estimate can drift along the likelihood
ridge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import designs, optim
from .scm import Dataset, EstimandSpec


@dataclass(frozen=True)
class BaselineConfig:
    warmup_steps: int = 500
    steps: int = 100
    delta: float = 0.01
    repetitions: int = 100
    mode: str = "walk"        # walk: continue from last optimum; restart: from warmup
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("warmup_steps", "steps", "repetitions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.mode not in ("walk", "restart"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class BaselineResult:
    q_min: float
    q_max: float
    q_warmup: float
    qs: list[float]
    skipped: int

    @property
    def spread(self) -> float:
        return self.q_max - self.q_min


def _ascend(model, x, state, steps, active=None):
    for _ in range(steps):
        _, g = model.loglik_grad(x)
        state, x = optim.adam_step(state, x, g, active)
    return state, x


def profile_range(design_name: str, family: str, dataset: Dataset, config: BaselineConfig,
                  rng: np.random.Generator, estimand: EstimandSpec | None = None
                  ) -> BaselineResult:
    """Warm up on the full-data likelihood, then perturb each structural
    parameter coordinate in turn and re-optimise everything else."""
    design = designs.get_design(design_name, family)
    model = optim.ParticleModel(design, dataset, estimand or EstimandSpec())
    x = model.init_particle(rng)
    state = optim.AdamState.fresh(len(x), config.alpha, config.beta1, config.beta2, config.eps)
    state, x = _ascend(model, x, state, config.warmup_steps)
    q0 = model.effect(x)
    warm_x, warm_state = x.copy(), state
    qs, skipped = [q0], 0
    coords = range(model.n_theta)
    for _ in range(config.repetitions):
        if config.mode == "restart":
            x, state = warm_x.copy(), warm_state
        for c in coords:
            trial = x.copy()
            trial[c] += config.delta
            active = np.ones(len(x), dtype=bool)
            active[c] = False
            try:
                new_state, trial = _ascend(model, trial, state, config.steps, active)
            except (optim.OptimAbort, np.linalg.LinAlgError):
                skipped += 1
                continue
            x, state = trial, new_state
            qs.append(model.effect(x))
    return BaselineResult(float(min(qs)), float(max(qs)), q0, [float(q) for q in qs], skipped)
