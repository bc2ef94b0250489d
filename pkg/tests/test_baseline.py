import numpy as np
import pytest

from simident import baseline, designs, scm
from simident.baseline import BaselineConfig


def data_for(key, n=300, seed=0):
    d = designs.get_design(*key)
    rng = np.random.default_rng(seed)
    s = scm.sample_prior(d, n, rng)
    return scm.simulate(d, s), rng


SMALL = BaselineConfig(warmup_steps=50, steps=10, repetitions=2)


def test_config_validation():
    for bad in (dict(steps=0), dict(warmup_steps=0), dict(repetitions=0), dict(delta=-1),
                dict(mode="x")):
        with pytest.raises(ValueError):
            BaselineConfig(**bad)


def test_records_warmup_plus_one_value_per_coordinate_and_repetition():
    data, rng = data_for(("confounded", "linear"))
    res = baseline.profile_range("confounded", "linear", data, SMALL, rng)
    n_theta = sum(p.size for p in designs.get_design("confounded", "linear").param_priors.values())
    assert len(res.qs) == 1 + SMALL.repetitions * n_theta
    assert res.qs[0] == res.q_warmup
    assert res.q_min == min(res.qs) and res.q_max == max(res.qs)
    assert res.spread >= 0


def test_zero_delta_restart_stays_near_warmup():
    data, rng = data_for(("unconfounded", "linear"))
    cfg = BaselineConfig(warmup_steps=400, steps=5, delta=0.0, repetitions=1, mode="restart")
    res = baseline.profile_range("unconfounded", "linear", data, cfg, rng)
    assert res.spread < 0.05


def test_deterministic_given_rng_seed():
    data, _ = data_for(("backdoor", "linear"))
    a = baseline.profile_range("backdoor", "linear", data, SMALL, np.random.default_rng(3))
    b = baseline.profile_range("backdoor", "linear", data, SMALL, np.random.default_rng(3))
    assert a == b


def test_gp_family_runs():
    data, rng = data_for(("unconfounded", "gp"), n=8)
    res = baseline.profile_range("unconfounded", "gp", data,
                                 BaselineConfig(warmup_steps=5, steps=2, repetitions=1), rng)
    assert np.isfinite(res.q_min) and np.isfinite(res.q_max)
