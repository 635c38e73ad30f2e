import math

import numpy as np
import pytest

from sadm.diffusion import NoiseSchedule
from sadm.models import init_denoiser
from sadm.rng import make_stream
from sadm.sampler import (CountingPredictor, SamplerConfig, SamplerError, ancestral_sample,
                          gaussian_flow_solution, gaussian_oracle, heun_ode_sample, pf_ode_drift, sample)

SCHED = NoiseSchedule()
MEAN = np.array([0.5, -1.0])
VAR = np.array([0.3, 2.0])
ORACLE = gaussian_oracle(SCHED, MEAN, VAR)


def _within_3se(x):
    n = len(x)
    se_mean = np.sqrt(VAR / n)
    se_var = VAR * math.sqrt(2 / (n - 1))
    se_cov = math.sqrt(VAR[0] * VAR[1] / n)
    assert np.all(np.abs(x.mean(0) - MEAN) <= 3 * se_mean)
    assert np.all(np.abs(x.var(0, ddof=1) - VAR) <= 3 * se_var)
    assert abs(np.cov(x.T)[0, 1]) <= 3 * se_cov


@pytest.mark.parametrize("kind,nfe", [("ancestral", 250), ("heun_ode", 35)])
def test_oracle_samples_match_target_moments(kind, nfe):
    _within_3se(sample(ORACLE, SCHED, SamplerConfig(kind, nfe, seed=1), 10_000, 2))


def test_heun_error_falls_monotonically_and_quadratically():
    x = make_stream(0, "sampler").standard_normal((1000, 2))
    exact = gaussian_flow_solution(SCHED, MEAN, VAR, x, SCHED.t_max, SCHED.t_min)
    errs = []
    for k in (10, 20, 40):
        out = heun_ode_sample(ORACLE, SCHED, SamplerConfig("heun_ode", 2 * k - 1), 1000, 2, x_init=x)
        errs.append(np.abs(out - exact).max())
    assert errs[0] > errs[1] > errs[2]
    assert 3.0 < errs[1] / errs[2] < 5.0


def test_flow_solution_composes_and_matches_drift():
    x = np.array([[0.2, -0.4]])
    mid = gaussian_flow_solution(SCHED, MEAN, VAR, x, 0.9, 0.5)
    direct = gaussian_flow_solution(SCHED, MEAN, VAR, x, 0.9, 0.1)
    assert np.allclose(gaussian_flow_solution(SCHED, MEAN, VAR, mid, 0.5, 0.1), direct, atol=1e-13)
    h = 1e-6
    fd = (gaussian_flow_solution(SCHED, MEAN, VAR, x, 0.5, 0.5 + h)
          - gaussian_flow_solution(SCHED, MEAN, VAR, x, 0.5, 0.5 - h)) / (2 * h)
    assert np.allclose(fd, pf_ode_drift(SCHED, x, ORACLE(x, 0.5), 0.5), atol=1e-7)


def test_function_evaluation_counts():
    for kind, nfe in (("ancestral", 17), ("heun_ode", 17)):
        counter = CountingPredictor(ORACLE)
        sample(counter, SCHED, SamplerConfig(kind, nfe), 10, 2)
        assert counter.calls == nfe


@pytest.mark.parametrize("kind", ["ancestral", "heun_ode"])
def test_samplers_are_deterministic_in_seed(kind):
    den = init_denoiser(0, hidden=8, n_freqs=2)
    den.weights[-1].data = 0.1 * np.ones_like(den.weights[-1].data)
    cfg = SamplerConfig(kind, 9, seed=4)
    a, b = sample(den, SCHED, cfg, 50), sample(den, SCHED, cfg, 50)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample(den, SCHED, SamplerConfig(kind, 9, seed=5), 50))


def test_ancestral_latent_variance_deficit_shrinks_with_steps():
    # plugging in E[x0 | x_t] ignores the posterior spread of x0, so each
    # discrete step loses a little variance; the loss vanishes as steps grow
    oracle = gaussian_oracle(SCHED, np.zeros(2), np.ones(2))
    deficit = []
    for nfe in (25, 100):
        x = ancestral_sample(oracle, SCHED, SamplerConfig(nfe=nfe, seed=2), 20_000, 2, return_latent=True)
        deficit.append(1.0 - x.var(0, ddof=1).mean())
    assert deficit[0] > 2 * deficit[1] > 0


def test_zero_denoiser_collapses_to_origin():
    x = ancestral_sample(lambda x, t: np.zeros_like(x), SCHED, SamplerConfig(nfe=50, seed=3), 10_000, 2,
                         return_latent=True)
    se = x.std(0, ddof=1) / math.sqrt(len(x))
    assert np.all(np.abs(x.mean(0)) <= 3 * se)
    assert np.all(x.std(0) < 0.05)


def test_single_step_returns_first_prediction():
    x0 = make_stream(6, "sampler").standard_normal((5, 2))
    out = ancestral_sample(ORACLE, SCHED, SamplerConfig(nfe=1, seed=6), 5, 2)
    assert np.array_equal(out, ORACLE(x0, SCHED.t_max))


def test_config_and_input_errors():
    with pytest.raises(SamplerError, match="odd"):
        SamplerConfig("heun_ode", 10)
    with pytest.raises(SamplerError, match="unknown"):
        SamplerConfig("rk45")
    with pytest.raises(SamplerError, match="positive"):
        SamplerConfig(nfe=0)
    with pytest.raises(SamplerError, match="decreasing"):
        sample(ORACLE, SCHED, SamplerConfig(nfe=3, t_grid=[0.1, 0.5, 0.9]), 4, 2)
    with pytest.raises(SamplerError, match="dim"):
        sample(ORACLE, SCHED, SamplerConfig(), 4)
    with pytest.raises(SamplerError, match="non-finite"):
        sample(lambda x, t: x * np.nan, SCHED, SamplerConfig(nfe=3), 4, 2)
    den = init_denoiser(0)
    den.biases[0].data = den.biases[0].data.copy()
    den.biases[0].data[0] = np.inf
    with pytest.raises(SamplerError, match="parameters"):
        sample(den, SCHED, SamplerConfig(nfe=3), 4)
