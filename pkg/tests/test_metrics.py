import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sadm.datasets import eight_centers
from sadm.metrics import (affinity_report, heatmap_analysis, mode_coverage, sliced_wasserstein,
                          soft_assignments, wasserstein_1d)
from sadm.models import init_denoiser

seeds = st.integers(0, 2**31)


def _cloud(seed, n=200, shift=0.0):
    return np.random.default_rng(seed).normal(size=(n, 2)) + shift


def test_identical_samples_give_zero():
    a = _cloud(0)
    assert sliced_wasserstein(a, a) == 0.0


def test_point_masses_in_1d():
    a, b = np.zeros((10, 1)), np.full((10, 1), 0.7)
    assert sliced_wasserstein(a, b, 32) == pytest.approx(0.7)


def test_1d_quantile_interpolation_for_unequal_sizes():
    a = np.array([0.0, 1.0])
    b = np.array([0.0, 0.5, 1.0, 1.5])
    # the two-point quantile function (midpoint levels 0.25, 0.75) interpolated
    # onto levels 1/8..7/8, clamped at the ends: 0, 0.25, 0.75, 1
    expected = math.sqrt(np.mean((np.array([0.0, 0.25, 0.75, 1.0]) - b) ** 2))
    assert wasserstein_1d(a, b) == pytest.approx(expected)


@given(seeds)
def test_symmetric(seed):
    a, b = _cloud(seed), _cloud(seed + 1, 150, 0.5)
    assert sliced_wasserstein(a, b, 64, seed) == pytest.approx(sliced_wasserstein(b, a, 64, seed), rel=1e-12)


@given(seeds)
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_cloud(seed + k, 300, rng.normal(size=2)) for k in range(3))
    ab, bc, ac = (sliced_wasserstein(p, q, 64, seed) for p, q in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 1e-9


def test_shifted_gaussians_against_large_sample_oracle():
    # projecting N(0, I) and N((2, 0), I) on u gives unit-variance Gaussians
    # whose means differ by 2|u_1|; the mean over the circle is 4/pi
    a = np.random.default_rng(0).normal(size=(10_000, 2))
    b = np.random.default_rng(1).normal(size=(10_000, 2)) + [2.0, 0.0]
    assert sliced_wasserstein(a, b, 256, 0) == pytest.approx(4 / math.pi, rel=0.1)


def test_sliced_wasserstein_errors():
    with pytest.raises(ValueError, match="n_proj"):
        sliced_wasserstein(_cloud(0), _cloud(1), 8)
    with pytest.raises(ValueError, match="zero dimensions"):
        sliced_wasserstein(np.empty((5, 0)), np.empty((5, 0)))
    with pytest.raises(ValueError, match="at least 2"):
        sliced_wasserstein(np.ones((1, 2)), _cloud(0))


def test_mode_coverage_examples():
    c = eight_centers()
    covered, hist = mode_coverage(c, c, 0.3)
    assert covered == 8 and np.array_equal(hist, np.ones(8))
    covered, hist = mode_coverage(np.repeat(c[:1], 50, axis=0), c, 0.3)
    assert covered == 1 and hist[0] == 50 and hist.sum() == 50
    with pytest.raises(ValueError, match="empty"):
        mode_coverage(c, np.empty((0, 2)), 0.3)
    with pytest.raises(ValueError, match="radius"):
        mode_coverage(c, c, 0.0)


def test_perfect_assignments_give_zero_gap():
    c = 10 * eight_centers()
    labels = np.arange(8)
    rep = affinity_report(labels, soft_assignments(c[labels], c, 0.01), 8)
    assert rep.frobenius_gap < 1e-10


def test_uniform_predictions_closed_form():
    labels = np.array([0, 0, 1, 2, 2, 2, 5, 7])
    onehot = np.eye(8)[labels]
    rep = affinity_report(labels, np.full((8, 8), 1 / 8), 8)
    assert np.allclose(rep.model_affinity, 1 / 8)
    assert rep.frobenius_gap == pytest.approx(np.linalg.norm(onehot @ onehot.T - np.full((8, 8), 1 / 8)))
    assert np.allclose(rep.model_affinity, rep.model_affinity.T)


@given(seeds)
def test_heatmap_gap_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 8, 8)
    p = rng.dirichlet(np.ones(8), 8)
    perm = rng.permutation(8)
    a = affinity_report(labels, p, 8).frobenius_gap
    assert affinity_report(labels[perm], p[perm], 8).frobenius_gap == pytest.approx(a, rel=1e-12)


def test_heatmap_analysis_runs_on_a_model():
    c = eight_centers()
    labels = np.arange(8)
    rep = heatmap_analysis(init_denoiser(0), c[labels], labels, c, 0.5, seed=0)
    assert rep.label_affinity.shape == rep.model_affinity.shape == (8, 8)
    assert rep.denoised.shape == (8, 2)
    with pytest.raises(ValueError, match="labeled"):
        heatmap_analysis(init_denoiser(0), c, None, c)
