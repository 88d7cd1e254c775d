import numpy as np
import pytest
from scipy import stats

from dpmld import autodiff as ad
from dpmld.gumbel import (
    GumbelConfig,
    anneal,
    gumbel_from_uniform,
    mask_from_categorical,
    sample_gumbel,
    sample_hard,
    sample_soft,
    soft_keep_mask,
)
from dpmld.privacy import W_MIN


def test_gumbel_transform_points():
    assert gumbel_from_uniform(0.5) == pytest.approx(-np.log(np.log(2)), rel=1e-14)
    assert gumbel_from_uniform(0.5) == pytest.approx(0.366513, abs=1e-6)
    assert gumbel_from_uniform(np.exp(-1)) == pytest.approx(0.0, abs=1e-15)


def test_gumbel_mean_and_fit(rng):
    g = sample_gumbel(100_000, rng)
    assert abs(g.mean() - np.euler_gamma) < 0.02
    assert stats.kstest(g, stats.gumbel_r.cdf).pvalue > 0.01


def test_gumbel_seeded():
    assert np.array_equal(sample_gumbel(10, np.random.default_rng(1)), sample_gumbel(10, np.random.default_rng(1)))
    with pytest.raises(ValueError):
        sample_gumbel(0, np.random.default_rng(1))


@pytest.mark.parametrize("pi", [(1 - W_MIN, W_MIN), (0.5, 0.5), (0.3, 0.7)])
def test_hard_frequencies(rng, pi):
    n = 100_000
    v = sample_hard(np.broadcast_to(pi, (n, 2)), rng)
    assert np.all(v.sum(axis=1) == 1)
    freq = v.mean(axis=0)
    assert np.all(np.abs(freq - pi) < 0.01)


def test_hard_matches_direct_categorical(rng):
    n = 100_000
    pi = np.array([0.3, 0.7])
    gm = sample_hard(np.broadcast_to(pi, (n, 2)), rng).argmax(axis=1)
    direct = rng.choice(2, size=n, p=pi)
    table = [[np.sum(gm == 0), np.sum(gm == 1)], [np.sum(direct == 0), np.sum(direct == 1)]]
    assert stats.chi2_contingency(table).pvalue > 0.01


def test_hard_tie_goes_to_lower_index():
    v = sample_hard(np.array([0.5, 0.5]), g=np.zeros(2))
    assert np.array_equal(v, [1.0, 0.0])


def test_soft_symmetric_logits():
    for tau in (0.05, 1.0, 7.0):
        assert np.allclose(sample_soft(np.array([0.5, 0.5]), tau, g=np.zeros(2)), [0.5, 0.5])


def test_soft_is_probability(rng):
    v = sample_soft(np.broadcast_to([0.3, 0.7], (10_000, 2)), 0.2, rng)
    assert np.all((v >= 0) & (v <= 1))
    assert np.allclose(v.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        sample_soft(np.array([0.5, 0.5]), 0.0, rng)


def test_soft_argmax_equals_hard_with_shared_draws(rng):
    n = 10_000
    pi = np.broadcast_to([0.3, 0.7], (n, 2))
    g = sample_gumbel((n, 2), rng)
    soft = sample_soft(pi, 0.05, g=g)
    hard = sample_hard(pi, g=g)
    assert np.array_equal(soft.argmax(axis=1), hard.argmax(axis=1))


@pytest.mark.parametrize("tau", [0.1, 0.01])
def test_soft_argmax_frequency(rng, tau):
    n = 100_000
    v = sample_soft(np.broadcast_to([0.3, 0.7], (n, 2)), tau, rng)
    freq = np.bincount(v.argmax(axis=1), minlength=2) / n
    assert 0.5 * np.abs(freq - [0.3, 0.7]).sum() < 0.02


def test_mask_from_categorical():
    assert mask_from_categorical(np.array([1.0, 0.0])) == 0.0
    assert mask_from_categorical(np.array([0.0, 1.0])) == 1.0
    assert mask_from_categorical(np.array([0.2, 0.8])) == 0.8
    with pytest.raises(ValueError):
        mask_from_categorical(np.ones(3))


def test_anneal_schedule():
    cfg = GumbelConfig()
    assert anneal(cfg, 0) == cfg.tau_start
    assert anneal(GumbelConfig(decay=1.0), 40) == 1.0
    assert anneal(cfg, 50) == 0.1
    taus = [anneal(cfg, e) for e in range(80)]
    assert all(a >= b for a, b in zip(taus, taus[1:]))
    assert min(taus) >= cfg.tau_floor
    with pytest.raises(ValueError):
        anneal(cfg, -1)
    with pytest.raises(ValueError):
        GumbelConfig(tau_floor=0.0)


def test_soft_gradient_in_log_pi(rng):
    # d soft / d log pi with g fixed, central differences
    g = sample_gumbel(2, rng)
    log_pi = np.log(np.array([0.35, 0.65]))
    tau = 0.7

    def soft(lp):
        return sample_soft(np.exp(lp), tau, g=g)

    x = ad.Tensor(log_pi, requires_grad=True)
    z = (x + ad.Tensor(g)) * (1.0 / tau)
    weights = np.array([0.3, -1.1])
    loss = ad.sum(ad.softmax(z) * ad.Tensor(weights))
    loss.backward()
    h = 1e-6
    fd = np.array([
        (soft(log_pi + h * e) @ weights - soft(log_pi - h * e) @ weights) / (2 * h) for e in np.eye(2)
    ])
    assert np.allclose(x.grad, fd, rtol=1e-5, atol=1e-10)


def test_soft_keep_mask_matches_numpy(rng):
    w = np.array([[0.2, 0.6, 0.9]])
    g = sample_gumbel((1, 3, 2), rng)
    m = soft_keep_mask(ad.Tensor(w), g, 0.4)
    pi = np.stack([w, 1 - w], axis=-1)
    assert np.allclose(m.data, sample_soft(pi, 0.4, g=g)[..., 1], rtol=1e-13)
    with pytest.raises(ad.ShapeError):
        soft_keep_mask(ad.Tensor(w), g[..., :1], 0.4)
