import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsnt.autograd import Tensor, check_gradients
from dsnt.encoders import GaussianPosterior, even_partition
from dsnt.exceptions import ContractError, DimensionError
from dsnt.info import mc_kl_gaussian, product_of_marginals
from dsnt.objectives import (
    cross_entropy,
    gaussian_tc,
    kl_block_standard,
    kl_diag_standard,
    l2_disentangle,
    l_separate,
    l_vib,
    l_vib_tc,
)
from oracles import random_factor


def diag_post(mu, sigma):
    return GaussianPosterior(Tensor(np.asarray(mu, float)), Tensor(np.asarray(sigma, float)))


def joint_post(L, mu=None, partition=None):
    L = np.asarray(L, float)
    D = L.shape[0]
    mu = np.zeros(D) if mu is None else np.asarray(mu, float)
    return GaussianPosterior(Tensor(mu), Tensor(np.diag(L).copy()), Tensor(L), partition or even_partition(D, D))


# --- cross entropy -----------------------------------------------------------


@pytest.mark.parametrize(
    "logits, label, expected",
    [
        ([0.0] * 4, 2, np.log(4.0)),
        ([20.0, 0.0], 0, np.log1p(np.exp(-20.0))),
        ([0.0, np.log(3.0)], 1, -np.log(0.75)),
    ],
)
def test_cross_entropy_examples(logits, label, expected):
    np.testing.assert_allclose(cross_entropy(Tensor(logits), label).item(), expected, rtol=1e-9)


def test_cross_entropy_label_range():
    with pytest.raises(ContractError):
        cross_entropy(Tensor([0.0, 1.0]), 2)


# --- L2 pair penalty and the regularizer loss ----------------------------------


def test_l2_examples():
    e1, e2, zero = Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), Tensor([0.0, 0.0])
    assert l2_disentangle([e1]).item() == 0.0
    assert l2_disentangle([e1, e2]).item() == 2.0
    assert l2_disentangle([e1, e2, zero]).item() == 4.0


def test_l2_width_mismatch():
    with pytest.raises(DimensionError):
        l2_disentangle([Tensor([1.0, 0.0]), Tensor([1.0])])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1), st.booleans())
def test_l2_zero_iff_all_equal(K, d, seed, equal):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=d)
    zs = [base.copy() if equal else rng.normal(size=d) for _ in range(K)]
    value = l2_disentangle([Tensor(z) for z in zs]).item()
    max_dist = max(np.linalg.norm(a - b) for a in zs for b in zs)
    assert value >= 0
    assert (value == 0) == (max_dist == 0)


def test_l_separate_examples():
    logits = Tensor([0.3, -0.2])
    zs = [Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), Tensor([0.0, 0.0])]
    lb = l_separate(logits, 0, zs, 0.0)
    assert lb.total == cross_entropy(logits, 0).item()
    lb = l_separate(logits, 0, zs, 0.1)
    np.testing.assert_allclose(lb.reg_term, 0.4, rtol=1e-12)
    np.testing.assert_allclose(lb.total, lb.task_term + lb.reg_term, atol=1e-10)
    same = [Tensor([0.5, 0.5])] * 3
    assert l_separate(logits, 0, same, 3.0).reg_term == 0.0


# --- diagonal KL -------------------------------------------------------------


@pytest.mark.parametrize(
    "mu, sigma, expected",
    [([0.0, 0.0], [1.0, 1.0], 0.0), ([1.0, 0.0], [1.0, 1.0], 0.5), ([0.0, 0.0], [2.0, 1.0], 0.5 * (4 - 1 - np.log(4)))],
)
def test_kl_diag_examples_against_monte_carlo(mu, sigma, expected):
    post = diag_post(mu, sigma)
    closed = kl_diag_standard(post).item()
    np.testing.assert_allclose(closed, expected, atol=1e-12)
    if expected > 0:
        est, se = mc_kl_gaussian(post, n=100_000, seed=1)
        assert abs(est - closed) < 3 * se


def test_kl_diag_zero_iff_standard(rng):
    assert abs(kl_diag_standard(diag_post(np.zeros(4), np.ones(4))).item()) < 1e-10
    for _ in range(200):
        mu = rng.normal(size=3) * rng.integers(0, 2)
        sigma = np.exp(rng.normal(size=3) * rng.integers(0, 2))
        kl = kl_diag_standard(diag_post(mu, sigma)).item()
        standard = np.allclose(mu, 0) and np.allclose(sigma, 1)
        assert kl >= 0
        assert (kl < 1e-10) == standard


def test_kl_diag_rejects_nonpositive_scale():
    post = diag_post([0.0], [1.0])
    post.scale = Tensor([-1.0])
    with pytest.raises(ContractError):
        kl_diag_standard(post)


# --- block KL and total correlation ------------------------------------------------


def test_block_kl_example():
    rows = Tensor(np.sqrt(2.0) * np.eye(2))
    kl = kl_block_standard(Tensor(np.zeros(2)), rows).item()
    np.testing.assert_allclose(kl, 0.5 * (4 - 2 - 2 * np.log(2)), atol=1e-12)
    est, se = mc_kl_gaussian((np.zeros(2), 2 * np.eye(2)), n=100_000, seed=2)
    assert abs(est - kl) < 3 * se


def test_tc_correlated_pair():
    rho = 0.5
    L = np.array([[1.0, 0.0], [rho, np.sqrt(1 - rho**2)]])
    post = joint_post(L)
    tc = gaussian_tc(post).item()
    np.testing.assert_allclose(tc, -0.5 * np.log(1 - rho**2), atol=1e-12)
    cov = L @ L.T
    est, se = mc_kl_gaussian((np.zeros(2), cov), n=100_000, seed=3, reference=(np.zeros(2), product_of_marginals(cov, [(0, 1), (1, 2)])))
    assert abs(est - tc) < 3 * se


def test_tc_diagonal_factor_is_zero():
    assert abs(gaussian_tc(joint_post(np.diag([0.5, 2.0, 1.5]))).item()) < 1e-12


def test_tc_needs_joint_posterior():
    with pytest.raises(ContractError):
        gaussian_tc(diag_post([0.0], [1.0]))


def test_tc_invariant_under_head_permutation(rng):
    L = random_factor(rng, 4)
    cov = L @ L.T
    perm = [2, 3, 0, 1]  # swap the two width-2 heads
    Lp = np.linalg.cholesky(cov[np.ix_(perm, perm)])
    part = even_partition(4, 2)
    np.testing.assert_allclose(gaussian_tc(joint_post(L, partition=part)).item(), gaussian_tc(joint_post(Lp, partition=part)).item(), atol=1e-12)


def test_tc_nonnegative_and_zero_on_block_diagonal(rng):
    part = [(0, 2), (2, 3), (3, 5)]
    mask = np.zeros((5, 5), dtype=bool)
    for s, e in part:
        mask[s:e, s:e] = True
    for _ in range(1000):
        L = random_factor(rng, 5)
        assert gaussian_tc(joint_post(L, partition=part)).item() >= -1e-12
        assert abs(gaussian_tc(joint_post(np.where(mask, L, 0.0), partition=part)).item()) < 1e-10


# --- VIB losses -------------------------------------------------------------------


def _linear_classifier(rng, D, T=3):
    W, b = Tensor(rng.normal(size=(D, T)), requires_grad=True), Tensor(rng.normal(size=T), requires_grad=True)
    return (lambda z: z @ W + b), (W, b)


def test_vib_noiseless_equals_cross_entropy(rng):
    clf, _ = _linear_classifier(rng, 3)
    post = diag_post(rng.normal(size=3), np.full(3, 1e-6))
    lb = l_vib(post, clf, 1, beta=0.0, eps=np.zeros(3))
    np.testing.assert_allclose(lb.total, cross_entropy(clf(post.mean), 1).item(), rtol=1e-12)


def test_vib_standard_posterior_has_zero_rate(rng):
    clf, _ = _linear_classifier(rng, 3)
    for beta in (0.0, 0.5, 3.0):
        assert l_vib(diag_post(np.zeros(3), np.ones(3)), clf, 0, beta, rng=rng).rate_term == 0.0


def test_vib_sample_count_consistency():
    rng = np.random.default_rng(8)
    clf, _ = _linear_classifier(rng, 2)
    post = diag_post([0.4, -0.3], [0.8, 1.3])
    one = np.array([l_vib(post, clf, 2, 0.0, n_samples=1, rng=rng).task_term for _ in range(200)])
    many = np.array([l_vib(post, clf, 2, 0.0, n_samples=64, rng=rng).task_term for _ in range(200)])
    se = np.sqrt(one.var(ddof=1) / 200 + many.var(ddof=1) / 200)
    assert abs(one.mean() - many.mean()) < 3 * se


def test_vib_tc_decouples_with_block_diagonal_factor(rng):
    D, K = 4, 2
    part = even_partition(D, K)
    L = random_factor(rng, D)
    L[2:, :2] = 0.0
    mu = rng.normal(size=D)
    post = joint_post(L, mu, part)
    clfs = [_linear_classifier(rng, 2)[0] for _ in range(K)]
    eps = rng.normal(size=(1, D))
    lb = l_vib_tc(post, clfs, 1, beta=0.3, lambda_tc=0.0, eps=eps)
    total = 0.0
    for clf, (s, e) in zip(clfs, part):
        Ls = L[s:e, s:e]
        head = GaussianPosterior(Tensor(mu[s:e]), Tensor(np.diag(Ls).copy()), Tensor(Ls), [(0, e - s)])
        z = mu[s:e] + Ls @ eps[0, s:e]
        total += cross_entropy(clf(Tensor(z)), 1).item() + 0.3 * kl_block_standard(head.mean, head.joint_factor).item()
    np.testing.assert_allclose(lb.total, total, rtol=1e-12)


def test_vib_tc_noiseless_is_sum_of_head_cross_entropies(rng):
    part = even_partition(4, 2)
    post = joint_post(random_factor(rng, 4), rng.normal(size=4), part)
    clfs = [_linear_classifier(rng, 2)[0] for _ in range(2)]
    lb = l_vib_tc(post, clfs, 0, 0.0, 0.0, eps=np.zeros((1, 4)))
    expected = sum(cross_entropy(c(post.mean[s:e]), 0).item() for c, (s, e) in zip(clfs, part))
    np.testing.assert_allclose(lb.total, expected, rtol=1e-12)
    averaged = l_vib_tc(post, clfs, 0, 0.0, 0.0, eps=np.zeros((1, 4)), average_heads=True)
    np.testing.assert_allclose(averaged.total, expected / 2, rtol=1e-12)


def test_breakdown_conservation(rng):
    part = even_partition(4, 2)
    post = joint_post(random_factor(rng, 4), rng.normal(size=4), part)
    clfs = [_linear_classifier(rng, 2)[0] for _ in range(2)]
    lb = l_vib_tc(post, clfs, 2, 0.2, 0.7, rng=rng)
    assert min(lb.rate_term, lb.tc_term) >= 0
    np.testing.assert_allclose(lb.total, lb.task_term + lb.rate_term + lb.tc_term, atol=1e-10)
    np.testing.assert_allclose(lb.rate_term, 0.2 * lb.raw["rate"], atol=1e-12)
    np.testing.assert_allclose(lb.tc_term, 0.7 * lb.raw["tc"], atol=1e-12)


def test_negative_weights_rejected(rng):
    clf, _ = _linear_classifier(rng, 2)
    with pytest.raises(ContractError):
        l_vib(diag_post([0.0, 0.0], [1.0, 1.0]), clf, 0, -0.1)
    with pytest.raises(ContractError):
        l_separate(Tensor([0.0, 0.0]), 0, [Tensor([0.0])], -1.0)


def test_head_logit_scaling_keeps_argmax(rng):
    for _ in range(100):
        logits = rng.normal(size=(4, 3))
        c = rng.uniform(0.01, 100)
        np.testing.assert_array_equal((c * logits).argmax(axis=1), logits.argmax(axis=1))


# --- gradients of every loss ---------------------------------------------------------


def test_kl_and_tc_gradients(rng):
    mu = Tensor(rng.normal(size=3), requires_grad=True)
    sigma = Tensor(np.abs(rng.normal(size=3)) + 0.3, requires_grad=True)
    assert check_gradients(lambda: kl_diag_standard(GaussianPosterior(mu, sigma)), [mu, sigma]).passed

    tri = Tensor(np.tril(np.ones((4, 4))))
    Lraw = Tensor(random_factor(rng, 4), requires_grad=True)

    def tc():
        L = Lraw * tri
        return gaussian_tc(GaussianPosterior(Tensor(np.zeros(4)), Tensor(np.diag(L.data).copy()), L, even_partition(4, 2)))

    report = check_gradients(tc, [Lraw])
    assert report.passed, report.max_rel_error
