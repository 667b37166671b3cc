"""Loss terms for the regularizer, VIB and VIB+TC training criteria.

All functions accept tensors with arbitrary leading (batch) axes and return
one value per leading index; a single example therefore gives a scalar.
Quantities are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, as_tensor, log_softmax, logdet, matmul, stack
from .encoders import GaussianPosterior, check_partition, sample
from .exceptions import ContractError, DimensionError


@dataclass
class LossBreakdown:
    """Weighted loss terms plus the differentiable total.

    ``rate_term``, ``tc_term`` and ``reg_term`` already include their
    weights; the unweighted values live in ``raw``.
    """

    total: float
    task_term: float
    rate_term: float = 0.0
    tc_term: float = 0.0
    reg_term: float = 0.0
    raw: dict = field(default_factory=dict)
    loss: Tensor = field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {
            "total": self.total,
            "task": self.task_term,
            "rate": self.rate_term,
            "tc": self.tc_term,
            "reg": self.reg_term,
            **{f"raw_{k}": v for k, v in self.raw.items()},
        }


def _mean(t):
    return t if t.ndim == 0 else t.mean()


def _breakdown(task, rate=None, tc=None, reg=None, beta=0.0, lam=0.0):
    """Average each per-example term over the batch and assemble the total."""
    task_m = _mean(task)
    total = task_m
    raw = {}
    parts = {"rate_term": 0.0, "tc_term": 0.0, "reg_term": 0.0}
    for key, term, weight in (("rate", rate, beta), ("tc", tc, lam), ("reg", reg, beta)):
        if term is None:
            continue
        m = _mean(term)
        raw[key] = m.item()
        total = total + m * weight
        parts[f"{key}_term"] = weight * raw[key]
    return LossBreakdown(
        total=total.item(),
        task_term=task_m.item(),
        raw=raw,
        loss=total,
        **parts,
    )


def cross_entropy(logits, label):
    """``-log softmax(logits)[label]`` along the last axis."""
    logits = as_tensor(logits)
    T = logits.shape[-1]
    label = np.asarray(label, dtype=np.int64)
    if np.any(label < 0) or np.any(label >= T):
        raise ContractError(f"label {label.tolist()} out of range for {T} classes")
    logp = log_softmax(logits, axis=-1)
    lead = logits.shape[:-1]
    if label.shape != lead:
        label = np.broadcast_to(label, lead)
    if not lead:
        return -logp[int(label)]
    grid = np.indices(lead)
    return -logp[tuple(grid) + (label,)]


def _stack_heads(zs):
    if isinstance(zs, Tensor):
        return zs
    widths = {z.shape for z in zs}
    if len(widths) > 1:
        raise DimensionError(f"sub-representations must share a shape, got {sorted(widths)}")
    return stack(list(zs), axis=-2)


def l2_disentangle(zs):
    """Sum over unordered head pairs of the squared distance ``||z_i - z_j||^2``.

    ``zs`` is a list of K tensors ``[..., d]`` or one stacked ``[..., K, d]``.
    """
    if not isinstance(zs, Tensor) and len(zs) == 0:
        raise ContractError("need at least one sub-representation")
    Z = _stack_heads(zs)
    K = Z.shape[-2]
    lead = Z.shape[:-2]
    if K == 1:
        return Tensor(np.zeros(lead))
    total = None
    for i in range(K):
        for j in range(i + 1, K):
            diff = Z[..., i, :] - Z[..., j, :]
            term = (diff * diff).sum(axis=-1)
            total = term if total is None else total + term
    return total


def l_separate(logits_combined, label, zs, beta):
    """Cross entropy of the combined logit plus ``beta`` times the pair penalty."""
    if beta < 0:
        raise ContractError("beta must be non-negative")
    ce = cross_entropy(logits_combined, label)
    reg = l2_disentangle(zs)
    return _breakdown(ce, reg=reg, beta=beta)


def kl_diag_standard(post):
    """``KL(N(mu, diag sigma^2) || N(0, I))`` summed over the last axis."""
    mu, sigma = post.mean, post.scale
    if np.any(sigma.data <= 0):
        raise ContractError("posterior scale must be strictly positive")
    var = sigma * sigma
    return ((mu * mu + var - 1.0 - var.log()).sum(axis=-1)) * 0.5


def _block_rows(L, start, stop):
    return L[..., start:stop, :]


def kl_block_standard(mean_slice, factor_rows):
    """KL of ``N(mu, F F^T)`` against a standard normal of matching width.

    ``factor_rows`` are the rows of the joint Cholesky factor belonging to the
    block, so ``F F^T`` is the marginal covariance of that block.
    """
    k = mean_slice.shape[-1]
    cov = matmul(factor_rows, factor_rows.transpose())
    trace = (factor_rows * factor_rows).sum(axis=-1).sum(axis=-1)
    return (trace + (mean_slice * mean_slice).sum(axis=-1) - float(k) - logdet(cov)) * 0.5


def gaussian_tc(post):
    """Total correlation of a joint Gaussian with respect to its head partition.

    ``0.5 * (sum_i log det Sigma_ii - log det Sigma)`` with ``Sigma = L L^T``.
    """
    if not post.is_joint or post.head_partition is None:
        raise ContractError("gaussian_tc needs a joint posterior with a head partition")
    L = post.joint_factor
    D = post.dim
    check_partition(post.head_partition, D)
    diag = L[..., np.arange(D), np.arange(D)]
    logdet_joint = diag.log().sum(axis=-1) * 2.0
    blocks = None
    for start, stop in post.head_partition:
        rows = _block_rows(L, start, stop)
        ld = logdet(matmul(rows, rows.transpose()))
        blocks = ld if blocks is None else blocks + ld
    return (blocks - logdet_joint) * 0.5


def _draws(eps, n_samples, shape, rng):
    if eps is not None:
        eps = np.asarray(eps, dtype=np.float64)
        return eps if eps.ndim > len(shape) else eps[None]
    rng = rng if rng is not None else np.random.default_rng()
    return rng.standard_normal((n_samples,) + tuple(shape))


def l_vib(post, classifier, label, beta, n_samples=1, rng=None, eps=None):
    """Reparameterised VIB loss.

    ``classifier`` maps ``z [..., D]`` to logits.  The task term averages the
    cross entropy over ``n_samples`` draws; pass ``eps`` (``[S, ..., D]``) to
    fix the noise.
    """
    if n_samples < 1:
        raise ContractError("n_samples must be at least 1")
    if beta < 0:
        raise ContractError("beta must be non-negative")
    noise = _draws(eps, n_samples, post.mean.shape, rng)
    z = sample(post, Tensor(noise))
    ce = cross_entropy(classifier(z), label).mean(axis=0)
    return _breakdown(ce, rate=kl_diag_standard(post), beta=beta)


def l_vib_tc(post, classifiers, label, beta, lambda_tc, n_samples=1, rng=None, eps=None, average_heads=False):
    """VIB with a total-correlation penalty over the head partition.

    ``classifiers`` holds one callable per head, each mapping the head's slice
    of ``z`` to logits.  The task term sums the per-head cross entropies
    (averages them when ``average_heads``); the rate term sums the KL of each
    head's marginal (full covariance block) against a standard normal.
    """
    if not post.is_joint or post.head_partition is None:
        raise ContractError("VIB+TC needs a joint posterior with a head partition")
    if beta < 0 or lambda_tc < 0:
        raise ContractError("beta and lambda_tc must be non-negative")
    if n_samples < 1:
        raise ContractError("n_samples must be at least 1")
    if len(classifiers) != len(post.head_partition):
        raise DimensionError(f"{len(classifiers)} classifiers for {len(post.head_partition)} heads")
    noise = _draws(eps, n_samples, post.mean.shape, rng)
    z = sample(post, Tensor(noise))
    task = rate = None
    for clf, (start, stop) in zip(classifiers, post.head_partition):
        ce = cross_entropy(clf(z[..., start:stop]), label).mean(axis=0)
        kl = kl_block_standard(post.mean[..., start:stop], _block_rows(post.joint_factor, start, stop))
        task = ce if task is None else task + ce
        rate = kl if rate is None else rate + kl
    if average_heads:
        task = task * (1.0 / len(classifiers))
    return _breakdown(task, rate=rate, tc=gaussian_tc(post), beta=beta, lam=lambda_tc)
