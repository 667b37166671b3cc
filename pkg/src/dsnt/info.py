"""Exact information quantities on small discrete joints, plus a Gaussian
Monte-Carlo KL estimator used to cross-check closed forms.

Convention: ``0 * log 0 = 0``; everything is in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from .exceptions import ContractError

MAX_TABLE = 16**3
AXES = {"x": 0, "y": 1, "z": 2}


def _xlogy(p, q):
    """``p * log q`` with zero wherever ``p`` is zero."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros(np.broadcast(p, q).shape)
    pos = np.broadcast_to(p > 0, out.shape)
    with np.errstate(divide="ignore"):
        out[pos] = (np.broadcast_to(p, out.shape) * np.log(np.broadcast_to(q, out.shape)))[pos]
    return out


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return float(-_xlogy(p, p).sum())


def _check_table(p, tol=1e-12):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ContractError("probability table has negative or non-finite entries")
    if abs(p.sum() - 1.0) > tol:
        raise ContractError(f"probability table sums to {p.sum():.15g}, not 1")
    return p


@dataclass
class DiscreteJoint:
    """Dense table ``p[x, y, z]``."""

    table: np.ndarray

    def __post_init__(self):
        self.table = _check_table(self.table)
        if self.table.ndim != 3:
            raise ContractError("joint table must be 3-D (x, y, z)")
        if self.table.size > MAX_TABLE:
            raise ContractError(f"table of {self.table.size} entries exceeds the cap of {MAX_TABLE}")

    @property
    def sizes(self):
        return self.table.shape

    def marginal(self, keep):
        """Marginal over the variables named in ``keep`` (e.g. ``"zy"``), in that order."""
        axes = [AXES[c] for c in keep]
        drop = tuple(a for a in range(3) if a not in axes)
        m = self.table.sum(axis=drop)
        kept = sorted(axes)
        return np.transpose(m, [kept.index(a) for a in axes]) if len(axes) > 1 else m

    def mi(self, a, b):
        return mutual_information(self.marginal(a + b))

    def p_y_given_z(self):
        """``q[z, y] = p(y | z)``; rows with ``p(z) = 0`` are uniform."""
        pzy = self.marginal("zy")
        pz = pzy.sum(axis=1, keepdims=True)
        return np.divide(pzy, pz, out=np.full_like(pzy, 1.0 / pzy.shape[1]), where=pz > 0)

    def p_z(self):
        return self.marginal("z")


def mutual_information(pab):
    """``I(A; B)`` of a 2-D joint table."""
    pab = _check_table(pab)
    if pab.ndim != 2:
        raise ContractError("mutual_information needs a 2-D table")
    pa = pab.sum(axis=1, keepdims=True)
    pb = pab.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pab > 0, pab / (pa * pb), 1.0)
    return float(_xlogy(pab, ratio).sum())


def conditional_entropy(pab):
    """``H(A | B)`` for a table indexed ``[a, b]``."""
    pab = _check_table(pab)
    return entropy(pab) - entropy(pab.sum(axis=0))


def vib_lower_bound(joint, q, tol=1e-10):
    """``sum p(x, y, z) log q(y|z) + H(Y)``, a lower bound on ``I(Z; Y)``.

    ``q`` is indexed ``[z, y]`` with rows summing to one.
    """
    q = np.asarray(q, dtype=np.float64)
    nz, ny = joint.sizes[2], joint.sizes[1]
    if q.shape != (nz, ny):
        raise ContractError(f"q must have shape {(nz, ny)}, got {q.shape}")
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1.0) > tol):
        raise ContractError("rows of q(y|z) must be distributions")
    pzy = joint.marginal("zy")
    return float(_xlogy(pzy, q).sum()) + entropy(joint.marginal("y"))


def vib_upper_bound(joint, r, tol=1e-10):
    """``sum p(x) p(z|x) log[p(z|x) / r(z)]``, an upper bound on ``I(Z; X)``."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (joint.sizes[2],):
        raise ContractError(f"r must have shape {(joint.sizes[2],)}, got {r.shape}")
    if np.any(r < 0) or abs(r.sum() - 1.0) > tol:
        raise ContractError("r(z) must be a distribution")
    pxz = joint.marginal("xz")
    px = pxz.sum(axis=1, keepdims=True)
    pz_x = np.divide(pxz, px, out=np.zeros_like(pxz), where=px > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pxz > 0, pz_x / r[None, :], 1.0)
    return float(_xlogy(pxz, ratio).sum())


def random_joint(sizes, rng, concentration=1.0):
    """Symmetric Dirichlet draw over the flattened ``(x, y, z)`` table."""
    n = int(np.prod(sizes))
    if n > MAX_TABLE:
        raise ContractError(f"table of {n} entries exceeds the cap of {MAX_TABLE}")
    return DiscreteJoint(rng.dirichlet(np.full(n, concentration)).reshape(sizes))


def markov_joint(sizes, rng, concentration=1.0):
    """Joint factored as ``p(x) p(y|x) p(z|x)`` (so ``Y - X - Z`` is a Markov chain)."""
    nx, ny, nz = sizes
    px = rng.dirichlet(np.full(nx, concentration))
    py_x = rng.dirichlet(np.full(ny, concentration), size=nx)
    pz_x = rng.dirichlet(np.full(nz, concentration), size=nx)
    t = px[:, None, None] * py_x[:, :, None] * pz_x[:, None, :]
    return DiscreteJoint(t / t.sum())


# ---------------------------------------------------------------------------
# Monte Carlo KL between Gaussians


def _moments(dist):
    """``(mean, covariance)`` from a GaussianPosterior or a ``(mean, cov)`` pair."""
    if isinstance(dist, tuple):
        mean, cov = dist
        return np.asarray(mean, dtype=np.float64), np.asarray(cov, dtype=np.float64)
    mean = np.asarray(dist.mean.data, dtype=np.float64)
    if dist.joint_factor is not None:
        L = dist.joint_factor.data
        return mean, L @ L.T
    return mean, np.diag(dist.scale.data**2)


def mc_kl_gaussian(dist, n=100_000, seed=0, reference=None):
    """Estimate ``KL(dist || reference)`` from ``n`` samples of ``dist``.

    ``reference`` defaults to the standard normal.  Returns
    ``(estimate, standard_error)``.
    """
    if n < 1000:
        raise ContractError("need at least 1000 samples")
    mean, cov = _moments(dist)
    D = mean.shape[0]
    ref_mean, ref_cov = _moments(reference) if reference is not None else (np.zeros(D), np.eye(D))
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal(mean, cov, size=n, method="cholesky")
    log_ratio = multivariate_normal(mean, cov).logpdf(x) - multivariate_normal(ref_mean, ref_cov).logpdf(x)
    log_ratio = np.atleast_1d(log_ratio)
    return float(log_ratio.mean()), float(log_ratio.std(ddof=1) / np.sqrt(n))


def product_of_marginals(cov, partition):
    """Block-diagonal covariance keeping only the within-block entries."""
    out = np.zeros_like(cov)
    for s, e in partition:
        out[s:e, s:e] = cov[s:e, s:e]
    return out


# ---------------------------------------------------------------------------
# bound verification sweep


def verify_bounds(n_joints=100, sizes=(4, 4, 4), seed=0, betas=(0.0, 0.5, 1.0, 2.0), slack=1e-12):
    """Check the variational bounds on random joints; returns a summary dict."""
    rng = np.random.default_rng(seed)
    violations = []
    max_tight_gap = 0.0
    min_lower_gap = min_upper_gap = np.inf
    for k in range(n_joints):
        joint = random_joint(sizes, rng)
        izy, izx = joint.mi("z", "y"), joint.mi("z", "x")
        q = rng.dirichlet(np.ones(sizes[1]), size=sizes[2])
        r = rng.dirichlet(np.ones(sizes[2]))
        lo, up = vib_lower_bound(joint, q), vib_upper_bound(joint, r)
        min_lower_gap = min(min_lower_gap, izy - lo)
        min_upper_gap = min(min_upper_gap, up - izx)
        if lo > izy + slack:
            violations.append((k, "lower"))
        if up < izx - slack:
            violations.append((k, "upper"))
        for beta in betas:
            if izy - beta * izx < lo - beta * up - slack:
                violations.append((k, f"objective beta={beta}"))
        tight = max(abs(vib_lower_bound(joint, joint.p_y_given_z()) - izy), abs(vib_upper_bound(joint, joint.p_z()) - izx))
        max_tight_gap = max(max_tight_gap, tight)
        if tight > slack:
            violations.append((k, "tightness"))
    return {
        "n_joints": n_joints,
        "sizes": list(sizes),
        "seed": seed,
        "violations": [f"joint {k}: {what}" for k, what in violations],
        "max_tight_gap": max_tight_gap,
        "min_lower_gap": float(min_lower_gap),
        "min_upper_gap": float(min_upper_gap),
        "passed": not violations,
    }
