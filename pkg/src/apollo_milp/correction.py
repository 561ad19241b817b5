"""Partial-solution selection, trust-region construction, UEBO and fixing strategies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .milp import BINARY, LE, MilpInstance, PartialAssignment, add_constraint

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrustRegionSpec:
    """``k0`` variables fixed to 0, ``k1`` to 1, radius ``delta``."""

    k0: int
    k1: int
    delta: int

    def __post_init__(self):
        if min(self.k0, self.k1, self.delta) < 0:
            raise ValueError("k0, k1 and delta must be nonnegative")
        if self.delta > self.k0 + self.k1:
            raise ValueError("delta cannot exceed k0 + k1")


def _free_binaries(inst: MilpInstance) -> np.ndarray:
    b = inst.binary_indices
    return b[~inst.fixed_mask[b]]


def select_partial(inst: MilpInstance, probs, spec: TrustRegionSpec) -> PartialAssignment:
    """Fix the ``k1`` most likely free binaries to 1 and the ``k0`` least likely to 0.

    ``probs`` is aligned with ``inst.binary_indices``; ties go to the lower index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size != inst.binary_indices.size:
        raise ValueError("one probability per binary variable expected")
    p = np.full(inst.num_vars, np.nan)
    p[inst.binary_indices] = probs
    free = _free_binaries(inst)
    if spec.k0 + spec.k1 > free.size:
        raise ValueError(f"k0 + k1 = {spec.k0 + spec.k1} exceeds {free.size} free binaries")
    top = free[np.lexsort((free, -p[free]))][:spec.k1]
    rest = np.setdiff1d(free, top)
    bottom = rest[np.lexsort((rest, p[rest]))][:spec.k0]
    return PartialAssignment(np.concatenate([top, bottom]),
                             np.concatenate([np.ones(top.size), np.zeros(bottom.size)]))


def trust_region_row(pa: PartialAssignment, delta: float):
    """Coefficients and rhs of ``sum_{v=1}(1 - x_i) + sum_{v=0} x_i <= delta``."""
    ones = pa.values == 1
    coefs = dict(zip(pa.indices.tolist(), np.where(ones, -1.0, 1.0).tolist()))
    return coefs, float(delta) - float(np.count_nonzero(ones))


def build_trust_region(inst: MilpInstance, pa: PartialAssignment, delta: float) -> MilpInstance:
    """Append the L1 ball of radius ``delta`` around ``pa`` as one linear row."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if len(pa) == 0:
        return inst
    if np.any(inst.kinds[pa.indices] != BINARY):
        raise ValueError("trust region is defined over binary variables only")
    coefs, rhs = trust_region_row(pa, delta)
    return add_constraint(inst, coefs, LE, rhs)


def bernoulli_entropy(p):
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    return -p * np.log(p) - (1 - p) * np.log(1 - p)


def discrepancy(p, ref):
    """Cross-entropy of the prediction against a one-hot reference value."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    ref = np.asarray(ref)
    return np.where(ref == 1, -np.log(p), -np.log(1 - p))


@dataclass(frozen=True)
class UeboReport:
    indices: np.ndarray
    prob: np.ndarray
    predicted: np.ndarray
    reference: np.ndarray
    entropy: np.ndarray
    discrepancy: np.ndarray
    uebo: np.ndarray
    consistent: np.ndarray

    @property
    def consistency(self):
        """Negative discrepancy (log-likelihood of the reference value)."""
        return -self.discrepancy

    def rows(self):
        for k in range(self.indices.size):
            yield (int(self.indices[k]), float(self.prob[k]), int(self.reference[k]),
                   float(self.entropy[k]), float(self.discrepancy[k]), float(self.uebo[k]),
                   bool(self.consistent[k]))


def uebo(p, ref):
    """``(entropy, discrepancy, entropy + discrepancy)`` for probability ``p`` and reference 0/1."""
    h = bernoulli_entropy(p)
    d = discrepancy(p, ref)
    return h, d, h + d


def uebo_report(inst: MilpInstance, probs, pa: PartialAssignment, reference) -> UeboReport:
    p = np.full(inst.num_vars, np.nan)
    p[inst.binary_indices] = probs
    ref = np.round(np.asarray(reference, dtype=np.float64)[pa.indices])
    h, d, u = uebo(p[pa.indices], ref)
    return UeboReport(pa.indices, p[pa.indices], pa.values, ref, h, d, u, pa.values == ref)


def _rounded(reference, indices, tol=1e-6):
    ref = np.asarray(reference, dtype=np.float64)[indices]
    r = np.round(ref)
    if np.any(np.abs(ref - r) > tol):
        raise ValueError("reference solution is not integral on the partial solution")
    return r


def fix_consistent(pa: PartialAssignment, reference) -> PartialAssignment:
    """Keep the predicted fixings that the reference solution agrees with."""
    ref = _rounded(reference, pa.indices)
    keep = ref == pa.values
    return PartialAssignment(pa.indices[keep], pa.values[keep])


def fix_direct(reference, indices) -> PartialAssignment:
    """Fix every selected variable to its reference value."""
    if isinstance(indices, PartialAssignment):
        indices = indices.indices
    indices = np.asarray(indices, dtype=np.int64)
    return PartialAssignment(indices, _rounded(reference, indices))


def fix_predicted(pa: PartialAssignment) -> PartialAssignment:
    """Fix every selected variable to its predicted value."""
    return pa


def kl_bound_terms(p1: float, kernel) -> tuple:
    """KL divergence and its upper-bound terms for a Bernoulli prediction.

    ``kernel[a, b]`` is ``q(x = b | xhat = a)``; the reference marginal is
    ``q(x) = sum_a kernel[a, x] p(a)``.  Returns ``(kl, entropy, cross)`` with
    ``cross = -sum_{x, a} p(x) p(a) log kernel[a, x]`` so that both
    ``kl <= cross - entropy`` and ``kl <= entropy + cross`` hold.
    """
    p = np.array([1 - p1, p1])
    K = np.asarray(kernel, dtype=np.float64)
    q = p @ K
    kl = float(np.sum(p * (np.log(p) - np.log(q))))
    entropy = float(-np.sum(p * np.log(p)))
    cross = float(-np.sum(np.outer(p, p) * np.log(K).T))
    return kl, entropy, cross


def conditional_precisions(joint) -> dict:
    """Precision of the optimal value 1 under different conditionings.

    ``joint[s, r, h]`` is the probability of optimal value ``s``, reference
    value ``r`` and predicted value ``h``.
    """
    J = np.asarray(joint, dtype=np.float64)

    def cond(mask):
        return J[1][mask].sum() / J[:, mask].sum()

    both = np.zeros((2, 2), dtype=bool)
    both[1, 1] = True
    ref1 = np.zeros((2, 2), dtype=bool)
    ref1[1, :] = True
    pred1 = np.zeros((2, 2), dtype=bool)
    pred1[:, 1] = True
    r0h1 = np.zeros((2, 2), dtype=bool)
    r0h1[0, 1] = True
    r1h0 = np.zeros((2, 2), dtype=bool)
    r1h0[1, 0] = True
    return {"agree": cond(both), "reference": cond(ref1), "predicted": cond(pred1),
            "ref0_pred1": cond(r0h1), "ref1_pred0": cond(r1h0)}
