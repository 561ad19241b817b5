"""Seeded combinatorial auction (CA) and set covering (SC) instance generators.

All randomness comes from ``numpy.random.Generator(numpy.random.PCG64(seed))``
(PCG-64, 128-bit state, 64-bit output), so a seed reproduces an instance
on any platform running the same numpy bit-generator.

CA bundle sampling (the "arbitrary relationships" scheme)
---------------------------------------------------------
Items get common resale values ``U(min_value, max_value)`` and a symmetric
random compatibility matrix.  Bids are produced one bidder at a time:

1. the bidder draws private interests ``U(0, 1)`` per item and private
   values ``value + max_value * value_deviation * (2 * interest - 1)``;
2. a first item is chosen with probability proportional to interest and,
   while ``U(0, 1) < add_item_prob``, further items are added with
   probability proportional to ``interest * mean compatibility with the
   bundle``;
3. price is ``sum(private values) + size ** (1 + additivity)``; bundles with
   negative price are discarded and redrawn;
4. up to ``max_sub_bids`` substitutable bundles of the same size are grown
   from each item of the first bundle and kept (highest price first) if
   their price lies in ``(0, budget_factor * price)`` and their resale value
   is at least ``resale_factor`` of the first bundle's;
5. a bidder placing more than two bids gets a private dummy item so that at
   most one of its bids can win.

The model has one binary per bid, objective ``-price``, one ``<= 1`` row
per item that appears in some bid (in item order) followed by one row per
dummy item.

SC construction
---------------
Columns are shuffled and row ``r`` gets columns ``perm[2r mod cols]`` and
``perm[(2r + 1) mod cols]``; columns still uncovered are assigned to a random
row; remaining nonzeros up to ``int(rows * cols * density)`` are drawn
uniformly among empty cells.  Costs are integers in ``[1, max_cost]``.
The model is ``min cost @ x`` subject to ``sum_{j covers r} x_j >= 1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .milp import GE, LE, MilpInstance

CA_DESK = {"items": 100, "bids": 300}
SC_DESK = {"rows": 150, "cols": 250}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class CaParams:
    items: int = CA_DESK["items"]
    bids: int = CA_DESK["bids"]
    seed: int = 0
    add_item_prob: float = 0.7
    max_sub_bids: int = 5
    additivity: float = 0.2
    value_deviation: float = 0.5
    min_value: float = 1.0
    max_value: float = 100.0
    budget_factor: float = 1.5
    resale_factor: float = 0.5

    def __post_init__(self):
        if self.items < 1 or self.bids < 1:
            raise ValueError("items and bids must be at least 1")
        if not 0 < self.add_item_prob < 1:
            raise ValueError("add_item_prob must lie in (0, 1)")
        if not 0 <= self.min_value <= self.max_value:
            raise ValueError("need 0 <= min_value <= max_value")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ScParams:
    rows: int = SC_DESK["rows"]
    cols: int = SC_DESK["cols"]
    density: float = 0.05
    max_cost: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be at least 1")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.density * self.cols < 1:
            raise ValueError("density * cols must be at least 1")
        if self.max_cost < 1:
            raise ValueError("max_cost must be a positive integer")

    def to_dict(self):
        return asdict(self)

    @property
    def expected_nnz(self) -> int:
        """Exact nonzero count produced by :func:`gen_sc`."""
        per_row = min(2, self.cols)
        mandatory = self.rows * per_row + max(0, self.cols - self.rows * per_row)
        return min(max(int(self.rows * self.cols * self.density), mandatory),
                   self.rows * self.cols)


def _next_item(mask, interests, compats, rng):
    prob = (1 - mask) * interests * compats[mask.astype(bool), :].mean(axis=0)
    total = prob.sum()
    if total <= 0:
        prob = (1 - mask) * interests
        total = prob.sum()
    return rng.choice(mask.size, p=prob / total)


def gen_ca(p: CaParams) -> MilpInstance:
    rng = make_rng(p.seed)
    n_items = p.items
    values = p.min_value + (p.max_value - p.min_value) * rng.random(n_items)
    compats = np.triu(rng.random((n_items, n_items)), k=1)
    compats = compats + compats.T
    sums = compats.sum(axis=1)
    compats = np.divide(compats, sums[:, None], out=np.zeros_like(compats),
                        where=sums[:, None] > 0)

    bids: list[tuple[list[int], float]] = []
    n_dummy = 0
    while len(bids) < p.bids:
        interests = rng.random(n_items)
        private = values + p.max_value * p.value_deviation * (2 * interests - 1)

        mask = np.zeros(n_items, dtype=np.int64)
        mask[rng.choice(n_items, p=interests / interests.sum())] = 1
        while rng.random() < p.add_item_prob:
            if mask.sum() == n_items:
                break
            mask[_next_item(mask, interests, compats, rng)] = 1
        bundle = np.flatnonzero(mask)
        price = private[bundle].sum() + len(bundle) ** (1 + p.additivity)
        if price < 0:
            continue

        bidder = {frozenset(bundle.tolist()): price}
        candidates = []
        for item in bundle:
            sub = np.zeros(n_items, dtype=np.int64)
            sub[item] = 1
            while sub.sum() < len(bundle):
                sub[_next_item(sub, interests, compats, rng)] = 1
            sub_bundle = np.flatnonzero(sub)
            candidates.append((sub_bundle,
                               private[sub_bundle].sum() + len(sub_bundle) ** (1 + p.additivity)))

        budget = p.budget_factor * price
        min_resale = p.resale_factor * values[bundle].sum()
        for k in np.argsort([-c[1] for c in candidates], kind="stable"):
            sub_bundle, sub_price = candidates[k]
            if len(bidder) >= p.max_sub_bids + 1 or len(bids) + len(bidder) >= p.bids:
                break
            if not 0 < sub_price < budget:
                continue
            if values[sub_bundle].sum() < min_resale:
                continue
            key = frozenset(sub_bundle.tolist())
            if key in bidder:
                continue
            bidder[key] = sub_price

        dummy = []
        if len(bidder) > 2:
            dummy = [n_items + n_dummy]
            n_dummy += 1
        for key, bid_price in bidder.items():
            bids.append((sorted(key) + dummy, bid_price))

    per_item: list[list[int]] = [[] for _ in range(n_items + n_dummy)]
    for b, (items, _) in enumerate(bids):
        for it in items:
            per_item[it].append(b)
    rows, cols = [], []
    r = 0
    for members in per_item:
        if not members:
            continue
        rows += [r] * len(members)
        cols += members
        r += 1
    n = len(bids)
    return MilpInstance(c=-np.array([price for _, price in bids]), rows=rows, cols=cols,
                        vals=np.ones(len(rows)), senses=[LE] * r, rhs=np.ones(r),
                        lb=np.zeros(n), ub=np.ones(n), kinds=["B"] * n,
                        name=f"ca_i{p.items}_b{p.bids}_s{p.seed}")


def gen_sc(p: ScParams) -> MilpInstance:
    rng = make_rng(p.seed)
    m, n = p.rows, p.cols
    A = np.zeros((m, n), dtype=bool)
    perm = rng.permutation(n)
    per_row = min(2, n)
    for r in range(m):
        for k in range(per_row):
            A[r, perm[(per_row * r + k) % n]] = True
    for j in np.flatnonzero(~A.any(axis=0)):
        A[rng.integers(m), j] = True
    extra = p.expected_nnz - int(A.sum())
    if extra > 0:
        empty = np.flatnonzero(~A.ravel())
        np.put(A, rng.choice(empty, size=extra, replace=False), True)
    cost = rng.integers(1, p.max_cost + 1, size=n).astype(np.float64)
    r, c = np.nonzero(A)
    return MilpInstance(c=cost, rows=r, cols=c, vals=np.ones(r.size), senses=[GE] * m,
                        rhs=np.ones(m), lb=np.zeros(n), ub=np.ones(n), kinds=["B"] * n,
                        name=f"sc_r{m}_c{n}_s{p.seed}")
