"""Analytic delay model of the validator overlay.

Two dissemination strategies are modelled:

* ``tree``: Kadcast-style fan-out.  The sender and every forwarder push the
  message to ``beta`` peers at once, sharing one uplink, so each hop costs
  ``beta * 8 * size / bandwidth + propagation``.  Recipients fill the tree
  level by level (``beta`` at depth 1, ``beta**2`` at depth 2, ...).
* ``direct``: the sender unicasts ``n - 1`` copies back to back on its own
  uplink.

Votes always go point-to-point to the leader and queue on its downlink.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

VOTE_SIZE = 141


@dataclass(frozen=True)
class LinkParams:
    bandwidth: float  # bits per second
    propagation: float  # seconds

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.propagation < 0:
            raise ValueError("propagation delay cannot be negative")

    def serialization(self, size: float) -> float:
        return 8 * size / self.bandwidth


NIB_LINK = LinkParams(100e6, 0.020)
GIB_LINK = LinkParams(50e6, 0.120)
NULL_LINK = LinkParams(math.inf, 0.0)


@dataclass(frozen=True)
class BroadcastStrategy:
    kind: str = "tree"
    beta: int = 2

    def __post_init__(self):
        if self.kind not in ("tree", "direct"):
            raise ValueError(f"unknown broadcast strategy {self.kind!r}")
        if self.kind == "tree" and self.beta < 2:
            raise ValueError("tree fan-out must be at least 2")

    @property
    def code(self) -> int:
        return 0 if self.kind == "tree" else 1

    def describe(self) -> str:
        return f"tree(beta={self.beta})" if self.kind == "tree" else "direct"


TREE2 = BroadcastStrategy("tree", 2)
DIRECT = BroadcastStrategy("direct")


def unicast_delay(size: float, link: LinkParams) -> float:
    if size < 0:
        raise ValueError("size must be nonnegative")
    return link.propagation + link.serialization(size)


def tree_levels(m: int, beta: int) -> np.ndarray:
    """Depth (1-based) of each of ``m`` recipients in a ``beta``-ary fan-out tree."""
    levels = np.empty(m, dtype=np.int64)
    filled, depth, width = 0, 1, beta
    while filled < m:
        take = min(width, m - filled)
        levels[filled : filled + take] = depth
        filled += take
        depth += 1
        width *= beta
    return levels


def tree_depth(n: int, beta: int) -> int:
    if n < 2:
        return 0
    return int(tree_levels(n - 1, beta)[-1])


def broadcast_offsets(size: float, m: int, link: LinkParams, strat: BroadcastStrategy) -> np.ndarray:
    """Delivery time of each of ``m`` recipients relative to the send start."""
    t = link.serialization(size)
    if strat.kind == "tree":
        return tree_levels(m, strat.beta) * (strat.beta * t + link.propagation)
    return np.arange(1, m + 1) * t + link.propagation


def broadcast_completion(size: float, n: int, link: LinkParams, strat: BroadcastStrategy) -> tuple[np.ndarray, float]:
    if n < 2:
        raise ValueError("broadcast needs at least one recipient")
    d = broadcast_offsets(size, n - 1, link, strat)
    return d, float(d.max())


def vote_collection_delay(n_votes: int, vote_size: float, link: LinkParams) -> float:
    """Time until the ``n_votes``-th of simultaneously sent votes clears the leader's downlink."""
    if n_votes < 1:
        raise ValueError("need at least one vote")
    return link.propagation + n_votes * link.serialization(vote_size)


def simulate_broadcast(size: float, n: int, link: LinkParams, strat: BroadcastStrategy) -> np.ndarray:
    """Per-edge event simulation of one broadcast; returns per-recipient delivery times.

    Builds the explicit forwarding topology and replays every transmission
    through an event queue.  Independent of :func:`broadcast_offsets`.
    """
    m = n - 1
    deliver = np.full(m, np.nan)
    ser = link.serialization(size)
    events: list[tuple[float, int, int]] = []  # (time, seq, node) node -1 is the sender
    seq = 0
    if strat.kind == "direct":
        uplink_free = 0.0
        for k in range(m):
            uplink_free += ser  # one copy at a time
            heapq.heappush(events, (uplink_free + link.propagation, seq, k))
            seq += 1
        while events:
            t, _, k = heapq.heappop(events)
            deliver[k] = t
        return deliver

    beta = strat.beta
    # children of node i (0-based recipient index) in heap layout; sender's children are 0..beta-1
    def children(node: int) -> range:
        first = beta * (node + 1)
        return range(first, min(first + beta, m))

    heapq.heappush(events, (0.0, seq, -1))
    seq += 1
    while events:
        t, _, node = heapq.heappop(events)
        if node >= 0:
            deliver[node] = t
        kids = range(0, min(beta, m)) if node < 0 else children(node)
        # beta concurrent streams share the uplink, redundant slots included
        done = t + ser * beta
        for c in kids:
            heapq.heappush(events, (done + link.propagation, seq, c))
            seq += 1
    return deliver
