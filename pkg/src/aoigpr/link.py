"""Per-slot radio and traffic physics for one VUE pair.

Packets are kept individually (generation slot + remaining bits) so that the
receiver's age can be tracked; the scalar recursion
``Q(t+1) = max(Q(t) - R(t), 0) + A`` is the packet-count view of the queue.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


def interference_at(k: int, n: int, actions: np.ndarray, gains: np.ndarray) -> float:
    """Aggregate interference (W) at receiver ``k`` on RB ``n``.

    ``actions`` is K x N (W), ``gains`` is K x K x N with ``gains[k', k, n]``.
    """
    col = actions[:, n] * gains[:, k, n]
    return float(col.sum() - col[k])


def interference_matrix(actions: np.ndarray, gains: np.ndarray) -> np.ndarray:
    """All-pairs version of :func:`interference_at`, shape K x N."""
    total = np.einsum("jn,jkn->kn", actions, gains)
    own = actions * np.einsum("kkn->kn", gains)
    return np.maximum(total - own, 0.0)


def transmission_rate(action, own_gains, interference, tau: float, Z: float, W: float,
                      N0: float) -> float:
    """Shannon rate in packets/slot summed over the RBs of ``action``."""
    action = np.asarray(action, dtype=float)
    sinr = action * np.asarray(own_gains, dtype=float) / (N0 * W + np.asarray(interference, dtype=float))
    return float(tau / Z * W * np.log2(1.0 + sinr).sum())


@dataclass
class Packet:
    gen: int
    bits: float


@dataclass
class PacketQueue:
    """FIFO of status-update packets with a fractional arrival accumulator."""

    Z: float
    packets: deque = field(default_factory=deque)
    accumulator: float = 0.0
    served_bits: float = 0.0

    @property
    def bits(self) -> float:
        return sum(p.bits for p in self.packets)

    @property
    def length(self) -> float:
        """Queue length in packets (remaining bits / Z)."""
        return self.bits / self.Z


def serve_queue(q: PacketQueue, R: float, A: float, t: int, supersede: bool = False):
    """Serve ``R*Z`` bits FIFO, then admit this slot's arrivals.

    Returns ``(q, newest_delivered_generation or None)``.  New packets carry
    generation slot ``t + 1``.  With ``supersede`` a fresh arrival replaces
    every queued packet that has not started service.
    """
    budget = R * q.Z
    newest = None
    while q.packets and budget > 0:
        head = q.packets[0]
        if head.bits <= budget:
            budget -= head.bits
            q.served_bits += head.bits
            newest = head.gen
            q.packets.popleft()
        else:
            head.bits -= budget
            q.served_bits += budget
            budget = 0.0
    q.accumulator += A
    n_new = int(math.floor(q.accumulator + 1e-12))
    if n_new > 0:
        q.accumulator = max(q.accumulator - n_new, 0.0)
        if supersede:
            keep = [p for p in q.packets if p.bits < q.Z][:1]
            q.packets = deque(keep)
            n_new = 1
        for _ in range(n_new):
            q.packets.append(Packet(t + 1, q.Z))
    return q, newest


@dataclass
class AoiState:
    """Receiver-side age.  ``gen`` is the slot index of the newest delivered update."""

    delta: float = 0.0
    gen: int | None = None
    tau: float = 3e-3

    @property
    def gamma(self) -> float | None:
        return None if self.gen is None else self.tau * self.gen


def update_aoi(a: AoiState, delivered_gen: int | None, t: int, tau: float) -> AoiState:
    """Age at the start of slot ``t + 1`` given this slot's newest delivery."""
    gen = a.gen
    if delivered_gen is not None and (gen is None or delivered_gen > gen):
        gen = delivered_gen
    if gen is None:
        return AoiState(a.delta + tau, None, tau)
    return AoiState(tau * (t + 1 - gen), gen, tau)
