"""Per-message (k, t, thread) selection from a system profile and live load."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .errors import PolicyError
from .segcrypt import ChopPlan

# t lookup tables: (size floor in KiB, lanes), ascending
NOLELAND_T_TABLE = ((64, 2), (128, 4), (512, 8))
BRIDGES_T_TABLE = ((64, 4), (256, 8), (512, 16))


@dataclass(frozen=True)
class SystemProfile:
    """Host facts and policy constants the tuner consumes."""

    name: str
    total_hyperthreads: int
    ranks_per_node: int = 1
    comm_reserved: int = 2
    t_table: tuple = NOLELAND_T_TABLE
    chunk_divisor_kib: int = 512
    outstanding_cap: int = 64
    max_inflight: int = 128

    def __post_init__(self):
        if self.total_hyperthreads < self.ranks_per_node or self.ranks_per_node < 1:
            raise ValueError("need total_hyperthreads >= ranks_per_node >= 1")
        if self.comm_reserved < 0:
            raise ValueError("comm_reserved must be >= 0")
        floors = [f for f, _ in self.t_table]
        if floors != sorted(set(floors)):
            raise ValueError("t_table floors must be strictly increasing")


def noleland_profile(ranks_per_node: int = 1) -> SystemProfile:
    return SystemProfile("noleland", 32, ranks_per_node, t_table=NOLELAND_T_TABLE)


def bridges_profile(ranks_per_node: int = 1) -> SystemProfile:
    return SystemProfile("bridges", 28, ranks_per_node, t_table=BRIDGES_T_TABLE)


def local_profile(ranks_per_node: int = 1) -> SystemProfile:
    cpus = os.cpu_count() or 1
    return SystemProfile("local", max(cpus, ranks_per_node), ranks_per_node)


def select_k(m_kib: float, profile: SystemProfile) -> int:
    """Chunk count: floor(max(1, size_KiB / divisor))."""
    return math.floor(max(1.0, m_kib / profile.chunk_divisor_kib))


def select_t(m_kib: float, profile: SystemProfile) -> int:
    """Lane count from the profile's size table."""
    chosen = None
    for floor_kib, t in profile.t_table:
        if m_kib >= floor_kib:
            chosen = t
    if chosen is None:
        raise PolicyError(
            f"{m_kib} KiB is below the {profile.name!r} table floor "
            f"({profile.t_table[0][0]} KiB)"
        )
    return chosen


def effective_threads(t: int, profile: SystemProfile) -> int:
    """Lanes actually granted: min(T0 - T1, t), clamped to >= 1.

    T0 is the per-rank hyperthread share, T1 the share reserved for
    communication.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    t0 = profile.total_hyperthreads // profile.ranks_per_node
    return max(1, min(t0 - profile.comm_reserved, t))


def plan_message(m: int, profile: SystemProfile, live: int = 0) -> ChopPlan:
    """Full plan for an m-byte message given live outstanding sends.

    Strictly more than outstanding_cap in-flight sends forces k = 1.
    """
    m_kib = m / 1024
    t = select_t(m_kib, profile)
    k = 1 if live > profile.outstanding_cap else select_k(m_kib, profile)
    seg_size = math.ceil(m / (k * t))
    return ChopPlan(k, t, seg_size, effective_threads(t, profile))
