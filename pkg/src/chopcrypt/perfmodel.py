"""Analytic latency models and parameter fitting.

Communication follows a latency/inverse-rate line per protocol regime
(eager below a threshold, rendezvous above). Multi-lane encryption follows
a max-rate curve t_enc(m, t) = alpha + m / (A + B*(t-1)) with one parameter
row per message-size tier. The complete round-trip model composes the two
with (k-1) overlapped interior chunks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError

REGIMES = ("eager", "rendezvous")
TIERS = ("small", "moderate", "large")
TIER_BOUNDS = {"small": (0, 32768), "moderate": (32768, 1048576), "large": (1048576, None)}
DEFAULT_EAGER_THRESHOLD = 17408  # bytes; messages at or below go eager


@dataclass(frozen=True)
class CommParams:
    """One fitted communication line: latency (us) and inverse rate (us/byte)."""

    alpha_comm: float
    beta_comm: float
    regime: str = "eager"
    eager_threshold: int = DEFAULT_EAGER_THRESHOLD

    def __post_init__(self):
        if self.alpha_comm < 0 or self.beta_comm <= 0:
            raise ValueError("need alpha_comm >= 0 and beta_comm > 0")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")


@dataclass(frozen=True)
class EncParams:
    """One fitted encryption row: latency (us), first-lane and added-lane rates (B/us)."""

    alpha_enc: float
    a_rate: float
    b_rate: float
    tier: str = "large"

    def __post_init__(self):
        if self.alpha_enc < 0 or self.a_rate <= 0 or self.b_rate < 0:
            raise ValueError("need alpha_enc >= 0, a_rate > 0, b_rate >= 0")
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}")


@dataclass(frozen=True)
class PerfParams:
    """Complete fitted model: one CommParams per regime, one EncParams per tier."""

    comm: dict
    enc: dict
    name: str = "unnamed"

    def __post_init__(self):
        missing = [r for r in REGIMES if r not in self.comm] + [t for t in TIERS if t not in self.enc]
        if missing:
            raise ValueError(f"profile {self.name!r} missing rows: {missing}")

    @property
    def eager_threshold(self) -> int:
        return self.comm["eager"].eager_threshold

    def comm_for(self, m: int) -> CommParams:
        return self.comm["eager" if m <= self.eager_threshold else "rendezvous"]

    def enc_for(self, m: int) -> EncParams:
        return self.enc[tier_of(m)]


def tier_of(m: int) -> str:
    """Size tier of an m-byte message."""
    if m < 0:
        raise ValueError("size must be >= 0")
    if m < TIER_BOUNDS["small"][1]:
        return "small"
    if m < TIER_BOUNDS["moderate"][1]:
        return "moderate"
    return "large"


def t_comm(m: int, p: CommParams) -> float:
    """Predicted one-way transfer time in us for m bytes on line p."""
    if m < 0:
        raise ValueError("size must be >= 0")
    return p.alpha_comm + p.beta_comm * m


def t_enc(m: int, t: int, p: EncParams) -> float:
    """Predicted time in us to encrypt m bytes with t lanes on row p."""
    if m < 0 or t < 1:
        raise ValueError("need m >= 0 and t >= 1")
    return p.alpha_enc + m / (p.a_rate + p.b_rate * (t - 1))


def t_total(m: int, k: int, t: int, p: PerfParams) -> float:
    """Predicted round-trip time in us for an m-byte message chopped (k, t).

    s = ceil(m/k) is the chunk size. The first chunk is encrypted in the
    open, interior chunks overlap encryption with transmission, and the
    final chunk is decrypted after its transfer:

        2*t_enc(s, t) + (k-1)*max(t_enc(s, t), beta*s) + t_comm(s)

    The encryption tier follows the whole message size m; the protocol
    regime follows the chunk size s actually put on the wire.
    """
    if m < k * t:
        raise ValueError("need m >= k*t so segments are nonempty")
    s = math.ceil(m / k)
    enc = t_enc(s, t, p.enc_for(m))
    comm = p.comm_for(s)
    return 2 * enc + (k - 1) * max(enc, comm.beta_comm * s) + t_comm(s, comm)


def fit_hockney(
    samples: Sequence,
    regime: str = "eager",
    eager_threshold: int = DEFAULT_EAGER_THRESHOLD,
) -> CommParams:
    """Ordinary least squares line over (size_bytes, latency_us) samples."""
    if len(samples) < 2:
        raise FitError(f"need >= 2 samples, got {len(samples)}")
    sizes = np.array([float(m) for m, _ in samples])
    times = np.array([float(us) for _, us in samples])
    if np.unique(sizes).size < 2:
        raise FitError("degenerate design: all sizes equal")
    design = np.column_stack([np.ones_like(sizes), sizes])
    (alpha, beta), *_ = np.linalg.lstsq(design, times, rcond=None)
    if beta <= 0:
        raise FitError(f"non-physical fit: beta {beta} <= 0", best=(float(alpha), float(beta)))
    return CommParams(max(0.0, float(alpha)), float(beta), regime, eager_threshold)


def fit_hockney_profile(
    samples: Sequence, eager_threshold: int = DEFAULT_EAGER_THRESHOLD
) -> dict:
    """Split samples at the eager threshold and fit one line per regime."""
    split = {
        "eager": [(m, us) for m, us in samples if m <= eager_threshold],
        "rendezvous": [(m, us) for m, us in samples if m > eager_threshold],
    }
    out = {}
    for regime, part in split.items():
        if len(part) < 2:
            raise FitError(f"regime {regime!r} has {len(part)} samples, need >= 2")
        out[regime] = fit_hockney(part, regime, eager_threshold)
    return out


def _fit_maxrate_tier(samples: Sequence, tier: str) -> EncParams:
    if len(samples) < 3:
        raise FitError(f"tier {tier!r} has {len(samples)} samples, need >= 3")
    sizes = np.array([float(m) for m, _, _ in samples])
    lanes = np.array([float(t) for _, t, _ in samples])
    times = np.array([float(us) for _, _, us in samples])
    lane_values = sorted(set(lanes.tolist()))
    if len(lane_values) < 2:
        raise FitError(f"tier {tier!r} spans a single lane count; B is unidentifiable")

    def slope_at(t_val: float) -> float:
        mask = lanes == t_val
        if np.unique(sizes[mask]).size >= 2:
            d = np.column_stack([np.ones(mask.sum()), sizes[mask]])
            (_, sl), *_ = np.linalg.lstsq(d, times[mask], rcond=None)
        else:
            sl = float(np.mean(times[mask] / np.maximum(sizes[mask], 1.0)))
        return max(float(sl), 1e-12)

    # seed the solver from straight-line slopes at the extreme lane counts
    t_lo, t_hi = lane_values[0], lane_values[-1]
    r_lo, r_hi = 1.0 / slope_at(t_lo), 1.0 / slope_at(t_hi)
    b0 = max((r_hi - r_lo) / (t_hi - t_lo), 0.0)
    a0 = max(r_lo - b0 * (t_lo - 1), 1e-6)
    alpha0 = max(float(np.min(times)) / 2.0, 0.0)

    def residual(x):
        alpha, a, b = x
        return alpha + sizes / (a + b * (lanes - 1)) - times

    result = least_squares(
        residual,
        x0=[alpha0, a0, b0],
        bounds=([0.0, 1e-9, 0.0], [np.inf, np.inf, np.inf]),
        method="trf",
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=10000,
    )
    alpha, a, b = (float(v) for v in result.x)
    params = EncParams(max(0.0, alpha), a, max(0.0, b), tier)
    if not result.success:
        raise FitError(f"max-rate fit did not converge for tier {tier!r}", best=params)
    return params


def fit_maxrate(samples: Sequence) -> dict:
    """Nonlinear least squares of (size, lanes, latency_us) rows, per size tier."""
    by_tier = {}
    for m, t, us in samples:
        by_tier.setdefault(tier_of(int(m)), []).append((m, t, us))
    if not by_tier:
        raise FitError("no samples")
    return {tier: _fit_maxrate_tier(rows, tier) for tier, rows in by_tier.items()}


def load_samples_csv(path) -> list:
    """Read benchmark rows by column name; returns dicts with typed fields."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "scenario": row.get("scenario", ""),
                    "size_bytes": int(row["size_bytes"]),
                    "threads": int(row.get("threads", 1) or 1),
                    "k": int(row.get("k", 1) or 1),
                    "mode": row.get("mode", ""),
                    "reps": int(row.get("reps", 1) or 1),
                    "median_us": float(row["median_us"]),
                    "stddev_us": float(row.get("stddev_us", 0.0) or 0.0),
                }
            )
    return rows


def hockney_samples(rows: Iterable) -> list:
    return [(r["size_bytes"], r["median_us"]) for r in rows]


def maxrate_samples(rows: Iterable) -> list:
    return [(r["size_bytes"], r["threads"], r["median_us"]) for r in rows]
