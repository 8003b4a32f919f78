"""Per-user traffic generation and deadline-aware queueing.

Three service classes:

- VoIP: exponential ON/OFF phases (means 1.0 s / 1.5 s), constant 32 kbps
  while ON, 80 ms packet lifetime.
- Video: exponential state holding times (mean 160 ms); each state draws its
  rate from an exponential distribution truncated to [64, 256] kbps whose
  mean is solved to hit 180 kbps; 1 s packet deadline.
- Best effort: full-buffer model, no queue, consumes whatever capacity the
  scheduler grants.

Packets are fluid (bit-granular): each generation step appends at most one
queue entry carrying that step's arrived bits.  Phase boundaries are
resolved exactly inside a step, so a step may span several phases.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "ServiceClass",
    "VoipParams",
    "VideoParams",
    "TrafficSession",
    "ServiceStats",
    "SolverFailure",
    "make_session",
    "step_traffic",
    "serve_queue",
    "sample_truncated_exp_rate",
    "truncated_exp_lambda",
    "truncated_exp_mean",
]


class ServiceClass(Enum):
    VOIP = "voip"
    VIDEO = "video"
    BEST_EFFORT = "be"


class SolverFailure(RuntimeError):
    """Root find for the truncated-exponential rate parameter failed."""


@dataclass(frozen=True)
class VoipParams:
    on_mean_s: float = 1.0
    off_mean_s: float = 1.5
    rate_kbps: float = 32.0
    deadline_ms: float = 80.0


@dataclass(frozen=True)
class VideoParams:
    state_mean_ms: float = 160.0
    rate_min_kbps: float = 64.0
    rate_max_kbps: float = 256.0
    rate_mean_kbps: float = 180.0
    deadline_s: float = 1.0


@dataclass
class TrafficSession:
    """Generator state plus the deadline-aware packet queue for one user."""

    service: ServiceClass
    voip: VoipParams | None = None
    video: VideoParams | None = None
    phase_on: bool = True  # VoIP only
    rate_kbps: float = 0.0  # current generation rate (video state rate)
    residual_s: float = 0.0  # time left in the current phase/state
    queue: deque = field(default_factory=deque)  # entries [bits, arrival, deadline]


@dataclass
class ServiceStats:
    offered_bits: float = 0.0
    served_bits: float = 0.0
    dropped_bits: float = 0.0
    mean_queue_delay: float = 0.0


# ---------------------------------------------------------------------------
# truncated exponential rate distribution
# ---------------------------------------------------------------------------

_LAMBDA_CACHE: dict[tuple[float, float, float], float] = {}


def truncated_exp_mean(lam: float, lo: float, hi: float) -> float:
    """Mean of the density proportional to e^{-lam*x} restricted to [lo, hi]."""
    span = hi - lo
    z = lam * span
    if abs(z) < 1e-8:
        # second-order expansion around the uniform limit
        return lo + span / 2.0 - lam * span * span / 12.0
    return lo + 1.0 / lam - span / math.expm1(z)


def truncated_exp_lambda(
    lo: float = 64.0, hi: float = 256.0, mean: float = 180.0
) -> float:
    """Solve for the rate parameter whose truncated mean matches ``mean``.

    The mean is strictly decreasing in lambda, from hi (lambda -> -inf) to
    lo (lambda -> +inf), passing through the uniform midpoint at 0; a target
    above the midpoint therefore lands at a negative lambda.  Solved once by
    bisection on [-1, 1] and cached.
    """
    key = (lo, hi, mean)
    if key in _LAMBDA_CACHE:
        return _LAMBDA_CACHE[key]
    if not (lo < mean < hi):
        raise SolverFailure(f"target mean {mean} outside ({lo}, {hi})")
    a, b = -1.0, 1.0
    fa = truncated_exp_mean(a, lo, hi) - mean
    fb = truncated_exp_mean(b, lo, hi) - mean
    if not (fa > 0 > fb):
        raise SolverFailure(
            f"mean {mean} not bracketed by lambda in [-1, 1] for [{lo}, {hi}]"
        )
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = truncated_exp_mean(mid, lo, hi) - mean
        if fm > 0:
            a = mid
        else:
            b = mid
        if b - a <= 1e-16:
            break
    lam = 0.5 * (a + b)
    _LAMBDA_CACHE[key] = lam
    return lam


def sample_truncated_exp_rate(
    rng: np.random.Generator,
    lo: float = 64.0,
    hi: float = 256.0,
    mean: float = 180.0,
) -> float:
    """Draw one rate (kbps) from the truncated exponential distribution."""
    lam = truncated_exp_lambda(lo, hi, mean)
    u = rng.uniform()
    span = hi - lo
    if abs(lam * span) < 1e-10:
        return lo + u * span
    q = -math.expm1(-lam * span)  # 1 - e^{-lam*span}, sign-stable
    return lo - math.log1p(-u * q) / lam


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------


def make_session(
    service: ServiceClass,
    rng: np.random.Generator,
    voip: VoipParams | None = None,
    video: VideoParams | None = None,
) -> TrafficSession:
    """Create a session with its generator state drawn from rng."""
    if service is ServiceClass.VOIP:
        p = voip or VoipParams()
        on = rng.uniform() < p.on_mean_s / (p.on_mean_s + p.off_mean_s)
        residual = rng.exponential(p.on_mean_s if on else p.off_mean_s)
        return TrafficSession(
            service, voip=p, phase_on=on, rate_kbps=p.rate_kbps, residual_s=residual
        )
    if service is ServiceClass.VIDEO:
        p = video or VideoParams()
        rate = sample_truncated_exp_rate(
            rng, p.rate_min_kbps, p.rate_max_kbps, p.rate_mean_kbps
        )
        residual = rng.exponential(p.state_mean_ms / 1000.0)
        return TrafficSession(service, video=p, rate_kbps=rate, residual_s=residual)
    return TrafficSession(ServiceClass.BEST_EFFORT)


def step_traffic(
    session: TrafficSession, dt: float, now: float, rng: np.random.Generator
) -> float:
    """Advance the generator by dt, queueing this step's arrivals.

    Returns the arrived bits.  Phase transitions inside the step are
    resolved exactly; the queued entry carries arrival time ``now`` and the
    class deadline.  Best effort generates nothing (full buffer).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if session.service is ServiceClass.BEST_EFFORT:
        return 0.0

    bits = 0.0
    remaining = dt
    if session.service is ServiceClass.VOIP:
        p = session.voip
        while remaining >= session.residual_s:
            if session.phase_on:
                bits += p.rate_kbps * 1000.0 * session.residual_s
            remaining -= session.residual_s
            session.phase_on = not session.phase_on
            session.residual_s = rng.exponential(
                p.on_mean_s if session.phase_on else p.off_mean_s
            )
        if session.phase_on:
            bits += p.rate_kbps * 1000.0 * remaining
        session.residual_s -= remaining
        deadline = now + p.deadline_ms / 1000.0
    else:
        p = session.video
        while remaining >= session.residual_s:
            bits += session.rate_kbps * 1000.0 * session.residual_s
            remaining -= session.residual_s
            session.rate_kbps = sample_truncated_exp_rate(
                rng, p.rate_min_kbps, p.rate_max_kbps, p.rate_mean_kbps
            )
            session.residual_s = rng.exponential(p.state_mean_ms / 1000.0)
        bits += session.rate_kbps * 1000.0 * remaining
        session.residual_s -= remaining
        deadline = now + p.deadline_s

    if bits > 0.0:
        session.queue.append([bits, now, deadline])
    return bits


def serve_queue(
    session: TrafficSession, capacity_bits: float, now: float
) -> ServiceStats:
    """FIFO service up to capacity after dropping expired packets.

    Packets whose deadline lies before ``now`` are dropped in full before any
    service.  Best effort reports the whole capacity as served (and, having
    an infinite backlog, as offered).  The returned delta's offered_bits is
    zero for queued classes; arrivals are what step_traffic returned.
    """
    if capacity_bits < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity_bits}")
    if session.service is ServiceClass.BEST_EFFORT:
        return ServiceStats(
            offered_bits=capacity_bits, served_bits=capacity_bits
        )
    stats = ServiceStats()
    q = session.queue
    while q and q[0][2] < now:
        stats.dropped_bits += q[0][0]
        q.popleft()
    remaining = capacity_bits
    delay_weighted = 0.0
    while q and remaining > 0.0:
        entry = q[0]
        take = min(entry[0], remaining)
        entry[0] -= take
        remaining -= take
        stats.served_bits += take
        delay_weighted += take * (now - entry[1])
        if entry[0] <= 0.0:
            q.popleft()
    if stats.served_bits > 0.0:
        stats.mean_queue_delay = delay_weighted / stats.served_bits
    return stats
