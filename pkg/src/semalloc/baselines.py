"""Comparator allocators: strict similarity, classical transmission, single-channel QoE."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .allocator import (AllocationError, AllocationResult, AllocatorOptions, UserAllocation,
                        _solve_bandwidth_power, admit_users, allocate, dropped_allocation,
                        is_satisfied, objective_value)
from .scenario import (DRAW_STRICT_TARGET, ScenarioConfig, linear_to_db, transmission_delay,
                       transmission_rate, user_stream)
from .similarity import BelowTableRange, SimilarityTable

STRICT_POLICIES = ("upper", "lower", "independent")


def strict_targets(users, config: ScenarioConfig, policy: str = "upper") -> list[float]:
    """Per-user similarity target for the single-value (no range) methods.

    ``upper`` keeps the top of each user's band, ``lower`` the bottom, and
    ``independent`` draws a fresh uniform value from the user's own stream.
    """
    if policy == "upper":
        return [u.xi_max for u in users]
    if policy == "lower":
        return [u.xi_min for u in users]
    if policy == "independent":
        lo, hi = config.xi_range
        return [float(user_stream(config.rng_seed, u.id, DRAW_STRICT_TARGET).uniform(lo, hi))
                for u in users]
    raise ValueError(f"unknown strict-target policy {policy!r}")


def collapse_bands(users, targets):
    return [replace(u, xi_min=t, xi_max=t) for u, t in zip(users, targets)]


def allocate_strict(config: ScenarioConfig, users, gains, table: SimilarityTable,
                    options: AllocatorOptions = AllocatorOptions(), targets=None,
                    policy: str = "upper") -> AllocationResult:
    """The range allocator with every band collapsed to a single target."""
    if targets is None:
        targets = strict_targets(users, config, policy)
    return allocate(config, collapse_bands(users, targets), gains, table, options, method="strict")


def allocate_classical(config: ScenarioConfig, users, gains,
                       options: AllocatorOptions = AllocatorOptions()) -> AllocationResult:
    """Raw-data transmission: no compression, similarity is all-or-nothing.

    Bandwidth and power come from the same GP with similarity fixed at 1.
    A user is satisfied only if its SNR threshold holds and the full payload
    arrives within its delay bound.
    """
    g = np.asarray(getattr(gains, "gains_linear", gains), dtype=float)
    a = options.penalty_exponent or config.penalty_exponent
    if a != config.penalty_exponent:
        config = replace(config, penalty_exponent=a)
    served, dropped = admit_users(config, users, g)
    su = [users[k] for k in served]
    h = g[served]
    per_user: list[UserAllocation | None] = [None] * len(users)
    for k in dropped:
        per_user[k] = dropped_allocation(users[k].id)
    snr_now = np.zeros(0)
    if su:
        beta, power = _solve_bandwidth_power(config, su, h, np.ones(len(su)), options)
        snr_now = power * h / (beta * config.noise_psd_w_per_hz)
        for k, (pos, u) in enumerate(zip(served, su)):
            reliable = snr_now[k] >= u.snr_threshold_linear
            xi = 1.0 if reliable else 0.0
            delay = transmission_delay(u.raw_data_bits, 0.0, transmission_rate(beta[k], snr_now[k]))
            per_user[pos] = UserAllocation(
                user_id=u.id, bandwidth_hz=float(beta[k]), power_w=float(power[k]), compression=0.0,
                similarity=xi, snr_linear=float(snr_now[k]), delay_s=delay,
                satisfied=bool(reliable and delay <= u.delay_bound_s),
                c7_met=u.xi_min <= xi <= u.xi_max,
            )
    f = objective_value(su, snr_now, np.ones(len(su)), a) + len(dropped)
    return AllocationResult(tuple(per_user), (f,), 1, True, "classical")


@dataclass(frozen=True)
class QoeOptions:
    channel_width_hz: float = 1e6
    similarity_weight: float = 0.5
    rate_weight: float = 0.5
    strict_xi_target: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.channel_width_hz > 0:
            raise ValueError("channel_width_hz must be positive")
        for w in (self.similarity_weight, self.rate_weight):
            if not 0 <= w <= 1:
                raise ValueError("weights must lie in [0, 1]")
        if abs(self.similarity_weight + self.rate_weight - 1) > 1e-9:
            raise ValueError("weights must sum to 1")


def _qoe_pick(row, comp, target, rate, opts: QoeOptions):
    """Index maximizing the weighted similarity / semantic-rate score, or None."""
    ok = [j for j in range(row.size) if row[j] >= target and comp[j] < 1]
    if not ok:
        return None
    # similarity-weighted goodput in raw-data equivalent bits per second
    sem_rate = {j: row[j] * rate / (1.0 - comp[j]) for j in ok}
    best_rate = max(sem_rate.values())
    score = {j: opts.similarity_weight * row[j] + opts.rate_weight * sem_rate[j] / best_rate
             for j in ok}
    return max(ok, key=lambda j: (score[j], comp[j]))


def allocate_qoe(config: ScenarioConfig, users, gains, table: SimilarityTable,
                 qoe_options: QoeOptions = QoeOptions(), policy: str = "upper") -> AllocationResult:
    """Simplified single-channel QoE allocator.

    The budget is cut into equal channels handed out by descending gain, one
    per user, at full power.  A channel whose user cannot reach its strict
    similarity target (or whose minimum bandwidth exceeds the channel) stays
    idle and is not given to anyone else.
    """
    width = qoe_options.channel_width_hz
    if width > config.total_bandwidth_hz:
        raise ValueError("channel width exceeds the bandwidth budget")
    g = np.asarray(getattr(gains, "gains_linear", gains), dtype=float)
    targets = qoe_options.strict_xi_target
    if targets is None:
        targets = strict_targets(users, config, policy)
    n_channels = int(math.floor(config.total_bandwidth_hz / width * (1 + 1e-12)))
    order = sorted(range(len(users)), key=lambda k: (-g[k], users[k].id))
    per_user: list[UserAllocation | None] = [None] * len(users)
    comp = table.compression_grid
    p = config.max_power_w
    for rank, k in enumerate(order):
        u = users[k]
        if rank >= n_channels:
            per_user[k] = dropped_allocation(u.id)
            continue
        if u.min_bandwidth_hz > width:
            per_user[k] = dropped_allocation(u.id, channel=rank)
            continue
        snr_now = p * g[k] / (width * config.noise_psd_w_per_hz)
        rate = transmission_rate(width, snr_now)
        try:
            row = table.row(linear_to_db(snr_now))
        except BelowTableRange:
            row = None
        j = None if row is None else _qoe_pick(row, comp, targets[k], rate, qoe_options)
        if j is None:
            per_user[k] = dropped_allocation(u.id, channel=rank)
            continue
        alloc = UserAllocation(
            user_id=u.id, bandwidth_hz=width, power_w=p, compression=float(comp[j]),
            similarity=float(row[j]), snr_linear=float(snr_now),
            delay_s=transmission_delay(u.raw_data_bits, float(comp[j]), rate),
            satisfied=False, c7_met=u.xi_min <= row[j] <= u.xi_max, channel=rank,
        )
        per_user[k] = replace(alloc, satisfied=is_satisfied(u, alloc))
    served = [a.served for a in per_user]
    f = objective_value(users, [a.snr_linear for a in per_user], [a.similarity for a in per_user],
                        config.penalty_exponent, served=served)
    return AllocationResult(tuple(per_user), (f,), 1, True, "qoe")


METHODS = ("proposed", "strict", "classical", "qoe")


def method_users(users, method: str, config: ScenarioConfig, policy: str = "upper"):
    """Users as a given method sees them (strict collapses the similarity band)."""
    if method == "strict":
        return collapse_bands(users, strict_targets(users, config, policy))
    return list(users)


def run_method(method: str, config: ScenarioConfig, users, gains, table: SimilarityTable,
               options: AllocatorOptions = AllocatorOptions(), qoe_options: QoeOptions = QoeOptions(),
               policy: str = "upper") -> AllocationResult:
    if method == "proposed":
        return allocate(config, users, gains, table, options)
    if method == "strict":
        return allocate_strict(config, users, gains, table, options, policy=policy)
    if method == "classical":
        return allocate_classical(config, users, gains, options)
    if method == "qoe":
        return allocate_qoe(config, users, gains, table, qoe_options, policy=policy)
    raise ValueError(f"unknown method {method!r}")


__all__ = ["AllocationError", "METHODS", "QoeOptions", "STRICT_POLICIES", "allocate_classical",
           "allocate_qoe", "allocate_strict", "collapse_bands", "method_users", "run_method",
           "strict_targets"]
