"""Joint bandwidth, power and compression-rate allocation.

The mixed-integer problem is split in two and alternated:

* compression step: with the SNR from the previous round, each user walks
  its in-band similarity candidates (best first) until one meets the delay
  bound, falling back to the table row at its SNR threshold;
* bandwidth/power step: with the similarities fixed, a geometric program
  over (beta, P) is solved and the SNRs are recomputed.

The loop stops after ``max_iterations`` rounds or when the objective's
relative change drops below ``convergence_threshold``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import gp as gpcore
from .scenario import (ScenarioConfig, UndeliverableError, UserProfile, linear_to_db,
                       transmission_delay, transmission_rate)
from .similarity import SimilarityTable, candidate_entries

SERVED = "served"
DROPPED = "dropped_infeasible"

AUDIT_RTOL = 1e-9


class AllocationError(RuntimeError):
    """Scenario-level failure: the bandwidth/power program could not be solved."""

    def __init__(self, message: str, status: str = gpcore.INFEASIBLE):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class AllocatorOptions:
    max_iterations: int = 20
    convergence_threshold: float = 1e-4
    penalty_exponent: float | None = None  # None: use the scenario's value
    gp_tol: float = 1e-8
    gp_max_iter: int = 200

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be positive")
        if self.penalty_exponent is not None and not self.penalty_exponent >= 1:
            raise ValueError("penalty_exponent must be >= 1")


@dataclass(frozen=True)
class UserAllocation:
    user_id: int
    bandwidth_hz: float
    power_w: float
    compression: float
    similarity: float
    snr_linear: float
    delay_s: float
    satisfied: bool
    admission: str = SERVED
    fallback_used: bool = False
    c7_met: bool = True
    channel: int | None = None

    @property
    def served(self) -> bool:
        return self.admission == SERVED


def dropped_allocation(user_id: int, channel: int | None = None) -> UserAllocation:
    return UserAllocation(user_id, 0.0, 0.0, 0.0, 0.0, 0.0, math.inf, False, DROPPED,
                          channel=channel)


@dataclass(frozen=True)
class AllocationResult:
    per_user: tuple[UserAllocation, ...]
    objective_trace: tuple[float, ...]
    iterations_used: int
    converged: bool
    method: str = "proposed"

    def __post_init__(self):
        object.__setattr__(self, "per_user", tuple(self.per_user))
        object.__setattr__(self, "objective_trace", tuple(self.objective_trace))
        if len(self.objective_trace) != self.iterations_used:
            raise ValueError("objective_trace length must equal iterations_used")

    def by_id(self) -> dict[int, UserAllocation]:
        return {a.user_id: a for a in self.per_user}

    @property
    def served_bandwidth_hz(self) -> float:
        return float(sum(a.bandwidth_hz for a in self.per_user if a.served))

    def rounded(self, decimals: int = 9) -> "AllocationResult":
        """Copy with every float rounded, for bitwise comparisons."""
        def r(v):
            return round(v, decimals) if isinstance(v, float) and math.isfinite(v) else v

        users = [UserAllocation(**{k: r(v) for k, v in a.__dict__.items()}) for a in self.per_user]
        return replace(self, per_user=tuple(users),
                       objective_trace=tuple(r(v) for v in self.objective_trace))


# --------------------------------------------------------------------------
# objective and satisfaction
# --------------------------------------------------------------------------

def objective_value(users, snrs, xis, a: float, served=None) -> float:
    """Sum of ``(SNR_th / SNR)^a * (xi_min / xi)^a`` over served users.

    Users not served contribute a neutral 1.0.
    """
    total = 0.0
    for k, u in enumerate(users):
        if served is not None and not served[k]:
            total += 1.0
            continue
        s, x = snrs[k], xis[k]
        if not (s > 0 and x > 0):
            raise ValueError(f"user {u.id}: SNR and similarity must be positive when served")
        total += (u.snr_threshold_linear / s) ** a * (u.xi_min / x) ** a
    return total


def is_satisfied(user: UserProfile, alloc: UserAllocation) -> bool:
    return (alloc.admission == SERVED
            and alloc.snr_linear >= user.snr_threshold_linear
            and alloc.similarity >= user.xi_min)


# --------------------------------------------------------------------------
# compression step
# --------------------------------------------------------------------------

class Selection(NamedTuple):
    xi: float
    compression: float
    fallback_used: bool
    c7_met: bool = True


def select_compression(user: UserProfile, snr_it_linear: float, bandwidth_hz: float,
                       table: SimilarityTable) -> Selection:
    if not bandwidth_hz > 0:
        raise ValueError("bandwidth must be positive")
    rate = transmission_rate(bandwidth_hz, snr_it_linear)
    for xi, o in candidate_entries(table, linear_to_db(snr_it_linear), user.xi_min, user.xi_max):
        try:
            delay = transmission_delay(user.raw_data_bits, o, rate)
        except UndeliverableError:
            continue
        if delay <= user.delay_bound_s:
            return Selection(xi, o, False)

    # no candidate meets the delay bound: use the threshold-SNR row, delay unchecked
    th_db = user.snr_threshold_db
    fallback = candidate_entries(table, th_db, user.xi_min, user.xi_max)
    if fallback:
        return Selection(*fallback[0], True, True)
    row = table.row(th_db)
    comp = table.compression_grid
    above = [j for j in range(row.size) if row[j] >= user.xi_min]
    if above:
        # nearest similarity above the band
        j = min(above, key=lambda j: (row[j], -comp[j]))
    else:
        j = max(range(row.size), key=lambda j: (row[j], comp[j]))
    return Selection(float(row[j]), float(comp[j]), True, False)


# --------------------------------------------------------------------------
# admission
# --------------------------------------------------------------------------

def admit_users(config: ScenarioConfig, users, gains):
    """Split users into served and dropped positions.

    A user that cannot reach its SNR threshold at minimum bandwidth and full
    power is dropped first.  Then, while the remaining minimum bandwidths
    exceed the budget, the user with the smallest ``h / SNR_th`` goes
    (ties drop the higher id).
    """
    g = np.asarray(getattr(gains, "gains_linear", gains), dtype=float)
    served, dropped = [], []
    for k, u in enumerate(users):
        need = u.snr_threshold_linear * config.noise_psd_w_per_hz * u.min_bandwidth_hz
        if need >= config.max_power_w * g[k] * (1 - 1e-9):
            dropped.append(k)
        else:
            served.append(k)
    budget = config.total_bandwidth_hz * (1 - 1e-9)
    while served and sum(users[k].min_bandwidth_hz for k in served) > budget:
        worst = min(served, key=lambda k: (g[k] / users[k].snr_threshold_linear, -users[k].id))
        served.remove(worst)
        dropped.append(worst)
    return served, sorted(dropped)


# --------------------------------------------------------------------------
# main loop
# --------------------------------------------------------------------------

def _solve_bandwidth_power(config, users, gains, xi, options: AllocatorOptions):
    program = gpcore.build_f1_prime(config, users, gains, xi)
    x0 = gpcore.f1_initial_point(config, users, gains)
    sol = gpcore.solve_gp(program, tol=options.gp_tol, max_iter=options.gp_max_iter, x0=x0)
    if not sol.ok:
        raise AllocationError(f"bandwidth/power program ended with status {sol.status}", sol.status)
    n = len(users)
    return sol.values[:n], sol.values[n:]


def allocate(config: ScenarioConfig, users, gains, table: SimilarityTable,
             options: AllocatorOptions = AllocatorOptions(), method: str = "proposed") -> AllocationResult:
    g_all = np.asarray(getattr(gains, "gains_linear", gains), dtype=float)
    a = options.penalty_exponent or config.penalty_exponent
    if a != config.penalty_exponent:
        config = replace(config, penalty_exponent=a)
    served, dropped = admit_users(config, users, g_all)
    su = [users[k] for k in served]
    h = g_all[served]
    n0 = config.noise_psd_w_per_hz

    snr_it = np.array([u.snr_threshold_linear for u in su])
    beta = np.array([u.min_bandwidth_hz for u in su])
    power = np.full(len(su), config.max_power_w)
    picks: list[Selection] = []
    trace: list[float] = []
    converged = False
    for _ in range(options.max_iterations):
        picks = [select_compression(u, snr_it[k], beta[k], table) for k, u in enumerate(su)]
        if su:
            xi = np.array([p.xi for p in picks])
            beta, power = _solve_bandwidth_power(config, su, h, xi, options)
            snr_it = power * h / (beta * n0)
        f = objective_value(su, snr_it, [p.xi for p in picks], a) + len(dropped)
        trace.append(f)
        if not su:
            converged = True
            break
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) / max(1.0, abs(f)) < options.convergence_threshold:
            converged = True
            break

    per_user: list[UserAllocation | None] = [None] * len(users)
    for k in dropped:
        per_user[k] = dropped_allocation(users[k].id)
    for k, (pos, u) in enumerate(zip(served, su)):
        p = picks[k]
        rate = transmission_rate(beta[k], snr_it[k])
        alloc = UserAllocation(
            user_id=u.id, bandwidth_hz=float(beta[k]), power_w=float(power[k]),
            compression=p.compression, similarity=p.xi, snr_linear=float(snr_it[k]),
            delay_s=transmission_delay(u.raw_data_bits, p.compression, rate),
            satisfied=False, fallback_used=p.fallback_used, c7_met=p.c7_met,
        )
        per_user[pos] = replace(alloc, satisfied=is_satisfied(u, alloc))
    return AllocationResult(tuple(per_user), tuple(trace), len(trace), converged, method)


# --------------------------------------------------------------------------
# serialization and audit
# --------------------------------------------------------------------------

CSV_FIELDS = ("user_id", "admission", "bandwidth_hz", "power_w", "compression", "similarity",
              "snr_linear", "delay_s", "satisfied", "fallback_used", "c7_met", "channel")


def result_to_csv(result: AllocationResult, meta: dict | None = None) -> str:
    """Per-user CSV with ``# key=value`` metadata lines; floats keep full precision."""
    buf = io.StringIO()
    header = {"method": result.method, "iterations_used": result.iterations_used,
              "converged": int(result.converged),
              "objective_trace": " ".join(repr(float(v)) for v in result.objective_trace)}
    header.update(meta or {})
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for a in result.per_user:
        w.writerow([a.user_id, a.admission, *(repr(float(v)) for v in (
                        a.bandwidth_hz, a.power_w, a.compression, a.similarity, a.snr_linear,
                        a.delay_s)), int(a.satisfied),
                    int(a.fallback_used), int(a.c7_met), "" if a.channel is None else a.channel])
    return buf.getvalue()


def result_from_csv(text: str) -> tuple[AllocationResult, dict]:
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(body))
    if not rows or set(rows[0]) != set(CSV_FIELDS):
        raise ValueError("not an allocation result CSV")
    per_user = []
    for r in rows:
        per_user.append(UserAllocation(
            user_id=int(r["user_id"]), admission=r["admission"],
            bandwidth_hz=float(r["bandwidth_hz"]), power_w=float(r["power_w"]),
            compression=float(r["compression"]), similarity=float(r["similarity"]),
            snr_linear=float(r["snr_linear"]), delay_s=float(r["delay_s"]),
            satisfied=r["satisfied"] == "1", fallback_used=r["fallback_used"] == "1",
            c7_met=r["c7_met"] == "1", channel=int(r["channel"]) if r["channel"] else None,
        ))
    trace = tuple(float(v) for v in meta.get("objective_trace", "").split())
    result = AllocationResult(tuple(per_user), trace, int(meta.get("iterations_used", len(trace))),
                              meta.get("converged") == "1", meta.get("method", "unknown"))
    return result, meta


def format_report(result: AllocationResult, users) -> str:
    by_id = {u.id: u for u in users}
    lines = [f"method: {result.method}",
             f"iterations: {result.iterations_used} (converged: {'yes' if result.converged else 'no'})",
             f"satisfied: {sum(a.satisfied for a in result.per_user)}/{len(result.per_user)}",
             f"served bandwidth: {result.served_bandwidth_hz / 1e6:.4f} MHz",
             "",
             f"{'id':>3} {'admission':<18} {'beta MHz':>9} {'P W':>7} {'O':>5} {'xi':>6} "
             f"{'band':>11} {'SNR dB':>7} {'th dB':>6} {'delay ms':>10} sat fb"]
    for a in result.per_user:
        u = by_id[a.user_id]
        snr_db = f"{linear_to_db(a.snr_linear):7.2f}" if a.snr_linear > 0 else f"{'-':>7}"
        delay = f"{a.delay_s * 1e3:10.4f}" if math.isfinite(a.delay_s) else f"{'-':>10}"
        lines.append(
            f"{a.user_id:>3} {a.admission:<18} {a.bandwidth_hz / 1e6:9.4f} {a.power_w:7.4f} "
            f"{a.compression:5.2f} {a.similarity:6.3f} {u.xi_min:5.3f}-{u.xi_max:5.3f} {snr_db} "
            f"{u.snr_threshold_db:6.2f} {delay} {'yes' if a.satisfied else 'no ':>3} "
            f"{'y' if a.fallback_used else 'n':>2}")
    lines.append("")
    lines.append("objective trace: " + ", ".join(f"{v:.6g}" for v in result.objective_trace))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Violation:
    constraint: str
    user_id: int | None
    detail: str
    fatal: bool = True


def audit_result(config: ScenarioConfig, users, gains, result: AllocationResult) -> list[Violation]:
    """Re-check the allocation constraints from the stored per-user values.

    Fatal: total bandwidth, minimum bandwidth, power cap (served users), and
    for satisfied users the SNR threshold and minimum similarity.  Delay,
    compression range and the similarity ceiling are reported as non-fatal.
    """
    g = np.asarray(getattr(gains, "gains_linear", gains), dtype=float)
    by_id = {u.id: (k, u) for k, u in enumerate(users)}
    out = []
    ids = [a.user_id for a in result.per_user]
    if sorted(ids) != sorted(by_id):
        raise ValueError("result and scenario disagree on user ids")
    total = result.served_bandwidth_hz
    if total > config.total_bandwidth_hz * (1 + AUDIT_RTOL):
        out.append(Violation("C1", None, f"served bandwidth {total:.6g} Hz exceeds "
                                         f"{config.total_bandwidth_hz:.6g} Hz"))
    for a in result.per_user:
        k, u = by_id[a.user_id]
        if not a.served:
            if a.satisfied:
                out.append(Violation("admission", a.user_id, "dropped user flagged satisfied"))
            continue
        if a.bandwidth_hz < u.min_bandwidth_hz * (1 - AUDIT_RTOL):
            out.append(Violation("C2", a.user_id, f"bandwidth {a.bandwidth_hz:.6g} below minimum "
                                                  f"{u.min_bandwidth_hz:.6g}"))
        if not 0 < a.power_w <= config.max_power_w * (1 + AUDIT_RTOL):
            out.append(Violation("C3", a.user_id, f"power {a.power_w:.6g} outside (0, {config.max_power_w}]"))
        snr_now = (a.power_w * g[k] / (a.bandwidth_hz * config.noise_psd_w_per_hz)
                   if a.bandwidth_hz > 0 else 0.0)
        if a.satisfied:
            if snr_now < u.snr_threshold_linear * (1 - AUDIT_RTOL):
                out.append(Violation("C4", a.user_id, f"SNR {snr_now:.6g} below threshold "
                                                      f"{u.snr_threshold_linear:.6g}"))
            if a.similarity < u.xi_min:
                out.append(Violation("C7", a.user_id, f"similarity {a.similarity:.6g} below "
                                                      f"minimum {u.xi_min:.6g}"))
        if a.similarity > u.xi_max:
            out.append(Violation("C7-upper", a.user_id, "similarity above band", fatal=False))
        if not 0 <= a.compression <= 1:
            out.append(Violation("C5", a.user_id, "compression outside [0, 1]", fatal=False))
        if a.delay_s > u.delay_bound_s:
            out.append(Violation("C6", a.user_id, f"delay {a.delay_s:.4g} s exceeds "
                                                  f"{u.delay_bound_s:.4g} s", fatal=False))
    return out
