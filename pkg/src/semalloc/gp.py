"""Geometric programs in standard form and a log-barrier interior-point solver.

A GP minimizes a posynomial subject to ``posynomial <= 1`` constraints over
strictly positive variables.  With ``y = log(x)`` every posynomial becomes a
log-sum-exp of affine functions, which is convex, so the problem is solved
in log space:

    minimize    log f0(exp(y))
    subject to  log fj(exp(y)) <= 0

The solver is a textbook barrier method (damped Newton centering, geometric
increase of the barrier weight, Phase-I feasibility search), followed by an
optional coordinate polish that pushes variables with negligible influence
on the objective onto the constraint they lean against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"

FEASIBILITY_TOL = 1e-8


class NumericalFailure(ArithmeticError):
    pass


@dataclass(frozen=True)
class Monomial:
    coefficient: float
    exponents: np.ndarray

    def __post_init__(self):
        if not (self.coefficient > 0 and math.isfinite(self.coefficient)):
            raise ValueError(f"monomial coefficient must be positive, got {self.coefficient}")
        object.__setattr__(self, "exponents", np.asarray(self.exponents, dtype=float))


class Posynomial:
    """Sum of monomials, stored as log-coefficients and an exponent matrix.

    Coefficients are kept in log form so that instances with very small or
    very large constants (``N0**a`` for large ``a``) do not underflow.
    """

    __slots__ = ("log_coefficients", "exponents")

    def __init__(self, log_coefficients, exponents):
        log_c = np.atleast_1d(np.asarray(log_coefficients, dtype=float))
        exps = np.atleast_2d(np.asarray(exponents, dtype=float))
        if log_c.size == 0:
            raise ValueError("posynomial needs at least one term")
        if exps.shape[0] != log_c.size:
            raise ValueError("one exponent row per term required")
        if not np.all(np.isfinite(log_c)) or not np.all(np.isfinite(exps)):
            raise ValueError("posynomial data must be finite")
        log_c.setflags(write=False)
        exps.setflags(write=False)
        self.log_coefficients = log_c
        self.exponents = exps

    @classmethod
    def from_terms(cls, terms: Sequence[Monomial]) -> "Posynomial":
        terms = list(terms)
        if not terms:
            raise ValueError("posynomial needs at least one term")
        widths = {t.exponents.size for t in terms}
        if len(widths) != 1:
            raise ValueError("all terms must share the variable count")
        return cls([math.log(t.coefficient) for t in terms], [t.exponents for t in terms])

    @classmethod
    def monomial(cls, coefficient: float, exponents) -> "Posynomial":
        return cls.from_terms([Monomial(coefficient, exponents)])

    @property
    def n_vars(self) -> int:
        return self.exponents.shape[1]

    @property
    def terms(self) -> list[Monomial]:
        return [Monomial(math.exp(lc), row.copy())
                for lc, row in zip(self.log_coefficients, self.exponents)]

    def __len__(self):
        return self.log_coefficients.size

    def __call__(self, values) -> float:
        """Direct (exp-side) evaluation at positive ``values``."""
        x = np.asarray(values, dtype=float)
        return float(np.sum(np.exp(self.log_coefficients) * np.prod(x ** self.exponents, axis=1)))

    def scaled(self, factor: float) -> "Posynomial":
        return Posynomial(self.log_coefficients + math.log(factor), self.exponents)

    def __add__(self, other: "Posynomial") -> "Posynomial":
        return Posynomial(np.concatenate([self.log_coefficients, other.log_coefficients]),
                          np.vstack([self.exponents, other.exponents]))


def eval_log(posy: Posynomial, log_values):
    """Value, gradient and Hessian of ``log posy(exp(y))`` at ``y``.

    Uses the max-shift form of log-sum-exp.  Raises :class:`NumericalFailure`
    if the result is still not finite.
    """
    y = np.asarray(log_values, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NumericalFailure("log_values must be finite")
    b = posy.log_coefficients + posy.exponents @ y
    shift = b.max()
    w = np.exp(b - shift)
    total = w.sum()
    value = shift + math.log(total)
    w /= total
    grad = w @ posy.exponents
    centered = posy.exponents - grad
    hess = (centered.T * w) @ centered
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise NumericalFailure("posynomial evaluation overflowed")
    return value, grad, hess


@dataclass(frozen=True)
class GeometricProgram:
    variable_names: tuple[str, ...]
    objective: Posynomial
    constraints: tuple[Posynomial, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "variable_names", tuple(self.variable_names))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        n = len(self.variable_names)
        if n == 0:
            raise ValueError("program has no variables")
        for p in (self.objective, *self.constraints):
            if p.n_vars != n:
                raise ValueError(f"posynomial has {p.n_vars} variables, program has {n}")

    @property
    def n_vars(self) -> int:
        return len(self.variable_names)

    def scaled_objective(self, factor: float) -> "GeometricProgram":
        return GeometricProgram(self.variable_names, self.objective.scaled(factor), self.constraints)

    def dump(self) -> str:
        """Plain-text listing of the program, one monomial per line."""
        lines = ["variables: " + " ".join(self.variable_names)]

        def fmt(posy):
            for term in posy.terms:
                powers = " ".join(f"{name}^{e:g}" for name, e in zip(self.variable_names, term.exponents)
                                  if e != 0)
                yield f"  {term.coefficient:.12g} {powers}".rstrip()

        lines.append("minimize:")
        lines.extend(fmt(self.objective))
        for j, con in enumerate(self.constraints):
            lines.append(f"constraint {j} (<= 1):")
            lines.extend(fmt(con))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class GpSolution:
    """Solver output.

    ``kkt_residual`` is the duality-gap certificate ``m / t`` of the last
    centering step, i.e. an upper bound on ``log f0(x) - log p*``.
    """

    values: np.ndarray
    objective_value: float
    status: str
    kkt_residual: float
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class FeasibilityReport:
    constraint_values: np.ndarray
    max_violation: float
    feasible: bool


def check_feasibility(gp: GeometricProgram, values, tol: float = FEASIBILITY_TOL) -> FeasibilityReport:
    x = np.asarray(values, dtype=float)
    if np.any(x <= 0):
        raise ValueError("GP variables must be positive")
    vals = np.array([c(x) for c in gp.constraints], dtype=float)
    worst = float(max(0.0, (vals - 1.0).max())) if vals.size else 0.0
    return FeasibilityReport(vals, worst, worst <= tol)


# --------------------------------------------------------------------------
# solver internals
# --------------------------------------------------------------------------

class _ConstraintStack:
    """All constraint terms stacked into one matrix for vectorized evaluation."""

    def __init__(self, constraints: Sequence[Posynomial], n: int):
        self.m = len(constraints)
        self.n = n
        if self.m:
            self.log_c = np.concatenate([c.log_coefficients for c in constraints])
            self.A = np.vstack([c.exponents for c in constraints])
            sizes = np.array([len(c) for c in constraints])
        else:
            self.log_c = np.zeros(0)
            self.A = np.zeros((0, n))
            sizes = np.zeros(0, dtype=int)
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
        self.owner = np.repeat(np.arange(self.m), sizes)
        self.single = bool(self.m) and bool(np.all(sizes == 1))

    def values(self, y):
        if not self.m:
            return np.zeros(0)
        b = self.log_c + self.A @ y
        if self.single:
            return b
        shift = np.maximum.reduceat(b, self.starts)
        return shift + np.log(np.add.reduceat(np.exp(b - shift[self.owner]), self.starts))

    def evaluate(self, y):
        """Returns (f, G, weighted_hessian) where weighted_hessian(c) = sum_j c_j * H_j."""
        b = self.log_c + self.A @ y
        if self.single:
            f = b
            G = self.A
            return f, G, lambda c: np.zeros((self.n, self.n))
        shift = np.maximum.reduceat(b, self.starts)
        e = np.exp(b - shift[self.owner])
        tot = np.add.reduceat(e, self.starts)
        f = shift + np.log(tot)
        w = e / tot[self.owner]
        G = np.add.reduceat(self.A * w[:, None], self.starts, axis=0)

        def weighted_hessian(c):
            return (self.A.T * (w * c[self.owner])) @ self.A - (G.T * c) @ G

        return f, G, weighted_hessian


def _newton_direction(hess, grad):
    try:
        dz = np.linalg.solve(hess, -grad)
        if np.all(np.isfinite(dz)):
            return dz
    except np.linalg.LinAlgError:
        pass
    dz = np.linalg.lstsq(hess, -grad, rcond=None)[0]
    if not np.all(np.isfinite(dz)):
        raise NumericalFailure("singular Newton system")
    return dz


@dataclass
class _BarrierOutcome:
    z: np.ndarray
    status: str
    gap: float
    steps: int
    stopped_early: bool = False


@dataclass
class SolverOptions:
    tol: float = 1e-8
    newton_tol: float = 1e-10
    mu: float = 10.0
    max_iter: int = 200
    t0: float = 1.0
    alpha: float = 0.01
    beta: float = 0.5
    polish: bool = True
    polish_margin: float = 1e-12


def _barrier(obj, obj_value, cons, cons_value, z, m, opts: SolverOptions, max_steps,
             stop: Callable[[np.ndarray], bool] | None = None) -> _BarrierOutcome:
    t = opts.t0
    steps = 0
    while True:
        while True:
            f0, g0, H0 = obj(z)
            fc, Gc, Hw = cons(z)
            inv = -1.0 / fc
            grad = t * g0 + Gc.T @ inv
            hess = t * H0 + Hw(inv) + (Gc.T * inv**2) @ Gc
            dz = _newton_direction(hess, grad)
            lam2 = float(-grad @ dz)
            barrier = -np.log(-fc).sum()
            phi = t * f0 + barrier
            # below this the line search can only see rounding noise
            noise = 64 * np.finfo(float).eps * (abs(t * f0) + abs(barrier) + 1.0)
            if lam2 / 2.0 <= max(opts.newton_tol, noise):
                break
            if steps >= max_steps:
                return _BarrierOutcome(z, MAX_ITERATIONS, m / t, steps)
            s = 1.0
            while True:
                zn = z + s * dz
                fcn = cons_value(zn)
                if np.all(fcn < 0):
                    phin = t * obj_value(zn) - np.log(-fcn).sum()
                    if np.isfinite(phin) and phin <= phi - opts.alpha * s * lam2:
                        break
                s *= opts.beta
                if s < 1e-20:
                    break
            if s * lam2 <= noise:
                # progress is below rounding noise; treat as centered
                break
            z = zn
            steps += 1
            if stop is not None and stop(z):
                return _BarrierOutcome(z, OPTIMAL, m / t, steps, stopped_early=True)
        gap = m / t if m else 0.0
        if gap <= opts.tol:
            return _BarrierOutcome(z, OPTIMAL, gap, steps)
        t *= opts.mu


def _phase_one(stack: _ConstraintStack, y0, opts: SolverOptions, max_steps):
    """Find y with every log-constraint strictly negative.

    Minimizes s subject to f_j(y) - s <= 0, stopping as soon as the iterate
    is strictly feasible for the original constraints.
    """
    n = stack.n
    f_start = stack.values(y0)
    z = np.append(y0, f_start.max() + 1.0)

    def obj(z):
        g = np.zeros(n + 1)
        g[-1] = 1.0
        return z[-1], g, np.zeros((n + 1, n + 1))

    def obj_value(z):
        return z[-1]

    def cons(z):
        f, G, Hw = stack.evaluate(z[:-1])
        Ga = np.hstack([G, -np.ones((stack.m, 1))])

        def Hw_aug(c):
            H = np.zeros((n + 1, n + 1))
            H[:n, :n] = Hw(c)
            return H

        return f - z[-1], Ga, Hw_aug

    def cons_value(z):
        return stack.values(z[:-1]) - z[-1]

    def stop(z):
        return bool(np.all(stack.values(z[:-1]) < 0))

    out = _barrier(obj, obj_value, cons, cons_value, z, stack.m, opts, max_steps, stop)
    y = out.z[:-1]
    if out.stopped_early:
        return y, OPTIMAL, out.steps
    if out.status == OPTIMAL:
        # converged without reaching strict feasibility: min s >= s_final - gap
        return y, INFEASIBLE, out.steps
    return y, out.status, out.steps


def _polish(objective: Posynomial, stack: _ConstraintStack, y, margin, sweeps=3):
    """Coordinate-wise descent onto the active boundary.

    Never increases the objective and keeps every constraint at or below
    ``-margin`` in log space.
    """
    y = y.copy()
    A0 = objective.exponents
    for _ in range(sweeps):
        moved = 0.0
        for k in range(y.size):
            b0 = objective.log_coefficients + A0 @ y
            w = np.exp(b0 - b0.max())
            slope = float(w @ A0[:, k] / w.sum())
            if abs(slope) < 1e-300:
                continue
            d = -math.copysign(1.0, slope)
            step = _max_coordinate_step(stack, y, k, d, margin)
            if step <= 0:
                continue

            def dslope(a):
                bb = b0 + a * d * A0[:, k]
                ww = np.exp(bb - bb.max())
                return d * float(ww @ A0[:, k] / ww.sum())

            if dslope(step) > 0:
                step = brentq(dslope, 0.0, step, xtol=1e-14)
            y[k] += d * step
            moved = max(moved, step)
        if moved < 1e-13:
            break
    return y


def _max_coordinate_step(stack: _ConstraintStack, y, k, d, margin, cap=60.0):
    if not stack.m:
        return cap
    f = stack.values(y)
    slope_terms = d * stack.A[:, k]
    best = cap
    b = stack.log_c + stack.A @ y
    for j in range(stack.m):
        lo = stack.starts[j]
        hi = stack.starts[j + 1] if j + 1 < stack.m else stack.A.shape[0]
        sl = slope_terms[lo:hi]
        if np.all(sl <= 0):
            continue
        room = -margin - f[j]
        if room <= 0:
            return 0.0
        if hi - lo == 1:
            best = min(best, room / sl[0])
            continue
        bj = b[lo:hi]

        def g(a):
            return logsumexp(bj + a * sl) + margin

        if g(best) <= 0:
            continue
        best = brentq(g, 0.0, best, xtol=1e-15)
    return max(best, 0.0)


def solve_gp(gp: GeometricProgram, tol: float = 1e-8, max_iter: int = 200, x0=None,
             options: SolverOptions | None = None) -> GpSolution:
    """Solve ``gp`` with a log-barrier interior-point method.

    ``x0``, if given and strictly feasible, skips Phase I.  ``max_iter``
    bounds the Newton steps of each phase.
    """
    opts = options or SolverOptions()
    opts = SolverOptions(**{**opts.__dict__, "tol": tol, "max_iter": max_iter})
    n = gp.n_vars
    stack = _ConstraintStack(gp.constraints, n)

    def fail(y, status, steps, gap=math.inf):
        y = np.clip(y, -700, 700)
        x = np.exp(y)
        try:
            val = float(math.exp(eval_log(gp.objective, y)[0]))
        except (NumericalFailure, OverflowError):
            val = math.nan
        return GpSolution(x, val, status, gap, steps)

    y = np.zeros(n) if x0 is None else np.log(np.asarray(x0, dtype=float))
    steps = 0
    try:
        if stack.m and not np.all(stack.values(y) < 0):
            y, status, steps = _phase_one(stack, np.zeros(n) if x0 is None else y, opts, opts.max_iter)
            if status != OPTIMAL:
                return fail(y, status, steps)

        # constant offset keeps t * f0 small at large t
        offset = eval_log(gp.objective, y)[0]

        def obj(z):
            v, g, H = eval_log(gp.objective, z)
            return v - offset, g, H

        def obj_value(z):
            b = gp.objective.log_coefficients + gp.objective.exponents @ z
            return float(logsumexp(b)) - offset

        out = _barrier(obj, obj_value, stack.evaluate if stack.m else
                       (lambda z: (np.zeros(0), np.zeros((0, n)), lambda c: np.zeros((n, n)))),
                       stack.values, y, stack.m, opts, opts.max_iter)
    except (NumericalFailure, FloatingPointError, OverflowError, ValueError):
        return fail(y, NUMERICAL_FAILURE, steps)

    steps += out.steps
    if out.status != OPTIMAL:
        return fail(out.z, out.status, steps, out.gap)
    y = out.z
    if opts.polish:
        y = _polish(gp.objective, stack, y, opts.polish_margin)
    f0 = eval_log(gp.objective, y)[0]
    return GpSolution(np.exp(y), float(math.exp(f0)), OPTIMAL, out.gap, steps)


# --------------------------------------------------------------------------
# bandwidth/power sub-problem
# --------------------------------------------------------------------------

def build_f1_prime(config, users, gains, xi_fixed) -> GeometricProgram:
    """Bandwidth/power GP for fixed per-user similarities.

    Variables are ``(beta_1..beta_N, P_1..P_N)``.  Objective is
    ``sum_i (SNR_th,i * xi_min,i / xi_i * N0 / h_i)^a * beta_i^a * P_i^-a``;
    constraints are total bandwidth, per-user minimum bandwidth, power cap,
    and the SNR threshold written as ``SNR_th N0 beta / (P h) <= 1``.
    """
    n = len(users)
    g = np.asarray(getattr(gains, "gains_linear", gains), dtype=float)
    xi = np.asarray(xi_fixed, dtype=float)
    if g.shape != (n,) or xi.shape != (n,):
        raise ValueError("gains and xi_fixed must have one entry per user")
    if np.any(xi <= 0):
        raise ValueError("fixed similarity must be positive")
    if np.any(g <= 0):
        raise ValueError("channel gains must be positive")
    a = config.penalty_exponent
    log_n0 = math.log(config.noise_psd_w_per_hz)
    names = [f"beta_{u.id}" for u in users] + [f"P_{u.id}" for u in users]
    eye = np.eye(2 * n)

    snr_th = np.array([u.snr_threshold_linear for u in users])
    xi_min = np.array([u.xi_min for u in users])
    obj_logc = a * (np.log(snr_th) + np.log(xi_min) - np.log(xi) + log_n0 - np.log(g))
    obj_exp = a * (eye[:n] - eye[n:])
    objective = Posynomial(obj_logc, obj_exp)

    cons = [Posynomial(np.full(n, -math.log(config.total_bandwidth_hz)), eye[:n])]
    cons += [Posynomial.monomial(u.min_bandwidth_hz, -eye[i]) for i, u in enumerate(users)]
    cons += [Posynomial.monomial(1.0 / config.max_power_w, eye[n + i]) for i in range(n)]
    cons += [Posynomial([math.log(snr_th[i]) + log_n0 - math.log(g[i])], eye[i] - eye[n + i])
             for i in range(n)]
    return GeometricProgram(names, objective, cons)


def f1_initial_point(config, users, gains, eps: float = 1e-3):
    """Near-corner start ``(beta_min (1+eps), P_tot (1-eps))`` or None if not strictly feasible."""
    g = np.asarray(getattr(gains, "gains_linear", gains), dtype=float)
    beta = np.array([u.min_bandwidth_hz for u in users]) * (1 + eps)
    power = np.full(len(users), config.max_power_w * (1 - eps))
    if beta.sum() >= config.total_bandwidth_hz:
        return None
    snr_th = np.array([u.snr_threshold_linear for u in users])
    if np.any(snr_th * config.noise_psd_w_per_hz * beta / (power * g) >= 1):
        return None
    return np.concatenate([beta, power])
