"""Per-mode spectral evolution of u_t = a(t) u_xx + f on the torus.

The homogeneous part is integrated exactly per mode through the running
integral of a; forcing enters through an exact-for-constant-f Duhamel
weight. Admissible forcings satisfy |f|^2 <= phi(t) |u|_{H1}^2 at every
step by construction; the `aligned` policy saturates that budget with the
steepest admissible contraction f = -sqrt(phi) (|u|_{H1}/|u|_{L2}) u.

Decay is classified from the tail monotonicity of lambda*t + log|u|_{H1}
per ladder rung (working in log space keeps rungs with lambda in the
hundreds finite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .coefficients import TimeCoefficient

UNDERFLOW_FLOOR = 1e-300
DEFAULT_LADDER = (1.0, 10.0, 100.0, 1000.0)
POLICIES = ("none", "random_bounded", "aligned")


@dataclass(eq=False)
class EvolutionProblem:
    coefficient: TimeCoefficient
    initial_modes: np.ndarray          # complex, FFT order
    length: float
    forcing_budget: Callable[[float], float]   # phi(t)
    policy: str = "none"
    horizon: float = 40.0
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        self.initial_modes = np.asarray(self.initial_modes, dtype=complex)


@dataclass
class DecayReport:
    times: np.ndarray
    h1_norms: np.ndarray
    rates: np.ndarray                  # -log|u|_{H1} / t
    log_h1: np.ndarray                 # kept alongside to survive underflow
    classification: str | None = None
    zero_norm: bool = False
    underflow_truncated: bool = False
    meta: dict = field(default_factory=dict)


def torus_frequencies(length: float, n_modes: int) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n_modes, d=length / n_modes)


def h1_norm_sq(modes: np.ndarray, xi: np.ndarray, length: float) -> float:
    return float(length * np.sum((1.0 + xi ** 2) * np.abs(modes) ** 2))


def l2_norm_sq(modes: np.ndarray, length: float) -> float:
    return float(length * np.sum(np.abs(modes) ** 2))


def log_h1_norm(modes: np.ndarray, xi: np.ndarray, length: float) -> float:
    """log |u|_{H1}, computed scale-robustly (survives mode magnitudes far
    below the square-underflow threshold); -inf for the zero vector."""
    m = float(np.max(np.abs(modes))) if modes.size else 0.0
    if m == 0.0:
        return -math.inf
    w = modes / m
    return math.log(m) + 0.5 * math.log(
        length * float(np.sum((1.0 + xi ** 2) * np.abs(w) ** 2)))


def _duhamel_weight(x: np.ndarray, dt: float) -> np.ndarray:
    """int_0^dt e^{-x s/dt} ds = dt (1 - e^{-x})/x, stable near x = 0."""
    small = np.abs(x) < 1e-8
    out = np.empty_like(x)
    out[small] = dt * (1.0 - 0.5 * x[small])
    xs = x[~small]
    out[~small] = dt * (-np.expm1(-xs)) / xs
    return out


def evolve(problem: EvolutionProblem, dt: float,
           record_every: int | None = None) -> tuple[DecayReport, np.ndarray]:
    """March the spectral system to the horizon; returns (report, final modes).

    Stability is unconditional (exponential integrator); accuracy needs
    dt * lambda0 * xi_max^2 <= 1, enforced as a precondition.
    """
    a = problem.coefficient
    n = len(problem.initial_modes)
    xi = torus_frequencies(problem.length, n)
    xi2 = xi ** 2
    if dt * a.lambda0 * float(xi2.max()) > 1.0 + 1e-12:
        raise ValueError(
            f"dt={dt:g} too coarse for the stiffest mode: need "
            f"dt <= {1.0 / (a.lambda0 * xi2.max()):.3e}")
    steps = int(round(problem.horizon / dt))
    if record_every is None:
        record_every = max(1, steps // 2000)
    # running integral of a on the step grid (closed form when available)
    t_nodes = np.arange(steps + 1) * dt
    a_cum = cumulative_trapezoid(a(t_nodes), t_nodes, initial=0.0)

    rng = np.random.default_rng(problem.seed)
    u = problem.initial_modes.copy()
    active = np.abs(u) > 0.0
    if not np.any(active):
        active = xi2 <= np.partition(xi2, n // 4)[n // 4]

    times, log_h1 = [0.0], []
    log0 = log_h1_norm(u, xi, problem.length)
    log_h1.append(log0)
    zero = not math.isfinite(log0)
    truncated = False

    for k in range(steps):
        t_k = k * dt
        decay = np.exp(-xi2 * (a_cum[k + 1] - a_cum[k]))
        if problem.policy == "none" or zero:
            u = u * decay
        else:
            h1_sq = h1_norm_sq(u, xi, problem.length)
            l2_sq = l2_norm_sq(u, problem.length)
            if h1_sq <= 0.0 or l2_sq <= 0.0:
                u = u * decay
            else:
                phi_t = float(problem.forcing_budget(t_k))
                cap_sq = phi_t * h1_sq
                if problem.policy == "aligned":
                    f = -math.sqrt(phi_t * h1_sq / l2_sq) * u
                else:  # random_bounded
                    g = np.zeros(n, dtype=complex)
                    g[active] = rng.standard_normal(int(active.sum())) \
                        + 1j * rng.standard_normal(int(active.sum()))
                    g_sq = l2_norm_sq(g, problem.length)
                    share = rng.uniform(0.0, 1.0)
                    f = g * math.sqrt(share * cap_sq / g_sq) if g_sq > 0.0 else g
                mean_a = (a_cum[k + 1] - a_cum[k]) / dt
                u = u * decay + f * _duhamel_weight(xi2 * mean_a * dt, dt)
        if (k + 1) % record_every == 0 or k == steps - 1:
            log_now = log_h1_norm(u, xi, problem.length)
            if not zero and log_now < math.log(UNDERFLOW_FLOOR):
                truncated = True
                break
            times.append((k + 1) * dt)
            log_h1.append(log_now)

    times = np.asarray(times)
    log_arr = np.asarray(log_h1)
    h1 = np.exp(log_arr)
    rates = np.full_like(times, np.nan)
    pos = times > 0.0
    rates[pos] = -log_arr[pos] / times[pos]
    report = DecayReport(times=times, h1_norms=h1, rates=rates, log_h1=log_arr,
                         zero_norm=zero, underflow_truncated=truncated,
                         meta={"policy": problem.policy, "dt": dt,
                               "seed": problem.seed})
    return report, u


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def classify_decay(report: DecayReport,
                   ladder=DEFAULT_LADDER, rel_slack: float = 1e-10) -> str:
    """Tail-monotonicity ladder test on e^{lambda t} |u|_{H1} in log space.

    grew: the norm itself net-increases over the final half of the span;
    rapidly_decaying_suspect: every ladder rung decreases monotonically
    there (or the trajectory is identically zero); exponential_floor:
    some rung fails with a net increase.
    """
    span = float(report.times[-1]) if len(report.times) else 0.0
    if span < 10.0:
        raise ValueError(f"horizon {span:g} too short to classify (need >= 10)")
    if report.zero_norm:
        report.classification = "rapidly_decaying_suspect"
        return report.classification
    tail = report.times >= 0.5 * span
    t = report.times[tail]
    logs = report.log_h1[tail]
    if logs[-1] > logs[0] + rel_slack:
        report.classification = "grew"
        return report.classification
    all_pass = True
    for lam in ladder:
        seq = lam * t + logs
        slack = rel_slack * np.maximum(1.0, np.abs(seq[:-1]))
        if not np.all(np.diff(seq) <= slack):
            all_pass = False
            break
    report.classification = ("rapidly_decaying_suspect" if all_pass
                             else "exponential_floor")
    return report.classification


def synthetic_report(times: np.ndarray, log_h1: np.ndarray) -> DecayReport:
    """Wrap externally supplied log-norms (for injected decay profiles)."""
    times = np.asarray(times, dtype=float)
    log_h1 = np.asarray(log_h1, dtype=float)
    rates = np.full_like(times, np.nan)
    pos = times > 0.0
    rates[pos] = -log_h1[pos] / times[pos]
    return DecayReport(times=times, h1_norms=np.exp(log_h1), rates=rates,
                       log_h1=log_h1)


def single_mode_problem(coefficient: TimeCoefficient, length: float,
                        n_modes: int, mode_index: int,
                        forcing_budget: Callable[[float], float],
                        policy: str = "none", horizon: float = 40.0,
                        seed: int = 0) -> EvolutionProblem:
    """One H1-normalized torus mode as initial data."""
    xi = torus_frequencies(length, n_modes)
    u0 = np.zeros(n_modes, dtype=complex)
    k = mode_index % n_modes
    u0[k] = 1.0
    u0 /= math.sqrt(h1_norm_sq(u0, xi, length))
    return EvolutionProblem(coefficient=coefficient, initial_modes=u0,
                            length=length, forcing_budget=forcing_budget,
                            policy=policy, horizon=horizon, seed=seed)
