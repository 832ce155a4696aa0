"""The weight bundle: damping, gain, exponent, and the two thresholds.

For a forcing budget phi, oscillation bound psi, modulus mu and parameters
alpha, gamma the construction is

    b(t)     = exp(-alpha int_0^t phi)                       (damping)
    gain(v)  = inverse-reciprocal-integral(gamma int_0^{v/gamma} psi)
    rate(t)  = gain(gamma t) * (1/b) int_0^t b phi           (exponent rate)
    exponent = int_0^t rate

together with the frequency cutoff and the minimal large parameter that
make the pointwise frequency-split claim hold. The gain exists for all
gamma exactly when the modulus satisfies the divergence condition; the
WeightBreakdown raised otherwise is the designed failure witness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .coefficients import ControlFunctions
from .moduli import Modulus, OsgoodIntegral, WeightBreakdown

GAMMA_SEARCH_CAP = 2.0 ** 64


class ConstructionImpossible(RuntimeError):
    """The threshold search cannot be completed (non-divergent modulus)."""


class IdentityViolation(RuntimeError):
    """A discrete identity check exceeded its tolerance."""

    def __init__(self, message: str, witness_t: float):
        self.witness_t = witness_t
        super().__init__(message)


# ---------------------------------------------------------------------------
# Damping and gain
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DampingTables:
    grid: np.ndarray
    damping: np.ndarray            # b
    forcing_cum: np.ndarray        # int_0^t phi
    damped_forcing_cum: np.ndarray  # int_0^t b phi


def build_damping(controls: ControlFunctions, alpha: float,
                  grid: np.ndarray) -> DampingTables:
    """b = exp(-alpha int_0^t phi), with the running integral of b*phi.

    alpha >= 0; the cumulative forcing integral uses the analytic form
    when the controls carry one, trapezoid otherwise.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    grid = np.asarray(grid, dtype=float)
    phi = controls.forcing(grid)
    if not np.all(np.isfinite(phi)):
        raise ValueError("forcing evaluated non-finite on the grid")
    if controls.forcing_cumulative is not None:
        cum = controls.forcing_cumulative(grid)
    else:
        cum = cumulative_trapezoid(phi, grid, initial=0.0)
    damping = np.exp(-alpha * cum)
    damped_cum = cumulative_trapezoid(damping * phi, grid, initial=0.0)
    return DampingTables(grid=grid, damping=damping, forcing_cum=cum,
                         damped_forcing_cum=damped_cum)


def _piecewise_quadratic_antiderivative(grid: np.ndarray, vals: np.ndarray):
    """Exact antiderivative of the linear interpolant of (grid, vals).

    Its derivative reproduces the interpolant itself, which keeps the
    gain's derivative identity exact instead of leaving first-order
    interpolation kinks.
    """
    h = grid[1] - grid[0]
    nodes = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * h)))

    def cum(t):
        t_arr = np.clip(np.asarray(t, dtype=float), grid[0], grid[-1])
        i = np.clip(((t_arr - grid[0]) / h).astype(int), 0, len(grid) - 2)
        d = t_arr - grid[i]
        return nodes[i] + vals[i] * d + 0.5 * (vals[i + 1] - vals[i]) * d * d / h

    return cum


class GainFunction:
    """gain(v) = nu_inverse(gamma * int_0^{v/gamma} psi) for v >= 0.

    Memoized composition: the oscillation integral is a cumulative table
    (or analytic when available) and the inversion runs vectorized over
    the reciprocal-modulus integral's monotone table. Construction
    evaluates the largest needed level eagerly, so a non-divergent
    modulus fails fast with WeightBreakdown.
    """

    def __init__(self, mu: Modulus, controls: ControlFunctions, gamma: float,
                 t_max: float, table_dt: float = 1e-4):
        if gamma <= 0.0:
            raise ValueError("gamma must be positive")
        self.mu = mu
        self.gamma = gamma
        self.controls = controls
        self._integral = OsgoodIntegral(mu)
        if controls.oscillation_cumulative is not None:
            self._osc_cum = controls.oscillation_cumulative
        else:
            g = np.arange(0.0, t_max + table_dt, table_dt)
            self._osc_cum = _piecewise_quadratic_antiderivative(
                g, controls.oscillation(g))
        self.t_max = t_max
        self._integral.ensure_level(self.level(gamma * t_max))

    def level(self, v) -> np.ndarray:
        """The integral level gamma * int_0^{v/gamma} psi fed to the inverse."""
        v_arr = np.asarray(v, dtype=float)
        return self.gamma * self._osc_cum(v_arr / self.gamma)

    def __call__(self, v):
        v_arr = np.asarray(v, dtype=float)
        out = self._integral.inverse_many(np.atleast_1d(self.level(v_arr)))
        return float(out[0]) if np.ndim(v) == 0 else out.reshape(v_arr.shape)

    def at_scaled(self, t):
        """gain(gamma t): the factor entering the exponent rate."""
        return self(self.gamma * np.asarray(t, dtype=float))

    def rate_scaled(self, t):
        """d/dv gain at v = gamma t via the exact composition identity:
        gain' = gain^2 mu(1/gain) psi(t)."""
        g = self.at_scaled(t)
        return g * g * self.mu(1.0 / np.asarray(g)) * self.controls.oscillation(t)


# ---------------------------------------------------------------------------
# Exponent
# ---------------------------------------------------------------------------

def build_exponent(tables: DampingTables, gain: Callable) -> tuple[np.ndarray, np.ndarray]:
    """exponent(t) = int_0^t gain(gamma eta) (1/b) (int_0^eta b phi) d eta.

    `gain` maps t to gain(gamma t) (use GainFunction.at_scaled, or any
    callable for surrogate tests). Returns (exponent, rate) with the rate
    being the integrand itself.
    """
    grid = tables.grid
    g = gain(grid)
    rate = g * tables.damped_forcing_cum / tables.damping
    exponent = cumulative_trapezoid(rate, grid, initial=0.0)
    return exponent, rate


# ---------------------------------------------------------------------------
# Thresholds (frequency cutoff and minimal large parameter)
# ---------------------------------------------------------------------------

@dataclass
class WeightConstants:
    freq_cutoff: float           # xi_0
    gamma_floor: float           # gamma_0
    cutoff_bound: float          # right side of the mu(1/xi^2) condition
    gamma_rhs: float             # right side of the gain threshold condition
    freq_cutoff_raw: float       # before the max/rounding steps
    gamma_raw: float             # before the max step
    freq_floor: float            # 2 Lambda0 |phi| e^{alpha |phi|}
    gamma_floor_requirement: float  # 4 Lambda0^2 |phi|^2 e^{2 alpha |phi|} (C0 + |psi| mu(1))


def gain_at_own_scale(mu: Modulus, controls: ControlFunctions, gamma: float) -> float:
    """gain_gamma(gamma) = nu_inverse(gamma int_0^1 psi), scalar route."""
    return OsgoodIntegral(mu).inverse(gamma * controls.oscillation_unit)


def compute_constants(mu: Modulus, controls: ControlFunctions, lambda0: float,
                      mollifier_constant: float, alpha: float,
                      xi_spacing: float | None = None) -> WeightConstants:
    """Resolve the frequency cutoff and the minimal large parameter.

    Cutoff first: smallest xi >= 1 with mu(1/xi^2) below the dissipation
    bound, raised to the explicit floor and optionally rounded up to the
    spectral grid (rounding up preserves the bound; it must precede the
    gamma search because the gamma condition's right side grows with the
    cutoff). Then gamma: doubling + bisection on the monotone map
    gamma -> mu(1) gamma gain_gamma(gamma) int_0^1 phi, raised to its
    explicit floor.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    c0 = max(mollifier_constant, 1e-8)
    mu1 = float(mu(1.0))
    psi_sup = controls.oscillation_sup
    phi_l1 = controls.forcing_l1
    boost = phi_l1 * math.exp(alpha * phi_l1)

    cutoff_bound = 1.0 / (4.0 * lambda0 ** 2 * psi_sup * (c0 + psi_sup * mu1))
    if mu1 <= cutoff_bound:
        xi_raw = 1.0
    else:
        lo, hi = 1.0, 2.0
        while float(mu(1.0 / hi ** 2)) > cutoff_bound:
            lo, hi = hi, hi * 2.0
            if hi > 1e150:
                raise ConstructionImpossible("frequency cutoff search diverged")
        for _ in range(200):
            mid = math.sqrt(lo * hi)
            if float(mu(1.0 / mid ** 2)) > cutoff_bound:
                lo = mid
            else:
                hi = mid
        xi_raw = hi  # upper end: the bound holds at xi_raw
    freq_floor = 2.0 * lambda0 * boost
    cutoff = max(xi_raw, freq_floor, 1.0)
    if xi_spacing is not None:
        cutoff = math.ceil(cutoff / xi_spacing - 1e-12) * xi_spacing

    mu_c = float(mu(1.0 / cutoff ** 2))
    gamma_rhs = (c0 + psi_sup * mu_c) * mu_c * cutoff ** 4
    unit_phi = controls.forcing_unit

    def lhs(gamma: float) -> float:
        return mu1 * gamma * gain_at_own_scale(mu, controls, gamma) * unit_phi

    try:
        lo, hi = 0.0, 1.0
        while lhs(hi) < gamma_rhs:
            lo, hi = hi, hi * 2.0
            if hi > GAMMA_SEARCH_CAP:
                raise ConstructionImpossible(
                    f"gamma search passed {GAMMA_SEARCH_CAP:.3g} without reaching "
                    f"the threshold {gamma_rhs:.6g}")
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if lhs(mid) < gamma_rhs:
                lo = mid
            else:
                hi = mid
        gamma_raw = hi  # upper end: the condition holds at gamma_raw
    except WeightBreakdown as exc:
        raise ConstructionImpossible(
            f"gain threshold unreachable: {exc} (the divergence hypothesis fails)"
        ) from exc

    gamma_requirement = (4.0 * lambda0 ** 2 * phi_l1 ** 2
                         * math.exp(2.0 * alpha * phi_l1) * (c0 + psi_sup * mu1))
    gamma_floor = max(gamma_raw, gamma_requirement)
    return WeightConstants(
        freq_cutoff=cutoff, gamma_floor=gamma_floor, cutoff_bound=cutoff_bound,
        gamma_rhs=gamma_rhs, freq_cutoff_raw=xi_raw, gamma_raw=gamma_raw,
        freq_floor=freq_floor, gamma_floor_requirement=gamma_requirement)


# ---------------------------------------------------------------------------
# The bundle
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class WeightBundle:
    alpha: float
    gamma: float
    lambda0: float
    mollifier_constant: float
    grid: np.ndarray
    damping: np.ndarray
    forcing_cum: np.ndarray
    damped_forcing_cum: np.ndarray
    gain: GainFunction
    exponent: np.ndarray
    exponent_rate: np.ndarray
    freq_cutoff: float
    gamma_floor: float
    constants: WeightConstants
    controls: ControlFunctions
    mu: Modulus
    meta: dict = field(default_factory=dict)

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def index_of(self, t: float) -> int:
        i = int(round(t / self.spacing))
        if not 0 <= i < len(self.grid) or abs(self.grid[i] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t={t} is not a bundle grid point")
        return i

    def smoothing_scale(self, xi):
        """eps_xi: 1/cutoff^2 below the cutoff, 1/xi^2 above."""
        xi_arr = np.abs(np.asarray(xi, dtype=float))
        out = np.where(xi_arr <= self.freq_cutoff,
                       1.0 / self.freq_cutoff ** 2,
                       1.0 / np.maximum(xi_arr, 1e-150) ** 2)
        return float(out) if np.ndim(xi) == 0 else out

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "lambda0": self.lambda0,
            "mollifier_constant": self.mollifier_constant,
            "freq_cutoff": self.freq_cutoff,
            "gamma_floor": self.gamma_floor,
            "modulus_family": self.mu.family,
            "grid": self.grid.tolist(),
            "damping": self.damping.tolist(),
            "damped_forcing_cum": self.damped_forcing_cum.tolist(),
            "exponent": self.exponent.tolist(),
            "exponent_rate": self.exponent_rate.tolist(),
        }


def build_bundle(mu: Modulus, controls: ControlFunctions, lambda0: float,
                 mollifier_constant: float, alpha: float, t_max: float,
                 dt: float = 1e-3, gamma: float | None = None,
                 gamma_factor: float = 1.0,
                 xi_spacing: float | None = None) -> WeightBundle:
    """Assemble the full weight bundle on a uniform grid over [0, t_max].

    gamma defaults to gamma_factor * gamma_floor. Raises WeightBreakdown /
    ConstructionImpossible when the modulus cannot support the weights.
    """
    constants = compute_constants(mu, controls, lambda0, mollifier_constant,
                                  alpha, xi_spacing=xi_spacing)
    if gamma is None:
        gamma = gamma_factor * constants.gamma_floor
    n = int(round(t_max / dt))
    grid = np.arange(n + 1) * dt
    tables = build_damping(controls, alpha, grid)
    gain = GainFunction(mu, controls, gamma, t_max)
    exponent, rate = build_exponent(tables, gain.at_scaled)
    return WeightBundle(
        alpha=alpha, gamma=gamma, lambda0=lambda0,
        mollifier_constant=max(mollifier_constant, 1e-8),
        grid=grid, damping=tables.damping, forcing_cum=tables.forcing_cum,
        damped_forcing_cum=tables.damped_forcing_cum, gain=gain,
        exponent=exponent, exponent_rate=rate,
        freq_cutoff=constants.freq_cutoff, gamma_floor=constants.gamma_floor,
        constants=constants, controls=controls, mu=mu)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def check_gain_ode(gain: GainFunction, t_lo: float = 1.0, t_hi: float = 10.0,
                   dt: float = 1e-4, raise_above: float = 1e-3) -> float:
    """Max relative residual of the gain's derivative identity.

    Centered finite differences of the composed gain against
    gain^2 mu(1/gain) psi(t), plus the derived two-step lower-bound
    chain (strict on [1, inf)). Raises IdentityViolation above the
    tolerance, witness attached.
    """
    t = np.arange(t_lo, t_hi + 0.5 * dt, dt)
    tau = gain.gamma * t
    step = gain.gamma * dt
    fd = (gain(tau + step) - gain(tau - step)) / (2.0 * step)
    rhs = gain.rate_scaled(t)
    resid = np.abs(fd - rhs) / (1.0 + np.abs(fd))
    worst = int(np.argmax(resid))
    max_resid = float(resid[worst])
    if max_resid > raise_above:
        raise IdentityViolation(
            f"gain derivative identity residual {max_resid:.3e} at t={t[worst]:.6g}",
            witness_t=float(t[worst]))
    mu1 = float(gain.mu(1.0))
    psi_t = gain.controls.oscillation(t)
    g = gain.at_scaled(t)
    g_base = float(gain(np.array([gain.gamma]))[0])
    lower1 = mu1 * g * psi_t
    lower2 = mu1 * g_base * psi_t
    slack = 1.0 - 1e-12
    if not (np.all(rhs >= lower1 * slack) and np.all(lower1 >= lower2 * slack)):
        bad = int(np.argmin(np.minimum(rhs - lower1, lower1 - lower2)))
        raise IdentityViolation(
            f"gain lower-bound chain violated at t={t[bad]:.6g}",
            witness_t=float(t[bad]))
    return max_resid


def check_bundle_invariants(bundle: WeightBundle, rel_tol: float = 1e-9) -> dict:
    """Pointwise bundle invariants; returns the audit values.

    - e^(-alpha |phi|) <= b <= 1, b decreasing
    - 1 <= (1/b) int_0^t b phi <= |phi| e^(alpha |phi|) for t >= 1
    - exponent nonnegative, increasing, rate increasing (convex in practice)
    - exponent <= C_gamma t with C_gamma = gain_bound |phi| e^(alpha |phi|)
    - gain(gamma t) <= gain_bound = nu_inverse(gamma |psi|) for all t
    """
    b = bundle.damping
    ctr = bundle.controls
    lo = math.exp(-bundle.alpha * ctr.forcing_l1)
    out = {}
    out["damping_in_range"] = bool(np.all(b <= 1.0 + rel_tol)
                                   and np.all(b >= lo * (1.0 - rel_tol)))
    out["damping_decreasing"] = bool(np.all(np.diff(b) <= rel_tol))
    t1 = bundle.grid >= 1.0
    q = bundle.damped_forcing_cum[t1] / b[t1]
    q_hi = ctr.forcing_l1 * math.exp(bundle.alpha * ctr.forcing_l1)
    out["normalized_budget_in_range"] = bool(
        np.all(q >= 1.0 - 1e-6) and np.all(q <= q_hi * (1.0 + rel_tol)))
    out["exponent_nonneg_increasing"] = bool(
        np.all(bundle.exponent >= -rel_tol) and np.all(np.diff(bundle.exponent) >= -rel_tol))
    out["rate_increasing"] = bool(np.all(np.diff(bundle.exponent_rate) >= -rel_tol
                                         * max(1.0, bundle.exponent_rate.max())))
    # gain(gamma t) <= nu_inverse(gamma |psi|_L1): evaluate the bound once
    bound = OsgoodIntegral(bundle.mu).inverse(bundle.gamma * ctr.oscillation_l1)
    g_vals = bundle.gain.at_scaled(bundle.grid)
    out["gain_bounded"] = bool(np.all(g_vals <= bound * (1.0 + 1e-6)))
    c_gamma = bound * q_hi
    out["exponent_linear_bound"] = bool(
        np.all(bundle.exponent <= c_gamma * bundle.grid + rel_tol))
    out["gain_bound"] = bound
    out["linear_bound_constant"] = c_gamma
    out["passed"] = all(v for k, v in out.items()
                        if isinstance(v, bool))
    return out
