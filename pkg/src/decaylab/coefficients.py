"""Rough-in-time diffusion coefficients and their control functions.

Builds coefficients a(t) whose oscillation is controlled by a prescribed
modulus (dyadic block sums), measures the windowed sup-ratio bound
psi(t) >= sup |a(t2)-a(t1)| / mu(t2-t1), and verifies the two smoothing
bounds of mollification: |a_eps - a| <= mu(eps) psi and
|a_eps'| <= C0 mu(eps)/eps psi with a measured constant C0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import maximum_filter1d
from scipy.signal import fftconvolve

from .moduli import Modulus
from .quadrature import adaptive_simpson

OSCILLATION_FLOOR = 1e-8
DENSE_LAGS = 64
LAG_RATIO = 2.0 ** 0.125


class GenerationError(RuntimeError):
    """Coefficient synthesis cannot fit the requested band."""


class ResolutionError(ValueError):
    """Grid too coarse for the requested smoothing scale."""


@dataclass(eq=False)
class TimeCoefficient:
    """Diffusion coefficient samples on a uniform grid over [0, T].

    `func`, when present, evaluates the underlying closed form anywhere
    (with the constant extension a(t) = a(0) for t <= 0); sampled-only
    coefficients fall back to interpolation with clamped ends.
    """

    grid: np.ndarray
    values: np.ndarray
    lambda0: float
    func: Callable[[np.ndarray], np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lambda0 < 1.0:
            raise ValueError("ellipticity constant must be >= 1")
        lo, hi = self.values.min(), self.values.max()
        if lo < 1.0 / self.lambda0 - 1e-12 or hi > self.lambda0 + 1e-12:
            raise ValueError(
                f"samples leave the ellipticity band [{1/self.lambda0:.6g}, "
                f"{self.lambda0:.6g}]: range [{lo:.6g}, {hi:.6g}]")

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.func is not None:
            out = self.func(np.maximum(t_arr, 0.0))
        else:
            out = np.interp(t_arr, self.grid, self.values)
        return float(out) if np.ndim(t) == 0 else out


@dataclass(eq=False)
class ControlFunctions:
    """The pair (forcing budget, oscillation bound) with precomputed norms.

    `forcing` is the positive integrable envelope bounding the squared
    forcing norm relative to the squared H1 norm; `oscillation` bounds
    the windowed modulus ratio of the coefficient. Norms are over R+:
    window quadrature plus the declared exponential tail.
    """

    forcing: Callable[[np.ndarray], np.ndarray]
    oscillation: Callable[[np.ndarray], np.ndarray]
    forcing_l1: float
    forcing_unit: float          # int_0^1 forcing
    oscillation_l1: float
    oscillation_sup: float
    oscillation_unit: float      # int_0^1 oscillation
    forcing_cumulative: Callable[[np.ndarray], np.ndarray] | None = None
    oscillation_cumulative: Callable[[np.ndarray], np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.forcing_unit < 1.0 - 1e-9:
            raise ValueError("forcing must carry unit mass on [0, 1]")
        for name in ("forcing_l1", "oscillation_l1", "oscillation_sup",
                     "oscillation_unit"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be finite and positive, got {v}")


def exponential_forcing(scale: float, rate: float):
    """forcing(t) = scale e^(-rate t): (callable, cumulative, L1, unit mass)."""
    if scale <= 0.0 or rate <= 0.0:
        raise ValueError("scale and rate must be positive")
    fn = lambda t: scale * np.exp(-rate * np.asarray(t, dtype=float))
    cum = lambda t: -(scale / rate) * np.expm1(-rate * np.asarray(t, dtype=float))
    return fn, cum, scale / rate, -scale * math.expm1(-rate) / rate


def make_controls(forcing_scale: float, forcing_rate: float,
                  oscillation_grid: np.ndarray, oscillation_samples: np.ndarray,
                  tail_tau: float = 1.0, meta: dict | None = None) -> ControlFunctions:
    """Assemble ControlFunctions from an exponential forcing and measured
    oscillation samples; L1 of the oscillation adds the declared tail
    psi(T) * tail_tau beyond the sample window."""
    grid = np.asarray(oscillation_grid, dtype=float)
    samples = np.maximum(np.asarray(oscillation_samples, dtype=float), OSCILLATION_FLOOR)
    if np.any(~np.isfinite(samples)):
        raise ValueError("oscillation samples must be finite")
    fn, cum, l1, unit = exponential_forcing(forcing_scale, forcing_rate)
    osc = lambda t: np.maximum(
        np.interp(np.asarray(t, dtype=float), grid, samples), OSCILLATION_FLOOR)
    osc_l1 = float(np.trapezoid(samples, grid)) + float(samples[-1]) * tail_tau
    mask = grid <= 1.0
    osc_unit = float(np.trapezoid(samples[mask], grid[mask]))
    info = {"oscillation_tail_tau": tail_tau, "forcing": ("exp", forcing_scale, forcing_rate)}
    info.update(meta or {})
    return ControlFunctions(
        forcing=fn, oscillation=osc, forcing_l1=l1, forcing_unit=unit,
        oscillation_l1=osc_l1, oscillation_sup=float(samples.max()),
        oscillation_unit=max(osc_unit, OSCILLATION_FLOOR),
        forcing_cumulative=cum, meta=info)


# ---------------------------------------------------------------------------
# Coefficient synthesis
# ---------------------------------------------------------------------------

def generate_coefficient(mu: Modulus, lambda0: float, horizon: float, seed: int,
                         levels: int, spacing: float = 1e-3, amplitude: float = 1.0,
                         envelope_tau: float | None = None) -> TimeCoefficient:
    """Dyadic-block coefficient: c0 + kappa * env(t) * sum mu(2^-j) cos(2^j t + theta_j).

    Each block is Lipschitz with constant 2^j mu(2^-j) and bounded by
    2 mu(2^-j), so |a(t2)-a(t1)| <= C mu(|t2-t1|) with the computable
    constant stored in meta["ratio_bound"]. `amplitude` scales kappa
    relative to the largest value keeping the sum inside the ellipticity
    band; `envelope_tau` adds the e^(-t/tau) oscillation decay that makes
    the measured oscillation bound integrable on R+.
    """
    if lambda0 < 1.0:
        raise ValueError("lambda0 must be >= 1")
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if not 0.0 < amplitude <= 1.0:
        raise ValueError("amplitude must lie in (0, 1]")
    c0 = 0.5 * (lambda0 + 1.0 / lambda0)
    rng = np.random.default_rng(seed)
    js = np.arange(1, levels + 1)
    weights = mu(0.5 ** js) if levels else np.zeros(0)
    thetas = rng.uniform(0.0, 2.0 * np.pi, size=levels)
    total = float(weights.sum())
    if levels:
        half_band = lambda0 - c0
        if half_band <= 0.0 or not math.isfinite(total) or total <= 0.0:
            raise GenerationError(
                f"no room in band [{1/lambda0:.4g}, {lambda0:.4g}] for {levels} levels")
        kappa = amplitude * 0.999 * half_band / total
        if kappa <= 0.0 or kappa * weights.max() < 1e-300:
            raise GenerationError("block scale underflowed: modulus too large for the band")
    else:
        kappa = 0.0

    freqs = 2.0 ** js

    def func(t):
        t_arr = np.maximum(np.asarray(t, dtype=float), 0.0)
        if not levels:
            return np.full_like(t_arr, c0)
        osc = np.einsum("j,...j->...", weights,
                        np.cos(np.multiply.outer(t_arr, freqs) + thetas))
        env = np.exp(-t_arr / envelope_tau) if envelope_tau else 1.0
        return c0 + kappa * env * osc

    n = int(round(horizon / spacing))
    grid = np.arange(n + 1) * spacing
    mu1 = float(mu(1.0))
    ratio_bound = kappa * (2.0 * levels + (total / (envelope_tau * mu1) if envelope_tau else 0.0))
    meta = {"family": "dyadic", "mu": mu.family, "levels": levels, "seed": seed,
            "kappa": kappa, "center": c0, "amplitude": amplitude,
            "envelope_tau": envelope_tau, "ratio_bound": ratio_bound}
    return TimeCoefficient(grid=grid, values=func(grid), lambda0=lambda0,
                           func=func, meta=meta)


# ---------------------------------------------------------------------------
# Oscillation bound (windowed sup ratio)
# ---------------------------------------------------------------------------

def _lag_set(max_lag: int, dense: int, ratio: float) -> np.ndarray:
    lags = list(range(1, min(dense, max_lag) + 1))
    lag = float(lags[-1]) if lags else 1.0
    while lag * ratio <= max_lag:
        lag *= ratio
        lags.append(int(round(lag)))
    return np.unique(np.asarray(lags, dtype=int))


def estimate_oscillation(a: TimeCoefficient, mu: Modulus, t_grid: np.ndarray,
                         dense_lags: int = DENSE_LAGS, lag_ratio: float = LAG_RATIO,
                         all_lags: bool = False) -> np.ndarray:
    """psi(t): max of |a(t2)-a(t1)| / mu(t2-t1) over sampled pairs in the
    window (max(0, t-1/2), t+1/2), floored at a small positive constant.

    Lags are scanned densely up to `dense_lags` grid steps and then
    geometrically (all of them with `all_lags=True`); a lag subset can
    only lower the estimate, and refining the set never decreases it.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.min() < 0.0 or t_grid.max() > a.horizon:
        raise ValueError("t_grid must lie within the coefficient window")
    h = a.spacing
    vals = a.values
    n = len(vals)
    half = int(round(0.5 / h))
    max_lag = min(n - 1, 2 * half - 1)
    lags = (np.arange(1, max_lag + 1) if all_lags
            else _lag_set(max_lag, dense_lags, lag_ratio))
    pos = np.clip(np.round(t_grid / h).astype(int), 0, n - 1)
    best = np.zeros(len(t_grid))
    for lag in lags:
        ratios = np.abs(vals[lag:] - vals[:-lag]) / float(mu(lag * h))
        # pair [i, i+lag] allowed for center j when j-half < i and i+lag < j+half
        size = 2 * half - lag - 1
        if size < 1:
            continue
        filt = maximum_filter1d(ratios, size=size, mode="constant", cval=0.0,
                                origin=0)
        # filt[c] covers pairs i in [c - size//2, c + (size-1)//2]; the
        # admissible i for center j sit in a window centered at j - lag/2
        centers = np.clip(pos - (lag // 2), 0, len(ratios) - 1)
        np.maximum(best, filt[centers], out=best)
    return np.maximum(best, OSCILLATION_FLOOR)


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MollifierKernel:
    """Even nonnegative bump on [-1/2, 1/2] with unit mass."""

    density: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    derivative_l1: float

    def mass(self) -> float:
        return adaptive_simpson(lambda r: float(self.density(r)), -0.5, 0.5, tol=1e-12)


def bump_kernel() -> MollifierKernel:
    """Normalized exp(-1/(1-(2r)^2)) on (-1/2, 1/2)."""

    def raw(r):
        r_arr = np.asarray(r, dtype=float)
        inside = np.abs(r_arr) < 0.5
        out = np.zeros_like(r_arr)
        q = 1.0 - 4.0 * r_arr[inside] ** 2
        out[inside] = np.exp(-1.0 / q)
        return out

    mass = adaptive_simpson(lambda r: float(raw(r)), -0.5, 0.5, tol=1e-13)
    norm = 1.0 / mass

    def density(r):
        return norm * raw(r)

    def derivative(r):
        r_arr = np.asarray(r, dtype=float)
        inside = np.abs(r_arr) < 0.5
        out = np.zeros_like(r_arr)
        q = 1.0 - 4.0 * r_arr[inside] ** 2
        out[inside] = norm * np.exp(-1.0 / q) * (-8.0 * r_arr[inside] / q ** 2)
        return out

    deriv_l1 = 2.0 * float(density(np.array([0.0]))[0])  # even bump: 2 rho(0)
    return MollifierKernel(density=density, derivative=derivative,
                           derivative_l1=deriv_l1)


@dataclass(eq=False)
class SmoothedCoefficient:
    grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    eps: float


def mollify(a: TimeCoefficient, kernel: MollifierKernel, eps: float) -> SmoothedCoefficient:
    """Discrete convolution a_eps = a * (1/eps) rho(./eps) and its derivative.

    Uses the constant extension a(t)=a(0) for t <= 0; on the right the
    output grid stops at T - eps/2. Kernel weights are normalized to sum
    one, so mollification is an exact convex average of samples and
    inherits the ellipticity band.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    h = a.spacing
    m = int(math.floor(0.5 * eps / h - 1e-12))
    if 2 * m + 1 < 8:
        raise ResolutionError(
            f"eps={eps:.4g} puts only {2*m+1} grid points under the kernel (need >= 8)")
    offsets = np.arange(-m, m + 1)
    r_nodes = offsets * (h / eps)
    w = kernel.density(r_nodes)
    w = w / w.sum()
    d = kernel.derivative(r_nodes) * (h / eps ** 2)

    pad = np.concatenate([np.full(m, a.values[0]), a.values])
    # fftconvolve flips its second argument, which restores the a(t - m h)
    # orientation; the density is even but the derivative kernel is odd.
    smooth_full = fftconvolve(pad, w, mode="valid")
    deriv_full = fftconvolve(pad, d, mode="valid")
    # entry i corresponds to t_i with kernel reaching i-m .. i+m
    keep = len(a.grid) - m
    return SmoothedCoefficient(grid=a.grid[:keep], values=smooth_full[:keep],
                               derivative=deriv_full[:keep], eps=eps)


@dataclass
class MollifierBoundRow:
    eps: float
    zero_order_ratio: float     # max |a_eps - a| / (mu(eps) psi)
    first_order_ratio: float    # max |a_eps'| eps / (mu(eps) psi)
    witness_t: float


def mollifier_ratio_table(a: TimeCoefficient, mu: Modulus, psi_grid: np.ndarray,
                          psi_vals: np.ndarray, kernel: MollifierKernel,
                          eps_list) -> list[MollifierBoundRow]:
    """Per-eps maxima of the two mollifier-bound ratios over the grid."""
    rows = []
    for eps in eps_list:
        sm = mollify(a, kernel, eps)
        psi = np.maximum(np.interp(sm.grid, psi_grid, psi_vals), OSCILLATION_FLOOR)
        mu_eps = float(mu(eps))
        zero = np.abs(sm.values - a.values[: len(sm.grid)]) / (mu_eps * psi)
        first = np.abs(sm.derivative) * eps / (mu_eps * psi)
        if np.any(~np.isfinite(zero)) or np.any(~np.isfinite(first)):
            bad = int(np.argmax(~np.isfinite(zero + first)))
            raise ValueError(f"non-finite mollifier ratio at t={sm.grid[bad]:.6g}, eps={eps:.4g}")
        k = int(np.argmax(first))
        rows.append(MollifierBoundRow(eps=float(eps),
                                      zero_order_ratio=float(zero.max()),
                                      first_order_ratio=float(first.max()),
                                      witness_t=float(sm.grid[k])))
    return rows


def estimate_mollifier_constant(a: TimeCoefficient, mu: Modulus, psi_grid: np.ndarray,
                                psi_vals: np.ndarray, kernel: MollifierKernel,
                                eps_list, zero_order_slack: float = 1e-2) -> float:
    """Measured C0 = max over eps and t of |a_eps'| eps / (mu(eps) psi).

    Also asserts the zeroth-order bound |a_eps - a| <= mu(eps) psi (1+slack)
    at every grid point; raises with the witness (t, eps) otherwise.
    """
    rows = mollifier_ratio_table(a, mu, psi_grid, psi_vals, kernel, eps_list)
    for row in rows:
        if row.zero_order_ratio > 1.0 + zero_order_slack:
            raise ValueError(
                f"zeroth-order mollifier bound violated: ratio {row.zero_order_ratio:.4f} "
                f"at t={row.witness_t:.6g}, eps={row.eps:.4g}")
    return max(row.first_order_ratio for row in rows)


def coefficient_to_csv(a: TimeCoefficient, path) -> None:
    np.savetxt(path, np.column_stack([a.grid, a.values]), delimiter=",",
               header="t,a", comments="")


def coefficient_from_csv(path, lambda0: float) -> TimeCoefficient:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"expected two columns (t, a) in {path}")
    grid, vals = data[:, 0], data[:, 1]
    steps = np.diff(grid)
    if np.any(steps <= 0) or abs(steps.max() - steps.min()) > 1e-9 * steps.mean():
        raise ValueError("coefficient grid must be uniform and increasing")
    return TimeCoefficient(grid=grid, values=vals, lambda0=lambda0,
                           meta={"family": "csv", "path": str(path)})
