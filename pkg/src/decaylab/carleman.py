"""Grid verification of the weighted lower-bound machinery.

Everything here works on complex space-time fields v(t, x) over a uniform
time grid and a periodic torus of circumference L, compactly supported in
the interior of the time window. Test fields are synthesized band-limited,
so the spatial Fourier analysis is exact and the checks isolate time
discretization:

  * the spectral energy expansion of the weighted residual norm,
  * the integration-by-parts identity behind the cross term,
  * the pointwise frequency-split claim A(t, xi) >= 0 including the
    two-case high-frequency analysis,
  * the full integral estimate on concrete fields.

The claim integrand is even in xi, so sweeps run over nonnegative torus
modes.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .coefficients import TimeCoefficient
from .weights import WeightBundle

IDENTITY_TOL = 1e-3
IDENTITY_HARD_TOL = 1e-2
CLAIM_TOL = 1e-8
ESTIMATE_TOL = 1e-6
EXPONENT_GUARD = 600.0  # max allowed 2*Phi before e^{2 Phi} risks overflow


class DiscretizationError(RuntimeError):
    """An identity residual exceeded the hard tolerance; refine the grid."""


class ClaimCounterexample(RuntimeError):
    """A claim cell came out negative beyond tolerance (implementation bug)."""

    def __init__(self, message: str, cell: dict):
        self.cell = cell
        super().__init__(message)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SpaceTimeField:
    """Complex samples v(t_i, x_j) on [t0, t1] x [0, L) with compact
    support in time strictly inside the window."""

    t: np.ndarray                 # uniform, t[0] >= 1
    length: float                 # torus circumference L
    values: np.ndarray            # (nt, nx) complex
    support: tuple[float, float]  # (t_a, t_b)

    def __post_init__(self):
        if self.t[0] < 1.0 - 1e-12:
            raise ValueError("time grid must start at or after t = 1")
        nt, nx = self.values.shape
        if nt != len(self.t):
            raise ValueError("values and time grid disagree")
        ta, tb = self.support
        if not (self.t[0] < ta < tb < self.t[-1]):
            raise ValueError("support must sit strictly inside the window")
        outside = (self.t < ta) | (self.t > tb)
        if np.any(np.abs(self.values[outside]) > 0.0):
            raise ValueError("field must vanish outside its support window")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def modes(self) -> np.ndarray:
        """Torus frequencies 2 pi k / L in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.nx, d=self.length / self.nx)

    def spectrum(self) -> np.ndarray:
        """Fourier coefficients c_k(t), normalized so v = sum c_k e^{i xi_k x}."""
        return np.fft.fft(self.values, axis=1) / self.nx


def torus_modes(length: float, nx: int) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(nx, d=length / nx)


def l2_norm_sq_grid(field: SpaceTimeField) -> np.ndarray:
    """|v(t, .)|_{L2}^2 per time sample, physical-side quadrature."""
    return (field.length / field.nx) * np.sum(np.abs(field.values) ** 2, axis=1)


def l2_norm_sq_modes(coeffs: np.ndarray, length: float) -> np.ndarray:
    """|v|_{L2}^2 per time sample from Fourier coefficients."""
    return length * np.sum(np.abs(coeffs) ** 2, axis=1)


def time_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """4th-order centered time derivative; rows near the window edges are
    left zero (fields vanish there by the support margin)."""
    out = np.zeros_like(values)
    out[2:-2] = (-values[4:] + 8.0 * values[3:-1]
                 - 8.0 * values[1:-3] + values[:-4]) / (12.0 * dt)
    return out


# ---------------------------------------------------------------------------
# Test-field synthesis
# ---------------------------------------------------------------------------

def _smooth_bump(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass
class FieldSpec:
    """Resolution-independent description of a synthetic test field."""

    kind: str                       # separable | superposition
    windows: list[tuple[float, float]]
    mode_indices: list[np.ndarray]
    mode_coeffs: list[np.ndarray]
    length: float


def random_field_spec(rng: np.random.Generator, t_lo: float, t_hi: float,
                      length: float, nx: int, kind: str = "mixed") -> FieldSpec:
    """Draw bump windows and band-limited spatial profiles (degree <= nx/8)."""
    if kind == "mixed":
        kind = "separable" if rng.random() < 0.5 else "superposition"
    parts = 1 if kind == "separable" else 3
    span = t_hi - t_lo
    degree = max(2, nx // 8)
    windows, idxs, coeffs = [], [], []
    for _ in range(parts):
        width = span * rng.uniform(0.3, 0.8)
        a = t_lo + rng.uniform(0.05, 0.9) * (span - width)
        windows.append((a, a + width))
        k = rng.integers(-degree, degree + 1, size=8)
        c = (rng.normal(size=8) + 1j * rng.normal(size=8)) / (1.0 + np.abs(k)) ** 2
        idxs.append(k)
        coeffs.append(c)
    return FieldSpec(kind=kind, windows=windows, mode_indices=idxs,
                     mode_coeffs=coeffs, length=length)


def materialize_field(spec: FieldSpec, t: np.ndarray, nx: int) -> SpaceTimeField:
    """Sample a FieldSpec on a given time grid (any resolution)."""
    x = np.arange(nx) * (spec.length / nx)
    base = 2.0 * np.pi / spec.length
    values = np.zeros((len(t), nx), dtype=complex)
    t_a = min(w[0] for w in spec.windows)
    t_b = max(w[1] for w in spec.windows)
    for (a, b), ks, cs in zip(spec.windows, spec.mode_indices, spec.mode_coeffs):
        s = (2.0 * t - (a + b)) / (b - a)
        g = _smooth_bump(s)
        h = np.zeros(nx, dtype=complex)
        for k, c in zip(ks, cs):
            h += c * np.exp(1j * (base * k) * x)
        values += np.outer(g, h)
    return SpaceTimeField(t=t, length=spec.length, values=values,
                          support=(t_a, t_b))


def random_test_fields(t: np.ndarray, length: float, nx: int, count: int,
                       seed: int, kind: str = "mixed") -> list[SpaceTimeField]:
    rng = np.random.default_rng(seed)
    margin = 8.0 * float(t[1] - t[0])
    return [materialize_field(
        random_field_spec(rng, float(t[0]) + margin, float(t[-1]) - margin,
                          length, nx, kind), t, nx)
        for _ in range(count)]


# ---------------------------------------------------------------------------
# Bundle alignment and the weighted substitution
# ---------------------------------------------------------------------------

def bundle_rows(bundle: WeightBundle, t: np.ndarray) -> np.ndarray:
    """Indices of the field's time grid inside the bundle grid (must align)."""
    idx = np.round(t / bundle.spacing).astype(int)
    if idx[0] < 0 or idx[-1] >= len(bundle.grid):
        raise ValueError("field window leaves the bundle grid")
    if np.max(np.abs(bundle.grid[idx] - t)) > 1e-9 * max(1.0, float(t[-1])):
        raise ValueError("field grid does not align with the bundle grid")
    return idx


def apply_weight(v: SpaceTimeField, bundle: WeightBundle) -> SpaceTimeField:
    """z = e^{exponent(t)} v, the substitution carrying the weight."""
    rows = bundle_rows(bundle, v.t)
    expo = bundle.exponent[rows]
    if 2.0 * float(expo.max()) > EXPONENT_GUARD:
        raise OverflowError(
            f"2*exponent reaches {2 * expo.max():.1f}; reduce the window t_max "
            f"or the parameter gamma")
    return SpaceTimeField(t=v.t, length=v.length,
                          values=v.values * np.exp(expo)[:, None],
                          support=v.support)


def _check_band_resolution(coeffs: np.ndarray, threshold: float = 1e-8) -> None:
    nx = coeffs.shape[1]
    power = np.sum(np.abs(coeffs) ** 2, axis=0)
    total = float(power.sum())
    if total == 0.0:
        return
    k = np.fft.fftfreq(nx) * nx
    top = float(power[np.abs(k) >= nx // 4].sum())
    if top > threshold * total:
        raise DiscretizationError(
            f"spectral tail holds {top/total:.2e} of the energy; increase the "
            f"mode count")


@dataclass(eq=False)
class _AlignedTables:
    rows: np.ndarray
    damping: np.ndarray
    exponent: np.ndarray
    rate: np.ndarray
    damped_cum: np.ndarray
    forcing: np.ndarray
    oscillation: np.ndarray
    gain_scaled: np.ndarray
    gain_rate_scaled: np.ndarray
    a_vals: np.ndarray | None = None


def _align(bundle: WeightBundle, v: SpaceTimeField,
           a: TimeCoefficient | None = None) -> _AlignedTables:
    rows = bundle_rows(bundle, v.t)
    return _AlignedTables(
        rows=rows,
        damping=bundle.damping[rows],
        exponent=bundle.exponent[rows],
        rate=bundle.exponent_rate[rows],
        damped_cum=bundle.damped_forcing_cum[rows],
        forcing=bundle.controls.forcing(v.t),
        oscillation=bundle.controls.oscillation(v.t),
        gain_scaled=bundle.gain.at_scaled(v.t),
        gain_rate_scaled=bundle.gain.rate_scaled(v.t),
        a_vals=None if a is None else a(v.t))


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------

def energy_identity_residual(v: SpaceTimeField, bundle: WeightBundle,
                             a: TimeCoefficient,
                             hard_tol: float = IDENTITY_HARD_TOL) -> float:
    """Relative gap between the physical weighted residual norm and its
    three-term spectral expansion.

    Left side: int b e^{2 exponent} |v_t - a v_xx|^2 dt with v_t by
    finite differences and v_xx spectral. Right side: the |z_t|^2,
    (a xi^2 - rate)^2 |z|^2 and cross terms of z = e^{exponent} v. Both
    sides share the time quadrature, so the residual isolates the
    product-rule truncation.
    """
    tab = _align(bundle, v, a)
    dt = v.dt
    xi = v.modes
    coeffs = v.spectrum()
    _check_band_resolution(coeffs)

    # physical side
    v_t = time_derivative(v.values, dt)
    v_xx = np.fft.ifft(coeffs * (-xi ** 2)[None, :] * v.nx, axis=1)
    resid = v_t - tab.a_vals[:, None] * v_xx
    w2 = np.exp(2.0 * tab.exponent)
    lhs = dt * float(np.sum(tab.damping * w2
                            * (v.length / v.nx) * np.sum(np.abs(resid) ** 2, axis=1)))

    # spectral side on z = e^{exponent} v
    z_hat = coeffs * np.exp(tab.exponent)[:, None]
    z_hat_t = time_derivative(z_hat, dt)
    sym = tab.a_vals[:, None] * (xi ** 2)[None, :] - tab.rate[:, None]
    t1 = dt * v.length * float(np.sum(tab.damping[:, None] * np.abs(z_hat_t) ** 2))
    t2 = dt * v.length * float(np.sum(tab.damping[:, None] * sym ** 2
                                      * np.abs(z_hat) ** 2))
    t3 = dt * v.length * 2.0 * float(np.sum(
        tab.damping[:, None] * sym * np.real(z_hat_t * np.conj(z_hat))))
    rhs = t1 + t2 + t3
    residual = abs(lhs - rhs) / (1.0 + lhs)
    if residual > hard_tol:
        raise DiscretizationError(
            f"energy expansion residual {residual:.3e}; halve dt or enlarge the "
            f"support margin")
    return residual


def parts_identity_residual(v: SpaceTimeField, bundle: WeightBundle,
                            hard_tol: float = IDENTITY_HARD_TOL) -> float:
    """Relative gap in the cross-term integration-by-parts identity:

    -2 Re int b rate z_t conj(z) = int gain(g t) b phi |z|^2
                                   + int g gain'(g t) (int_0^t b phi) |z|^2
    """
    tab = _align(bundle, v)
    dt = v.dt
    z_hat = v.spectrum() * np.exp(tab.exponent)[:, None]
    z_hat_t = time_derivative(z_hat, dt)
    lhs = -2.0 * dt * v.length * float(np.sum(
        (tab.damping * tab.rate)[:, None] * np.real(z_hat_t * np.conj(z_hat))))
    znorm = l2_norm_sq_modes(z_hat, v.length)
    rhs = dt * float(np.sum(
        (tab.gain_scaled * tab.damping * tab.forcing
         + bundle.gamma * tab.gain_rate_scaled * tab.damped_cum) * znorm))
    residual = abs(lhs - rhs) / (1.0 + abs(lhs))
    if residual > hard_tol:
        raise DiscretizationError(
            f"integration-by-parts residual {residual:.3e}; halve dt")
    return residual


def product_rule_residual(bundle: WeightBundle, t_lo: float = 1.0,
                          t_hi: float | None = None) -> float:
    """Max gap between the centered difference of b*rate and its product-rule
    expansion gamma gain'(gamma t) int_0^t b phi + gain(gamma t) b phi."""
    grid = bundle.grid
    hi = t_hi if t_hi is not None else float(grid[-1]) - bundle.spacing
    sel = (grid >= t_lo) & (grid <= hi)
    idx = np.nonzero(sel)[0]
    idx = idx[(idx > 0) & (idx < len(grid) - 1)]
    brate = bundle.damping * bundle.exponent_rate
    fd = (brate[idx + 1] - brate[idx - 1]) / (2.0 * bundle.spacing)
    t = grid[idx]
    expand = (bundle.gamma * bundle.gain.rate_scaled(t) * bundle.damped_forcing_cum[idx]
              + bundle.gain.at_scaled(t) * bundle.damping[idx]
              * bundle.controls.forcing(t))
    return float(np.max(np.abs(fd - expand) / (1.0 + np.abs(fd))))


# ---------------------------------------------------------------------------
# Pointwise claim
# ---------------------------------------------------------------------------

@dataclass
class ClaimReport:
    min_margin_rel: float           # min A / scale over all cells
    min_margin_abs: float
    worst_cell: dict
    branch_counts: dict
    certificate_failures: int
    cells: np.ndarray               # structured (gamma, t, xi, margin, branch)
    gamma_values: tuple


CELL_DTYPE = np.dtype([("gamma", float), ("t", float), ("xi", float),
                       ("margin", float), ("branch", "U4")])


def pointwise_claim_sweep(bundles: Iterable[WeightBundle], a: TimeCoefficient,
                          t_lo: float, t_hi: float, xi_values: np.ndarray,
                          t_stride: int = 1, tol: float = CLAIM_TOL,
                          cert_slack: float = 1e-9) -> ClaimReport:
    """Evaluate the claim integrand A(t, xi) on the grid for each bundle.

    A = b (a xi^2 - rate)^2 + gamma gain'(gamma t) int_0^t b phi
        - b psi (C0 mu(eps_xi)/eps_xi xi^2 + psi mu(eps_xi)^2 xi^4)

    Records which branch certifies each cell: 'low' (|xi| <= cutoff, the
    gain-threshold chain), 'quad' (a xi^2 >= 2 rate, dissipation wins) or
    'gain' (a xi^2 <= 2 rate, the gain slope wins); asserts the branch's
    dominating-term inequality cell by cell. Raises ClaimCounterexample
    on any A < -tol * scale.
    """
    xi_values = np.abs(np.asarray(xi_values, dtype=float))
    chunks = []
    worst = None
    min_rel = math.inf
    min_abs = math.inf
    counts = {"low": 0, "quad": 0, "gain": 0}
    cert_failures = 0
    gamma_values = []
    for bundle in bundles:
        gamma_values.append(bundle.gamma)
        grid = bundle.grid
        sel = np.nonzero((grid >= t_lo - 1e-12) & (grid <= t_hi + 1e-12))[0][::t_stride]
        t = grid[sel]
        b = bundle.damping[sel]
        rate = bundle.exponent_rate[sel]
        damped_cum = bundle.damped_forcing_cum[sel]
        psi = bundle.controls.oscillation(t)
        a_vals = a(t)
        gain_rate = bundle.gain.rate_scaled(t)
        c0 = bundle.mollifier_constant
        mu = bundle.mu

        eps = bundle.smoothing_scale(xi_values)
        mu_eps = mu(eps)
        xi2 = xi_values ** 2
        sub_low_fac = c0 * (mu_eps / eps) * xi2
        sub_quartic = mu_eps ** 2 * xi2 ** 2

        quad_term = b[:, None] * (a_vals[:, None] * xi2[None, :] - rate[:, None]) ** 2
        gain_term = (bundle.gamma * gain_rate * damped_cum)[:, None]
        sub = (b * psi)[:, None] * (sub_low_fac[None, :]
                                    + psi[:, None] * sub_quartic[None, :])
        a_cell = quad_term + gain_term - sub
        scale = quad_term + gain_term + sub

        is_low = xi_values <= bundle.freq_cutoff
        is_quad = (~is_low)[None, :] & (a_vals[:, None] * xi2[None, :]
                                        >= 2.0 * rate[:, None])
        branch = np.where(is_low[None, :] & np.ones_like(a_cell, dtype=bool), "low",
                          np.where(is_quad, "quad", "gain"))

        dominating = np.where(branch == "quad", quad_term, gain_term)
        cert_ok = dominating >= sub * (1.0 - cert_slack)
        cert_failures += int(np.sum(~cert_ok))

        counts["low"] += int(np.sum(branch == "low"))
        counts["quad"] += int(np.sum(branch == "quad"))
        counts["gain"] += int(np.sum(branch == "gain"))

        rel = a_cell / np.maximum(scale, 1e-300)
        i, j = np.unravel_index(int(np.argmin(rel)), rel.shape)
        if rel[i, j] < min_rel:
            min_rel = float(rel[i, j])
            min_abs = float(a_cell[i, j])
            worst = {"gamma": bundle.gamma, "t": float(t[i]), "xi": float(xi_values[j]),
                     "value": float(a_cell[i, j]), "scale": float(scale[i, j]),
                     "branch": str(branch[i, j])}
        bad = a_cell < -tol * scale
        if np.any(bad):
            bi, bj = np.unravel_index(int(np.argmax(bad)), bad.shape)
            cell = {"gamma": bundle.gamma, "t": float(t[bi]), "xi": float(xi_values[bj]),
                    "value": float(a_cell[bi, bj]), "scale": float(scale[bi, bj]),
                    "quad_term": float(quad_term[bi, bj]),
                    "gain_term": float(gain_term[bi, 0]),
                    "subtracted": float(sub[bi, bj]),
                    "branch": str(branch[bi, bj])}
            raise ClaimCounterexample(
                f"claim integrand negative beyond tolerance at {cell}", cell)

        rows = np.empty(a_cell.size, dtype=CELL_DTYPE)
        tt, xx = np.meshgrid(t, xi_values, indexing="ij")
        rows["gamma"] = bundle.gamma
        rows["t"] = tt.ravel()
        rows["xi"] = xx.ravel()
        rows["margin"] = rel.ravel()
        rows["branch"] = branch.ravel()
        chunks.append(rows)

    return ClaimReport(min_margin_rel=min_rel, min_margin_abs=min_abs,
                       worst_cell=worst or {}, branch_counts=counts,
                       certificate_failures=cert_failures,
                       cells=np.concatenate(chunks),
                       gamma_values=tuple(gamma_values))


# ---------------------------------------------------------------------------
# The integral estimate
# ---------------------------------------------------------------------------

@dataclass
class EstimateReport:
    lhs: float
    rhs_gradient_term: float
    rhs_zero_order_term: float
    margin: float
    margin_rel: float               # margin / max(lhs, tiny)
    passed: bool
    pointwise_min_margin: float | None = None
    case_tags: dict | None = None

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs_gradient_term": self.rhs_gradient_term,
            "rhs_zero_order_term": self.rhs_zero_order_term,
            "margin": self.margin,
            "margin_rel": self.margin_rel,
            "passed": self.passed,
            "pointwise_min_margin": self.pointwise_min_margin,
            "case_tags": self.case_tags,
        }


def carleman_estimate_report(v: SpaceTimeField, bundle: WeightBundle,
                             a: TimeCoefficient,
                             tol: float = ESTIMATE_TOL) -> EstimateReport:
    """The three integrals of the weighted estimate and their margin.

    lhs  = int b e^{2 exponent} |v_t - a v_xx|^2
    rhs1 = (alpha / lambda0) int b phi e^{2 exponent} |v_x|^2
    rhs2 = int gain(gamma t) b phi e^{2 exponent} |v|^2
    """
    tab = _align(bundle, v, a)
    if 2.0 * float(tab.exponent.max()) > EXPONENT_GUARD:
        raise OverflowError(
            "2*exponent exceeds the overflow guard; reduce t_max or gamma")
    dt = v.dt
    xi = v.modes
    coeffs = v.spectrum()
    _check_band_resolution(coeffs)
    v_t = time_derivative(v.values, dt)
    v_xx = np.fft.ifft(coeffs * (-xi ** 2)[None, :] * v.nx, axis=1)
    resid_sq = (v.length / v.nx) * np.sum(np.abs(v_t - tab.a_vals[:, None] * v_xx) ** 2,
                                          axis=1)
    w2 = np.exp(2.0 * tab.exponent)
    lhs = dt * float(np.sum(tab.damping * w2 * resid_sq))

    grad_sq = v.length * np.sum((xi ** 2)[None, :] * np.abs(coeffs) ** 2, axis=1)
    norm_sq = l2_norm_sq_modes(coeffs, v.length)
    common = tab.damping * tab.forcing * w2
    rhs1 = (bundle.alpha / bundle.lambda0) * dt * float(np.sum(common * grad_sq))
    rhs2 = dt * float(np.sum(tab.gain_scaled * common * norm_sq))
    margin = lhs - rhs1 - rhs2
    margin_rel = margin / max(lhs, 1e-300)
    return EstimateReport(lhs=lhs, rhs_gradient_term=rhs1,
                          rhs_zero_order_term=rhs2, margin=margin,
                          margin_rel=margin_rel,
                          passed=bool(margin >= -tol * lhs))


def estimate_suite(bundles: Iterable[WeightBundle], a: TimeCoefficient,
                   t: np.ndarray, length: float, nx: int, count: int,
                   seed: int, threads: int = 1) -> list[EstimateReport]:
    """Seeded estimate reports over `count` fields per bundle, deterministic
    regardless of thread count (results merged in index order)."""
    fields = random_test_fields(t, length, nx, count, seed)
    jobs = [(b, f) for b in bundles for f in fields]
    if threads <= 1:
        return [carleman_estimate_report(f, b, a) for b, f in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda bf: carleman_estimate_report(bf[1], bf[0], a),
                             jobs))
