"""Ising interaction kernel W(t) = 1/4 int |v(k)|^2 exp(-|t| omega(k)) dk.

Both kinds of source reduce to an exponential sum W(t) = sum_i c_i exp(-|t| w_i):
for DiscreteModes the terms are the modes themselves, for a continuum
ModelSpec they are the nodes of a composite radial rule (one Gauss-Jacobi
panel carrying the r^(d-1-2 alpha) singularity at the origin, then
geometrically growing Gauss-Legendre panels up to the support radius).
Phi(u) = int_0^u W and V(u) = int_0^u Phi follow in closed form per term.
"""

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, special

from . import model
from .errors import ArgumentError, InternalConsistencyError, RangeError, TabulationError
from .streams import stream

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
DEFAULT_T_MAX = 100.0
L1_RTOL = 1e-8
PANELS = 50
PANEL_ORDER = 24
PROBES = 1000
PROBE_STREAM = 0x5EED
MAX_REFINEMENTS = 8
TAIL_RESIDUAL = 1e-3
_CHUNK = 2048


def _one_minus_exp(x):
    """1 - exp(-x)."""
    return -np.expm1(-x)


def _second_remainder(x):
    """x - 1 + exp(-x), accurate for small x."""
    small = x < 1e-2
    xs = np.where(small, x, 0.0)
    series = xs * xs * (0.5 - xs * (1 / 6 - xs * (1 / 24 - xs * (1 / 120 - xs * (1 / 720 - xs / 5040)))))
    return np.where(small, series, x + np.expm1(-np.where(small, 1.0, x)))


class ExponentialSum:
    """Direct evaluator for W, W', Phi and V from coefficients c_i and rates w_i."""

    def __init__(self, coefficients, rates, label):
        self.c = np.asarray(coefficients, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        self.label = label

    @property
    def time_scale(self):
        """Shortest decay time among the significant terms."""
        significant = self.c > self.c.max() * 1e-12
        return 1.0 / float(self.rates[significant].max())

    def _apply(self, t, fn):
        t = np.abs(np.asarray(t, dtype=float))
        flat = t.reshape(-1)
        out = np.empty_like(flat)
        for start in range(0, flat.size, _CHUNK):
            block = flat[start:start + _CHUNK, None]
            out[start:start + _CHUNK] = fn(block) @ self.c
        return out.reshape(t.shape)

    def W(self, t):
        return self._apply(t, lambda u: np.exp(-u * self.rates))

    def W_prime(self, t):
        """dW/dt for t > 0 (the right derivative at 0)."""
        return self._apply(t, lambda u: -self.rates * np.exp(-u * self.rates))

    def Phi(self, t):
        sign = np.sign(np.asarray(t, dtype=float))
        return sign * self._apply(t, lambda u: _one_minus_exp(u * self.rates) / self.rates)

    def V(self, t):
        return self._apply(t, lambda u: _second_remainder(u * self.rates) / self.rates**2)

    def tail_integral(self, t):
        """int_t^inf W."""
        return float(np.sum(self.c * np.exp(-t * self.rates) / self.rates))


class ContinuumSum(ExponentialSum):
    def tail_integral(self, t):
        # the node rule is not built for the 1/omega singularity, so use adaptive quadrature
        value, _ = integrate.quad(lambda s: float(self.W(s)), t, np.inf,
                                  epsabs=0.0, epsrel=1e-12, limit=500)
        return value


@functools.lru_cache(maxsize=32)
def _continuum_sum(spec):
    upper = spec.support_radius
    p = spec.dimension - 1.0 - 2.0 * spec.alpha
    r0 = upper * 2.0**-PANELS
    x, w = special.roots_jacobi(PANEL_ORDER, 0.0, p)
    nodes = [0.5 * r0 * (x + 1.0)]
    weights = [(0.5 * r0) ** (p + 1.0) * w]
    xg, wg = np.polynomial.legendre.leggauss(PANEL_ORDER)
    edges = r0 * 2.0 ** np.arange(PANELS + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        r = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
        nodes.append(r)
        weights.append(0.5 * (hi - lo) * wg * r**p)
    r = np.concatenate(nodes)
    c = 0.25 * spec.sphere_area * np.concatenate(weights) * spec.cutoff_profile(r) ** 2
    keep = c > 0.0
    return ContinuumSum(c[keep], spec.omega(r[keep]), label="continuum")


def direct_evaluator(source):
    """ExponentialSum for a ModelSpec or DiscreteModes source."""
    if isinstance(source, model.DiscreteModes):
        return ExponentialSum(0.25 * source.v**2, source.omega, label="discrete")
    if isinstance(source, model.ModelSpec):
        return _continuum_sum(source)
    raise ArgumentError(f"unsupported kernel source {type(source).__name__}")


def kernel_value(source, t):
    """W(t), even in t: exact sum for discrete modes, radial quadrature for the continuum."""
    value = direct_evaluator(source).W(t)
    return float(value) if np.ndim(value) == 0 else value


def massless_sharp_kernel(spec, t):
    """Closed form 1/4 S_{d-1} t^-(q) gamma(q, t Lambda), q = d - 2 alpha, of the massless sharp model."""
    if spec.dispersion is not model.Dispersion.MASSLESS or spec.cutoff is not model.Cutoff.SHARP:
        raise ArgumentError("closed form only for the massless sharp-cutoff model")
    q = spec.dimension - 2.0 * spec.alpha
    t = np.abs(np.asarray(t, dtype=float))
    lam = spec.cutoff_radius
    with np.errstate(divide="ignore", invalid="ignore"):
        value = special.gamma(q) * special.gammainc(q, t * lam) * np.power(t, -q)
    value = np.where(t == 0.0, lam**q / q, value)
    return 0.25 * spec.sphere_area * value


@dataclass(frozen=True)
class TailFit:
    exponent: float
    constant: float
    residual: float
    conclusive: bool
    window: tuple = ()
    reason: str = ""

    def W(self, t):
        return self.constant * np.power(np.abs(t), -self.exponent)

    def _power_integral(self, start, t, power):
        """int_start^t s^(power - exponent) ds, stable as the exponent approaches power + 1."""
        q = 1.0 + power - self.exponent
        x = np.log(t / start)
        qx = q * x
        ratio = np.where(np.abs(qx) > 1e-12, np.expm1(qx) / np.where(q == 0.0, 1.0, q), x)
        return start**q * ratio

    def Phi_beyond(self, start, t):
        """int_start^t W for t >= start."""
        return self.constant * self._power_integral(start, t, 0.0)

    def V_beyond(self, start, t):
        """int_start^t (t - s) W(s) ds for t >= start."""
        return self.constant * (t * self._power_integral(start, t, 0.0) - self._power_integral(start, t, 1.0))

    def integral_from(self, t):
        if self.exponent <= 1.0:
            return math.inf
        return self.constant * t ** (1.0 - self.exponent) / (self.exponent - 1.0)

    def to_record(self):
        return {
            "exponent": self.exponent,
            "constant": self.constant,
            "residual": self.residual,
            "conclusive": self.conclusive,
            "window": list(self.window),
            "reason": self.reason,
        }


def tail_asymptote(source, t_max=DEFAULT_T_MAX, points=65):
    """
    Fit W(t) ~ C t^-p on [t_max/2, t_max] in log-log coordinates.

    An exponential (discrete or massive) decay leaves a large fit residual and
    is reported as inconclusive instead of raising.
    """
    direct = direct_evaluator(source)
    t = np.geomspace(0.5 * t_max, t_max, points)
    w = direct.W(t)
    window = (0.5 * t_max, t_max)
    if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
        log.warning("kernel tail fit inconclusive: W underflows on [%g, %g]", *window)
        return TailFit(math.nan, math.nan, math.inf, False, window, "kernel underflows")
    slope, intercept = np.polyfit(np.log(t), np.log(w), 1)
    residual = float(np.max(np.abs(np.log(w) - (slope * np.log(t) + intercept))))
    fit = TailFit(float(-slope), float(math.exp(intercept)), residual,
                  residual < TAIL_RESIDUAL and -slope > 0.0, window)
    if not fit.conclusive:
        fit = TailFit(fit.exponent, fit.constant, residual, False, window,
                      "no power law (exponential decay)")
        log.warning("kernel tail fit inconclusive for %s source: log residual %.3g",
                    direct.label, residual)
    return fit


def _hybrid_grid(t_max, time_scale, n_uniform, n_log):
    """Uniform on [0, t_switch], logarithmic on [t_switch, t_max]."""
    t_switch = min(t_max, 2.0 * time_scale)
    uniform = np.linspace(0.0, t_switch, n_uniform + 1)
    if t_switch >= t_max:
        return uniform
    tail = np.geomspace(t_switch, t_max, n_log + 1)[1:]
    return np.concatenate([uniform, tail])


@dataclass(frozen=True)
class KernelTable:
    """
    Tabulated W, Phi, V with cubic Hermite interpolation using exact slopes.

    Past t_max all three follow the fitted power-law tail W ~ C t^-p when the
    fit is conclusive, and the direct exponential sum otherwise.

    Values are stored without the lambda^2 factor. Evaluation is even in t for
    W and V and odd for Phi.
    """

    source: object
    grid: np.ndarray
    W_values: np.ndarray
    Phi_values: np.ndarray
    V_values: np.ndarray
    tail: TailFit
    tolerance: float
    diagnostics: dict = field(default_factory=dict)
    direct: ExponentialSum = field(default=None, repr=False)

    def __post_init__(self):
        slopes = self.direct.W_prime(self.grid)
        object.__setattr__(self, "_W", interpolate.CubicHermiteSpline(self.grid, self.W_values, slopes))
        object.__setattr__(self, "_Phi", interpolate.CubicHermiteSpline(self.grid, self.Phi_values, self.W_values))
        object.__setattr__(self, "_V", interpolate.CubicHermiteSpline(self.grid, self.V_values, self.Phi_values))

    @property
    def t_max(self):
        return float(self.grid[-1])

    def W(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        inside = t <= self.t_max
        if np.all(inside):
            return self._W(t)
        beyond = self.tail.W(t) if self.tail.conclusive else self.direct.W(t)
        return np.where(inside, self._W(np.minimum(t, self.t_max)), beyond)

    def _beyond(self, t, body, power_law, direct):
        """Interpolant on [0, t_max]; past t_max the power-law tail when conclusive, else the direct sum."""
        inside = t <= self.t_max
        if np.all(inside):
            return body(t)
        far = np.maximum(t, self.t_max)
        beyond = power_law(far) if self.tail.conclusive else direct(far)
        return np.where(inside, body(np.minimum(t, self.t_max)), beyond)

    def Phi(self, t):
        t = np.asarray(t, dtype=float)
        tm = self.t_max
        end = float(self.Phi_values[-1])
        value = self._beyond(np.abs(t), self._Phi, lambda u: end + self.tail.Phi_beyond(tm, u), self.direct.Phi)
        return np.sign(t) * value

    def V(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        tm = self.t_max
        end_phi, end_v = float(self.Phi_values[-1]), float(self.V_values[-1])
        return self._beyond(t, self._V, lambda u: end_v + end_phi * (u - tm) + self.tail.V_beyond(tm, u),
                            self.direct.V)

    def integral(self):
        """int_0^t_max of the interpolated W plus the directly integrated tail beyond t_max."""
        body = float(self._W.integrate(0.0, self.t_max))
        return body + self.direct.tail_integral(self.t_max)

    def probe_ratio(self, n_probes=PROBES):
        """Worst |interpolated - direct| / (tolerance * max(W(0), |direct|)) over W, Phi, V."""
        rng = stream(PROBE_STREAM)
        half = n_probes // 2
        probes = np.concatenate([
            rng.uniform(0.0, self.t_max, n_probes - half),
            np.exp(rng.uniform(math.log(self.t_max * 1e-6), math.log(self.t_max), half)),
        ])
        w0 = float(self.W_values[0])
        worst = 0.0
        for interp, exact in ((self._W, self.direct.W), (self._Phi, self.direct.Phi), (self._V, self.direct.V)):
            truth = exact(probes)
            scale = self.tolerance * np.maximum(w0, np.abs(truth))
            worst = max(worst, float(np.max(np.abs(interp(probes) - truth) / scale)))
        return worst

    def rows(self):
        return np.column_stack([self.grid, self.W_values, self.Phi_values, self.V_values])

    def summary(self):
        return {
            "source": self.direct.label,
            "t_max": self.t_max,
            "grid_points": int(self.grid.size),
            "tolerance": self.tolerance,
            "W0": float(self.W_values[0]),
            "tail": self.tail.to_record(),
            **self.diagnostics,
        }


def build_table(source, t_max=DEFAULT_T_MAX, tolerance=DEFAULT_TOLERANCE, max_refinements=MAX_REFINEMENTS):
    """
    Tabulate W, Phi and V on a hybrid grid.

    The grid is doubled until the interpolants meet the tolerance at the probe
    points; after max_refinements doublings a TabulationError is raised with
    the diagnostics of the last attempt.
    """
    if not t_max > 0.0:
        raise ArgumentError(f"t_max must be positive, got {t_max}")
    if not tolerance > 0.0:
        raise ArgumentError(f"tolerance must be positive, got {tolerance}")
    direct = direct_evaluator(source)
    if isinstance(source, model.DiscreteModes):
        tail = TailFit(math.nan, math.nan, math.inf, False, (), "discrete source")
    else:
        tail = tail_asymptote(source, t_max=t_max)
    n_uniform, n_log = 64, 64
    history = []
    for level in range(max_refinements + 1):
        grid = _hybrid_grid(t_max, direct.time_scale, n_uniform, n_log)
        table = KernelTable(
            source=source,
            grid=grid,
            W_values=direct.W(grid),
            Phi_values=direct.Phi(grid),
            V_values=direct.V(grid),
            tail=tail,
            tolerance=tolerance,
            direct=direct,
        )
        ratio = table.probe_ratio()
        history.append({"grid_points": int(grid.size), "probe_ratio": ratio})
        log.debug("kernel table level %d: %d points, probe ratio %.3g", level, grid.size, ratio)
        if ratio <= 1.0:
            object.__setattr__(table, "diagnostics", {"refinements": level, "probe_ratio": ratio})
            return table
        n_uniform *= 2
        n_log *= 2
    raise TabulationError(f"kernel table missed tolerance {tolerance:g} after {max_refinements} refinements",
                          history=history)


def segment_pair_integral(table, first, second):
    """
    int_a^b int_c^d W(t - s) dt ds = V(b-c) - V(a-c) - V(b-d) + V(a-d).

    Args:
        table: KernelTable with t_max covering the intervals
        first: (a, b) with a < b
        second: (c, d) with c < d
    """
    a, b = first
    c, d = second
    if not (a < b and c < d):
        raise ArgumentError("intervals must satisfy a < b and c < d")
    if min(a, c) < 0.0 or max(b, d) > table.t_max:
        raise RangeError(f"intervals leave the tabulated range [0, {table.t_max:g}]", t_max=table.t_max)
    v = table.V(np.array([b - c, a - d, a - c, b - d]))
    return float((v[0] + v[1]) - (v[2] + v[3]))


def l1_norm(source, table=None, t_max=DEFAULT_T_MAX, tolerance=DEFAULT_TOLERANCE):
    """
    int_R W(t) dt, computed by the Fubini swap 1/2 ||omega^-1/2 v||^2 and by time
    quadrature of the tabulated kernel; the two must agree to 1e-8 relative.
    """
    if isinstance(source, model.DiscreteModes):
        fubini = 0.5 * source.weighted_norm_squared(0.5)
    else:
        half = model.weighted_norm_squared(source, 0.5)
        if not math.isfinite(half):
            raise model.ModelClassError("||omega^-1/2 v||_2 is infinite: W is not integrable")
        fubini = 0.5 * half
    table = table if table is not None else build_table(source, t_max=t_max, tolerance=tolerance)
    quadrature = 2.0 * table.integral()
    if abs(quadrature - fubini) > L1_RTOL * abs(fubini):
        raise InternalConsistencyError(
            f"kernel L1 norm: Fubini {fubini:.12g} vs time quadrature {quadrature:.12g}",
            fubini=fubini, quadrature=quadrature)
    return fubini
