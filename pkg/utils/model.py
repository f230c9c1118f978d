"""Continuum spin-boson model data and its discretization into point modes.

The model lives on R^d with a radial dispersion omega(|k|) and a radial form
factor v(k) = kappa(|k|) |k|^(-alpha). All momentum integrals reduce to radial
integrals against the measure S_{d-1} r^(d-1) dr, which is what every
function below evaluates.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import integrate

from .errors import ArgumentError, ConfigurationError, ModelClassError, PreconditionError

log = logging.getLogger(__name__)

QUAD_RTOL = 1e-10
GAUSSIAN_FLOOR = 1e-16   # kappa^2 relative to its maximum where gaussian integrals stop
LOG_RADIAL_FLOOR = 1e-6  # innermost node of the log-radial scheme, relative to the support


class Dispersion(str, Enum):
    MASSLESS = "massless"
    SHIFT = "massive-shift"
    QUADRATURE = "massive-quadrature"


class Cutoff(str, Enum):
    SHARP = "sharp"
    GAUSSIAN = "gaussian"


class Scheme(str, Enum):
    UNIFORM = "uniform-radial"
    LOG = "log-radial"
    GAUSS = "gauss-legendre"


class InfraredClass(str, Enum):
    REGULAR = "infrared-regular"
    CRITICAL = "infrared-critical"


@dataclass(frozen=True)
class ModelSpec:
    """
    Continuum description of the spin-boson model.

    Args:
        dimension: spatial dimension d
        dispersion: massless |k|, massive-shift |k|+m or massive-quadrature sqrt(|k|^2+m^2)
        mass: boson mass m (0 for the massless dispersion)
        alpha: form-factor exponent in [0, 1)
        cutoff: sharp ball of radius cutoff_radius, or gaussian exp(-|k|^2/cutoff_radius^2)
        cutoff_radius: Lambda for the sharp cutoff, gaussian width otherwise
        coupling: lambda
        field: mu
    """

    dimension: int = 3
    dispersion: Dispersion = Dispersion.MASSLESS
    mass: float = 0.0
    alpha: float = 0.5
    cutoff: Cutoff = Cutoff.SHARP
    cutoff_radius: float = 1.0
    coupling: float = 0.0
    field: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "dispersion", Dispersion(self.dispersion))
            object.__setattr__(self, "cutoff", Cutoff(self.cutoff))
        except ValueError as e:
            raise ConfigurationError(str(e), reason="model.unknown_choice") from e
        object.__setattr__(self, "dimension", int(self.dimension))
        for name in ("mass", "alpha", "cutoff_radius", "coupling", "field"):
            object.__setattr__(self, name, float(getattr(self, name)))
        self.validate()

    def validate(self):
        """Raise ConfigurationError unless v = kappa |k|^-alpha is a valid L^2 form factor."""
        if self.dimension < 1:
            raise ConfigurationError(f"dimension must be positive, got {self.dimension}",
                                     reason="model.dimension")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {self.alpha}",
                                     reason="model.alpha")
        if not self.cutoff_radius > 0.0:
            raise ConfigurationError(f"cutoff radius must be positive, got {self.cutoff_radius}",
                                     reason="model.cutoff")
        if self.mass < 0.0:
            raise ConfigurationError(f"mass must be nonnegative, got {self.mass}", reason="model.mass")
        if self.dispersion is Dispersion.MASSLESS and self.mass != 0.0:
            raise ConfigurationError("the massless dispersion takes no mass; use a massive dispersion",
                                     reason="model.mass")
        # v in L^2: r^(d-1-2 alpha) integrable at 0
        if self.dimension - 2.0 * self.alpha <= 0.0:
            raise ConfigurationError("form factor is not square integrable near k = 0",
                                     reason="model.not_l2")

    @property
    def m_omega(self):
        """Essential infimum of the dispersion (the boson mass)."""
        return 0.0 if self.dispersion is Dispersion.MASSLESS else self.mass

    @property
    def sphere_area(self):
        """Surface area of the unit sphere S^(d-1)."""
        d = self.dimension
        return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)

    @property
    def support_radius(self):
        """Radius beyond which |v|^2 is zero (sharp) or below the double-precision floor (gaussian)."""
        if self.cutoff is Cutoff.SHARP:
            return self.cutoff_radius
        return self.cutoff_radius * math.sqrt(math.log(1.0 / GAUSSIAN_FLOOR) / 2.0)

    def omega(self, r):
        r = np.asarray(r, dtype=float)
        if self.dispersion is Dispersion.MASSLESS:
            return r
        if self.dispersion is Dispersion.SHIFT:
            return r + self.mass
        return np.hypot(r, self.mass)

    def cutoff_profile(self, r):
        r = np.asarray(r, dtype=float)
        if self.cutoff is Cutoff.SHARP:
            return (r <= self.cutoff_radius).astype(float)
        return np.exp(-(r / self.cutoff_radius) ** 2)

    def form_factor(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return self.cutoff_profile(r) * np.power(r, -self.alpha)

    def omega_at(self, k):
        """Dispersion at momenta k (last axis is the d components)."""
        return self.omega(np.linalg.norm(np.atleast_2d(k), axis=-1))

    def form_factor_at(self, k):
        return self.form_factor(np.linalg.norm(np.atleast_2d(k), axis=-1))

    def with_coupling(self, coupling=None, field=None):
        return replace(
            self,
            coupling=self.coupling if coupling is None else coupling,
            field=self.field if field is None else field,
        )

    def to_mapping(self):
        """Keys and string values of the [model] config section."""
        return {
            "dimension": str(self.dimension),
            "dispersion": self.dispersion.value,
            "mass": repr(self.mass),
            "alpha": repr(self.alpha),
            "cutoff": self.cutoff.value,
            "cutoff_radius": repr(self.cutoff_radius),
            "lambda": repr(self.coupling),
            "mu": repr(self.field),
        }

    @classmethod
    def from_mapping(cls, mapping):
        """Build a spec from a [model] section (strings or typed values)."""
        known = {"dimension", "dispersion", "mass", "alpha", "cutoff", "cutoff_radius", "lambda", "mu"}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigurationError(f"unknown [model] keys: {sorted(unknown)}", reason="config.unknown_key")
        try:
            return cls(
                dimension=int(mapping.get("dimension", 3)),
                dispersion=mapping.get("dispersion", Dispersion.MASSLESS.value),
                mass=float(mapping.get("mass", 0.0)),
                alpha=float(mapping.get("alpha", 0.5)),
                cutoff=mapping.get("cutoff", Cutoff.SHARP.value),
                cutoff_radius=float(mapping.get("cutoff_radius", 1.0)),
                coupling=float(mapping.get("lambda", 0.0)),
                field=float(mapping.get("mu", 0.0)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"bad [model] value: {e}", reason="config.bad_value") from e


def _radial_integral(spec, g, extra_power=0.0, inner=0.0):
    """
    S_{d-1} * integral_inner^R r^(d-1-2 alpha + extra_power) kappa(r)^2 g(r) dr.

    With inner = 0 the algebraic factor is handed to QUADPACK as an 'alg'
    weight, which integrates the endpoint singularity exactly.
    """
    upper = spec.support_radius
    power = spec.dimension - 1.0 - 2.0 * spec.alpha + extra_power

    def smooth(r):
        return float(spec.cutoff_profile(r) ** 2 * g(r))

    if inner > 0.0:
        if inner >= upper:
            return 0.0
        value, _ = integrate.quad(lambda r: r**power * smooth(r), inner, upper,
                                  epsabs=0.0, epsrel=QUAD_RTOL, limit=500)
    else:
        value, _ = integrate.quad(smooth, 0.0, upper, weight="alg", wvar=(power, 0.0),
                                  epsabs=0.0, epsrel=QUAD_RTOL, limit=500)
    return spec.sphere_area * value


def diverges_at_origin(spec, s):
    """Exponent test: the integrand of ||omega^-s v||^2 behaves as r^(d-1-2s-2 alpha) near 0."""
    if spec.m_omega > 0.0:
        return False
    return spec.dimension - 2.0 * s - 2.0 * spec.alpha <= 0.0


def weighted_norm_squared(spec, s, inner_radius=0.0):
    """
    Return ||omega^-s v||_2^2, or +inf when the radial integral diverges at 0.

    Args:
        spec: model
        s: nonnegative exponent
        inner_radius: integrate over |k| >= inner_radius only (partial integrals)
    """
    if s < 0:
        raise ArgumentError(f"exponent s must be nonnegative, got {s}")
    if inner_radius <= 0.0 and diverges_at_origin(spec, s):
        return math.inf
    if spec.dispersion is Dispersion.MASSLESS:
        return _radial_integral(spec, lambda r: 1.0, extra_power=-2.0 * s, inner=inner_radius)
    return _radial_integral(spec, lambda r: spec.omega(r) ** (-2.0 * s), inner=inner_radius)


def weighted_norm(spec, s):
    """||omega^-s v||_2 computed by adaptive radial quadrature (+inf if divergent)."""
    return math.sqrt(weighted_norm_squared(spec, s))


def ir_classify(spec):
    if math.isfinite(weighted_norm_squared(spec, 1.0)):
        return InfraredClass.REGULAR
    return InfraredClass.CRITICAL


def critical_coupling(spec):
    """lambda_c = ||omega^-1/2 v||_2^-1 / sqrt(5); below it H(lambda, 0) has a unique ground state."""
    norm = weighted_norm(spec, 0.5)
    if not math.isfinite(norm):
        raise ModelClassError("||omega^-1/2 v||_2 is infinite: v is not in D(omega^-1/2)")
    return 1.0 / (norm * math.sqrt(5.0))


def regularize_mass(spec, m, scheme=Dispersion.SHIFT):
    """
    Add an artificial boson mass.

    Args:
        spec: model to regularize
        m: positive mass
        scheme: Dispersion.SHIFT (omega + m) or Dispersion.QUADRATURE (sqrt(omega^2 + m^2))

    Returns:
        A new ModelSpec whose dispersion dominates the old one pointwise.
    """
    if not m > 0.0:
        raise ArgumentError(f"regularizing mass must be positive, got {m}", reason="model.mass")
    target = Dispersion(scheme)
    if target is Dispersion.MASSLESS:
        raise ArgumentError("regularization scheme must be massive-shift or massive-quadrature")
    if spec.dispersion is Dispersion.MASSLESS:
        return replace(spec, dispersion=target, mass=m)
    if spec.dispersion is not target:
        raise ArgumentError(f"cannot regularize a {spec.dispersion.value} model with the {target.value} scheme")
    mass = spec.mass + m if target is Dispersion.SHIFT else math.hypot(spec.mass, m)
    return replace(spec, mass=mass)


@dataclass(frozen=True)
class DiscreteModes:
    """
    Finitely many boson modes (omega_j, v_j).

    The sphere surface factor is absorbed into v_j^2, so sum_j v_j^2 f(omega_j)
    stands in for the momentum integral of |v|^2 f(omega).
    """

    omega: np.ndarray
    v: np.ndarray
    scheme: str = "manual"
    parent: ModelSpec = None
    nodes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float).reshape(-1)
        v = np.array(self.v, dtype=float).reshape(-1)
        if omega.shape != v.shape or omega.size == 0:
            raise ArgumentError("omega and v must be nonempty and of equal length", reason="modes.shape")
        if not np.all(omega > 0.0):
            raise PreconditionError("every mode frequency must be positive", reason="modes.massless")
        if np.any(v < 0.0):
            raise ArgumentError("coupling weights must be nonnegative", reason="modes.negative_coupling")
        omega.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "v", v)

    @classmethod
    def manual(cls, omega, v):
        """Modes given explicitly, e.g. the single-mode (Rabi-type) model."""
        return cls(omega=np.atleast_1d(omega), v=np.atleast_1d(v), scheme="manual")

    @property
    def n_modes(self):
        return int(self.omega.size)

    @property
    def m_omega(self):
        return float(self.omega.min())

    def norm_squared(self):
        """sum_j v_j^2, the discrete ||v||_2^2."""
        return float(np.sum(self.v**2))

    def weighted_norm_squared(self, s):
        """sum_j v_j^2 omega_j^(-2s), the discrete ||omega^-s v||_2^2."""
        return float(np.sum(self.v**2 * self.omega ** (-2.0 * s)))

    def scaled(self, factor):
        return replace(self, v=self.v * float(factor))

    def to_csv(self, path):
        """Write the modes as CSV with header mode,omega,v."""
        table = np.column_stack([np.arange(1, self.n_modes + 1), self.omega, self.v])
        np.savetxt(path, table, delimiter=",", header="mode,omega,v", comments="",
                   fmt=["%d", "%.17g", "%.17g"])

    @classmethod
    def from_csv(cls, path):
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(omega=table[:, 1], v=table[:, 2], scheme="csv")


def _radial_nodes(scheme, n_modes, upper):
    """Quadrature nodes and weights on (0, upper] for the radial coordinate."""
    if scheme is Scheme.UNIFORM:
        h = upper / n_modes
        nodes = (np.arange(n_modes) + 0.5) * h
        return nodes, np.full(n_modes, h)
    if scheme is Scheme.LOG:
        lo, hi = math.log(upper * LOG_RADIAL_FLOOR), math.log(upper)
        du = (hi - lo) / n_modes
        nodes = np.exp(lo + (np.arange(n_modes) + 0.5) * du)
        return nodes, nodes * du
    x, w = np.polynomial.legendre.leggauss(n_modes)
    return 0.5 * upper * (x + 1.0), 0.5 * upper * w


def discretize(spec, n_modes, scheme=Scheme.GAUSS):
    """
    Quadrature of the radial measure onto point modes.

    Args:
        spec: massive or mass-regularized model
        n_modes: number of modes
        scheme: uniform-radial (midpoint), log-radial (midpoint in log r) or gauss-legendre

    Returns:
        DiscreteModes with omega_j = omega(r_j) and
        v_j = |v(r_j)| sqrt(w_j S_{d-1} r_j^(d-1)).
    """
    if int(n_modes) < 1:
        raise ArgumentError(f"n_modes must be positive, got {n_modes}")
    if spec.m_omega <= 0.0:
        raise PreconditionError("massless model: regularize the mass before discretizing "
                                "(a mode frequency could vanish)", reason="modes.massless")
    scheme = Scheme(scheme)
    nodes, weights = _radial_nodes(scheme, int(n_modes), spec.support_radius)
    measure = weights * spec.sphere_area * nodes ** (spec.dimension - 1)
    v = np.abs(spec.form_factor(nodes)) * np.sqrt(measure)
    log.debug("discretized %s into %d modes (%s), min omega %.3g",
              spec.dispersion.value, n_modes, scheme.value, float(spec.omega(nodes).min()))
    return DiscreteModes(omega=spec.omega(nodes), v=v, scheme=scheme.value, parent=spec, nodes=nodes)


def radial_symmetry_defect(spec, k):
    """max over rows of |omega(k) - omega(-k)| + |v(k) - v(-k)|; zero by construction."""
    k = np.atleast_2d(k)
    d_omega = np.abs(spec.omega_at(k) - spec.omega_at(-k))
    d_v = np.abs(spec.form_factor_at(k) - spec.form_factor_at(-k))
    return float(np.max(d_omega + d_v))


def describe(spec):
    """Summary used by `model info`."""
    half = weighted_norm_squared(spec, 0.5)
    info = {
        "classification": ir_classify(spec).value,
        "m_omega": spec.m_omega,
        "norm_v_sq": weighted_norm_squared(spec, 0.0),
        "norm_half_sq": half,
        "norm_one_sq": weighted_norm_squared(spec, 1.0),
        "critical_coupling": critical_coupling(spec) if math.isfinite(half) else None,
    }
    return info

