import inspect
import math

import numpy as np
import pytest

from utils import model
from utils.errors import ArgumentError, ConfigurationError, ModelClassError, PreconditionError


def test_weighted_norms_of_critical_example(critical_spec):
    assert model.weighted_norm_squared(critical_spec, 0.5) == pytest.approx(4 * math.pi, rel=1e-10)
    assert model.weighted_norm_squared(critical_spec, 0.0) == pytest.approx(2 * math.pi, rel=1e-10)
    assert math.isinf(model.weighted_norm_squared(critical_spec, 1.0))
    assert model.weighted_norm(critical_spec, 0.5) == pytest.approx(math.sqrt(4 * math.pi), rel=1e-10)


def test_regular_exponent_norm():
    spec = model.ModelSpec(alpha=0.4)
    assert model.weighted_norm_squared(spec, 1.0) == pytest.approx(20 * math.pi, rel=1e-8)


def test_partial_integrals_follow_exponent_test(critical_spec):
    radii = [1e-2, 1e-4, 1e-6, 1e-8]
    divergent = [model.weighted_norm_squared(critical_spec, 1.0, inner_radius=r) for r in radii]
    assert all(b > a + 1.0 for a, b in zip(divergent, divergent[1:]))
    finite = model.weighted_norm_squared(critical_spec, 0.5, inner_radius=1e-8)
    assert finite == pytest.approx(4 * math.pi, rel=1e-7)


def test_classification(critical_spec):
    assert model.ir_classify(critical_spec) is model.InfraredClass.CRITICAL
    assert model.ir_classify(model.ModelSpec(alpha=0.4)) is model.InfraredClass.REGULAR
    massive = model.ModelSpec(alpha=0.5, dispersion="massive-shift", mass=0.1)
    assert model.ir_classify(massive) is model.InfraredClass.REGULAR


def test_critical_coupling(critical_spec):
    assert model.critical_coupling(critical_spec) == pytest.approx(1 / math.sqrt(20 * math.pi), abs=1e-9)
    wide = model.ModelSpec(alpha=0.5, cutoff_radius=2.0)
    assert model.critical_coupling(wide) == pytest.approx(1 / math.sqrt(40 * math.pi), abs=1e-9)
    assert model.critical_coupling(critical_spec) == model.critical_coupling(critical_spec)


def test_critical_coupling_needs_finite_norm():
    with pytest.raises(ModelClassError):
        model.critical_coupling(model.ModelSpec(dimension=1, alpha=0.2))


def test_invalid_specs_are_rejected():
    with pytest.raises(ConfigurationError):
        model.ModelSpec(dispersion="massless", mass=0.1)
    with pytest.raises(ConfigurationError):
        model.ModelSpec(dimension=1, alpha=0.5)
    with pytest.raises(ConfigurationError):
        model.ModelSpec(cutoff="box")


def test_regularize_mass(critical_spec):
    shifted = model.regularize_mass(critical_spec, 0.5)
    assert shifted.dispersion is model.Dispersion.SHIFT
    assert shifted.m_omega == 0.5
    assert float(shifted.omega(0.3)) == pytest.approx(0.8)
    quad = model.regularize_mass(critical_spec, 0.5, "massive-quadrature")
    assert float(quad.omega(0.0)) == pytest.approx(0.5)
    assert model.regularize_mass(shifted, 0.25).mass == pytest.approx(0.75)
    assert model.regularize_mass(quad, 1.2, "massive-quadrature").mass == pytest.approx(1.3)


def test_regularize_mass_rejects_bad_input(critical_spec):
    with pytest.raises(ArgumentError):
        model.regularize_mass(critical_spec, 0.0)
    shifted = model.regularize_mass(critical_spec, 0.5)
    with pytest.raises(ArgumentError):
        model.regularize_mass(shifted, 0.1, "massive-quadrature")


def test_regularized_dispersion_dominates(critical_spec):
    r = np.linspace(0.0, 1.0, 101)
    for scheme in ("massive-shift", "massive-quadrature"):
        assert np.all(model.regularize_mass(critical_spec, 0.3, scheme).omega(r) >= critical_spec.omega(r))


def test_min_frequency_decreases_along_mass_sequence(critical_spec):
    for scheme in ("massive-shift", "massive-quadrature"):
        mins = [model.discretize(model.regularize_mass(critical_spec, 2.0**-n, scheme), 8).m_omega
                for n in range(1, 6)]
        assert all(b < a for a, b in zip(mins, mins[1:]))


def test_discretize_massless_is_refused(critical_spec):
    with pytest.raises(PreconditionError):
        model.discretize(critical_spec, 8)


def test_gauss_legendre_discretization(critical_spec):
    spec = model.regularize_mass(critical_spec, 0.2)
    modes = model.discretize(spec, 32, "gauss-legendre")
    assert modes.n_modes == 32
    assert np.all(modes.omega > 0.2)
    exact = model.weighted_norm_squared(spec, 0.5)
    assert modes.weighted_norm_squared(0.5) == pytest.approx(exact, rel=5e-3)
    assert modes.norm_squared() == pytest.approx(2 * math.pi, rel=1e-12)


def test_log_radial_discretization_converges(critical_spec):
    spec = model.regularize_mass(critical_spec, 0.2)
    exact = model.weighted_norm_squared(spec, 0.0)
    errors = [abs(model.discretize(spec, n, "log-radial").norm_squared() - exact) for n in (32, 64, 128)]
    assert errors[0] > errors[1] > errors[2]


def test_manual_modes():
    modes = model.DiscreteModes.manual(1.0, 1.0)
    assert modes.n_modes == 1
    assert modes.scheme == "manual"
    with pytest.raises(PreconditionError):
        model.DiscreteModes.manual([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(ArgumentError):
        model.DiscreteModes.manual([1.0], [1.0, 2.0])


def test_modes_csv_file(tmp_path, two_mode):
    path = tmp_path / "modes.csv"
    two_mode.to_csv(path)
    assert path.read_text().splitlines()[0] == "mode,omega,v"
    loaded = model.DiscreteModes.from_csv(path)
    np.testing.assert_array_equal(loaded.omega, two_mode.omega)
    np.testing.assert_array_equal(loaded.v, two_mode.v)


def test_radial_symmetry(critical_spec):
    k = np.random.default_rng(3).normal(size=(50, 3))
    assert model.radial_symmetry_defect(critical_spec, k) == 0.0


def test_describe(critical_spec):
    info = model.describe(critical_spec)
    assert info["classification"] == "infrared-critical"
    assert info["critical_coupling"] == pytest.approx(0.126157, abs=1e-6)
    assert info["m_omega"] == 0.0


def test_module_has_no_script_entry():
    assert "__main__" not in inspect.getsource(model)
