import pytest

from utils import kernel, model


@pytest.fixture(scope="session")
def critical_spec():
    """d = 3, alpha = 1/2, sharp cutoff at 1, massless."""
    return model.ModelSpec(dimension=3, dispersion="massless", alpha=0.5, cutoff="sharp", cutoff_radius=1.0)


@pytest.fixture(scope="session")
def single_mode():
    return model.DiscreteModes.manual(1.0, 1.0)


@pytest.fixture(scope="session")
def two_mode():
    return model.DiscreteModes.manual([1.0, 1.5], [0.8, 0.6])


@pytest.fixture(scope="session")
def single_mode_table(single_mode):
    return kernel.build_table(single_mode, t_max=80.0)


@pytest.fixture(scope="session")
def unit_exponential_table():
    """W(t) = exp(-2|t|) from one mode with omega = 2, v = 2."""
    return kernel.build_table(model.DiscreteModes.manual(2.0, 2.0), t_max=40.0)


@pytest.fixture(scope="session")
def critical_table(critical_spec):
    return kernel.build_table(critical_spec, t_max=kernel.DEFAULT_T_MAX)
