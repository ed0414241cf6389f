import numpy as np
import pytest

from corticarc.connectivity import GridSpec, KernelSpec, SynapseGenSpec
from corticarc.engine import ExternalInputSpec, SimConfig
from corticarc.model import NeuronParams


@pytest.fixture
def small_grid():
    """A grid small enough for exhaustive checks but with real borders."""
    return GridSpec(nx=6, ny=5, neurons_per_column=40)


@pytest.fixture
def gauss_kernel():
    return KernelSpec.gaussian()


@pytest.fixture
def exp_kernel():
    return KernelSpec.exponential()


@pytest.fixture
def genspec():
    return SynapseGenSpec()


def tiny_config(nx=4, ny=4, n_col=40, kernel=None, duration_s=0.1,
                seed=11, **overrides):
    """A config sized for sub-second runs; keyword overrides for the rest."""
    kwargs = dict(
        grid=GridSpec(nx=nx, ny=ny, neurons_per_column=n_col),
        kernel=kernel or KernelSpec.gaussian(),
        genspec=SynapseGenSpec(j_exc_exc=1.0, j_exc_inh=1.0,
                               j_inh_exc=-4.0, j_inh_inh=-4.0),
        exc_params=NeuronParams(is_excitatory=True),
        inh_params=NeuronParams(is_excitatory=False),
        external=ExternalInputSpec(synapses_per_neuron=80,
                                   rate_per_synapse_hz=20.0,
                                   weight_mv=0.5),
        duration_s=duration_s,
        seed=seed,
    )
    kwargs.update(overrides)
    return SimConfig(**kwargs)


def rng(seed=0):
    return np.random.default_rng(seed)
