import numpy as np
import pytest

from tessoc.config import build_setup, default_config
from tessoc.materials import FluidParams, GridSpec, PcmThermalParams


@pytest.fixture
def pcm():
    # alpha = 8 / 8 = 1.0 exactly
    return PcmThermalParams(cp_sol=1900.0, cp_liq=2100.0, h_fus=150000.0, t_pc=289.5, delta_t_pc=8.0)


@pytest.fixture
def fluid():
    return FluidParams(cp_f=4182.0, u_conv=1200.0)


def make_grid(nx=3, ny=7, **overrides) -> GridSpec:
    kwargs = dict(
        nx=nx,
        ny=ny,
        length=0.12,
        width=0.06,
        fluid_height=0.004,
        plate_height=0.003,
        cpcm_height=0.015,
        rho_fluid=1000.0,
        rho_plate=2700.0,
        rho_cpcm=800.0,
        kappa_fluid=0.6,
        kappa_plate=160.0,
        kappa_cpcm=6.0,
        cp_fluid=4182.0,
        cp_plate=900.0,
    )
    kwargs.update(overrides)
    return GridSpec.rectangular(**kwargs)


@pytest.fixture
def grid():
    return make_grid()


@pytest.fixture
def default_setup():
    return build_setup(default_config())


@pytest.fixture
def rng():
    return np.random.default_rng(42)
