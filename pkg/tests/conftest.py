import numpy as np
import pytest

from taskcast.grid import Generator, Line, SystemConfig, validate_system
from taskcast.reference import reference_system


@pytest.fixture
def ref_system():
    return reference_system()


@pytest.fixture
def ref_system_short():
    return reference_system(horizon=4)


def make_single_gen_system(
    horizon=1,
    a=0.5,
    b=0.0,
    c=0.0,
    p_min=0.0,
    p_max=1e4,
    lambda_s=50.0,
    lambda_e=0.5,
    lambda_l=0.0,
    ramp=1e5,
):
    """One bus, one generator, one (slack) line; line penalties default off."""
    return validate_system(
        SystemConfig(
            buses=("b1",),
            generators=(
                Generator(
                    id="g1", bus="b1", a=a, b=b, c=c,
                    p_min=p_min, p_max=p_max, ramp_up=ramp, ramp_down=ramp,
                ),
            ),
            lines=(Line(id="l1", shift_factors=(1.0,), flow_limit=1e9),),
            load_factors=(1.0,),
            lambda_s=lambda_s,
            lambda_e=lambda_e,
            lambda_l=lambda_l,
            horizon=horizon,
        )
    )


@pytest.fixture
def single_gen_system():
    return make_single_gen_system()


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
