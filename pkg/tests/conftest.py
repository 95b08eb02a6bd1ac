import numpy as np
import pytest

from boshnas.space import DesignSpaceConfig


@pytest.fixture
def table2_config():
    """The full default design space."""
    return DesignSpaceConfig()


@pytest.fixture
def tiny_config():
    """A deliberately small space (8 cards at level 1) for fast exact tests."""
    return DesignSpaceConfig(
        layer_counts=(2,),
        ops=("SA", "LT"),
        op_params={"SA": ("SDP",), "LT": ("DFT",)},
        heads=(2,),
        hidden=(128, 256),
        ff_dims=(512,),
        ff_depths=(1, 3),
        stack_size=2,
        hetero_ff=False,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)
