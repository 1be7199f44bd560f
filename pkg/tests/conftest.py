import os

import numpy as np
import pytest

from oseen_stab.channel import ChannelFlow
from oseen_stab.config import load_config
from oseen_stab.controller import build_feedback, real_feedback, restrict_support, select_gains
from oseen_stab.lift import lift_control_directions
from oseen_stab.spectral import build_grid
from oseen_stab.spectrum import compute_spectrum

HERE = os.path.dirname(__file__)
ACCEPTANCE_TOML = os.path.join(HERE, "acceptance.toml")


class Pipeline:
    """Spectrum, gains, laws and lifts of one configuration, built on demand."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.flow = ChannelFlow.from_truncation(cfg.nu, cfg.a, cfg.M_x)
        self.grid = build_grid(cfg.M)
        self.spectrum = compute_spectrum(self.flow, self.grid, n_keep=cfg.J)
        self._cache = {}

    @property
    def gains(self):
        if "gains" not in self._cache:
            sp = self.spectrum
            self._cache["gains"] = select_gains(sp.lambdas[: sp.N], self.flow.nu)
        return self._cache["gains"]

    def law(self, variant="complex", alpha0=1.0, wall=1):
        key = (variant, alpha0, wall)
        if key not in self._cache:
            if variant == "real":
                law = real_feedback(self.spectrum, self.gains, alpha0)
            else:
                law = build_feedback(self.spectrum, self.gains, alpha0)
                if variant == "restricted":
                    law = restrict_support(law, wall)
            self._cache[key] = (law, lift_control_directions(law, self.flow, self.grid))
        return self._cache[key]


@pytest.fixture(scope="session")
def acceptance_config():
    return load_config(ACCEPTANCE_TOML)


@pytest.fixture(scope="session")
def acc(acceptance_config):
    return Pipeline(acceptance_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
