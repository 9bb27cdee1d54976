import json
from pathlib import Path

import numpy as np
import pytest

from netirf.core import MeanFieldParams

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def baseline():
    return MeanFieldParams(a=0.3, b=0.01, mu=-0.3, sigma2=0.1, n=50)


@pytest.fixture
def baseline_config():
    return json.loads((FIXTURES / "baseline.json").read_text())


def random_stationary_B(rng, d, rho=0.8):
    B = rng.normal(size=(d, d))
    return B * rho / np.max(np.abs(np.linalg.eigvals(B)))


def random_cov(rng, d, scale=1.0):
    L = rng.normal(size=(d, d))
    return scale * (L @ L.T / d + 0.1 * np.eye(d))
