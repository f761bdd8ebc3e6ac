import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sparse_moe import ExpertParams, GateParams, Hyperparams, MixtureModel, Scaler


def make_model(nu, omega, lambda_nu=1.0, lambda_omega=1.0, lambda_mu=None,
               selector_mode="none", identity_scaler=True):
    """Model with an identity scaler so prepared inputs equal raw+bias."""
    nu = np.asarray(nu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    q, k, dp = omega.shape
    hyper = Hyperparams(k=k, lambda_nu=lambda_nu, lambda_omega=lambda_omega,
                        lambda_mu=lambda_mu, selector_mode=selector_mode)
    scaler = Scaler(np.zeros(dp - 1), np.ones(dp - 1))
    return MixtureModel(GateParams(nu), ExpertParams(omega), hyper, scaler)


def random_model(rng, k, q, dp, scale=1.0, **kwargs):
    nu = rng.normal(0.0, scale, (k, dp))
    omega = rng.normal(0.0, scale, (q, k, dp))
    return make_model(nu, omega, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
