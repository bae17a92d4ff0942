import numpy as np
import pytest

from hdmi.cohortgen import ProxyBlockConfig, SynthConfig, generate_synthetic_base
from hdmi.tabular import Cohort


def toy_cohort(n=30, seed=0, mz2=None, blocks=None, u=True):
    rng = np.random.default_rng(seed)
    return Cohort(
        exposure=(rng.random(n) < 0.5).astype(float),
        time=rng.uniform(1, 365, n),
        event=(rng.random(n) < 0.4).astype(float),
        z1=rng.normal(size=(n, 2)),
        z2=rng.lognormal(0, 0.3, n),
        mz2=np.zeros(n, dtype=np.int8) if mz2 is None else mz2,
        z1_names=("a", "b"),
        u=(rng.random(n) < 0.3).astype(float) if u else None,
        blocks=blocks or {},
    )


@pytest.fixture
def toy():
    return toy_cohort()


@pytest.fixture(scope="session")
def small_base():
    cfg = SynthConfig(n=600, seed=11, blocks=(ProxyBlockConfig("claims", n_columns=60),))
    return generate_synthetic_base(cfg)
