import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory):
    """Three small colour scenes on disk as Radiance files."""
    from tonematch.hdrio import write_hdr
    from tonematch.synthetic import scene

    d = tmp_path_factory.mktemp("scenes")
    for i in range(3):
        write_hdr(scene(i, 48, 64), d / f"scene{i}.hdr")
    return d
