import functools
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from gaindelay import model, propagator as prop  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TAU = 0.132


@functools.lru_cache(maxsize=None)
def _propagated(kind, gain, n_freq, n_zsteps, chi3, peak_power):
    crystal = model.symmetric_crystal(TAU) if kind == "ideal" else model.CrystalParams(gamma_p=5e-4)
    pump = model.PumpParams(gain=gain, peak_power=peak_power)
    s = prop.SolverSettings(n_freq=n_freq, n_zsteps=n_zsteps, chi3=chi3)
    tm = prop.propagate(crystal, pump, s)
    return crystal, pump, tm, prop.jsa_from_transfer(tm)


@pytest.fixture(scope="session")
def propagated():
    """Memoised propagation: (kind, gain, n_freq=401, n_zsteps=200, chi3=False, P=0)."""
    def get(kind, gain, n_freq=401, n_zsteps=200, chi3=False, peak_power=0.0):
        return _propagated(kind, float(gain), n_freq, n_zsteps, chi3, float(peak_power))
    return get
