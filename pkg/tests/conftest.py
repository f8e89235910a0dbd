import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from optimpact.calendar import MS_PER_DAY, VenueCalendar
from optimpact.synth import AgentModel, SynthConfig, simulate_day
from optimpact.volsurface import SLICE_COLUMNS, SliceHistory

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DAY = VenueCalendar.day_from_label("2024-01-02")
T_OPEN = DAY * MS_PER_DAY
EXPIRY = T_OPEN + 30 * MS_PER_DAY


def make_history(times, atmf_vol=0.2, atmf_skew=-0.1, curvature=0.0, forward=100.0,
                 underlying="UND", expiry=EXPIRY) -> SliceHistory:
    """Slice history with one slice per time; scalar or per-time parameters."""
    times = np.asarray(times, dtype=np.int64)
    n = len(times)
    frame = pd.DataFrame({
        "underlying_id": underlying, "expiry": np.int64(expiry), "snapshot_time": times,
        "forward": np.broadcast_to(forward, n).astype(float), "discount": 1.0,
        "atmf_vol": np.broadcast_to(atmf_vol, n).astype(float),
        "atmf_skew": np.broadcast_to(atmf_skew, n).astype(float),
        "curvature": np.broadcast_to(curvature, n).astype(float),
        "residual_rms": 0.0, "n_quotes": 5, "n_excluded": 0, "forward_source": "column",
        "frozen_curvature": False, "status": "ok",
    })
    return SliceHistory(frame[SLICE_COLUMNS])


def make_fills(times, agents, sides, strikes=100.0, quantity=1.0, underlying="UND",
               expiry=EXPIRY, aggressive=True) -> pd.DataFrame:
    n = len(times)
    strikes = np.broadcast_to(np.asarray(strikes, float), n)
    return pd.DataFrame({
        "timestamp": np.asarray(times, dtype=np.int64), "agent_id": list(agents),
        "underlying_id": underlying, "option_id": "", "kind": "C",
        "strike": strikes, "expiry": np.int64(expiry), "side": np.asarray(sides, dtype=np.int64),
        "quantity": np.broadcast_to(np.asarray(quantity, float), n),
        "price": 1.0, "aggressive": aggressive,
    })


@pytest.fixture(scope="session")
def small_config():
    return SynthConfig(seed=5, n_days=2, agents=AgentModel(n_agents=4, metaorders_per_day=24),
                       background_fills_per_day=200, snapshot_interval_s=300)


@pytest.fixture(scope="session")
def synth_day(small_config):
    return simulate_day(small_config, 0)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
