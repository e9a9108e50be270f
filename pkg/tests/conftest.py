from dataclasses import dataclass

import numpy as np
import pytest

from dmimo_sync.protocols import Repeater
from dmimo_sync.system_model import (
    AccessPoint,
    ChannelSet,
    GainModel,
    NodeConfig,
    draw_access_point,
    draw_channel,
    draw_rf_chain,
)


@dataclass
class Scenario:
    apA: AccessPoint
    apB: AccessPoint
    repeater: Repeater
    channels: ChannelSet


def make_scenario(
    rng,
    M_A=16,
    M_B=16,
    gain_model=GainModel.unit(),
    d=20.0,
    rho_A=0.1,
    rho_B=0.1,
    rho_R=1e-3,
    ref_A=0,
    ref_B=0,
    gain_mode="literal",
    ref_power=None,
):
    apA = draw_access_point(NodeConfig(M_A, ref_A, rho_A), gain_model, rng)
    apB = draw_access_point(NodeConfig(M_B, ref_B, rho_B), gain_model, rng)
    rep = Repeater(draw_rf_chain(1, gain_model, rng), rho_R, gain_mode, ref_power)
    ch = ChannelSet(draw_channel(M_A, d, rng), draw_channel(M_B, d, rng))
    return Scenario(apA, apB, rep, ch)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
