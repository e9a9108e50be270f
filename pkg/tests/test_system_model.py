import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmimo_sync.numerics import wrap_angle
from dmimo_sync.system_model import (
    AccessPoint,
    GainModel,
    NodeConfig,
    NoiseModel,
    RfChain,
    draw_access_point,
    draw_channel,
    draw_rf_chain,
    noise_variance,
    path_loss_db,
    true_phase_offset,
)

# hand-evaluated: 1.380649e-23 * 290 * 20e6, then times 10**0.9
KTB_290K_20MHZ = 8.0077642e-14
SIGMA2_NF9 = 6.3607e-13


@pytest.mark.parametrize("d, expected", [(1.0, -30.5), (10.0, -67.2), (100.0, -103.9)])
def test_path_loss_values(d, expected):
    assert path_loss_db(d) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_path_loss_rejects_nonpositive(d):
    with pytest.raises(ValueError):
        path_loss_db(d)


@given(a=st.floats(1e-3, 1e4), b=st.floats(1e-3, 1e4))
def test_path_loss_strictly_decreasing(a, b):
    if a < b:
        assert path_loss_db(a) > path_loss_db(b)


def test_noise_variance_values():
    assert noise_variance(NoiseModel(290, 20e6, 0)) == pytest.approx(KTB_290K_20MHZ, rel=1e-6)
    assert noise_variance(NoiseModel()) == pytest.approx(SIGMA2_NF9, rel=5e-3)
    assert NoiseModel().sigma2 == noise_variance(NoiseModel())


def test_noise_linear_in_bandwidth():
    assert noise_variance(NoiseModel(300, 40e6, 7)) == 2 * noise_variance(NoiseModel(300, 20e6, 7))


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(temperature=0)
    with pytest.raises(ValueError):
        NoiseModel(bandwidth=-1)


def test_unit_gain_model():
    ch = draw_rf_chain(32, GainModel.unit(), np.random.default_rng(0))
    assert np.allclose(np.abs(ch.t), 1) and np.allclose(np.abs(ch.r), 1)


def test_band_gain_model():
    ch = draw_rf_chain(500, GainModel.band(0.9, 1.1), np.random.default_rng(0))
    mags = np.abs(np.concatenate([ch.t, ch.r]))
    assert mags.min() >= 0.9 - 1e-15 and mags.max() <= 1.1 + 1e-15


def test_gain_model_parse_and_validation():
    assert GainModel.parse("unit").is_unit
    assert GainModel.parse("band:0.5,2") == GainModel(0.5, 2.0)
    assert GainModel.parse(str(GainModel(0.8, 1.3))) == GainModel(0.8, 1.3)
    with pytest.raises(ValueError):
        GainModel.band(0.0, 1.0)
    with pytest.raises(ValueError):
        GainModel.parse("lognormal")


def test_rf_chain_draw_deterministic():
    a = draw_rf_chain(8, GainModel.band(0.9, 1.1), np.random.default_rng(42))
    b = draw_rf_chain(8, GainModel.band(0.9, 1.1), np.random.default_rng(42))
    assert a.t.tobytes() == b.t.tobytes() and a.r.tobytes() == b.r.tobytes()


def test_rf_chain_validation():
    with pytest.raises(ValueError):
        RfChain(np.ones(3, complex), np.ones(2, complex))
    with pytest.raises(ValueError):
        RfChain(np.array([1, 0], complex), np.ones(2, complex))


def test_node_config_validation():
    with pytest.raises(ValueError):
        NodeConfig(4, ref_index=4)
    with pytest.raises(ValueError):
        NodeConfig(4, tx_power=0.0)


def test_channel_variance_follows_path_loss():
    h1 = draw_channel(100_000, 1.0, np.random.default_rng(3))
    h10 = draw_channel(100_000, 10.0, np.random.default_rng(4))
    p1, p10 = np.mean(np.abs(h1) ** 2), np.mean(np.abs(h10) ** 2)
    assert p1 == pytest.approx(10 ** -3.05, rel=0.02)
    assert p10 / p1 == pytest.approx(10 ** -3.67, rel=0.03)


def test_channel_deterministic():
    a = draw_channel(4, 10.0, np.random.default_rng(8))
    b = draw_channel(4, 10.0, np.random.default_rng(8))
    assert a.tobytes() == b.tobytes()


def _ap(t, r, k=0):
    t, r = np.asarray(t, complex), np.asarray(r, complex)
    return AccessPoint(RfChain(t, r), NodeConfig(t.size, k))


def test_true_offset_zero_for_real_gains():
    assert true_phase_offset(_ap([1, 2], [3, 1]), _ap([0.5], [2])) == 0.0


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32 - 1), phi=st.floats(-10, 10))
def test_true_offset_additive_and_antisymmetric(seed, phi):
    rng = np.random.default_rng(seed)
    a = draw_access_point(NodeConfig(3, 1), GainModel.unit(), rng)
    b = draw_access_point(NodeConfig(2, 0), GainModel.unit(), rng)
    base = true_phase_offset(a, b)
    t_rot = b.chain.t.copy()
    t_rot[0] *= cmath.exp(1j * phi)
    shifted = true_phase_offset(a, _ap(t_rot, b.chain.r))
    assert abs(wrap_angle(shifted - base - phi)) < 1e-9
    assert abs(wrap_angle(true_phase_offset(b, a) + base)) < 1e-12


def test_true_offset_reads_reference_antenna():
    t = np.exp(1j * np.array([0.1, 0.7]))
    r = np.exp(1j * np.array([0.0, 0.2]))
    b = _ap(t, r, k=1)
    a = _ap([1.0], [1.0])
    assert true_phase_offset(a, b) == pytest.approx(0.5)


def test_access_point_coeffs_reference_entry_is_one():
    ap = draw_access_point(NodeConfig(6, 2), GainModel.band(0.5, 2), np.random.default_rng(1))
    assert ap.coeffs[2] == 1.0
    assert math.isclose(abs(ap.t_ref), abs(ap.chain.t[2]))
