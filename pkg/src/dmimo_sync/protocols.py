"""Reciprocity calibration and over-the-air phase synchronisation protocols.

Conventions
-----------
Beamformers enter transmit and combining products as ``f.T @ v`` (no
conjugation), so a matched beamformer for effective channel ``g_eff`` is
``conj(g_eff) / ||g_eff||``. ``theta`` always denotes the B-minus-A
reciprocity phase offset, ``(angle t_B - angle r_B) - (angle t_A - angle r_A)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import (
    ConvergenceError,
    complex_gaussian_matrix,
    complex_gaussian_vector,
    dominant_left_singular_vector,
    wrap_angle,
)
from .system_model import AccessPoint, ChannelSet, RfChain, true_phase_offset

# |y| below this carries no usable phase
UNRESOLVABLE_FLOOR = 1e-30
GAIN_MODES = ("literal", "fixed", "agc")


class DegenerateError(ValueError):
    """A protocol quantity vanished, so its phase is undefined."""


@dataclass(frozen=True)
class Repeater:
    """Single-antenna amplify-and-forward repeater.

    ``gain_mode`` selects the forwarding amplitude applied to the received
    sample stream:

    * ``literal``: ``sqrt(tx_power)``, as written in the stage equations.
    * ``fixed``: ``sqrt(tx_power / ref_power)``, a fixed-gain amplifier that
      radiates ``tx_power`` when its input power equals ``ref_power``.
    * ``agc``: ``sqrt(tx_power / rx_power)``, output normalised to
      ``tx_power`` using the analytic per-sample received power.
    """

    chain: RfChain
    tx_power: float
    gain_mode: str = "literal"
    ref_power: Optional[float] = None

    def __post_init__(self):
        if self.chain.antennas != 1:
            raise ValueError("repeater has exactly one antenna")
        if not self.tx_power > 0:
            raise ValueError(f"repeater tx_power must be positive, got {self.tx_power}")
        if self.gain_mode not in GAIN_MODES:
            raise ValueError(f"unknown repeater gain mode {self.gain_mode!r}")
        if self.gain_mode == "fixed" and not (self.ref_power and self.ref_power > 0):
            raise ValueError("fixed-gain repeater needs a positive ref_power")

    @property
    def t(self) -> complex:
        return complex(self.chain.t[0])

    @property
    def r(self) -> complex:
        return complex(self.chain.r[0])

    def amplitude(self, rx_power: float) -> float:
        if self.gain_mode == "literal":
            return math.sqrt(self.tx_power)
        if self.gain_mode == "fixed":
            return math.sqrt(self.tx_power / self.ref_power)
        if rx_power <= 0:
            raise DegenerateError("AGC repeater received zero power")
        return math.sqrt(self.tx_power / rx_power)


@dataclass(frozen=True)
class SyncOutcome:
    theta_true: float
    theta_hat: float
    error: float
    y: complex
    c: float
    snr_proxy: float
    flagged: bool = False


# ---------------------------------------------------------------------------
# intra-AP reciprocity calibration


def intra_ap_coeffs(chain: RfChain, ref_index: int) -> np.ndarray:
    """Per-antenna calibration coefficients ``(t_ref/r_ref) * (r_i/t_i)``."""
    t, r = chain.t, chain.r
    if not (t.all() and r.all()):
        raise ValueError("calibration needs non-zero RF gains")
    coeffs = (t[ref_index] / r[ref_index]) * (r / t)
    coeffs[ref_index] = 1.0
    return coeffs


def transmit_vector(ap: AccessPoint, coeffs: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Signal leaving the antennas when ``s`` is precoded through the calibrated chain."""
    return ap.chain.t * coeffs * s


def ue_receive_calibrated(
    chain: RfChain, coeffs: np.ndarray, h: np.ndarray, ue: RfChain
) -> np.ndarray:
    """Per-antenna noiseless downlink contributions at a UE under conjugate beamforming.

    The AP conjugates its uplink observation of a unit pilot and transmits it
    through the calibrated chain.
    """
    h = np.asarray(h, dtype=complex)
    if h.shape != chain.t.shape or coeffs.shape != chain.t.shape:
        raise ValueError("channel, coefficients and RF chain dimensions disagree")
    t_u, r_u = ue.t[0], ue.r[0]
    uplink = chain.r * h * t_u
    return r_u * h * chain.t * coeffs * np.conj(uplink)


# ---------------------------------------------------------------------------
# direct AP-to-AP baseline


def beamsync_direct(H: np.ndarray, apA: AccessPoint, apB: AccessPoint, f: np.ndarray) -> float:
    """Noiseless bidirectional AP-to-AP phase estimate (A minus B).

    B beamforms ``f`` to A through its calibrated chain, A returns the
    conjugate of what it received through its own calibrated chain, and B
    takes the phase of ``f.T y_B``.
    """
    H = np.asarray(H, dtype=complex)
    f = np.asarray(f, dtype=complex)
    if H.shape != (apA.antennas, apB.antennas):
        raise ValueError(f"H must be {apA.antennas}x{apB.antennas}, got {H.shape}")
    if f.shape != (apB.antennas,):
        raise ValueError("beamformer dimension must match AP-B")
    cal_a = intra_ap_coeffs(apA.chain, apA.ref_index)
    cal_b = intra_ap_coeffs(apB.chain, apB.ref_index)

    y_a = apA.chain.r * (H @ transmit_vector(apB, cal_b, f))
    y_b = apB.chain.r * (H.T @ transmit_vector(apA, cal_a, np.conj(y_a)))
    stat = f @ y_b
    if abs(stat) < UNRESOLVABLE_FLOOR:
        raise DegenerateError("BeamSync statistic vanished")
    return float(np.angle(stat))


# ---------------------------------------------------------------------------
# beamformer acquisition


def genie_beamformer(g_eff: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(g_eff)
    if n == 0:
        raise DegenerateError("zero effective channel")
    return np.conj(g_eff) / n


def receive_repeater_pilot(
    ap: AccessPoint,
    g: np.ndarray,
    repeater: Repeater,
    power: float,
    n_symbols: int,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """``M x n_symbols`` observation of an all-ones omnidirectional pilot sent by the repeater."""
    p = np.ones(n_symbols, dtype=complex)
    clean = np.sqrt(power) * repeater.t * np.outer(ap.effective_channel(g), p)
    return clean + complex_gaussian_matrix(ap.antennas, n_symbols, sigma2, rng)


def acquire_beamformer(pilot_rx: np.ndarray, tol: float = 1e-10, max_iters: int = 200) -> np.ndarray:
    """Beamformer from the dominant left singular vector of a received pilot block.

    The singular vector ``u`` is conjugated so that ``f.T g_eff`` (rather than
    ``f^H g_eff``) is maximal. Non-convergence retries once with a 20x larger
    iteration cap, then accepts the last iterate.
    """
    pilot_rx = np.atleast_2d(np.asarray(pilot_rx, dtype=complex))
    if not np.any(pilot_rx):
        raise DegenerateError("all-zero pilot observation")
    try:
        u = dominant_left_singular_vector(pilot_rx, tol, max_iters)
    except ConvergenceError:
        try:
            u = dominant_left_singular_vector(pilot_rx, tol, 20 * max_iters)
        except ConvergenceError as exc:
            u = exc.vector
    return np.conj(u)


# ---------------------------------------------------------------------------
# repeater-aided synchronisation, noiseless chain


def repeater_sync_noiseless(
    apA: AccessPoint,
    apB: AccessPoint,
    repeater: Repeater,
    channels: ChannelSet,
    f_A: np.ndarray,
    f_B: np.ndarray,
) -> SyncOutcome:
    """Four-message noiseless exchange A -> R -> B -> R -> A with a unit pilot."""
    gt_A = apA.effective_channel(channels.g_A)
    gt_B = apB.effective_channel(channels.g_B)
    for f, g, name in ((f_A, gt_A, "A"), (f_B, gt_B, "B")):
        if abs(f @ g) < 1e-15 * np.linalg.norm(g):
            raise DegenerateError(f"beamformer of AP-{name} is orthogonal to its channel")
    cal_a = intra_ap_coeffs(apA.chain, apA.ref_index)
    cal_b = intra_ap_coeffs(apB.chain, apB.ref_index)
    t_R, r_R = repeater.t, repeater.r

    y_r1 = r_R * (channels.g_A @ transmit_vector(apA, cal_a, f_A))
    y_b2 = f_B @ (gt_B * (t_R * y_r1))
    x_b = np.conj(y_b2)
    y_r3 = r_R * (channels.g_B @ transmit_vector(apB, cal_b, f_B)) * x_b
    y_a4 = complex(f_A @ (gt_A * (t_R * y_r3)))

    c = (
        abs(apA.t_ref) / abs(apA.r_ref) * abs(apB.t_ref) / abs(apB.r_ref)
        * abs(f_A @ gt_A) ** 2 * abs(f_B @ gt_B) ** 2
        * abs(t_R) ** 2 * abs(r_R) ** 2
    )
    theta = true_phase_offset(apA, apB)
    theta_hat = float(np.angle(y_a4))
    resid = abs(y_a4 - c * np.exp(1j * theta))
    snr = np.inf if resid == 0 else c**2 / resid**2
    return SyncOutcome(theta, theta_hat, wrap_angle(theta_hat - theta), y_a4, float(c), float(snr))


# ---------------------------------------------------------------------------
# repeater-aided synchronisation, noisy two-stage procedure


def sync_pilot(L: int, symbols: Optional[np.ndarray] = None) -> np.ndarray:
    """Synchronisation sequence of length ``L`` scaled to energy exactly ``L``.

    Defaults to all ones. ``symbols`` may be any non-zero sequence.
    """
    if L < 1:
        raise ValueError(f"pilot length must be >= 1, got {L}")
    x = np.ones(L, dtype=complex) if symbols is None else np.asarray(symbols, dtype=complex)
    if x.shape != (L,):
        raise ValueError(f"pilot must have length {L}")
    e = np.vdot(x, x).real
    if e == 0:
        raise ValueError("pilot has zero energy")
    return x * np.sqrt(L / e)


@dataclass(frozen=True)
class Stage1Result:
    y_R1: np.ndarray
    y_B: np.ndarray
    s_R1: complex  # noiseless per-symbol amplitude reaching R
    a_B: complex  # f_B.T g_eff_B
    gain: float  # repeater forwarding amplitude
    t_R: complex
    sigma2: float
    energy: float  # ||x||^2


def repeater_sync_stage1(
    x: np.ndarray,
    f_A: np.ndarray,
    apA: AccessPoint,
    repeater: Repeater,
    channels: ChannelSet,
    f_B: np.ndarray,
    apB: AccessPoint,
    sigma2: float,
    rng: np.random.Generator,
) -> Stage1Result:
    """AP-A sends ``x`` through R, which amplifies and forwards it to AP-B.

    Noise draws happen in a fixed order: repeater noise, then AP-B noise.
    """
    x = np.asarray(x, dtype=complex)
    L = x.size
    cal_a = apA.coeffs
    s_r1 = math.sqrt(apA.tx_power) * repeater.r * complex(channels.g_A @ transmit_vector(apA, cal_a, f_A))
    y_r1 = s_r1 * x + complex_gaussian_vector(L, sigma2, rng)

    energy = float(np.vdot(x, x).real)
    gain = repeater.amplitude(abs(s_r1) ** 2 * energy / L + sigma2)
    a_b = complex(f_B @ apB.effective_channel(channels.g_B))
    y_b = gain * repeater.t * a_b * y_r1 + complex_gaussian_vector(L, sigma2, rng)
    return Stage1Result(y_r1, y_b, s_r1, a_b, gain, repeater.t, sigma2, energy)


def power_normalizer_C(stage1: Stage1Result, mode: str = "analytic") -> float:
    """Energy normaliser AP-B divides its stage-II transmission by.

    ``analytic`` is ``E||y_B||^2`` over both noise terms, conditioned on the
    drawn gains and channels. ``empirical`` is the realised ``||y_B||^2``.
    """
    if mode == "empirical":
        return float(np.vdot(stage1.y_B, stage1.y_B).real)
    if mode != "analytic":
        raise ValueError(f"unknown C mode {mode!r}")
    L = stage1.y_B.size
    fwd = stage1.gain**2 * abs(stage1.t_R) ** 2 * abs(stage1.a_B) ** 2
    return float(fwd * (abs(stage1.s_R1) ** 2 * stage1.energy + L * stage1.sigma2) + L * stage1.sigma2)


def sync_amplitude(
    apA: AccessPoint,
    apB: AccessPoint,
    repeater: Repeater,
    a_A: complex,
    a_B: complex,
    gain1: float,
    gain2: float,
    C: float,
    L: int,
    energy: Optional[float] = None,
) -> float:
    """Deterministic magnitude of the two-stage test statistic.

    ``a_A = f_A.T g_eff_A`` and ``a_B = g_eff_B.T f_B``. The factor
    ``sqrt(L / C) * ||x||^2`` comes from B's energy scaling followed by A's
    correlation with the pilot, i.e. ``L**1.5 / sqrt(C)`` for ``||x||^2 = L``.
    """
    energy = L if energy is None else energy
    return float(
        math.sqrt(L / C) * energy
        * gain1 * gain2 * math.sqrt(apA.tx_power * apB.tx_power)
        * abs(repeater.t) ** 2 * abs(repeater.r) ** 2
        * abs(apA.t_ref) * abs(apB.t_ref) / (abs(apA.r_ref) * abs(apB.r_ref))
        * abs(a_A * a_B) ** 2
    )


def repeater_sync_stage2(
    stage1: Stage1Result,
    C: float,
    f_B: np.ndarray,
    apB: AccessPoint,
    repeater: Repeater,
    channels: ChannelSet,
    f_A: np.ndarray,
    apA: AccessPoint,
    x: np.ndarray,
    sigma2: float,
    rng: np.random.Generator,
) -> tuple[complex, SyncOutcome]:
    """AP-B returns the conjugate of its stage-I observation via R; AP-A forms ``y``.

    Noise draws happen in a fixed order: repeater noise, then the AP-A
    antenna-by-symbol noise matrix. If ``|y|`` is below the resolvability
    floor the outcome is flagged and ``theta_hat`` is NaN.
    """
    if not C > 0:
        raise ValueError(f"normaliser C must be positive, got {C}")
    x = np.asarray(x, dtype=complex)
    L = x.size
    cal_b = apB.coeffs
    s_r2 = (
        math.sqrt(L / C) * math.sqrt(apB.tx_power) * repeater.r
        * complex(channels.g_B @ transmit_vector(apB, cal_b, f_B))
    )
    y_r2 = s_r2 * np.conj(stage1.y_B) + complex_gaussian_vector(L, sigma2, rng)

    # analytic per-symbol power at R, using the conditional expectation of ||y_B||^2
    rx_power2 = abs(s_r2) ** 2 * power_normalizer_C(stage1, "analytic") / L + sigma2
    gain2 = repeater.amplitude(rx_power2)
    gt_A = apA.effective_channel(channels.g_A)
    Y_a2 = gain2 * repeater.t * np.outer(gt_A, y_r2) + complex_gaussian_matrix(apA.antennas, L, sigma2, rng)
    y = complex(f_A @ Y_a2 @ x)

    a_A = complex(f_A @ gt_A)
    c = sync_amplitude(apA, apB, repeater, a_A, stage1.a_B, stage1.gain, gain2, C, L, stage1.energy)
    theta = true_phase_offset(apA, apB)
    resid = abs(y - c * complex(math.cos(theta), math.sin(theta)))
    snr = math.inf if resid == 0 else c**2 / resid**2
    if abs(y) < UNRESOLVABLE_FLOOR:
        return y, SyncOutcome(theta, float("nan"), float("nan"), y, c, float(snr), flagged=True)
    theta_hat = math.atan2(y.imag, y.real)
    return y, SyncOutcome(theta, theta_hat, wrap_angle(theta_hat - theta), y, c, float(snr))


# ---------------------------------------------------------------------------
# coherent joint transmission metric


def cjt_gain(
    h_A: np.ndarray,
    h_B: np.ndarray,
    apA: AccessPoint,
    apB: AccessPoint,
    coeffsA: np.ndarray,
    coeffsB: np.ndarray,
    theta_hat: float,
    ue: RfChain,
    equal_amplitude: bool = False,
) -> float:
    """Combining efficiency ``|y_A e^{j theta_hat} + y_B|^2 / (|y_A| + |y_B|)^2``.

    ``y_A``, ``y_B`` are the noiseless calibrated conjugate-beamforming
    downlink signals each AP delivers to the UE. With ``equal_amplitude`` the
    two are rescaled to unit magnitude so only their phases matter.
    """
    y_a = complex(np.sum(ue_receive_calibrated(apA.chain, coeffsA, h_A, ue)))
    y_b = complex(np.sum(ue_receive_calibrated(apB.chain, coeffsB, h_B, ue)))
    if abs(y_a) == 0 or abs(y_b) == 0:
        raise DegenerateError("UE link with zero amplitude")
    if equal_amplitude:
        y_a /= abs(y_a)
        y_b /= abs(y_b)
    num = abs(y_a * np.exp(1j * theta_hat) + y_b) ** 2
    return float(num / (abs(y_a) + abs(y_b)) ** 2)
