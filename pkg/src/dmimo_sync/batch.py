"""Vectorised evaluation of many trials of one cell.

Each trial still draws from its own counter-based stream, in exactly the
order :func:`dmimo_sync.montecarlo.run_trial` uses, so both paths see the
same realisations. Only the protocol arithmetic is batched across trials.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .numerics import complex_gaussian_matrix, complex_gaussian_vector, wrap_angle
from .protocols import UNRESOLVABLE_FLOOR, Repeater, acquire_beamformer, receive_repeater_pilot, sync_pilot
from .system_model import AccessPoint, NodeConfig, draw_channel, draw_rf_chain

if TYPE_CHECKING:
    from .montecarlo import ScenarioConfig


@dataclass
class BatchOutcome:
    theta_true: np.ndarray
    theta_hat: np.ndarray
    error: np.ndarray
    y: np.ndarray
    c: np.ndarray
    flagged: np.ndarray
    cjt_gain: Optional[np.ndarray] = None


def _gains(mode: str, tx_power: float, ref_power: float, rx_power: np.ndarray) -> np.ndarray:
    if mode == "literal":
        return np.full(rx_power.shape, np.sqrt(tx_power))
    if mode == "fixed":
        return np.full(rx_power.shape, np.sqrt(tx_power / ref_power))
    with np.errstate(divide="ignore"):
        return np.sqrt(tx_power / rx_power)


def run_trials_batch(cfg: "ScenarioConfig", start: int = 0, count: Optional[int] = None) -> BatchOutcome:
    from .montecarlo import trial_rng

    n = cfg.trials - start if count is None else count
    MA, MB, L = cfg.M_A, cfg.M_B, cfg.L
    sigma2 = cfg.sigma2
    gm = cfg.gain_model
    d_B = cfg.d if cfg.d_B is None else cfg.d_B
    p_pow = cfg.rho_R if cfg.pilot_power is None else cfg.pilot_power

    tA = np.empty((n, MA), complex); rA = np.empty((n, MA), complex)
    tB = np.empty((n, MB), complex); rB = np.empty((n, MB), complex)
    tR = np.empty(n, complex); rR = np.empty(n, complex)
    gA = np.empty((n, MA), complex); gB = np.empty((n, MB), complex)
    fA = np.empty((n, MA), complex); fB = np.empty((n, MB), complex)
    wR1 = np.empty((n, L), complex); wB = np.empty((n, L), complex)
    wR2 = np.empty((n, L), complex); WA2 = np.empty((n, MA, L), complex)
    if cfg.cjt:
        tU = np.empty(n, complex); rU = np.empty(n, complex)
        hA = np.empty((n, MA), complex); hB = np.empty((n, MB), complex)

    cfgA = NodeConfig(MA, cfg.ref_index_A, cfg.rho_A)
    cfgB = NodeConfig(MB, cfg.ref_index_B, cfg.rho_B)
    for j in range(n):
        rng = trial_rng(cfg.seed, cfg.d, cfg.rho_R, start + j)
        chA = draw_rf_chain(MA, gm, rng)
        chB = draw_rf_chain(MB, gm, rng)
        chR = draw_rf_chain(1, gm, rng)
        tA[j], rA[j], tB[j], rB[j] = chA.t, chA.r, chB.t, chB.r
        tR[j], rR[j] = chR.t[0], chR.r[0]
        gA[j] = draw_channel(MA, cfg.d, rng)
        gB[j] = draw_channel(MB, d_B, rng)
        if cfg.beamformer == "pilot":
            rep = Repeater(chR, cfg.rho_R, cfg.repeater_gain, cfg.repeater_ref_power)
            fA[j] = acquire_beamformer(
                receive_repeater_pilot(AccessPoint(chA, cfgA), gA[j], rep, p_pow, cfg.pilot_symbols, sigma2, rng)
            )
            fB[j] = acquire_beamformer(
                receive_repeater_pilot(AccessPoint(chB, cfgB), gB[j], rep, p_pow, cfg.pilot_symbols, sigma2, rng)
            )
        wR1[j] = complex_gaussian_vector(L, sigma2, rng)
        wB[j] = complex_gaussian_vector(L, sigma2, rng)
        wR2[j] = complex_gaussian_vector(L, sigma2, rng)
        WA2[j] = complex_gaussian_matrix(MA, L, sigma2, rng)
        if cfg.cjt:
            chU = draw_rf_chain(1, gm, rng)
            tU[j], rU[j] = chU.t[0], chU.r[0]
            hA[j] = draw_channel(MA, cfg.ue_distance, rng)
            hB[j] = draw_channel(MB, cfg.ue_distance, rng)

    kA, kB = cfg.ref_index_A, cfg.ref_index_B
    calA = (tA[:, kA] / rA[:, kA])[:, None] * (rA / tA)
    calA[:, kA] = 1.0
    calB = (tB[:, kB] / rB[:, kB])[:, None] * (rB / tB)
    calB[:, kB] = 1.0
    gtA, gtB = rA * gA, rB * gB
    if cfg.beamformer == "genie":
        fA = np.conj(gtA) / np.linalg.norm(gtA, axis=1, keepdims=True)
        fB = np.conj(gtB) / np.linalg.norm(gtB, axis=1, keepdims=True)

    x = sync_pilot(L)
    energy = float(np.vdot(x, x).real)
    s_r1 = np.sqrt(cfg.rho_A) * rR * np.sum(gA * (tA * calA * fA), axis=1)
    y_r1 = s_r1[:, None] * x + wR1
    gain1 = _gains(cfg.repeater_gain, cfg.rho_R, cfg.repeater_ref_power, np.abs(s_r1) ** 2 * energy / L + sigma2)
    a_B = np.sum(fB * gtB, axis=1)
    y_B = (gain1 * tR * a_B)[:, None] * y_r1 + wB

    C_an = gain1**2 * np.abs(tR) ** 2 * np.abs(a_B) ** 2 * (np.abs(s_r1) ** 2 * energy + L * sigma2) + L * sigma2
    C = C_an if cfg.C_mode == "analytic" else np.sum(np.abs(y_B) ** 2, axis=1)
    bad = ~(C > 0)
    C_safe = np.where(bad, 1.0, C)

    s_r2 = np.sqrt(L / C_safe) * np.sqrt(cfg.rho_B) * rR * np.sum(gB * (tB * calB * fB), axis=1)
    y_r2 = s_r2[:, None] * np.conj(y_B) + wR2
    gain2 = _gains(cfg.repeater_gain, cfg.rho_R, cfg.repeater_ref_power, np.abs(s_r2) ** 2 * C_an / L + sigma2)
    Y_A2 = (gain2 * tR)[:, None, None] * gtA[:, :, None] * y_r2[:, None, :] + WA2
    y = np.einsum("nm,nml,l->n", fA, Y_A2, x)

    a_A = np.sum(fA * gtA, axis=1)
    c = (
        np.sqrt(L / C_safe) * energy * gain1 * gain2 * np.sqrt(cfg.rho_A * cfg.rho_B)
        * np.abs(tR) ** 2 * np.abs(rR) ** 2
        * np.abs(tA[:, kA]) * np.abs(tB[:, kB]) / (np.abs(rA[:, kA]) * np.abs(rB[:, kB]))
        * np.abs(a_A * a_B) ** 2
    )
    theta = wrap_angle(np.angle(tB[:, kB]) - np.angle(rB[:, kB]) - np.angle(tA[:, kA]) + np.angle(rA[:, kA]))
    flagged = bad | ~np.isfinite(y) | (np.abs(y) < UNRESOLVABLE_FLOOR) | ~np.isfinite(gain1 * gain2)
    theta_hat = np.where(flagged, np.nan, np.angle(y))
    error = np.where(flagged, np.nan, wrap_angle(np.nan_to_num(theta_hat) - theta))

    gains = None
    if cfg.cjt:
        # calibrated conjugate beamforming towards the UE, summed over antennas
        y_a = np.sum(rU[:, None] * hA * tA * calA * np.conj(rA * hA * tU[:, None]), axis=1)
        y_b = np.sum(rU[:, None] * hB * tB * calB * np.conj(rB * hB * tU[:, None]), axis=1)
        if cfg.cjt_equal_amplitude:
            y_a, y_b = y_a / np.abs(y_a), y_b / np.abs(y_b)
        num = np.abs(y_a * np.exp(1j * np.nan_to_num(theta_hat)) + y_b) ** 2
        gains = np.where(flagged, np.nan, num / (np.abs(y_a) + np.abs(y_b)) ** 2)
    return BatchOutcome(theta, theta_hat, error, y, c, flagged, gains)
