"""Trial orchestration and distance / repeater-power sweeps."""

from __future__ import annotations

import math
from functools import lru_cache
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .batch import run_trials_batch
from .numerics import rmse_circular
from .protocols import (
    DegenerateError,
    Repeater,
    SyncOutcome,
    acquire_beamformer,
    cjt_gain,
    genie_beamformer,
    intra_ap_coeffs,
    power_normalizer_C,
    receive_repeater_pilot,
    repeater_sync_stage1,
    repeater_sync_stage2,
    sync_pilot,
)
from .system_model import (
    ChannelSet,
    GainModel,
    NodeConfig,
    NoiseModel,
    draw_access_point,
    draw_channel,
    draw_rf_chain,
)

Z95 = 1.959963984540054
LOW_CONFIDENCE_FLAG_RATE = 0.01


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation cell. Powers in watts, distances in meters."""

    M_A: int = 16
    M_B: int = 16
    rho_A: float = 0.1
    rho_B: float = 0.1
    rho_R: float = 1e-3
    d: float = 20.0
    d_B: Optional[float] = None  # AP-B to repeater; None means same as d
    L: int = 10
    gain_model: GainModel = field(default_factory=GainModel.unit)
    beamformer: str = "genie"  # genie | pilot
    pilot_symbols: int = 10
    pilot_power: Optional[float] = None  # None means rho_R
    noise: NoiseModel = field(default_factory=NoiseModel)
    inject_noise: bool = True
    C_mode: str = "analytic"
    repeater_gain: str = "fixed"
    repeater_ref_margin_db: float = 10.0
    ref_index_A: int = 0
    ref_index_B: int = 0
    trials: int = 10_000
    seed: int = 0
    cjt: bool = False
    ue_distance: float = 50.0
    cjt_equal_amplitude: bool = True

    def __post_init__(self):
        for name in ("rho_A", "rho_B", "rho_R", "d", "ue_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_B is not None and not self.d_B > 0:
            raise ValueError(f"d_B must be positive, got {self.d_B}")
        if self.pilot_power is not None and not self.pilot_power > 0:
            raise ValueError(f"pilot_power must be positive, got {self.pilot_power}")
        if self.M_A < 1 or self.M_B < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.L < 1 or self.pilot_symbols < 1:
            raise ValueError("pilot lengths must be >= 1")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.beamformer not in ("genie", "pilot"):
            raise ValueError(f"unknown beamformer mode {self.beamformer!r}")
        if self.C_mode not in ("analytic", "empirical"):
            raise ValueError(f"unknown C mode {self.C_mode!r}")
        if self.repeater_gain not in ("literal", "fixed", "agc"):
            raise ValueError(f"unknown repeater gain mode {self.repeater_gain!r}")

    @property
    def sigma2(self) -> float:
        """Injected noise variance (zero when noise is switched off)."""
        return self.noise.sigma2 if self.inject_noise else 0.0

    @property
    def repeater_ref_power(self) -> float:
        # referenced to the nominal noise floor even when noise injection is off
        return self.noise.sigma2 * 10.0 ** (self.repeater_ref_margin_db / 10.0)


@dataclass(frozen=True)
class TrialResult:
    outcome: SyncOutcome
    cjt_gain: Optional[float] = None


@dataclass(frozen=True)
class SweepRow:
    d: float
    rho_R: float
    trials_kept: int
    trials_flagged: int
    rmse: float
    ci95_low: float
    ci95_high: float
    mean_cjt_gain: Optional[float] = None

    @property
    def low_confidence(self) -> bool:
        total = self.trials_kept + self.trials_flagged
        return total > 0 and self.trials_flagged / total > LOW_CONFIDENCE_FLAG_RATE


@dataclass
class SweepResult:
    rows: list[SweepRow]
    config: ScenarioConfig
    distances: list[float]
    powers: list[float]
    failed: list[tuple[float, float, str]] = field(default_factory=list)

    def cell(self, d: float, rho_R: float) -> SweepRow:
        for row in self.rows:
            if row.d == d and row.rho_R == rho_R:
                return row
        raise KeyError((d, rho_R))

    def curve(self, rho_R: float) -> list[SweepRow]:
        return sorted((r for r in self.rows if r.rho_R == rho_R), key=lambda r: r.d)


# ---------------------------------------------------------------------------
# random streams


def _float_key(v: float) -> int:
    return int(np.array(float(v), dtype=np.float64).view(np.uint64))


@lru_cache(maxsize=4096)
def _cell_key(seed: int, d_bits: int, rho_bits: int) -> tuple[int, int]:
    state = np.random.SeedSequence([seed, d_bits, rho_bits]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def cell_key(seed: int, d: float, rho_R: float) -> np.ndarray:
    """128-bit Philox key for the cell ``(seed, d, rho_R)``."""
    return np.array(_cell_key(int(seed), _float_key(d), _float_key(rho_R)), dtype=np.uint64)


def trial_rng(seed: int, d: float, rho_R: float, trial_index: int) -> np.random.Generator:
    """Counter-based stream for one trial.

    The trial index sits in the high word of the Philox counter, so trials
    of a cell never share counter values regardless of evaluation order.
    """
    counter = np.array([0, 0, 0, trial_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=cell_key(seed, d, rho_R), counter=counter))


# ---------------------------------------------------------------------------
# single trial


def run_trial(
    cfg: ScenarioConfig, trial_index: int, rng: Optional[np.random.Generator] = None
) -> TrialResult:
    """Draw a fresh scenario and run the two-stage protocol once.

    Without an explicit ``rng`` the trial's own counter-based stream is used,
    so the result depends only on ``(cfg, trial_index)``.
    """
    if rng is None:
        rng = trial_rng(cfg.seed, cfg.d, cfg.rho_R, trial_index)
    sigma2 = cfg.sigma2

    apA = draw_access_point(NodeConfig(cfg.M_A, cfg.ref_index_A, cfg.rho_A), cfg.gain_model, rng)
    apB = draw_access_point(NodeConfig(cfg.M_B, cfg.ref_index_B, cfg.rho_B), cfg.gain_model, rng)
    repeater = Repeater(
        draw_rf_chain(1, cfg.gain_model, rng), cfg.rho_R, cfg.repeater_gain, cfg.repeater_ref_power
    )
    g_A = draw_channel(cfg.M_A, cfg.d, rng)
    g_B = draw_channel(cfg.M_B, cfg.d if cfg.d_B is None else cfg.d_B, rng)
    channels = ChannelSet(g_A, g_B)

    try:
        if cfg.beamformer == "genie":
            f_A = genie_beamformer(apA.effective_channel(g_A))
            f_B = genie_beamformer(apB.effective_channel(g_B))
        else:
            p_pow = cfg.rho_R if cfg.pilot_power is None else cfg.pilot_power
            f_A = acquire_beamformer(
                receive_repeater_pilot(apA, g_A, repeater, p_pow, cfg.pilot_symbols, sigma2, rng)
            )
            f_B = acquire_beamformer(
                receive_repeater_pilot(apB, g_B, repeater, p_pow, cfg.pilot_symbols, sigma2, rng)
            )
        x = sync_pilot(cfg.L)
        st1 = repeater_sync_stage1(x, f_A, apA, repeater, channels, f_B, apB, sigma2, rng)
        C = power_normalizer_C(st1, cfg.C_mode)
        _, outcome = repeater_sync_stage2(st1, C, f_B, apB, repeater, channels, f_A, apA, x, sigma2, rng)
    except DegenerateError:
        nan = float("nan")
        outcome = SyncOutcome(nan, nan, nan, complex(0.0), 0.0, 0.0, flagged=True)

    gain = None
    if cfg.cjt and not outcome.flagged:
        # drawn last so enabling the metric never perturbs the protocol draws
        ue = draw_rf_chain(1, cfg.gain_model, rng)
        h_A = draw_channel(cfg.M_A, cfg.ue_distance, rng)
        h_B = draw_channel(cfg.M_B, cfg.ue_distance, rng)
        gain = cjt_gain(
            h_A, h_B, apA, apB,
            intra_ap_coeffs(apA.chain, apA.ref_index),
            intra_ap_coeffs(apB.chain, apB.ref_index),
            outcome.theta_hat, ue, cfg.cjt_equal_amplitude,
        )
    return TrialResult(outcome, gain)


# ---------------------------------------------------------------------------
# aggregation


def rmse_with_ci(errors: np.ndarray) -> tuple[float, float, float]:
    """Circular RMSE with a 95% normal-approximation interval on the mean squared error."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        nan = float("nan")
        return nan, nan, nan
    rmse = rmse_circular(e)
    sq = np.square(e)
    mse = rmse**2
    se = float(np.std(sq, ddof=1) / math.sqrt(e.size)) if e.size > 1 else 0.0
    lo = math.sqrt(max(mse - Z95 * se, 0.0))
    hi = math.sqrt(mse + Z95 * se)
    return rmse, min(lo, rmse), max(hi, rmse)


def run_cell(cfg: ScenarioConfig, engine: str = "batch", chunk: int = 4096) -> SweepRow:
    """Aggregate ``cfg.trials`` trials of one cell into a :class:`SweepRow`.

    ``engine="trial"`` loops :func:`run_trial`; ``"batch"`` evaluates the same
    per-trial streams vectorised and is much faster.
    """
    if engine == "trial":
        results = [run_trial(cfg, i) for i in range(cfg.trials)]
        flagged = np.array([r.outcome.flagged for r in results])
        errors = np.array([r.outcome.error for r in results])
        gains = np.array([np.nan if r.cjt_gain is None else r.cjt_gain for r in results])
    elif engine == "batch":
        parts = [
            run_trials_batch(cfg, s, min(chunk, cfg.trials - s)) for s in range(0, cfg.trials, chunk)
        ]
        flagged = np.concatenate([p.flagged for p in parts])
        errors = np.concatenate([p.error for p in parts])
        gains = np.concatenate([p.cjt_gain for p in parts]) if cfg.cjt else np.full(cfg.trials, np.nan)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    kept = errors[~flagged]
    rmse, lo, hi = rmse_with_ci(kept)
    g = gains[~flagged]
    mean_gain = float(np.mean(g)) if cfg.cjt and g.size else None
    return SweepRow(cfg.d, cfg.rho_R, int(kept.size), int(flagged.sum()), rmse, lo, hi, mean_gain)


def _safe_cell(cfg: ScenarioConfig):
    try:
        return run_cell(cfg)
    except Exception as exc:  # reported per cell by run_sweep
        return f"{type(exc).__name__}: {exc}"


def run_sweep(
    base: ScenarioConfig,
    distances: Sequence[float],
    powers: Sequence[float],
    workers: int = 1,
) -> SweepResult:
    """RMSE over the cartesian product of distances and repeater powers.

    Rows are ordered distance-major. Every cell draws from its own
    counter-based substreams, so results do not depend on ``workers``.
    Cells that raise are listed in ``SweepResult.failed`` instead of rows.
    """
    distances = [float(d) for d in distances]
    powers = [float(p) for p in powers]
    if not distances or not powers:
        raise ValueError("distance and power grids must be non-empty")
    cells = [replace(base, d=d, rho_R=p) for d in distances for p in powers]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_safe_cell, cells))
    else:
        outs = [_safe_cell(c) for c in cells]

    rows, failed = [], []
    for cfg, out in zip(cells, outs):
        if isinstance(out, SweepRow):
            rows.append(out)
        else:
            failed.append((cfg.d, cfg.rho_R, out))
    return SweepResult(rows, base, distances, powers, failed)


def monotonicity_violations(result: SweepResult) -> list[tuple[float, float, float]]:
    """Adjacent-distance RMSE decreases whose 95% intervals do not overlap.

    Returns ``(rho_R, d_near, d_far)`` for each violation.
    """
    bad = []
    for p in result.powers:
        curve = result.curve(p)
        for near, far in zip(curve, curve[1:]):
            if far.rmse < near.rmse and far.ci95_high < near.ci95_low:
                bad.append((p, near.d, far.d))
    return bad
