"""RF-chain impairments, reciprocal block-fading channels, path loss and thermal noise."""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .numerics import complex_gaussian_vector, wrap_angle

BOLTZMANN = 1.380649e-23  # J/K


@dataclass(frozen=True)
class RfChain:
    """Per-antenna complex transmit (``t``) and receive (``r``) gains of one node."""

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.t, dtype=complex))
        r = np.atleast_1d(np.asarray(self.r, dtype=complex))
        if t.shape != r.shape or t.ndim != 1:
            raise ValueError(f"t and r must be equal-length vectors, got {t.shape} and {r.shape}")
        if not (t.all() and r.all()):
            raise ValueError("RF gains must be non-zero")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "r", r)

    @property
    def antennas(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class NodeConfig:
    antennas: int
    ref_index: int = 0
    tx_power: float = 0.1  # W

    def __post_init__(self):
        if self.antennas < 1:
            raise ValueError(f"antennas must be >= 1, got {self.antennas}")
        if not 0 <= self.ref_index < self.antennas:
            raise ValueError(f"ref_index {self.ref_index} outside [0, {self.antennas})")
        if not self.tx_power > 0:
            raise ValueError(f"tx_power must be positive, got {self.tx_power}")


@dataclass(frozen=True)
class AccessPoint:
    """A multi-antenna AP: its drawn RF chain plus static configuration."""

    chain: RfChain
    cfg: NodeConfig

    def __post_init__(self):
        if self.chain.antennas != self.cfg.antennas:
            raise ValueError("RF chain size does not match configured antenna count")

    @property
    def antennas(self) -> int:
        return self.cfg.antennas

    @property
    def ref_index(self) -> int:
        return self.cfg.ref_index

    @property
    def tx_power(self) -> float:
        return self.cfg.tx_power

    @property
    def t_ref(self) -> complex:
        return complex(self.chain.t[self.cfg.ref_index])

    @property
    def r_ref(self) -> complex:
        return complex(self.chain.r[self.cfg.ref_index])

    @cached_property
    def coeffs(self) -> np.ndarray:
        """Intra-AP reciprocity calibration coefficients (reference entry exactly 1)."""
        t, r, k = self.chain.t, self.chain.r, self.cfg.ref_index
        c = (t[k] / r[k]) * (r / t)
        c[k] = 1.0
        return c

    def effective_channel(self, g: np.ndarray) -> np.ndarray:
        """Propagation channel seen through this AP's receive chain, ``D_r g``."""
        return self.chain.r * g


@dataclass(frozen=True)
class ChannelSet:
    """One block-fading realisation of every reciprocal link in a trial.

    The same vectors are used for both link directions.
    """

    g_A: np.ndarray
    g_B: np.ndarray
    h_A: Optional[np.ndarray] = None
    h_B: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None


@dataclass(frozen=True)
class NoiseModel:
    temperature: float = 290.0  # K
    bandwidth: float = 20e6  # Hz
    noise_figure: float = 9.0  # dB

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def sigma2(self) -> float:
        return noise_variance(self)


@dataclass(frozen=True)
class GainModel:
    """Distribution of RF gains: uniform phase, magnitude uniform in [lo, hi].

    ``lo == hi == 1`` is the unit-magnitude model.
    """

    lo: float = 1.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo > 0:
            raise ValueError(f"gain magnitude lower bound must be positive, got {self.lo}")
        if self.hi < self.lo:
            raise ValueError(f"gain magnitude band [{self.lo}, {self.hi}] is empty")

    @classmethod
    def unit(cls) -> "GainModel":
        return cls(1.0, 1.0)

    @classmethod
    def band(cls, lo: float, hi: float) -> "GainModel":
        return cls(lo, hi)

    @property
    def is_unit(self) -> bool:
        return self.lo == 1.0 and self.hi == 1.0

    def __str__(self) -> str:
        return "unit" if self.is_unit else f"band:{self.lo!r},{self.hi!r}"

    @classmethod
    def parse(cls, text: str) -> "GainModel":
        text = text.strip()
        if text == "unit":
            return cls.unit()
        if text.startswith("band:"):
            lo, hi = (float(v) for v in text[5:].split(","))
            return cls.band(lo, hi)
        raise ValueError(f"unknown gain model {text!r} (expected 'unit' or 'band:LO,HI')")


def path_loss_db(d: float) -> float:
    """Large-scale path gain in dB at distance ``d`` meters (negative number)."""
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    return -30.5 - 36.7 * np.log10(d)


def noise_variance(model: NoiseModel) -> float:
    """Thermal noise power k_B T B scaled by the noise figure, in watts."""
    return BOLTZMANN * model.temperature * model.bandwidth * 10.0 ** (model.noise_figure / 10.0)


def draw_rf_chain(n: int, gain_model: GainModel, rng: np.random.Generator) -> RfChain:
    """Random RF chain of ``n`` antennas.

    Phases of ``t`` then ``r`` come from one uniform draw of length ``2n``;
    the band model follows with one draw of ``2n`` magnitudes.
    """
    if n < 1:
        raise ValueError(f"antennas must be >= 1, got {n}")
    gains = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, 2 * n))
    if not gain_model.is_unit:
        gains *= rng.uniform(gain_model.lo, gain_model.hi, 2 * n)
    return RfChain(gains[:n], gains[n:])


def draw_access_point(cfg: NodeConfig, gain_model: GainModel, rng: np.random.Generator) -> AccessPoint:
    return AccessPoint(draw_rf_chain(cfg.antennas, gain_model, rng), cfg)


def draw_channel(n: int, d: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Rayleigh entries with variance set by the path loss at ``d``."""
    beta = 10.0 ** (path_loss_db(d) / 10.0)
    return complex_gaussian_vector(n, beta, rng)


def true_phase_offset(apA: AccessPoint, apB: AccessPoint) -> float:
    """Inter-AP reciprocity phase offset (B minus A) at the reference antennas."""
    phi_a = cmath.phase(apA.t_ref) - cmath.phase(apA.r_ref)
    phi_b = cmath.phase(apB.t_ref) - cmath.phase(apB.r_ref)
    return wrap_angle(phi_b - phi_a)
