"""Impact-noise model: footstep pressures, dBA levels, MNL/PNL summaries.

Levels are A-weighted-equivalent throughout; material gains are defined to
produce A-weighted pressures directly, so no spectral weighting happens here.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

P_REF = 2.0e-5

# Output of ``evaluation.calibrate_gains`` for the scripted trot (seed 0, 5 x 10 s at 0.5 m/s).
# Concrete has no anchor and sits midway between wood and tiles.
DEFAULT_GAINS = {"wood": 3.868095, "carpet": 2.936051, "tiles": 3.169742, "concrete": 3.518918}


@dataclass(frozen=True)
class SurfaceMaterial:
    name: str
    acoustic_gain: float  # Pa per (m/s * sqrt(kg))

    def __post_init__(self):
        if not self.acoustic_gain > 0:
            raise ValueError(f"acoustic gain for {self.name} must be positive")


@dataclass
class AcousticConfig:
    reference_pressure: float = P_REF
    floor_level: float = 55.0
    mic_distance: float = 0.5
    reference_distance: float = 0.5
    sample_rate: float = 20.0
    decay_time: float = 0.025
    gains: dict = field(default_factory=lambda: dict(DEFAULT_GAINS))

    def __post_init__(self):
        if self.reference_pressure <= 0:
            raise ValueError("reference pressure must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.decay_time <= 0:
            raise ValueError("decay_time must be positive")

    def material(self, name: str) -> SurfaceMaterial:
        try:
            return SurfaceMaterial(name, float(self.gains[name]))
        except KeyError:
            raise ValueError(f"no acoustic gain for material {name!r}") from None


@dataclass
class NoiseTrace:
    times: np.ndarray
    levels: np.ndarray

    def __len__(self):
        return len(self.levels)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "dBA"])
        for t, lvl in zip(self.times, self.levels):
            w.writerow([f"{t:.3f}", f"{lvl:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> NoiseTrace:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["t", "dBA"]:
            raise ValueError("noise trace CSV must start with a 't,dBA' header")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1])


def impact_pressure(v_impact: float, foot_mass: float, material: SurfaceMaterial) -> float:
    """Peak A-weighted pressure (Pa) of one footfall at the microphone distance.

    Amplitude scales with the square root of the impact energy ``m v^2 / 2``,
    which makes it linear in the impact speed.
    """
    if v_impact < 0:
        raise ValueError("impact velocity must be non-negative")
    if foot_mass < 0:
        raise ValueError("foot mass must be non-negative")
    return material.acoustic_gain * v_impact * math.sqrt(foot_mass)


def spl(p: float, config: AcousticConfig | None = None) -> float:
    """Sound pressure level ``20 log10(p / p0)`` in dB."""
    p0 = (config or AcousticConfig()).reference_pressure
    if not p > 0:
        raise ValueError("pressure must be positive")
    return 20.0 * math.log10(p / p0)


def pressure_from_level(level: float, config: AcousticConfig | None = None) -> float:
    p0 = (config or AcousticConfig()).reference_pressure
    return p0 * 10.0 ** (level / 20.0)


def combine_levels(levels) -> float:
    """Incoherent power sum of independent sources."""
    levels = [float(v) for v in levels]
    if not levels:
        raise ValueError("combine_levels needs at least one level")
    top = max(levels)
    return top + 10.0 * math.log10(math.fsum(10.0 ** ((lv - top) / 10.0) for lv in levels))


def attenuate(level: float, distance: float, config: AcousticConfig | None = None) -> float:
    """Spherical spreading: -20 log10(d / d_ref), i.e. 6.02 dB per doubling."""
    d0 = (config or AcousticConfig()).reference_distance
    if distance <= 0:
        raise ValueError("distance must be positive")
    return level - 20.0 * math.log10(distance / d0)


def synthesize_trace(events, duration: float, config: AcousticConfig | None = None,
                     foot_mass: float = 0.15) -> NoiseTrace:
    """20 Hz dBA log of footstep impacts over the fan floor.

    Each touchdown launches a pressure envelope ``p exp(-(t - t_i)/tau)``.  A
    sample covers ``[k/fs, (k+1)/fs)`` and reports the window's mean-square
    pressure: impact energies (tails included) add incoherently to the floor.
    Liftoff events are silent.
    """
    cfg = config or AcousticConfig()
    if duration < 0:
        raise ValueError("duration must be non-negative")
    fs = cfg.sample_rate
    n = int(math.floor(duration * fs + 1e-9))
    times = np.arange(n) / fs
    width = 1.0 / fs
    tau = cfg.decay_time
    energy = np.zeros(n)  # mean-square impact pressure per window, Pa^2
    for ev in events:
        if ev.kind != "touchdown" or ev.impact_velocity <= 0:
            continue
        if ev.time < -1e-9 or ev.time > duration + 1e-9:
            raise ValueError(f"event at t={ev.time} outside [0, {duration}]")
        p = impact_pressure(ev.impact_velocity, foot_mass, cfg.material(ev.material))
        k0 = max(0, int(math.floor(ev.time * fs + 1e-9)))
        # tail below 1e-12 of the peak energy is dropped
        k1 = min(n, k0 + 2 + int(math.ceil(14.0 * tau * fs)))
        for k in range(k0, k1):
            a = max(times[k], ev.time) - ev.time
            b = times[k] + width - ev.time
            if b <= 0:
                continue
            energy[k] += p * p * (tau / 2.0) * (math.exp(-2.0 * a / tau) - math.exp(-2.0 * b / tau)) / width
    floor_energy = pressure_from_level(cfg.floor_level, cfg) ** 2
    levels = cfg.floor_level + 10.0 * np.log10(1.0 + energy / floor_energy)
    return NoiseTrace(times, levels)


def mnl(trace: NoiseTrace, leq: bool = False) -> float:
    """Mean noise level: arithmetic mean of dBA samples, or energy mean with ``leq``."""
    if len(trace) == 0:
        raise ValueError("empty noise trace")
    if leq:
        return energy_mean(trace.levels)
    return math.fsum(trace.levels) / len(trace)


def pnl(trace: NoiseTrace) -> float:
    """Peak noise level: loudest sample."""
    if len(trace) == 0:
        raise ValueError("empty noise trace")
    return float(np.max(trace.levels))


def energy_mean(levels) -> float:
    levels = np.asarray(levels, dtype=float)
    top = float(levels.max())
    return top + 10.0 * math.log10(math.fsum(10.0 ** ((levels - top) / 10.0)) / len(levels))
