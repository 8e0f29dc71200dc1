"""Seeded synthetic TCE light curves for desk-scale experiments.

Three populations share one observing setup (evenly sampled, unit flux plus
white noise):

* ``planet`` (label PC): trapezoidal transit, depth 0.5-3 %, duration 1-8 h,
  period 1-50 d;
* ``noise`` (NTP): no signal at all, with a random ephemeris;
* ``eb`` (AFP): eclipsing-binary mimic with a V-shaped primary eclipse and a
  secondary eclipse at phase 0.5 whose depth is 0.3 of the primary.

Every record is generated from its own sub-stream of the seed, so the output
is a pure function of the arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import TceRecord
from .errors import ArgumentError
from .lightcurve import FlattenConfig, LightCurve, TceMeta, preprocess
from .numerics import make_rng

PLANET, NOISE, EB = "planet", "noise", "eb"
LABEL_RAW = {PLANET: "PC", NOISE: "NTP", EB: "AFP"}
DEFAULT_POSITIVE_FRAC = 0.229
DEFAULT_NOISE_SIGMA = 1e-3

_KIND_STREAM = 4
_RECORD_STREAM = 3


@dataclass(frozen=True)
class SynthConfig:
    baseline_days: float = 90.0
    cadence_days: float = 29.4 / 60 / 24
    depth_range: tuple[float, float] = (0.005, 0.03)
    duration_hours: tuple[float, float] = (1.0, 8.0)
    period_days: tuple[float, float] = (1.0, 50.0)
    ingress_fraction: float = 0.2
    eb_depth_range: tuple[float, float] = (0.08, 0.30)
    eb_secondary_ratio: float = 0.3


def trapezoid(phase, duration_days: float, ingress_fraction: float) -> np.ndarray:
    """Unit-depth trapezoid profile: 1 on the flat bottom, 0 out of transit."""
    half = 0.5 * duration_days
    ingress = ingress_fraction * duration_days
    x = np.abs(phase)
    return np.clip((half - x) / ingress, 0.0, 1.0)


def v_shape(phase, duration_days: float) -> np.ndarray:
    half = 0.5 * duration_days
    return np.clip(1.0 - np.abs(phase) / half, 0.0, 1.0)


def _phase(t, period, t0):
    return np.mod(t - t0 + 0.5 * period, period) - 0.5 * period


def synth_lightcurve(kind: str, rng: np.random.Generator, noise_sigma: float = DEFAULT_NOISE_SIGMA,
                     config: SynthConfig = SynthConfig(), tce_id: str = ""):
    """One raw light curve with its ephemeris.

    Returns ``(LightCurve, TceMeta, depth)`` where ``depth`` is the injected
    fractional depth of the primary event (0 for pure noise).
    """
    if kind not in LABEL_RAW:
        raise ArgumentError(f"unknown synthetic kind {kind!r}")
    t = np.arange(0.0, config.baseline_days, config.cadence_days)
    period = rng.uniform(*config.period_days)
    duration_h = rng.uniform(*config.duration_hours)
    t0 = rng.uniform(0.0, period)
    dur = duration_h / 24.0
    depth = 0.0
    model = np.ones_like(t)
    if kind == PLANET:
        depth = rng.uniform(*config.depth_range)
        model -= depth * trapezoid(_phase(t, period, t0), dur, config.ingress_fraction)
    elif kind == EB:
        depth = rng.uniform(*config.eb_depth_range)
        model -= depth * v_shape(_phase(t, period, t0), dur)
        model -= (config.eb_secondary_ratio * depth
                  * v_shape(_phase(t, period, t0 + 0.5 * period), dur))
    flux = model + noise_sigma * rng.standard_normal(t.size) if noise_sigma > 0 else model
    meta = TceMeta(period=period, epoch_t0=t0, duration=duration_h,
                   label_raw=LABEL_RAW[kind], tce_id=tce_id)
    return LightCurve(t, flux), meta, depth


def synth_kinds(n: int, positive_frac: float, seed: int) -> list[str]:
    """Population labels in a seeded order: ``round(n * positive_frac)`` planets,
    the rest split evenly between noise and eclipsing binaries."""
    if n < 10:
        raise ArgumentError(f"n must be >= 10, got {n}")
    if not 0.0 < positive_frac < 1.0:
        raise ArgumentError(f"positive_frac must lie in (0, 1), got {positive_frac}")
    n_pos = int(round(n * positive_frac))
    n_noise = (n - n_pos) // 2
    kinds = [PLANET] * n_pos + [NOISE] * n_noise + [EB] * (n - n_pos - n_noise)
    order = make_rng(seed, _KIND_STREAM).permutation(n)
    return [kinds[i] for i in order]


def synth_curves(n: int, positive_frac: float = DEFAULT_POSITIVE_FRAC,
                 noise_sigma: float = DEFAULT_NOISE_SIGMA, seed: int = 0,
                 config: SynthConfig = SynthConfig()):
    """Yield ``(kind, LightCurve, TceMeta, depth)`` for each synthetic TCE."""
    if noise_sigma < 0:
        raise ArgumentError(f"noise_sigma must be >= 0, got {noise_sigma}")
    for i, kind in enumerate(synth_kinds(n, positive_frac, seed)):
        rng = make_rng(seed, _RECORD_STREAM, i)
        lc, meta, depth = synth_lightcurve(kind, rng, noise_sigma, config, tce_id=f"synth-{i:05d}")
        yield kind, lc, meta, depth


def synth_generate(n: int, positive_frac: float = DEFAULT_POSITIVE_FRAC,
                   noise_sigma: float = DEFAULT_NOISE_SIGMA, seed: int = 0,
                   config: SynthConfig = SynthConfig(),
                   flatten_config: FlattenConfig = FlattenConfig()) -> list[TceRecord]:
    """Synthetic records passed through the full preprocessing pipeline.

    With ``noise_sigma=0`` the pure-noise population is exactly flat and its
    views cannot be normalized, so preprocessing raises.
    """
    records = []
    for kind, lc, meta, _ in synth_curves(n, positive_frac, noise_sigma, seed, config):
        views = preprocess(lc, meta, flatten_config)
        label_raw = LABEL_RAW[kind]
        records.append(TceRecord(meta.tce_id, int(label_raw == "PC"), label_raw, views))
    return records
