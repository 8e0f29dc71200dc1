"""Light-curve detrending, folding, binning and view construction.

The pipeline turns a raw ``(time, flux)`` series plus a transit ephemeris into
three fixed-length, normalized input views:

* global: the whole folded orbit in 2001 median bins,
* local: +/- 2 transit durations around the event in 201 bins,
* gaussian: the whole orbit in 8004 bins reduced five times by a
  [1, 4, 6, 4, 1]/16 smooth-and-decimate pyramid step, giving 251 values.

Each view is shifted to median 0 and scaled to minimum -1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import LSQUnivariateSpline

from .errors import (
    ArgumentError,
    DegenerateFitError,
    DimensionError,
    NormalizationError,
    PreprocessingError,
)
from .numerics import DTYPE

log = logging.getLogger(__name__)

LABELS_RAW = ("PC", "AFP", "NTP", "UNK")

GLOBAL_BINS = 2001
LOCAL_BINS = 201
PYRAMID_INPUT_BINS = 8004
PYRAMID_LEVELS = 5
LOCAL_HALF_WIDTH_DURATIONS = 2.0

PYRAMID_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class LightCurve:
    time: np.ndarray
    flux: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.time, dtype=DTYPE)
        f = np.ascontiguousarray(self.flux, dtype=DTYPE)
        if t.ndim != 1 or t.shape != f.shape:
            raise DimensionError(f"time {t.shape} and flux {f.shape} must be equal-length 1D")
        if t.size < 2:
            raise PreprocessingError("a light curve needs at least 2 points")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(f))):
            raise PreprocessingError("time and flux must be finite")
        if np.any(np.diff(t) <= 0):
            raise PreprocessingError("time must be strictly increasing")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "flux", f)

    def __len__(self):
        return self.time.size


@dataclass(frozen=True)
class TceMeta:
    """Transit ephemeris. ``duration`` is in hours, everything else in days.

    ``extra_masks`` lists ``(period, epoch_t0, duration_hours)`` of other known
    transiting bodies in the system; their windows are masked while detrending.
    """

    period: float
    epoch_t0: float
    duration: float
    label_raw: str = "UNK"
    tce_id: str = ""
    extra_masks: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        if not self.period > 0:
            raise ArgumentError(f"period must be positive, got {self.period}")
        if not self.duration > 0:
            raise ArgumentError(f"duration must be positive, got {self.duration}")
        if self.duration_days >= self.period:
            raise ArgumentError(
                f"duration {self.duration} h is not shorter than period {self.period} d")
        if self.label_raw not in LABELS_RAW:
            raise ArgumentError(f"unknown label {self.label_raw!r}")

    @property
    def duration_days(self) -> float:
        return self.duration / 24.0


@dataclass(frozen=True)
class ViewSet:
    global_view: np.ndarray
    local_view: np.ndarray
    gaussian_view: np.ndarray

    def __post_init__(self):
        for name, n in (("global_view", GLOBAL_BINS), ("local_view", LOCAL_BINS),
                        ("gaussian_view", 251)):
            v = np.ascontiguousarray(getattr(self, name), dtype=DTYPE)
            if v.shape != (n,):
                raise DimensionError(f"{name} must have length {n}, got {v.shape}")
            object.__setattr__(self, name, v)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"global": self.global_view, "local": self.local_view,
                "gaussian": self.gaussian_view}

    def __getitem__(self, view: str) -> np.ndarray:
        return self.as_dict()[view]


@dataclass(frozen=True)
class FlattenConfig:
    min_spacing: float = 0.5
    max_spacing: float = 20.0
    n_spacings: int = 20
    clip_rounds: int = 3
    clip_sigma: float = 3.0
    gap_width: float = 0.75
    min_points: int = 20
    mask_half_width: float = 1.0  # in transit durations
    min_points_per_knot_interval: int = 4

    @property
    def spacings(self) -> np.ndarray:
        return np.geomspace(self.min_spacing, self.max_spacing, self.n_spacings)


def bic(rss: float, n: int, k: int) -> float:
    """Gaussian-likelihood BIC ``n ln(rss/n) + k ln(n)``."""
    if not n > k >= 1:
        raise ArgumentError(f"need n > k >= 1, got n={n}, k={k}")
    if rss < 0:
        raise ArgumentError(f"rss must be non-negative, got {rss}")
    if rss == 0:
        raise DegenerateFitError("rss is zero; BIC is undefined for a perfect fit")
    return n * np.log(rss / n) + k * np.log(n)


def fold(time, period: float, t0: float) -> np.ndarray:
    """Phase in days on ``[-period/2, period/2)``, with the transit at 0."""
    if not period > 0:
        raise ArgumentError(f"period must be positive, got {period}")
    half = 0.5 * period
    phase = np.mod(np.asarray(time, dtype=DTYPE) - t0 + half, period) - half
    # mod can round up to exactly `period` for tiny negative arguments
    phase[phase >= half] -= period
    return phase


def transit_mask(time, meta: TceMeta, half_width: float = 1.0) -> np.ndarray:
    """True where a point lies within ``half_width`` durations of any known transit."""
    time = np.asarray(time, dtype=DTYPE)
    masked = np.abs(fold(time, meta.period, meta.epoch_t0)) < half_width * meta.duration_days
    for period, t0, duration in meta.extra_masks:
        masked |= np.abs(fold(time, period, t0)) < half_width * duration / 24.0
    return masked


def _segments(time: np.ndarray, gap_width: float) -> list[slice]:
    breaks = np.flatnonzero(np.diff(time) > gap_width) + 1
    edges = np.concatenate([[0], breaks, [time.size]])
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _interior_knots(t: np.ndarray, spacing: float, min_per_interval: int) -> np.ndarray:
    """Evenly spaced knots, thinned so every knot interval holds enough points."""
    a, b = t[0], t[-1]
    candidates = np.arange(a + spacing, b, spacing)
    kept = []
    prev = 0
    for knot in candidates:
        i = int(np.searchsorted(t, knot))
        if i - prev >= min_per_interval and t.size - i >= min_per_interval:
            kept.append(knot)
            prev = i
    return np.asarray(kept, dtype=DTYPE)


def _fit_segment(t, f, spacing, cfg: FlattenConfig):
    knots = _interior_knots(t, spacing, cfg.min_points_per_knot_interval)
    spline = LSQUnivariateSpline(t, f, knots, k=3)
    return spline, knots.size + 4


class _SegmentFit:
    """Spline fit of one segment. ``keep`` marks points used for fitting."""

    def __init__(self, t, f, keep):
        self.t = t
        self.f = f
        self.keep = keep

    def fit(self, spacing, cfg):
        tk, fk = self.t[self.keep], self.f[self.keep]
        return _fit_segment(tk, fk, spacing, cfg)


def _sweep_fit(segs: list[_SegmentFit], spacing: float, cfg: FlattenConfig):
    rss, n, k = 0.0, 0, 0
    splines = []
    for seg in segs:
        spline, k_seg = seg.fit(spacing, cfg)
        resid = seg.f[seg.keep] - spline(seg.t[seg.keep])
        rss += float(resid @ resid)
        n += int(seg.keep.sum())
        k += k_seg
        splines.append(spline)
    return splines, rss, n, k


def flatten(lc: LightCurve, meta: TceMeta, config: FlattenConfig = FlattenConfig(),
            return_spacing: bool = False):
    """Divide out a cubic B-spline trend chosen by BIC.

    Transit windows (within ``mask_half_width`` durations of each transit of
    the TCE and of any ``extra_masks``) are excluded from the fit. The knot
    spacing is chosen from a geometric grid by minimum BIC, then the chosen
    spline is refit after each of ``clip_rounds`` rounds of ``clip_sigma``
    residual clipping. Returns the light curve divided by the trend; segments
    (split at gaps wider than ``gap_width``) with too few points are dropped.
    """
    t, f = lc.time, lc.flux
    usable = ~transit_mask(t, meta, config.mask_half_width)
    if usable.sum() < config.min_points:
        raise PreprocessingError(
            f"only {int(usable.sum())} out-of-transit points, need {config.min_points}")

    segs: list[_SegmentFit] = []
    seg_slices: list[slice] = []
    for sl in _segments(t, config.gap_width):
        keep = usable[sl].copy()
        if keep.sum() < config.min_points_per_knot_interval:
            continue
        segs.append(_SegmentFit(t[sl], f[sl], keep))
        seg_slices.append(sl)
    if not segs:
        raise PreprocessingError("no segment has enough out-of-transit points for a spline")

    scale = max(float(np.median(np.abs(f[usable]))), 1e-300)
    best = None
    for spacing in config.spacings:
        try:
            _, rss, n, k = _sweep_fit(segs, spacing, config)
        except ValueError:
            continue
        if n <= k:
            continue
        # a numerically perfect fit gets a tiny rss floor so the knot penalty decides
        rss = max(rss, n * (1e-12 * scale) ** 2)
        score = bic(rss, n, k)
        if best is None or score < best[0]:
            best = (score, spacing)
    if best is None:
        raise PreprocessingError("no knot spacing produced a viable spline fit")
    spacing = best[1]

    for _ in range(config.clip_rounds):
        changed = False
        for seg in segs:
            spline, _ = seg.fit(spacing, config)
            resid = seg.f - spline(seg.t)
            sigma = float(np.std(resid[seg.keep]))
            if sigma == 0.0:
                continue
            keep = seg.keep & (np.abs(resid) <= config.clip_sigma * sigma)
            if keep.sum() >= max(config.min_points_per_knot_interval, 4) and \
                    keep.sum() != seg.keep.sum():
                seg.keep = keep
                changed = True
        if not changed:
            break

    times, fluxes = [], []
    for seg in segs:
        spline, _ = seg.fit(spacing, config)
        trend = spline(seg.t)
        if np.any(trend <= 0) or not np.all(np.isfinite(trend)):
            raise PreprocessingError("spline trend is not strictly positive")
        times.append(seg.t)
        fluxes.append(seg.f / trend)
    out = LightCurve(np.concatenate(times), np.concatenate(fluxes))
    return (out, float(spacing)) if return_spacing else out


def bin_view(phases, flux, n_bins: int, span: tuple[float, float]) -> np.ndarray:
    """Median-bin ``flux`` by phase on ``[lo, hi)`` into ``n_bins`` equal bins.

    Empty bins are filled by linear interpolation between the nearest
    non-empty bins; empty bins at either end copy the nearest value.
    """
    lo, hi = float(span[0]), float(span[1])
    if n_bins < 1:
        raise ArgumentError("n_bins must be >= 1")
    if not lo < hi:
        raise ArgumentError(f"empty span [{lo}, {hi})")
    phases = np.asarray(phases, dtype=DTYPE)
    flux = np.asarray(flux, dtype=DTYPE)
    inside = (phases >= lo) & (phases < hi)
    p, v = phases[inside], flux[inside]
    if p.size == 0:
        raise PreprocessingError(f"no points fall in [{lo}, {hi}); all {n_bins} bins empty")
    width = (hi - lo) / n_bins
    idx = np.clip(np.floor((p - lo) / width).astype(np.int64), 0, n_bins - 1)
    order = np.lexsort((v, idx))
    idx, v = idx[order], v[order]
    counts = np.bincount(idx, minlength=n_bins)
    filled = np.flatnonzero(counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[filled]
    c = counts[filled]
    medians = 0.5 * (v[starts + (c - 1) // 2] + v[starts + c // 2])
    if filled.size == n_bins:
        return medians
    return np.interp(np.arange(n_bins, dtype=DTYPE), filled.astype(DTYPE), medians)


def normalize_view(v) -> np.ndarray:
    """Shift to median 0 and scale so the minimum is -1."""
    v = np.asarray(v, dtype=DTYPE)
    centered = v - np.median(v)
    low = centered.min()
    if not low < 0:
        raise NormalizationError("view minimum equals its median; cannot scale to -1")
    return centered / -low


def pyramid_reduce(v) -> np.ndarray:
    """One Gaussian pyramid level: [1,4,6,4,1]/16 smoothing, keep even indices.

    Edges are handled by half-sample reflection (``... b a | a b ...``).
    The output has ``ceil(len(v) / 2)`` entries.
    """
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1 or v.size < 5:
        raise ArgumentError(f"pyramid_reduce needs a 1D vector of length >= 5, got {v.shape}")
    p = np.pad(v, 2, mode="symmetric")
    a, b, c, d, e = (p[i:i + v.size] for i in range(5))
    # written as center + weighted deviations so constants come back bit-exact
    out = c + ((a + e - 2.0 * c) + 4.0 * (b + d - 2.0 * c)) / 16.0
    out = np.clip(out, v.min(), v.max())
    return out[::2]


def gaussian_pyramid(v, levels: int = PYRAMID_LEVELS) -> list[np.ndarray]:
    """``levels`` successive reductions of ``v`` (the input itself not included)."""
    out = []
    for _ in range(levels):
        v = pyramid_reduce(v)
        out.append(v)
    return out


def raw_views(lc: LightCurve, meta: TceMeta) -> dict[str, np.ndarray]:
    """Binned views before normalization (flux units, out-of-transit level ~1)."""
    phases = fold(lc.time, meta.period, meta.epoch_t0)
    half = 0.5 * meta.period
    local_half = min(half, LOCAL_HALF_WIDTH_DURATIONS * meta.duration_days)
    global_raw = bin_view(phases, lc.flux, GLOBAL_BINS, (-half, half))
    local_raw = bin_view(phases, lc.flux, LOCAL_BINS, (-local_half, local_half))
    big = bin_view(phases, lc.flux, PYRAMID_INPUT_BINS, (-half, half))
    gaussian_raw = gaussian_pyramid(big, PYRAMID_LEVELS)[-1]
    return {"global": global_raw, "local": local_raw, "gaussian": gaussian_raw}


def make_views(lc: LightCurve, meta: TceMeta) -> ViewSet:
    """Normalized global/local/gaussian views of an already flattened light curve."""
    raw = raw_views(lc, meta)
    return ViewSet(normalize_view(raw["global"]), normalize_view(raw["local"]),
                   normalize_view(raw["gaussian"]))


def preprocess(lc: LightCurve, meta: TceMeta, config: FlattenConfig = FlattenConfig()) -> ViewSet:
    return make_views(flatten(lc, meta, config), meta)
