"""Event-rate cross-correlation baseline (ZNCC over binned event counts)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError, UndefinedCorrelationError
from .events import EventStream

DEFAULT_BIN = 20_000  # us, one 50 Hz frame interval
MIN_OVERLAP_BINS = 8


@dataclass(frozen=True, eq=False)
class RateSignal:
    bin_width: int
    t0: int
    counts: np.ndarray


def event_rate(stream: EventStream, bin_width: int = DEFAULT_BIN, t0: int | None = None) -> RateSignal:
    """Event counts in [t0 + k*bin, t0 + (k+1)*bin); t0 defaults to the first timestamp."""
    if bin_width <= 0:
        raise ConfigError("bin_width must be positive")
    if len(stream) == 0:
        return RateSignal(int(bin_width), 0 if t0 is None else int(t0), np.zeros(0, dtype=np.int64))
    t0 = int(stream.t[0]) if t0 is None else int(t0)
    k = (stream.t - t0) // bin_width
    k = k[k >= 0]
    return RateSignal(int(bin_width), t0, np.bincount(k).astype(np.int64))


def _zncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0.0:
        return np.nan
    return float(np.dot(a, b) / den)


def zncc_offset(sig1: RateSignal, sig2: RateSignal, t_min: int, t_max: int) -> tuple[int, float]:
    """Offset (us) maximizing the ZNCC of sig2 shifted against sig1, searched over whole-bin lags.

    The offset follows the synchronization convention: sig2 at time t + offset
    matches sig1 at time t.
    """
    if sig1.bin_width != sig2.bin_width:
        raise ConfigError("signals must share a bin width")
    w = sig1.bin_width
    base = sig2.t0 - sig1.t0
    a, b = sig1.counts.astype(float), sig2.counts.astype(float)
    best_lag, best_score = None, -np.inf
    saw_overlap = False
    # offset = base + lag * w, under which sig2[k + lag] lines up with sig1[k]
    for lag in range(int(np.ceil((t_min - base) / w)), int(np.floor((t_max - base) / w)) + 1):
        lo = max(0, -lag)
        hi = min(len(a), len(b) - lag)
        if hi - lo < MIN_OVERLAP_BINS:
            continue
        saw_overlap = True
        s = _zncc(a[lo:hi], b[lo + lag : hi + lag])
        if np.isfinite(s) and s > best_score:
            best_lag, best_score = lag, s
    if not saw_overlap:
        raise InsufficientDataError(f"fewer than {MIN_OVERLAP_BINS} overlapping bins at every lag")
    if best_lag is None:
        raise UndefinedCorrelationError("zero-variance window: correlation undefined at every lag")
    return int(base + best_lag * w), float(best_score)
