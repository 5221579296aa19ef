"""Measurement functions over frames, series and event logs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    AllZeroError,
    DegenerateInputError,
    MismatchedAgentsError,
    MissingBaseError,
    SeriesTooShortError,
    ZeroOutstandingError,
)


@dataclass
class MetricsFrame:
    tick: int
    gini: float = 0.0
    price_index: dict[str, float] = field(default_factory=dict)
    velocity: dict[str, float] = field(default_factory=dict)
    real_savings: float = 0.0
    perceived_ratio: float = 1.0
    holdings: np.ndarray = field(default_factory=lambda: np.zeros(0))
    consumption: float = 0.0
    outstanding: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.gini <= 1.0:
            raise ValueError(f"gini out of range: {self.gini}")


def gini(values: Sequence[float]) -> float:
    """Population Gini: mean absolute difference over twice the mean."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0 or not np.any(x > 0):
        raise AllZeroError("gini needs at least one positive value")
    if np.any(x < 0):
        raise DegenerateInputError("gini needs non-negative values")
    n = x.size
    ranks = np.arange(1, n + 1)
    g = float(np.sum((2 * ranks - n - 1) * x) / (n * np.sum(x)))
    return min(1.0, max(0.0, g))


def ols_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DegenerateInputError("slope needs two equal-length vectors of at least two points")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise DegenerateInputError("all x values are equal")
    return float(dx @ (y - y.mean()) / sxx)


def cantillon_gradient(access_ranks: Sequence[float], deltas: Sequence[float]) -> float:
    """OLS slope of purchasing-power change on access rank (0 = first access)."""
    return ols_slope(access_ranks, deltas)


def trend_slope(series: Sequence[float]) -> float:
    """OLS slope of a series against its index."""
    return ols_slope(np.arange(len(series)), series)


def price_index(prices: Sequence[float], base_prices: Sequence[float] | None,
                basket: Sequence[float] | None) -> float:
    """Laspeyres index: cost of the base basket now over its cost at the base tick."""
    if base_prices is None or basket is None:
        raise MissingBaseError("no base-tick basket recorded")
    p = np.asarray(prices, dtype=float)
    p0 = np.asarray(base_prices, dtype=float)
    q = np.asarray(basket, dtype=float)
    base_cost = float(p0 @ q)
    if base_cost <= 0:
        raise MissingBaseError("base basket has zero cost")
    return float(p @ q) / base_cost


def velocity(transaction_value: float, average_outstanding: float) -> float:
    if average_outstanding <= 0:
        raise ZeroOutstandingError("average outstanding must be positive")
    return transaction_value / average_outstanding


def velocity_from_log(events, class_ids: Iterable[int], start: int, end: int,
                      outstanding: Sequence[float], denominations: Mapping[int, int] | None = None) -> float:
    """Transfer value of ``class_ids`` in ticks ``[start, end)`` over mean outstanding.

    ``outstanding`` is the group's per-tick outstanding over the same window.
    """
    wanted = set(class_ids)
    cols = events.columns() if hasattr(events, "columns") else None
    denominations = denominations or {}
    total = 0.0
    if cols is not None:
        tick = np.asarray(cols["tick"])
        kind = np.asarray(cols["kind"])
        cls = np.asarray(cols["class_id"])
        amt = np.asarray(cols["amount"], dtype=float)
        mask = (kind == 1) & (tick >= start) & (tick < end) & np.isin(cls, list(wanted))
        if denominations:
            den = np.array([denominations.get(int(c), 1) for c in cls[mask]], dtype=float)
            total = float(amt[mask] @ den)
        else:
            total = float(amt[mask].sum())
    else:
        for ev in events:
            if ev.kind == "transfer" and start <= ev.tick < end and ev.class_id in wanted:
                total += ev.amount * denominations.get(ev.class_id, 1)
    avg = float(np.mean(outstanding)) if len(outstanding) else 0.0
    return velocity(total, avg)


def normalize(holdings: Sequence[float]) -> np.ndarray:
    h = np.asarray(holdings, dtype=float)
    s = h.sum()
    return h / s if s > 0 else np.zeros_like(h)


def distribution_shift(a, b) -> float:
    """L1 distance between two normalized holdings distributions over the same agents."""
    if isinstance(a, Mapping) or isinstance(b, Mapping):
        if not (isinstance(a, Mapping) and isinstance(b, Mapping)) or set(a) != set(b):
            raise MismatchedAgentsError("frames cover different agents")
        keys = sorted(a)
        a = [a[k] for k in keys]
        b = [b[k] for k in keys]
    a = a.holdings if isinstance(a, MetricsFrame) else a
    b = b.holdings if isinstance(b, MetricsFrame) else b
    if len(a) != len(b):
        raise MismatchedAgentsError(f"{len(a)} agents vs {len(b)}")
    return float(np.abs(normalize(a) - normalize(b)).sum())


class Episode(NamedTuple):
    start: int
    peak: int
    trough: int
    end: int


def _runs(mask: np.ndarray, min_run: int) -> list[tuple[int, int]]:
    runs = []
    i, n = 0, len(mask)
    while i < n:
        if mask[i]:
            j = i
            while j < n and mask[j]:
                j += 1
            if j - i >= min_run:
                runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def detect_boom_bust(series: Sequence[float], baseline: int, k: float = 1.0, *,
                     window: int = 200, min_run: int = 5) -> list[Episode]:
    """Find boom-then-bust episodes after the baseline window.

    A boom is a run of at least ``min_run`` ticks above baseline mean + k*sd; it
    counts as an episode when a run of at least ``min_run`` ticks below
    mean - k*sd starts within ``window`` ticks of the boom's end.
    """
    x = np.asarray(series, dtype=float)
    if x.size <= baseline or baseline < 2:
        raise SeriesTooShortError(f"series of {x.size} ticks with baseline {baseline}")
    ref = x[:baseline]
    mu, sd = float(ref.mean()), float(ref.std())
    tail = x[baseline:]
    highs = _runs(tail > mu + k * sd, min_run)
    lows = _runs(tail < mu - k * sd, min_run)
    episodes: list[Episode] = []
    after = 0
    for hs, he in highs:
        if hs < after:
            continue
        match = next(((ls, le) for ls, le in lows if he <= ls <= he + window), None)
        if match is None:
            continue
        ls, le = match
        peak = hs + int(np.argmax(tail[hs:he]))
        trough = ls + int(np.argmin(tail[ls:le]))
        episodes.append(Episode(hs + baseline, peak + baseline, trough + baseline, le - 1 + baseline))
        after = le
    return episodes


def sign_tally(diffs: Sequence[float]) -> dict[str, int]:
    """Counts of positive, negative and zero paired differences."""
    d = np.asarray(diffs, dtype=float)
    return {"positive": int((d > 0).sum()), "negative": int((d < 0).sum()), "zero": int((d == 0).sum())}
