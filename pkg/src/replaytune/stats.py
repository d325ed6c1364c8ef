"""Outlier filtering, Welch's t-test, confidence intervals and best-set selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats as sps

MAD_SCALE = 1.4826


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSet:
    values: tuple[float, ...]
    # indices of the values within the original replay series
    provenance: tuple[int, ...] = ()
    variant: int | None = None

    def __post_init__(self):
        if not self.provenance:
            object.__setattr__(self, "provenance", tuple(range(len(self.values))))
        if len(self.provenance) != len(self.values):
            raise StatsError("provenance does not match values")

    @classmethod
    def of(cls, values, variant: int | None = None) -> "SampleSet":
        return cls(tuple(float(v) for v in values), variant=variant)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def var(self) -> float:
        return float(np.var(self.values, ddof=1)) if len(self.values) > 1 else 0.0


def _as_set(x) -> SampleSet:
    return x if isinstance(x, SampleSet) else SampleSet.of(x)


def mad_mask(values: Sequence[float], threshold: float = 3.0) -> np.ndarray:
    """Boolean mask of values kept by the MAD rule."""
    x = np.asarray(values, dtype=float)
    if x.size < 3:
        raise StatsError("MAD filtering needs at least 3 samples")
    med = np.median(x)
    dev = np.abs(x - med)
    mad = np.median(dev)
    if mad == 0:
        return x == med
    return dev / (MAD_SCALE * mad) <= threshold


def mad_filter(samples, threshold: float = 3.0) -> SampleSet:
    """Drop values more than ``threshold`` scaled MADs from the median."""
    s = _as_set(samples)
    keep = mad_mask(s.values, threshold)
    return SampleSet(tuple(v for v, k in zip(s.values, keep) if k),
                     tuple(p for p, k in zip(s.provenance, keep) if k), s.variant)


@dataclass(frozen=True)
class TTestReport:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    significant: bool


def t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    if math.isinf(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def t_test(a, b, alpha: float = 0.05) -> TTestReport:
    """Welch's unequal-variance two-sided t-test."""
    a, b = _as_set(a), _as_set(b)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise StatsError("t-test needs at least 2 values per sample")
    ma, mb = a.mean, b.mean
    va, vb = a.var / na, b.var / nb
    se2 = va + vb
    if se2 == 0:
        if ma == mb:
            return TTestReport(0.0, float(na + nb - 2), 1.0, False)
        t = math.copysign(math.inf, ma - mb)
        return TTestReport(t, float(na + nb - 2), 0.0, True)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (va * va / (na - 1) + vb * vb / (nb - 1))
    p = 1.0 if t == 0 else min(1.0, max(0.0, t_sf2(t, df)))
    return TTestReport(t, df, p, p < alpha)


def ci95(samples) -> tuple[float, float]:
    """Student-t 95% confidence interval of the mean."""
    s = _as_set(samples)
    n = len(s)
    if n < 2:
        raise StatsError("a confidence interval needs at least 2 values")
    half = float(sps.t.ppf(0.975, n - 1)) * math.sqrt(s.var / n)
    return s.mean - half, s.mean + half


@dataclass(frozen=True)
class Selection:
    best: int
    ranked: tuple[int, ...]
    # incumbents in the order they were adopted
    history: tuple[int, ...]


def select_best(evaluations, alpha: float = 0.05) -> Selection:
    """Incumbent sweep over ``(variant, samples)`` pairs.

    Candidates are visited in variant order, so the outcome does not depend
    on arrival order.  A candidate displaces the incumbent only if its mean
    is lower and the difference is significant at ``alpha``.
    """
    evs = sorted(((v, _as_set(s)) for v, s in evaluations), key=lambda e: e[0])
    if not evs:
        raise StatsError("nothing to select from")
    if len({v for v, _ in evs}) != len(evs):
        raise StatsError("duplicate variant ids")
    inc_id, inc = evs[0]
    history = [inc_id]
    for vid, cand in evs[1:]:
        if cand.mean >= inc.mean:
            continue
        if len(cand) >= 2 and len(inc) >= 2:
            if not t_test(cand, inc, alpha).significant:
                continue
        inc_id, inc = vid, cand
        history.append(vid)
    ranked = tuple(v for v, _ in sorted(evs, key=lambda e: (e[1].mean, e[0])))
    return Selection(inc_id, ranked, tuple(history))
