"""Adversary-view checks over server traces and run statistics."""

import hashlib
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import FitError, NotEnoughData, UsageError

_TABLE_LABEL = re.compile(r"T(\d+)\.([01])$")


def _normalize(event):
    """``(label, gen, offset, op)`` from a TraceEvent or a loaded JSONL tuple."""
    if hasattr(event, "region"):
        return event.region.label, event.region.gen, event.offset, event.op.value
    _, label, gen, off, op = event
    return label, gen, off, op


@dataclass
class TraceProfile:
    """What the analysis needs from one trace.

    ``shape_digest`` hashes the (region, generation, op) sequence and so
    ignores offsets. ``offsets`` collects the table cells read during
    each episode's access phase, keyed by (level, generation, side);
    Q and S scans and rebuild traffic are excluded.
    """

    shape_digest: str
    episodes: int
    events: int
    offsets: dict = field(default_factory=dict)

    @classmethod
    def from_events(cls, events):
        h = hashlib.sha256()
        offsets = defaultdict(list)
        episodes = count = 0
        probing = False
        for event in events:
            label, gen, off, op = _normalize(event)
            h.update(f"{label},{gen},{op}\n".encode())
            count += 1
            if label == "META" and op == "R":
                episodes += 1
                probing = True
            elif op == "W" or label == "BUF":
                probing = False
            elif probing:
                m = _TABLE_LABEL.match(label)
                if m:
                    offsets[(int(m.group(1)), gen, int(m.group(2)))].append(off)
        return cls(h.hexdigest(), episodes, count, dict(offsets))

    def merge_offsets(self, other):
        """Pool another profile's offsets into this one (same keys add up)."""
        for key, offs in other.offsets.items():
            self.offsets.setdefault(key, []).extend(offs)


def shape_check(a, b):
    """True iff two traces have byte-identical shape digests.

    Accepts profiles or raw event lists. Traces covering different
    numbers of episodes cannot be compared; an empty trace means the run
    was not recorded in OBLIVIOUS mode.
    """
    a = a if isinstance(a, TraceProfile) else TraceProfile.from_events(a)
    b = b if isinstance(b, TraceProfile) else TraceProfile.from_events(b)
    if a.events == 0 or b.events == 0:
        raise UsageError("empty trace: shape checks need OBLIVIOUS-mode runs")
    if a.episodes != b.episodes:
        raise UsageError(f"traces cover {a.episodes} and {b.episodes} episodes")
    return a.shape_digest == b.shape_digest


def uniformity_test(offsets, cells, buckets=16):
    """Chi-square goodness-of-fit p-value of ``offsets`` against uniform on [0, cells).

    Bucket widths may differ by one cell; expected counts follow the
    widths. Raises :class:`NotEnoughData` below five expected hits per bucket.
    """
    buckets = min(buckets, cells)
    if buckets < 2:
        raise NotEnoughData("a one-cell table cannot be tested")
    n = len(offsets)
    if n < 5 * buckets:
        raise NotEnoughData(f"{n} samples for {buckets} buckets")
    edges = np.arange(buckets + 1) * cells // buckets
    counts = np.bincount(np.searchsorted(edges, offsets, side="right") - 1, minlength=buckets)
    expected = n * np.diff(edges) / cells
    return float(stats.chisquare(counts[:buckets], expected).pvalue)


def two_sample_test(a, b, cells, buckets=16):
    """Chi-square homogeneity p-value for two offset samples from one table.

    Uses at most ``min(len(a), len(b)) // 5`` equal-width buckets. Empty
    buckets are dropped; when fewer than two remain the samples cannot
    differ and p = 1.
    """
    k = min(buckets, cells, min(len(a), len(b)) // 5)
    if k < 2:
        raise NotEnoughData(f"samples of {len(a)} and {len(b)} are too small")
    edges = np.arange(k + 1) * cells // k
    rows = [np.bincount(np.searchsorted(edges, s, side="right") - 1, minlength=k)[:k]
            for s in (a, b)]
    table = np.array(rows)
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return float(stats.chi2_contingency(table, correction=False).pvalue)


@dataclass(frozen=True)
class FamilyVerdict:
    reject: bool
    min_p: float
    tests: int
    threshold: float

    def as_check(self, name):
        return {"name": name, "verdict": "reject" if self.reject else "pass",
                "statistic": self.tests, "p": self.min_p}


def family_verdict(pvalues, alpha=0.01):
    """Bonferroni: reject the family if any p falls below alpha / #tests."""
    pvalues = [p for p in pvalues if p is not None]
    if not pvalues:
        raise NotEnoughData("no testable cells")
    threshold = alpha / len(pvalues)
    low = min(pvalues)
    return FamilyVerdict(low < threshold, low, len(pvalues), threshold)


def compare_profiles(a, b, cells, buckets=16):
    """Per-table two-sample p-values; tables without enough data map to None."""
    out = {}
    for key in sorted(set(a.offsets) & set(b.offsets)):
        try:
            out[key] = two_sample_test(a.offsets[key], b.offsets[key], cells[key[0]], buckets)
        except NotEnoughData:
            out[key] = None
    return out


def uniformity_profile(profile, cells, buckets=16):
    out = {}
    for key in sorted(profile.offsets):
        try:
            out[key] = uniformity_test(profile.offsets[key], cells[key[0]], buckets)
        except NotEnoughData:
            out[key] = None
    return out


def stash_tail(histogram, min_tail=20):
    """Ratios P(demand >= s+1) / P(demand >= s) for s >= 1 with enough tail samples.

    ``histogram`` maps demand value to count. Returns ``{s: ratio}``.
    """
    if not histogram:
        return {}
    top = max(histogram)
    tail = [0] * (top + 2)
    for s in range(top, -1, -1):
        tail[s] = tail[s + 1] + histogram.get(s, 0)
    return {s: tail[s + 1] / tail[s] for s in range(1, top + 1) if tail[s] >= min_tail}


MODELS = {
    "log": lambda n: math.log2(n),
    "log2": lambda n: math.log2(n) ** 2,
    "const": lambda n: 1.0,
}


@dataclass(frozen=True)
class Fit:
    model: str
    a: float
    b: float
    r2: float

    def as_dict(self):
        return {"model": self.model, "a": self.a, "b": self.b, "r2": self.r2}


def overhead_fit(points, model="log"):
    """Least-squares ``y = a * f(n) + b`` with its coefficient of determination.

    ``points`` is an iterable of (n, y). The constant model fits b alone
    (a = 0), so its R^2 is 0 by construction.
    """
    points = sorted(points)
    if len({n for n, _ in points}) < 4:
        raise FitError("need at least four distinct n")
    y = np.array([v for _, v in points], dtype=float)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        raise FitError("all measurements are equal")
    if model == "const":
        return Fit(model, 0.0, float(y.mean()), 0.0)
    f = MODELS[model]
    x = np.array([f(n) for n, _ in points])
    if np.ptp(x) == 0:
        raise FitError("all n map to the same regressor")
    a, b = np.polyfit(x, y, 1)
    ss_res = float(((y - (a * x + b)) ** 2).sum())
    return Fit(model, float(a), float(b), 1.0 - ss_res / ss_tot)


def report(checks, fits=(), extra=None):
    """The JSON verdict document."""
    doc = {"checks": list(checks), "fits": [f.as_dict() if isinstance(f, Fit) else f for f in fits]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True)
