"""Experiment drivers: stash sweeps, oracle soaks, obliviousness checks, overhead ladders.

Every driver is deterministic in (config, seed). Trial ``k`` (1-based)
uses ``derive_seed(config.seed, k)`` for both the ORAM and its workload,
so trials can run in any order or in parallel.
"""

import csv
import functools
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from . import _kernels, analysis, osort
from .crypto import derive_seed
from .cuckoo import StashEntry
from .errors import NotEnoughData, UsageError
from .functional import StashSimulator
from .hierarchy import (COUNTING, AccessOp, Geometry, HierarchicalOram, Mode, OramParams,
                        ceil_log2, flushes_due, prf_geometry)
from .server import RegionKind, dump_trace
from .tree import TreeOram, tree_shape

WORKLOADS = ("uniform", "sequential", "repeat")
VARIANTS = {"prf": HierarchicalOram, "tree": TreeOram}
CSV_COLUMNS = ("n", "r", "epsilon", "c", "stash_capacity", "trial",
               "max_stash_demand", "overflowed", "server_accesses", "wall_ms")


# -- configuration ---------------------------------------------------------------

def parse_requests(token, n):
    """Request count from ``"5000"``, ``"n"``, ``"2n"``, ``"0.25n"`` or ``"n/4"``."""
    token = str(token).strip()
    try:
        if token.endswith("n"):
            scale = token[:-1]
            value = n * (float(scale) if scale else 1.0)
        elif token.startswith("n/"):
            value = n / float(token[2:])
        else:
            value = float(token)
    except ValueError:
        raise UsageError(f"cannot read request count {token!r}") from None
    if value < 1 or value != int(value):
        raise UsageError(f"request count {token!r} gives {value} for n={n}")
    return int(value)


@dataclass
class ExperimentConfig:
    variant: str = "prf"
    mode: str = "functional"
    n: list = field(default_factory=lambda: [1024])
    requests: list = field(default_factory=lambda: ["n"])
    trials: int = 1
    epsilon: float = 0.2
    c: int = 2
    stash_factor: float = 1.0
    nu: float = 1.0
    workload: str = "uniform"
    seed: int = 0
    cipher: str = "aesgcm"
    out: str = None
    trace_out: str = None
    report_out: str = None
    jobs: int = 1
    wall_time: bool = False

    def validate(self):
        problems = []
        if self.variant not in VARIANTS:
            problems.append(f"variant: expected one of {sorted(VARIANTS)}, got {self.variant!r}")
        if self.mode not in ("functional", "oblivious"):
            problems.append(f"mode: expected functional or oblivious, got {self.mode!r}")
        if not self.n or any(int(n) < 2 for n in self.n):
            problems.append("n: every value must be at least 2")
        if self.trials < 1:
            problems.append("trials: must be at least 1")
        if self.epsilon <= 0:
            problems.append("epsilon: must be positive")
        if self.c < 1:
            problems.append("c: must be at least 1")
        if self.stash_factor < 1:
            problems.append("stash_factor: must be at least 1")
        if self.nu <= 0:
            problems.append("nu: must be positive")
        if self.jobs < 1:
            problems.append("jobs: must be at least 1")
        if self.workload not in WORKLOADS and not os.access(self.workload, os.R_OK):
            problems.append(f"workload: {self.workload!r} is neither a known workload nor a readable file")
        for n in self.n:
            for token in self.requests:
                if token == "cycle":
                    continue
                try:
                    parse_requests(token, int(n))
                except UsageError as exc:
                    problems.append(f"requests: {exc}")
        if problems:
            raise UsageError("; ".join(problems))
        return self

    def requests_for(self, n):
        return sorted({cycle_length(self.variant, self.params(n)) if t == "cycle"
                       else parse_requests(t, n) for t in self.requests})

    def params(self, n, seed=None, **overrides):
        kw = dict(n=int(n), epsilon=self.epsilon, c=self.c, stash_factor=self.stash_factor,
                  nu=self.nu, mode=Mode(self.mode), master_seed=self.seed if seed is None else seed,
                  cipher=self.cipher, record_trace=False)
        kw.update(overrides)
        return OramParams(**kw)


@dataclass
class TrialRecord:
    n: int
    r: int
    epsilon: float
    c: int
    stash_capacity: int
    trial: int
    max_stash_demand: int
    overflowed: bool
    server_accesses: int
    wall_ms: float = None

    def row(self):
        return [self.n, self.r, f"{self.epsilon:g}", self.c, self.stash_capacity, self.trial,
                self.max_stash_demand, int(self.overflowed), self.server_accesses,
                "" if self.wall_ms is None else f"{self.wall_ms:.3f}"]


def trial_seed(master, trial):
    return derive_seed(master, trial).value


# -- workloads ----------------------------------------------------------------------

def make_workload(kind, n, r, seed):
    """``r`` indices in [0, n).

    File workloads hold whitespace-separated indices and repeat
    cyclically when shorter than ``r``.
    """
    if kind == "uniform":
        return np.random.default_rng(seed).integers(0, n, size=r)
    if kind == "sequential":
        return np.arange(r, dtype=np.int64) % n
    if kind == "repeat":
        return np.zeros(r, dtype=np.int64)
    data = np.array(Path(kind).read_text().split(), dtype=np.int64)
    if data.size == 0:
        raise UsageError(f"{kind} holds no indices")
    if data.min() < 0 or data.max() >= n:
        raise UsageError(f"{kind} has indices outside [0, {n})")
    return np.resize(data, r)


def make_ops(n, r, seed, write_fraction=0.5):
    """Mixed READ/WRITE ops as (indices, is_write, values) arrays."""
    rng = np.random.default_rng([seed, 1])
    xs = rng.integers(0, n, size=r)
    writes = rng.random(r) < write_fraction
    values = rng.integers(-(2 ** 31), 2 ** 31, size=r)
    return xs, writes, values


# -- access accounting ------------------------------------------------------------------

def _geometry(variant, params):
    if variant == "prf":
        return prf_geometry(params)
    leaves, h = tree_shape(params.n)
    return Geometry.build(h, 1, 2 * leaves - 2, params)


def cycle_length(variant, params):
    """Episodes between consecutive moves into the deepest table."""
    g = _geometry(variant, params)
    return 2 ** (g.levels - 1) * g.q_period


def max_buffer(variant, params):
    """Cells in the largest rebuild buffer."""
    g = _geometry(variant, params)
    L = g.levels
    src = g.q_size if L == 1 else 2 * g.cells[L - 1]
    return g.stash_capacity + src + 2 * g.cells[L]


def _sort_cost(size, ws_cap):
    if size <= ws_cap:
        return 2 * size, 0
    return 4 * osort.network_size(size), size


def predicted_accesses(variant, params, r):
    """Server cell accesses an OBLIVIOUS run makes over ``r`` episodes after init.

    The access pattern's shape depends only on the parameters, so this
    is exact; the test suite checks it against counted runs.
    """
    return _predicted(variant, replace(params, master_seed=0, mode=Mode.OBLIVIOUS), r)


@functools.lru_cache(maxsize=256)
def _predicted(variant, params, r):
    g = _geometry(variant, params)
    cap = g.stash_capacity
    ws = params.workspace().capacity
    probes = 2 * g.levels
    if variant == "prf":
        access = 2 + 2 * g.q_size + 2 * cap + probes
    else:
        access = 4 + g.q_size + cap + g.q_size * (g.q_size + cap + probes)
    flush_cost = {}

    def flush(src, dst):
        if (src, dst) not in flush_cost:
            src_cells = g.q_size if src == 0 else 2 * g.cells[src]
            size = cap + src_cells + 2 * g.cells[dst]
            sort, extra = _sort_cost(size, ws)
            flush_cost[(src, dst)] = (cap + cap + 2 * (size - cap) + sort + 2 * size
                                      + sort + extra + size + 2 * g.cells[dst] + cap + src_cells)
        return flush_cost[(src, dst)]

    total = 0
    for t in range(1, r + 1):
        total += access
        if t % g.q_period == 0:
            total += sum(flush(s, d) for s, d in flushes_due(t, g))
    return total


# -- stash sweep -------------------------------------------------------------------------

def _sweep_trial(args):
    config, n, rs, trial = args
    seed = trial_seed(config.seed, trial)
    params = config.params(n, seed)
    xs = make_workload(config.workload, n, rs[-1], seed)
    start = time.perf_counter()
    out = []
    prev = 0
    if config.variant == "prf" and params.mode is Mode.FUNCTIONAL:
        sim = StashSimulator(params)
        stats = sim.stash_stats
        for r in rs:
            sim.run(xs[prev:r])
            prev = r
            out.append((r, stats.run_max, time.perf_counter() - start))
    else:
        oram = VARIANTS[config.variant](params)
        stats = oram.stash_stats
        for r in rs:
            for x in xs[prev:r].tolist():
                oram.access(AccessOp.READ, x)
            prev = r
            out.append((r, stats.run_max, time.perf_counter() - start))
    cap = params.stash_capacity
    return [TrialRecord(n, r, config.epsilon, config.c, cap, trial, demand, demand > cap,
                        predicted_accesses(config.variant, params, r),
                        elapsed * 1000 if config.wall_time else None)
            for r, demand, elapsed in out]


def _pool_map(fn, jobs, tasks):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def run_stash_sweep(config):
    """One TrialRecord per (n, r, trial), ordered by n, then r, then trial.

    Every r for a given (n, trial) is a prefix of the longest run with the
    same seed, which is what separate runs would produce.
    """
    config.validate()
    tasks = [(config, int(n), config.requests_for(int(n)), trial)
             for n in config.n for trial in range(1, config.trials + 1)]
    per_trial = _pool_map(_sweep_trial, config.jobs, tasks)
    records = []
    for n in config.n:
        rows = [rec for recs in per_trial for rec in recs if rec.n == int(n)]
        rows.sort(key=lambda rec: (rec.r, rec.trial))
        records.extend(rows)
    if config.out:
        write_sweep_outputs(config, records)
    return records


def sweep_csv(records):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.row())
    return buf.getvalue()


def overflow_curve(records):
    """{(n, r): [(capacity, overflow fraction), ...]} for capacities 0..max demand."""
    groups = {}
    for rec in records:
        groups.setdefault((rec.n, rec.r), []).append(rec.max_stash_demand)
    out = {}
    for key, demands in groups.items():
        demands = np.array(demands)
        out[key] = [(cap, float((demands > cap).mean())) for cap in range(int(demands.max()) + 1)]
    return out


def sweep_dat(records):
    lines = ["# n r stash_capacity overflow_fraction"]
    for (n, r), curve in sorted(overflow_curve(records).items()):
        lines.extend(f"{n} {r} {cap} {frac:.6f}" for cap, frac in curve)
        lines.append("")
    return "\n".join(lines) + "\n"


def sweep_meta(config, records):
    caps = {}
    for n in config.n:
        n = int(n)
        caps[str(n)] = {
            "log2": math.ceil(config.stash_factor * ceil_log2(n) - 1e-9),
            "ln": math.ceil(config.stash_factor * math.log(n) - 1e-9),
        }
    cfg = asdict(config)
    for key in ("out", "trace_out", "report_out", "jobs"):
        cfg.pop(key)
    return json.dumps({"config": cfg, "stash_capacity": caps, "rows": len(records)},
                      indent=2, sort_keys=True) + "\n"


def write_sweep_outputs(config, records):
    out = Path(config.out)
    out.write_text(sweep_csv(records))
    out.with_suffix(".dat").write_text(sweep_dat(records))
    out.with_suffix(".meta.json").write_text(sweep_meta(config, records))


# -- single-table builds -------------------------------------------------------------------

def build_spills(cells, items, seeds, move_limit=None):
    """Spill count of one PRF-addressed build per seed.

    Indices 0..items-1 go into two subtables of ``cells`` each, with
    subtable seeds ``derive_seed(s, 1)`` and ``derive_seed(s, 2)``. The
    move limit defaults to ``2 * ceil_log2(items)``.
    """
    if move_limit is None:
        move_limit = 2 * ceil_log2(items)
    xs = np.arange(items, dtype=np.int64)
    out = []
    for s in seeds:
        loc0 = _kernels.batch_locations(xs, derive_seed(s, 1).value, cells)
        loc1 = _kernels.batch_locations(xs, derive_seed(s, 2).value, cells)
        out.append(len(_kernels.place(loc0, loc1, cells, move_limit)[2]))
    return np.array(out)


# -- oracle soak ------------------------------------------------------------------------

def inject_fault(oram, x):
    """Bump the value in the freshest stored copy of index ``x`` without tracing."""
    target = x + oram.leaves - 1 if isinstance(oram, TreeOram) else x
    best = None
    for region in oram.server.regions():
        if region.kind in (RegionKind.META, RegionKind.ROOT):
            continue
        for off, entry in enumerate(oram.vault.peek_all(region)):
            item = entry.item
            if not item.live or item.x != target:
                continue
            if region.kind is RegionKind.STASH_S and not entry.dirty:
                continue
            if best is None or item.epoch > best[2].item.epoch:
                best = (region, off, entry)
    region, off, entry = best
    item = entry.item.copy()
    item.value += 1
    oram.vault.poke(region, off, StashEntry(item, entry.dirty, entry.tag))


@dataclass
class SoakReport:
    status: str
    variant: str
    n: int
    ops: int
    trials: int
    divergence: dict = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def soak_trial(variant, params, ops, fault_at=None, snapshot_dir=None, trial=1):
    """Run mixed ops against the ORAM and a plain list; None or a divergence record."""
    oram = VARIANTS[variant](params)
    xs, writes, values = make_ops(params.n, ops, params.master_seed)
    plain = [0] * params.n
    for i, (x, w, v) in enumerate(zip(xs.tolist(), writes.tolist(), values.tolist())):
        if fault_at is not None and i == fault_at:
            inject_fault(oram, x)
        got = oram.write(x, v) if w else oram.read(x)
        if got != plain[x]:
            snapshot = None
            if snapshot_dir is not None and hasattr(oram.server, "save"):
                snapshot = str(Path(snapshot_dir) / f"divergence-trial{trial}.ckor")
                oram.server.save(snapshot)
            return {"trial": trial, "op_index": i, "op": "write" if w else "read", "x": x,
                    "expected": plain[x], "got": got, "snapshot": snapshot}
        if w:
            plain[x] = v
    return None


def run_oracle_soak(config, fault_at=None):
    config.validate()
    n = int(config.n[0])
    ops = config.requests_for(n)[-1]
    snapshot_dir = Path(config.out).parent if config.out else None
    for trial in range(1, config.trials + 1):
        params = config.params(n, trial_seed(config.seed, trial))
        div = soak_trial(config.variant, params, ops, fault_at, snapshot_dir, trial)
        if div is not None:
            report = SoakReport("FAIL", config.variant, n, ops, config.trials, div)
            break
    else:
        report = SoakReport("PASS", config.variant, n, ops, config.trials)
    if config.report_out:
        Path(config.report_out).write_text(report.to_json())
    return report


# -- obliviousness -------------------------------------------------------------------------

SUITE_WORKLOADS = ("repeat", "sequential", "uniform")


def trace_run(variant, params, xs, leaky=False):
    """Run reads over ``xs`` in OBLIVIOUS mode; returns the post-init trace events."""
    oram = VARIANTS[variant](params)
    oram.leaky_probes = leaky
    oram.server.drain_trace()
    for x in xs.tolist():
        oram.access(AccessOp.READ, x)
    return oram.server.drain_trace(), oram.geometry


def run_obliviousness_suite(config, leaky=False, alpha=0.01):
    """Paired workload runs through the trace checks.

    ``config.trials`` paired runs, each over every workload in
    SUITE_WORKLOADS with a shared per-trial seed. Shape digests must all
    agree. Table-probe offsets are pooled across trials per (level,
    generation, side) for one Bonferroni family of two-sample tests; the
    per-trial families are also counted against a binomial bound.
    Returns ``(report dict, ok)``. ``leaky`` runs the negative control.
    """
    config.validate()
    if config.mode != "oblivious":
        raise UsageError("mode: the obliviousness suite needs --mode oblivious")
    n = int(config.n[0])
    episodes = config.requests_for(n)[0]
    digests = set()
    pooled = {}
    trial_rejections = 0
    trial_tested = 0
    cells = None
    for trial in range(1, config.trials + 1):
        seed = trial_seed(config.seed, trial)
        params = config.params(n, seed, record_trace=True)
        profiles = {}
        for kind in SUITE_WORKLOADS:
            xs = make_workload(kind, n, episodes, seed)
            events, geometry = trace_run(config.variant, params, xs, leaky)
            cells = geometry.cells
            if trial == 1 and config.trace_out:
                path = Path(config.trace_out)
                with open(path.with_name(f"{path.stem}.{kind}{path.suffix}"), "w") as fh:
                    dump_trace(events, fh)
            profiles[kind] = analysis.TraceProfile.from_events(events)
            digests.add(profiles[kind].shape_digest)
        pvals = []
        for a, b in _pairs(SUITE_WORKLOADS):
            pvals.extend(analysis.compare_profiles(profiles[a], profiles[b], cells).values())
        try:
            verdict = analysis.family_verdict(pvals, alpha)
            trial_tested += 1
            trial_rejections += verdict.reject
        except NotEnoughData:
            pass
        for kind, prof in profiles.items():
            if kind not in pooled:
                pooled[kind] = analysis.TraceProfile(prof.shape_digest, 0, 0, {})
            pooled[kind].merge_offsets(prof)

    checks = [{"name": "shape_digest", "verdict": "pass" if len(digests) == 1 else "fail",
               "statistic": len(digests), "p": None}]
    pvals = []
    for a, b in _pairs(SUITE_WORKLOADS):
        pvals.extend(analysis.compare_profiles(pooled[a], pooled[b], cells).values())
    checks.append(_family_check("two_sample_pooled", pvals, alpha))
    bound = int(sstats.binom.ppf(1 - alpha, max(trial_tested, 1), alpha))
    checks.append({"name": "two_sample_per_trial",
                   "verdict": ("insufficient_data" if trial_tested == 0
                               else "pass" if trial_rejections <= bound else "reject"),
                   "statistic": trial_rejections, "p": None, "bound": bound,
                   "tested": trial_tested})
    for kind in SUITE_WORKLOADS:
        pvals = analysis.uniformity_profile(pooled[kind], cells).values()
        checks.append(_family_check(f"uniformity_{kind}", pvals, alpha))
    ok = all(c["verdict"] == "pass" for c in checks)
    extra = {"variant": config.variant, "n": n, "episodes": episodes,
             "trials": config.trials, "leaky": leaky, "shape_digest": sorted(digests)}
    doc = json.loads(analysis.report(checks, extra=extra))
    if config.report_out:
        Path(config.report_out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc, ok


def _family_check(name, pvals, alpha):
    try:
        return analysis.family_verdict(pvals, alpha).as_check(name)
    except NotEnoughData:
        # too few probes per table to test; the run cannot vouch for anything
        return {"name": name, "verdict": "insufficient_data", "statistic": 0, "p": None}


def _pairs(names):
    return [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]


# -- overhead scaling ---------------------------------------------------------------------

MODEL_FOR = {"prf": "log", "tree": "log2"}


def measure_accesses(variant, params, r, seed):
    """Counted server accesses over ``r`` uniform reads, init excluded."""
    oram = VARIANTS[variant](params)
    before = oram.server.access_count
    for x in make_workload("uniform", params.n, r, seed).tolist():
        oram.access(AccessOp.READ, x)
    return oram.server.access_count - before


def run_overhead_scaling(config, threshold=0.98):
    """Amortized accesses per op over a doubling ladder, fitted to the variant's model.

    Runs use the counting store (no encryption) with a private workspace
    as large as the biggest rebuild buffer. ``requests`` defaults to one
    cycle of the deepest move. Returns ``(rows, fits, ok)``.
    """
    if config.requests == ["n"]:
        config = replace(config, requests=["cycle"])
    config.validate()
    rows = []
    for n in config.n:
        n = int(n)
        base = config.params(n, mode=Mode.OBLIVIOUS, cipher=COUNTING)
        params = config.params(n, mode=Mode.OBLIVIOUS, cipher=COUNTING,
                               workspace_cells=max_buffer(config.variant, base))
        r = config.requests_for(n)[-1]
        count = measure_accesses(config.variant, params, r, trial_seed(config.seed, 1))
        rows.append({"n": n, "r": r, "server_accesses": count, "per_op": count / r})
    points = [(row["n"], row["per_op"]) for row in rows]
    fits = [analysis.overhead_fit(points, model) for model in ("log", "log2", "const")]
    target = next(f for f in fits if f.model == MODEL_FOR[config.variant])
    ok = target.r2 >= threshold
    checks = [{"name": f"fit_{target.model}", "verdict": "pass" if ok else "fail",
               "statistic": target.r2, "p": None}]
    if config.out:
        out = Path(config.out)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "r", "server_accesses", "per_op"])
        for row in rows:
            writer.writerow([row["n"], row["r"], row["server_accesses"], f"{row['per_op']:.6f}"])
        out.write_text(buf.getvalue())
        out.with_suffix(".dat").write_text(
            "# log2_n per_op\n" + "".join(f"{math.log2(row['n']):g} {row['per_op']:.6f}\n"
                                           for row in rows))
    if config.report_out:
        Path(config.report_out).write_text(
            analysis.report(checks, fits, {"variant": config.variant, "rows": rows}) + "\n")
    return rows, fits, ok
