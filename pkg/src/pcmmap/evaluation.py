"""Benchmark problem sets, method comparison and summary statistics."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePartition, InvalidSpec, MethodSetMismatch, PcmmapError
from .mmap import (
    NEG_INF,
    MmapProblem,
    brute_force_mmap,
    hill_climb,
    max_approx,
    ml_approx,
    random_assignment,
    seq_approx,
)
from .partition import VariablePartition
from .sampler import sample_assignments

MPE = "mpe"
MMAP = "mmap"
TIE_DECIMALS = 9


@dataclass
class ProblemSet:
    problems: list
    partition: VariablePartition
    meta: dict

    def __len__(self):
        return len(self.problems)

    def evidence_rows(self):
        return np.array([[p.evidence[v] for v in self.partition.evidence] for p in self.problems],
                        dtype=np.int8).reshape(len(self.problems), self.partition.N)


def make_partition(c, qr, mode, rng):
    if not 0.0 < qr < 1.0:
        raise InvalidSpec(f"query ratio must be in (0, 1), got {qr}")
    if mode not in (MPE, MMAP):
        raise InvalidSpec(f"mode must be 'mpe' or 'mmap', got {mode!r}")
    n = c.n_vars
    m = int(math.floor(qr * n + 0.5))
    if m < 1:
        raise DegeneratePartition(f"qr={qr} leaves no query variable among {n}")
    perm = rng.permutation(n)
    query = tuple(sorted(int(v) for v in perm[:m]))
    rest = [int(v) for v in perm[m:]]
    if mode == MPE:
        evidence, hidden = tuple(sorted(rest)), ()
    else:
        rest = [rest[i] for i in rng.permutation(len(rest))]
        k = len(rest) // 2
        evidence, hidden = tuple(sorted(rest[:k])), tuple(sorted(rest[k:]))
        if not evidence:
            raise DegeneratePartition(f"MMAP split of {n} variables at qr={qr} has no evidence")
    return VariablePartition(evidence, query, hidden, n)


def generate_problems(c, qr, mode, n, seed, partition=None):
    """``n`` problems sharing one seeded partition; evidence from circuit samples.

    The query is ``round(qr * n_vars)`` variables; in MPE mode everything
    else is evidence, in MMAP mode a random half (rounded down) of the rest
    is evidence and the remainder hidden.  Passing ``partition`` skips the
    random split (``qr`` and ``mode`` are then only recorded).
    """
    if n < 1:
        raise InvalidSpec("need at least one problem")
    part_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
    part = partition or make_partition(c, qr, mode, np.random.default_rng(part_ss))
    sample_seed = int(sample_ss.generate_state(1)[0])
    x = sample_assignments(c, n, sample_seed)
    problems = [MmapProblem(c, part, {v: int(row[v]) for v in part.evidence}) for row in x]
    meta = {"qr": qr, "mode": mode, "seed": seed, "n": n, "circuit": c.digest()}
    return ProblemSet(problems, part, meta)


def make_methods(names, *, model=None, iters=100, seed=0):
    """Solver handles ``{name: problem -> MmapSolution}``.

    Names: bruteforce, max, ml, seq, ssmp, hillclimb (random start) and
    ``<base>+hc`` for hill climbing started from a base method's answer.
    """
    from .neural import predict_mmap

    base = {"bruteforce": brute_force_mmap, "max": max_approx, "ml": ml_approx,
            "seq": seq_approx}
    if model is not None:
        base["ssmp"] = lambda p: predict_mmap(model, p)

    def random_start(p):
        rng = np.random.default_rng(seed)
        return hill_climb(p, random_assignment(p.query, rng), iters, seed)

    def seeded(name):
        inner = base[name]
        return lambda p: hill_climb(p, inner(p).q, iters, seed, method=f"{name}+hc")

    out = {}
    for name in names:
        if name in base:
            out[name] = base[name]
        elif name == "hillclimb":
            out[name] = random_start
        elif name.endswith("+hc") and name[:-3] in base:
            out[name] = seeded(name[:-3])
        elif name == "ssmp" or name == "ssmp+hc":
            raise InvalidSpec("method 'ssmp' needs a trained model")
        else:
            raise InvalidSpec(f"unknown method {name!r}")
    return out


@dataclass
class EvalReport:
    methods: list
    scores: dict
    times: dict
    errors: dict
    meta: dict = field(default_factory=dict)

    def n_problems(self):
        return len(next(iter(self.scores.values()))) if self.scores else 0

    def finite(self, name):
        return [s for s in self.scores[name] if math.isfinite(s)]

    def mean(self, name):
        f = self.finite(name)
        return float(np.mean(f)) if f else NEG_INF

    def std(self, name):
        f = self.finite(name)
        return float(np.std(f)) if f else float("nan")

    def excluded(self, name):
        return len(self.scores[name]) - len(self.finite(name))

    def mean_time(self, name):
        return float(np.mean(self.times[name])) if self.times[name] else float("nan")

    def summary_rows(self):
        return [{"method": m, "mean_ll": self.mean(m), "std_ll": self.std(m),
                 "excluded": self.excluded(m), "mean_time": self.mean_time(m),
                 "errors": int(sum(self.errors[m]))} for m in self.methods]

    def to_document(self):
        enc = lambda xs: [x if math.isfinite(x) else "-inf" for x in xs]
        return {"meta": self.meta, "methods": list(self.methods),
                "summary": [{k: (v if not isinstance(v, float) or math.isfinite(v) else str(v))
                             for k, v in row.items()} for row in self.summary_rows()],
                "scores": {m: enc(self.scores[m]) for m in self.methods},
                "times": {m: self.times[m] for m in self.methods},
                "errors": {m: self.errors[m] for m in self.methods}}

    @classmethod
    def from_document(cls, doc):
        dec = lambda xs: [float(x) if x != "-inf" else NEG_INF for x in xs]
        return cls(list(doc["methods"]), {m: dec(v) for m, v in doc["scores"].items()},
                   {m: list(v) for m, v in doc["times"].items()},
                   {m: list(v) for m, v in doc["errors"].items()}, dict(doc.get("meta", {})))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.meta, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["problem"] + [f"{m}_ll" for m in self.methods] + [f"{m}_time" for m in self.methods])
        for i in range(self.n_problems()):
            w.writerow([i] + [repr(self.scores[m][i]) for m in self.methods]
                       + [repr(self.times[m][i]) for m in self.methods])
        return buf.getvalue()


def _run_one(methods, problem, repeats):
    out = {}
    for name, solve in methods.items():
        elapsed = []
        sol, err = None, False
        for _ in range(repeats):
            t0 = time.perf_counter()
            try:
                sol = solve(problem)
            except (PcmmapError, ValueError, FloatingPointError):
                err = True
                break
            elapsed.append(time.perf_counter() - t0)
        s = NEG_INF if err or sol is None else sol.log_score
        out[name] = (s, statistics.median(elapsed) if elapsed else 0.0, err)
    return out


def compare(methods, ps, *, repeats=5, threads=1):
    """Run every method on every problem.

    Times are the median of ``repeats`` monotonic-clock measurements per
    call.  A solver error records ``-inf`` with its error flag set; the
    sweep continues.
    """
    if not methods:
        raise InvalidSpec("need at least one method")
    repeats = max(int(repeats), 1)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda p: _run_one(methods, p, repeats), ps.problems))
    else:
        results = [_run_one(methods, p, repeats) for p in ps.problems]
    names = list(methods)
    report = EvalReport(names, {m: [] for m in names}, {m: [] for m in names},
                        {m: [] for m in names},
                        {**ps.meta, "repeats": repeats, "tie_decimals": TIE_DECIMALS})
    for r in results:
        for m in names:
            s, t, e = r[m]
            report.scores[m].append(s)
            report.times[m].append(t)
            report.errors[m].append(e)
    return report


@dataclass
class ContingencyTable:
    methods: list
    wins: np.ndarray
    ties: np.ndarray
    total: int

    def to_text(self):
        width = max(8, *(len(m) for m in self.methods)) + 2
        lines = ["".rjust(width) + "".join(m.rjust(width) for m in self.methods)]
        for i, m in enumerate(self.methods):
            cells = ["-" if i == j else str(int(self.wins[i, j])) for j in range(len(self.methods))]
            lines.append(m.rjust(width) + "".join(c.rjust(width) for c in cells))
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + self.methods)
        for i, m in enumerate(self.methods):
            w.writerow([m] + [int(x) for x in self.wins[i]])
        return buf.getvalue()


def contingency(reports):
    """Pairwise counts of datasets where row method's mean LL beats column's.

    Means are rounded to ``TIE_DECIMALS`` places; equal rounded means are
    ties and count for neither side.
    """
    reports = list(reports)
    if not reports:
        raise InvalidSpec("no reports")
    methods = list(reports[0].methods)
    for r in reports[1:]:
        if list(r.methods) != methods:
            raise MethodSetMismatch(f"methods {r.methods} != {methods}")
    k = len(methods)
    wins = np.zeros((k, k), dtype=int)
    ties = np.zeros((k, k), dtype=int)
    for r in reports:
        means = [round(r.mean(m), TIE_DECIMALS) for m in methods]
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                if means[i] > means[j]:
                    wins[i, j] += 1
                elif means[i] == means[j]:
                    ties[i, j] += 1
    return ContingencyTable(methods, wins, ties, len(reports))


def percent_diff(ll_a, ll_b):
    """Signed percentage by which ``ll_a`` improves on ``ll_b``: (a - b) / |b| * 100."""
    if ll_b == 0:
        raise ZeroDivisionError("percent difference against a zero log-likelihood")
    return (ll_a - ll_b) * 100.0 / abs(ll_b)


def label_with_hill_climb(ps, iters, seed):
    """Supervised labels: hill climbing from a seeded random start per problem.

    Returns ``(evidence_rows, labels)`` arrays in partition order.
    """
    if iters < 0:
        raise InvalidSpec("iters must be >= 0")
    rng = np.random.default_rng(seed)
    labels = []
    for i, p in enumerate(ps.problems):
        init = random_assignment(p.query, rng)
        sol = hill_climb(p, init, iters, seed + i) if iters else None
        q = sol.q if sol else init
        labels.append([q[v] for v in p.query])
    return ps.evidence_rows(), np.array(labels, dtype=np.int8).reshape(len(ps), ps.partition.M)
