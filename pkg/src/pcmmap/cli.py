"""``pcmmap`` command line: validate, marginal, sample, solve, train, cv-alpha, eval, report.

Exit status: 0 success, 1 usage error, 2 validation or numeric error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, neural
from .circuit import load_circuit, marginal, validate
from .errors import PcmmapError
from .mmap import MmapProblem, hill_climb, random_assignment, SOLVERS
from .partition import load_partition
from .sampler import generate_dataset, read_dataset, sample_assignments, write_atomic

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return f"{x:.6g}"


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _emit(args, text, payload):
    if args.json:
        print(json.dumps(_jsonable(payload)))
    else:
        print(text)


def _existing(path, what):
    if path is None:
        raise UsageError(f"missing {what}")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _pairs(text):
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        if v.strip() not in ("0", "1"):
            raise UsageError(f"value for {k} must be 0 or 1")
        out[k.strip()] = int(v)
    return out


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x)


def _circuit(args):
    return load_circuit(_existing(args.circuit or args.circuit_pos, "circuit file"))


def _partition(args, c, required=True):
    if args.partition is None and not required:
        return None
    return load_partition(c, _existing(args.partition, "partition file"))


def _train_config(args, **extra):
    kw = dict(seed=args.seed)
    for name, attr in (("alpha", "alpha"), ("epochs", "epochs"), ("lr", "learning_rate"),
                       ("batch_size", "batch_size"), ("dropout", "dropout_rate"),
                       ("lr_decay", "lr_decay"), ("decay_interval", "decay_interval")):
        v = getattr(args, name, None)
        if v is not None:
            kw[attr] = v
    if getattr(args, "hidden", None):
        kw["hidden"] = _ints(args.hidden)
    kw.update(extra)
    return neural.TrainConfig(**kw)


# ------------------------------------------------------------------ commands

def cmd_validate(args):
    path = _existing(args.circuit or args.circuit_pos, "circuit file")
    with open(path) as fh:
        report = validate(fh.read())
    _emit(args, report.summary(), {"ok": report.ok, "failures": report.failures()})
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_marginal(args):
    c = _circuit(args)
    named = {**_pairs(args.evidence), **_pairs(args.assign)}
    q = {c.var_index(k): v for k, v in named.items()}
    p = marginal(c, q)
    _emit(args, _fmt(p), {"assignment": named, "marginal": p})
    return EXIT_OK


def cmd_sample(args):
    c = _circuit(args)
    if args.out is None:
        raise UsageError("sample needs --out")
    part = _partition(args, c, required=False)
    if part is None and args.qr is not None:
        part = evaluation.make_partition(c, args.qr, args.mode, np.random.default_rng(args.seed))
        if args.write_partition:
            write_atomic(args.write_partition, json.dumps(part.to_document(c), indent=1) + "\n")
    if part is None:
        rows = sample_assignments(c, args.n, args.seed)
        header = ",".join(c.variables)
        body = "\n".join(",".join(str(int(b)) for b in r) for r in rows)
        write_atomic(args.out, header + "\n" + body + "\n")
    else:
        generate_dataset(c, part, args.n, args.seed).save(args.out)
    _emit(args, f"wrote {args.n} rows to {args.out}", {"rows": args.n, "out": args.out})
    return EXIT_OK


def _problem(args, c):
    if args.problem:
        with open(_existing(args.problem, "problem file")) as fh:
            doc = json.load(fh)
        return MmapProblem.from_document(doc, c)
    part = _partition(args, c)
    ev = {c.var_index(k): v for k, v in _pairs(args.evidence).items()}
    return MmapProblem(c, part, ev)


def cmd_solve(args):
    c = _circuit(args)
    p = _problem(args, c)
    method = args.method
    if method in SOLVERS:
        sol = SOLVERS[method](p)
    elif method == "hillclimb":
        init = random_assignment(p.query, np.random.default_rng(args.seed))
        sol = hill_climb(p, init, args.iters, args.seed)
    elif method == "ssmp":
        model = neural.load_model(_existing(args.model, "model file"))
        sol = neural.predict_mmap(model, p)
    else:
        raise UsageError(f"unknown method {method!r}")
    q_text = ",".join(f"{c.variables[v]}={b}" for v, b in sorted(sol.q.items()))
    text = f"q=({q_text}) score={_fmt(sol.log_score)} p={_fmt(math.exp(sol.log_score))}"
    doc = sol.to_document(c)
    if args.out:
        write_atomic(args.out, json.dumps(_jsonable(doc), indent=2) + "\n")
    _emit(args, text, doc)
    return EXIT_OK


def cmd_train(args):
    c = _circuit(args)
    part = _partition(args, c)
    data = read_dataset(_existing(args.data, "dataset"))
    if args.out is None:
        raise UsageError("train needs --out")
    cfg = _train_config(args)
    if args.objective == "ssmp":
        model, hist = neural.train_ssmp(c, part, data, cfg)
    else:
        rows = neural._rows(data, c, part)
        problems = [MmapProblem(c, part, {v: int(r[k]) for k, v in enumerate(part.evidence)})
                    for r in rows]
        ps = evaluation.ProblemSet(problems, part, {})
        labeled = evaluation.label_with_hill_climb(ps, args.iters, args.seed)
        model, hist = neural.train_supervised(c, part, labeled, args.objective, cfg)
    neural.save_model(model, args.out)
    last = hist.loss[-1] if hist.loss else float("nan")
    _emit(args, f"trained {args.objective} for {cfg.epochs} epochs, final loss {_fmt(last)}",
          {"loss": hist.loss, "skipped": hist.n_skipped, "out": args.out})
    return EXIT_OK


def cmd_cv_alpha(args):
    c = _circuit(args)
    part = _partition(args, c)
    data = read_dataset(_existing(args.data, "dataset"))
    grid = _floats(args.grid) if args.grid else list(neural.ALPHA_GRID)
    best, scores = neural.cross_validate_alpha(c, part, data, grid, args.folds, _train_config(args))
    lines = [f"alpha={_fmt(a)} mean_val_ll={_fmt(s)}" for a, s in scores.items()]
    lines.append(f"best alpha={_fmt(best)}")
    _emit(args, "\n".join(lines), {"best": best, "scores": {str(a): s for a, s in scores.items()}})
    return EXIT_OK


def cmd_eval(args):
    c = _circuit(args)
    if args.out is None:
        raise UsageError("eval needs --out")
    part = _partition(args, c, required=False)
    ps = evaluation.generate_problems(c, args.qr, args.mode, args.n, args.seed, partition=part)
    names = [m for m in args.methods.split(",") if m]
    model = neural.load_model(_existing(args.model, "model file")) if args.model else None
    methods = evaluation.make_methods(names, model=model, iters=args.iters, seed=args.seed)
    report = evaluation.compare(methods, ps, repeats=args.repeats, threads=args.threads)
    report.meta.update(circuit_path=str(args.circuit or args.circuit_pos))
    out = Path(args.out)
    write_atomic(out, json.dumps(_jsonable(report.to_document()), indent=1) + "\n")
    write_atomic(out.with_suffix(".csv"), report.to_csv())
    lines = [f"{r['method']:>12} mean_ll={_fmt(r['mean_ll'])} std={_fmt(r['std_ll'])} "
             f"time={_fmt(r['mean_time'])}s" for r in report.summary_rows()]
    _emit(args, "\n".join(lines), report.to_document()["summary"])
    return EXIT_OK


def cmd_report(args):
    from . import plotting

    reports = []
    for path in args.reports:
        with open(_existing(path, "report file")) as fh:
            reports.append(evaluation.EvalReport.from_document(json.load(fh)))
    if not reports:
        raise UsageError("report needs at least one report file")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    table = evaluation.contingency(reports)
    write_atomic(out / "contingency.txt", table.to_text() + "\n")
    write_atomic(out / "contingency.csv", table.to_csv())

    labels = [Path(p).stem for p in args.reports]
    methods = reports[0].methods
    summary = ["dataset,method,mean_ll,std_ll,excluded,mean_time"]
    for lab, r in zip(labels, reports):
        for row in r.summary_rows():
            summary.append(f"{lab},{row['method']},{row['mean_ll']!r},{row['std_ll']!r},"
                           f"{row['excluded']},{row['mean_time']!r}")
    write_atomic(out / "summary.csv", "\n".join(summary) + "\n")

    pair = args.pair.split(",") if args.pair else (
        ["ssmp", "max"] if {"ssmp", "max"} <= set(methods) else list(methods[:2]))
    figures = [plotting.contingency_heatmap(table, out / "contingency.png"),
               plotting.mean_ll_bars(reports, out / "mean_ll.png", labels)]
    diffs = []
    if len(pair) == 2 and set(pair) <= set(methods):
        a, b = pair
        diffs = [evaluation.percent_diff(r.mean(a), r.mean(b)) for r in reports]
        rows = ["dataset,qr,mode,percent_diff"] + [
            f"{lab},{r.meta.get('qr', '')},{r.meta.get('mode', '')},{d!r}"
            for lab, r, d in zip(labels, reports, diffs)]
        write_atomic(out / "percent_diff.csv", "\n".join(rows) + "\n")
        figures.append(plotting.percent_diff_heatmap(
            np.array(diffs)[:, None], labels, [f"{a} vs {b}"], out / "percent_diff.png"))
    text = table.to_text()
    if diffs:
        text += "\n" + "\n".join(f"{lab}: {pair[0]} vs {pair[1]} {_fmt(d)}%"
                                 for lab, d in zip(labels, diffs))
    _emit(args, text, {"methods": methods, "wins": table.wins.tolist(),
                       "percent_diff": diffs, "figures": [str(f) for f in figures]})
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _default_threads():
    env = os.environ.get("PCMMAP_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("circuit_pos", nargs="?", metavar="CIRCUIT")
    common.add_argument("--circuit")
    common.add_argument("--partition")
    common.add_argument("--evidence", default="")
    common.add_argument("--out")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=_default_threads())
    common.add_argument("--json", action="store_true")

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--data")
    train_opts.add_argument("--alpha", type=float)
    train_opts.add_argument("--epochs", type=int)
    train_opts.add_argument("--lr", type=float)
    train_opts.add_argument("--lr-decay", type=float)
    train_opts.add_argument("--decay-interval", type=int)
    train_opts.add_argument("--batch-size", type=int)
    train_opts.add_argument("--dropout", type=float)
    train_opts.add_argument("--hidden", help="comma-separated hidden layer sizes")

    p = _Parser(prog="pcmmap", description="MMAP inference in probabilistic circuits")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", parents=[common])
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("marginal", parents=[common])
    s.add_argument("--assign", default="")
    s.set_defaults(func=cmd_marginal)

    s = sub.add_parser("sample", parents=[common])
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--qr", type=float)
    s.add_argument("--mode", choices=["mpe", "mmap"], default="mmap")
    s.add_argument("--write-partition")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("solve", parents=[common])
    s.add_argument("--method", default="max",
                   choices=["max", "ml", "seq", "bruteforce", "hillclimb", "ssmp"])
    s.add_argument("--problem")
    s.add_argument("--model")
    s.add_argument("--iters", type=int, default=100)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("train", parents=[common, train_opts])
    s.add_argument("--objective", choices=["ssmp", "mse", "mae"], default="ssmp")
    s.add_argument("--iters", type=int, default=1000, help="hill-climb iterations for labels")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("cv-alpha", parents=[common, train_opts])
    s.add_argument("--grid")
    s.add_argument("--folds", type=int, default=5)
    s.set_defaults(func=cmd_cv_alpha)

    s = sub.add_parser("eval", parents=[common])
    s.add_argument("--qr", type=float, default=0.5)
    s.add_argument("--mode", choices=["mpe", "mmap"], default="mmap")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--methods", default="max,ml,seq")
    s.add_argument("--model")
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--repeats", type=int, default=5)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out")
    s.add_argument("--pair", help="two methods for the percent-difference table, e.g. ssmp,max")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pcmmap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PcmmapError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"pcmmap: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
