"""Command-line front end: ``oracular solve-kp|solve-tsp|solve-sp|accpm-demo|gen|bench``.

Results go to stdout as ``key=value`` lines (or CSV); logs go to stderr.
Exit codes: 0 optimal, 1 feasible but not proven, 2 infeasible or unbounded,
3 input error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import accpm, bnb
from .oracle import KnapsackDualOracle, MaxAbsOracle, NegatedOracle, QuadraticOracle, SetPartitionDualOracle
from .problems import (KnapsackInstance, SetPartitionInstance, TspInstance, euclidean_costs,
                       generate, to_mip)

log = logging.getLogger("oracular")

EXIT_OPTIMAL, EXIT_FEASIBLE, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3, 4
RESULT_KEYS = ("status", "objective", "bound", "gap", "nodes", "time_ms", "workers")
BNB_TRACE = ("node", "incumbent", "bound", "gap", "cuts", "workers_active")
ACCPM_TRACE = ("iteration", "incumbent", "bound", "gap", "cuts", "workers_active")


class InputError(ValueError):
    """Bad command-line input; maps to exit code 3."""


class InstanceFormatError(InputError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


# instance files ---------------------------------------------------------------

def _fmt(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 2 ** 53:
        return str(int(v))
    return repr(v)


def format_instance(inst) -> str:
    out = []
    if isinstance(inst, KnapsackInstance):
        out.append(f"KP {inst.n} {_fmt(inst.cap)}")
        out += [f"{_fmt(p)} {_fmt(w)} {int(m)}" for p, w, m in zip(inst.p, inst.w, inst.m)]
    elif isinstance(inst, TspInstance):
        if inst.points is not None:
            out.append(f"TSP-EUC {inst.n}")
            out += [f"{_fmt(x)} {_fmt(y)}" for x, y in inst.points]
        else:
            out.append(f"TSP {inst.n}")
            out += [" ".join(_fmt(c) for c in row) for row in inst.cost]
    elif isinstance(inst, SetPartitionInstance):
        out.append(f"SP {inst.m_flights} {inst.n_pairings}")
        for c, col in zip(inst.cost, inst.columns):
            flights = sorted(col)
            out.append(" ".join([_fmt(c), str(len(flights))] + [str(f + 1) for f in flights]))
    else:
        raise TypeError(f"cannot format {type(inst).__name__}")
    return "\n".join(out) + "\n"


def write_instance(inst, path) -> None:
    Path(path).write_text(format_instance(inst))


def parse_instance(path):
    text = Path(path).read_text()
    return parse_text(text, str(path))


def parse_text(text: str, source: str = "<string>"):
    lines = []
    for no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((no, body.split()))
    if not lines:
        raise InstanceFormatError(source, 1, "empty instance file")

    def fail(no, msg):
        raise InstanceFormatError(source, no, msg)

    def num(no, tok, kind=float):
        try:
            v = kind(tok)
        except ValueError:
            fail(no, f"expected {'an integer' if kind is int else 'a number'}, got {tok!r}")
        if kind is float and not math.isfinite(v):
            fail(no, f"nonfinite value {tok!r}")
        return v

    def count(no, tok, what):
        v = num(no, tok, int)
        if v < 1:
            fail(no, f"{what} must be positive, got {v}")
        return v

    no, head = lines[0]
    tag, body = head[0].upper(), lines[1:]

    def expect(k, width):
        if len(body) != k:
            where = body[k][0] if len(body) > k else (body[-1][0] if body else no)
            fail(where, f"expected {k} data lines after the header, found {len(body)}")
        for lno, toks in body:
            if width is not None and len(toks) != width:
                fail(lno, f"expected {width} fields, found {len(toks)}")

    try:
        if tag == "KP":
            if len(head) != 3:
                fail(no, "header must be 'KP n cap'")
            n = count(no, head[1], "item count")
            cap = num(no, head[2])
            expect(n, 3)
            rows = [(num(l, t[0]), num(l, t[1]), count(l, t[2], "multiplicity")) for l, t in body]
            p, w, m = zip(*rows)
            return KnapsackInstance(p, w, m, cap)
        if tag in ("TSP", "TSP-EUC"):
            if len(head) != 2:
                fail(no, f"header must be '{tag} n'")
            n = count(no, head[1], "city count")
            if tag == "TSP":
                expect(n, n)
                return TspInstance([[num(l, t) for t in toks] for l, toks in body])
            expect(n, 2)
            pts = np.array([[num(l, t) for t in toks] for l, toks in body])
            return TspInstance(euclidean_costs(pts), points=pts)
        if tag == "SP":
            if len(head) != 3:
                fail(no, "header must be 'SP m n'")
            m = count(no, head[1], "flight count")
            n = count(no, head[2], "column count")
            expect(n, None)
            costs, cols = [], []
            for l, toks in body:
                if len(toks) < 2:
                    fail(l, "expected 'cost k f1 ... fk'")
                k = count(l, toks[1], "column size")
                if len(toks) != k + 2:
                    fail(l, f"column declares {k} flights but lists {len(toks) - 2}")
                flights = [num(l, t, int) for t in toks[2:]]
                bad = [f for f in flights if not 1 <= f <= m]
                if bad:
                    fail(l, f"flight index {bad[0]} outside 1..{m}")
                costs.append(num(l, toks[0]))
                cols.append(frozenset(f - 1 for f in flights))
            return SetPartitionInstance(m, costs, tuple(cols))
    except InstanceFormatError:
        raise
    except ValueError as exc:
        fail(no, str(exc))
    fail(no, f"unknown instance header {head[0]!r}")


# running ----------------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    input: str | None = None
    tolerance: float = 1e-6
    max_iter: int | None = None
    workers: int = 1
    strategy: str = "depth"
    cut_policy: str = "keep_all"
    bounder: str = "lp"
    seed: int = 0
    output: str = "text"

    def __post_init__(self):
        if self.workers < 1:
            raise InputError("workers must be at least 1")
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")


def _emit(pairs: dict, fmt: str, stream) -> None:
    if fmt == "csv":
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(pairs.keys())
        w.writerow(pairs.values())
    else:
        for k, v in pairs.items():
            stream.write(f"{k}={v}\n")


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return _fmt(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _bnb_exit(status: str) -> int:
    if status == "optimal":
        return EXIT_OPTIMAL
    if status in ("infeasible", "unbounded"):
        return EXIT_INFEASIBLE
    return EXIT_FEASIBLE


def _default_workers() -> int:
    raw = os.environ.get("ORACULAR_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    try:
        v = int(raw)
    except ValueError:
        raise InputError(f"ORACULAR_THREADS must be a positive integer, got {raw!r}")
    if v < 1:
        raise InputError(f"ORACULAR_THREADS must be a positive integer, got {raw!r}")
    return v


def _cmd_solve(args, kind, out) -> int:
    try:
        inst = parse_instance(args.input)
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc.strerror or exc}") from exc
    expected = {"kp": KnapsackInstance, "tsp": TspInstance, "sp": SetPartitionInstance}[kind]
    if not isinstance(inst, expected):
        raise InstanceFormatError(args.input, 1, f"expected a {kind.upper()} instance")
    if isinstance(inst, SetPartitionInstance) and inst.uncovered_flights():
        log.warning("flights %s are covered by no column", inst.uncovered_flights())
    cfg = RunConfig(args.command, args.input, workers=args.workers, strategy=args.strategy,
                    bounder=args.bounder, output=args.format)
    trace_rows = []

    def progress(ev: bnb.ProgressEvent):
        sign = -1.0 if maximize else 1.0
        inc = sign * ev.incumbent
        bound = sign * ev.bound
        gap = abs(inc - bound) if math.isfinite(ev.incumbent) and math.isfinite(ev.bound) else math.inf
        trace_rows.append((ev.nodes, _num(inc), _num(bound), _num(gap), ev.cuts, ev.workers_active))

    problem = to_mip(inst)
    maximize = problem.maximize
    config = bnb.BnbConfig(node_limit=args.node_limit, time_limit=args.time_limit,
                           strategy=cfg.strategy, bounder=cfg.bounder,
                           progress=progress if args.trace else None,
                           progress_interval=args.trace_interval)
    t0 = time.perf_counter()
    if kind == "tsp":
        res = bnb.run_parallel(problem, cfg.workers, config,
                               separator=lambda x: bnb.separate_subtours(inst, x))
    else:
        res = bnb.run_parallel(problem, cfg.workers, config)
    elapsed = time.perf_counter() - t0
    if args.trace:
        _write_trace(args.trace, BNB_TRACE, trace_rows)
    pairs = {
        "status": res.status,
        "objective": _num(res.objective),
        "bound": _num(res.bound),
        "gap": _num(res.gap),
        "nodes": res.stats.nodes_explored,
        "time_ms": f"{elapsed * 1000:.3f}",
        "workers": cfg.workers,
    }
    if kind == "tsp" and res.incumbent is not None:
        pairs["tour"] = " ".join(str(c) for c in bnb.successor_tour(inst, res.incumbent.x))
    elif res.incumbent is not None:
        pairs["x"] = " ".join(_fmt(v) for v in res.incumbent.x)
    _emit(pairs, cfg.output, out)
    log.info("explored %d nodes, pruned %d, %d cuts, per worker %s", res.stats.nodes_explored,
             res.stats.nodes_pruned, res.stats.cuts_added, res.stats.per_worker_nodes)
    return _bnb_exit(res.status)


def _write_trace(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _demo_oracle(name: str, dim: int, seed: int):
    if name == "quadratic":
        return QuadraticOracle(dim), (-np.ones(dim), np.ones(dim))
    if name == "maxabs":
        return MaxAbsOracle(dim), (-np.ones(dim), np.ones(dim))
    if name == "shifted-quadratic":
        c = np.random.default_rng(seed).uniform(-0.5, 0.5, dim)
        return QuadraticOracle(dim, center=c), (-np.ones(dim), np.ones(dim))
    if name == "knapsack-dual":
        o = KnapsackDualOracle(generate("kp", dim, seed))
        return o, o.box()
    if name == "sp-dual":
        o = NegatedOracle(SetPartitionDualOracle(generate("sp", dim, seed)))
        return o, o.box()
    raise ValueError(f"unknown demo oracle {name!r}")


DEMO_ORACLES = ("quadratic", "maxabs", "shifted-quadratic", "knapsack-dual", "sp-dual")


def _cmd_accpm(args, out) -> int:
    try:
        oracle, box = _demo_oracle(args.oracle, args.dim, args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    config = accpm.AccpmConfig(tol=args.tol, max_iter=args.max_iter, cut_policy=args.cut_policy,
                               budget=args.budget)
    t0 = time.perf_counter()
    res = accpm.solve(oracle, box, config)
    elapsed = time.perf_counter() - t0
    if args.trace:
        rows = [(r.iteration, _num(r.best_value), _num(r.lower_bound), _num(r.gap), r.cuts, 1)
                for r in res.trace]
        _write_trace(args.trace, ACCPM_TRACE, rows)
    pairs = {
        "status": res.reason.value,
        "objective": _num(res.best_value),
        "bound": _num(res.lower_bound),
        "gap": _num(res.gap),
        "iterations": res.iterations,
        "time_ms": f"{elapsed * 1000:.3f}",
        "point": " ".join(repr(float(v)) for v in res.best_point),
    }
    if res.message:
        log.warning("%s", res.message)
    _emit(pairs, args.format, out)
    reason = accpm.TerminationReason
    if res.reason in (reason.GAP_CONVERGED, reason.NULL_SUBGRADIENT):
        return EXIT_OPTIMAL
    if res.reason is reason.MAX_ITERATIONS:
        return EXIT_FEASIBLE
    return EXIT_INTERNAL


def _cmd_gen(args, out) -> int:
    kind = {"kp": "kp", "tsp": "tsp", "sp": "sp"}[args.kind]
    try:
        text = format_instance(generate(kind, args.size, args.seed))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            raise InputError(f"cannot write {args.output}: {exc}") from exc
    else:
        out.write(text)
    return EXIT_OPTIMAL


def _cmd_bench(args, out) -> int:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["kind", "size", "seed", "workers", "median_ms", "nodes", "status", "objective",
                "per_worker_nodes"])
    for size in args.sizes:
        for seed in args.seeds:
            inst = generate(args.kind, size, seed)
            problem = to_mip(inst)
            sep = (lambda x, inst=inst: bnb.separate_subtours(inst, x)) if args.kind == "tsp" else None
            for workers in args.workers_list:
                times, last = [], None
                for _ in range(args.repeats):
                    t0 = time.perf_counter()
                    last = bnb.run_parallel(problem, workers, bnb.BnbConfig(), separator=sep)
                    times.append((time.perf_counter() - t0) * 1000)
                w.writerow([args.kind, size, seed, workers, f"{statistics.median(times):.3f}",
                            last.stats.nodes_explored, last.status, _num(last.objective),
                            "/".join(str(c) for c in last.stats.per_worker_nodes)])
    return EXIT_OPTIMAL


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _seed_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser(default_workers: int = 1) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oracular", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("solve-kp", "solve a knapsack file"), ("solve-tsp", "solve a TSP file"),
                            ("solve-sp", "solve a set-partitioning file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input")
        p.add_argument("--workers", type=int, default=default_workers,
                       help="worker threads (default: ORACULAR_THREADS or 1)")
        p.add_argument("--node-limit", type=int, default=None)
        p.add_argument("--time-limit", type=float, default=None, help="seconds")
        p.add_argument("--strategy", choices=("depth", "best"), default="depth")
        p.add_argument("--bounder", choices=("lp", "lagrangian"), default="lp")
        p.add_argument("--format", choices=("text", "csv"), default="text")
        p.add_argument("--trace", default=None, help="write a progress CSV here")
        p.add_argument("--trace-interval", type=int, default=1, help="nodes between trace rows")

    p = sub.add_parser("accpm-demo", help="run the cutting-plane engine on a built-in oracle")
    p.add_argument("oracle", choices=DEMO_ORACLES)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--cut-policy", choices=("keep_all", "drop_redundant", "aggregate", "weighted"),
                   default="keep_all")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--trace", default=None, help="write the iteration trace CSV here")

    p = sub.add_parser("gen", help="write a seeded instance")
    p.add_argument("kind", choices=("kp", "tsp", "sp"))
    p.add_argument("size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("bench", help="time instances across worker counts, CSV on stdout")
    p.add_argument("--kind", choices=("kp", "tsp", "sp"), default="kp")
    p.add_argument("--sizes", type=_int_list, default=[20])
    p.add_argument("--seeds", type=_seed_list, default=[0])
    p.add_argument("--workers", dest="workers_list", type=_int_list, default=[1, 2, 4])
    p.add_argument("--repeats", type=int, default=3)
    return parser


def main(argv=None, stdout=None) -> int:
    out = stdout or sys.stdout
    try:
        default_workers = _default_workers()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    parser = build_parser(default_workers)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OPTIMAL if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("solve-kp", "solve-tsp", "solve-sp"):
            if args.workers < 1:
                raise InputError("--workers must be at least 1")
            return _cmd_solve(args, args.command.split("-")[1], out)
        if args.command == "accpm-demo":
            if args.dim < 1 or not args.tol > 0:
                raise InputError("--dim must be positive and --tol must be positive")
            return _cmd_accpm(args, out)
        if args.command == "gen":
            if args.size < 1:
                raise InputError("size must be positive")
            return _cmd_gen(args, out)
        if args.repeats < 1:
            raise InputError("--repeats must be at least 1")
        return _cmd_bench(args, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a solver fault
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
