"""Benchmark harness: every algorithm on seeded replicate instances, CSV out.

Replicate ``r`` uses instance seed ``seed + r``; the activation stream of a
run is keyed by ``(seed + r, algorithm)``, so a cell's result does not
depend on which other cells run or on the worker count.
"""

import argparse
import csv
import functools
import json
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from randsplit.capexp import ALGORITHMS, DEFAULT_TAU, algorithm_info, build_problem, solve_capexp
from randsplit.instancegen import generate_instance, instance_from_dict
from randsplit.network import build_nguyen_dupuis, network_from_dict
from randsplit.pdsplit import Status

log = logging.getLogger(__name__)

__all__ = [
    "BenchConfig",
    "BenchRow",
    "CSV_HEADER",
    "parse_algorithms",
    "load_replicate",
    "run_cell",
    "run_benchmark",
    "summarize",
    "improvement_rows",
    "report_solution",
    "write_csv",
    "exit_code",
    "main",
]

BUILTIN = "builtin:nguyen-dupuis"
CSV_HEADER = ["algorithm", "class", "l", "replicate", "seed", "iterations",
              "wall_seconds", "final_error", "objective", "status"]


@dataclass(frozen=True)
class BenchConfig:
    instance: str = BUILTIN
    algorithms: tuple = tuple(range(1, 14))
    replicates: int = 20
    seed: int = 7
    tolerance: float = 1e-10
    max_iters: int = 200_000
    workers: int = 1
    num_scenarios: int = 18
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithm ids {bad}; expected 1..13")
        if not self.algorithms:
            raise ValueError("no algorithms selected")


@dataclass
class BenchRow:
    algorithm: int
    cls: str
    l: int
    replicate: int
    seed: int
    iterations: int
    wall_seconds: float
    final_error: float
    objective: float
    status: str
    solution: dict = field(default=None, repr=False, compare=False)

    def csv_fields(self):
        # repr() of a float is locale independent and round-trips exactly
        return [str(self.algorithm), self.cls, str(self.l), str(self.replicate), str(self.seed),
                str(self.iterations), repr(float(self.wall_seconds)), repr(float(self.final_error)),
                repr(float(self.objective)), self.status]


def parse_algorithms(text):
    """``"1-13"``, ``"1,10,13"`` or a mix such as ``"1,5-7"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            if lo > hi:
                raise ValueError(f"empty algorithm range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    for a in out:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm id {a}; expected 1..13")
    return tuple(sorted(set(out)))


@functools.lru_cache(maxsize=8)
def _source(instance):
    if instance == BUILTIN:
        return None
    with open(instance) as fh:
        return json.dumps(json.load(fh))


@functools.lru_cache(maxsize=4)
def load_replicate(instance, num_scenarios, seed):
    """Instance of one replicate.

    The built-in network and network-only JSON files are sampled with
    ``seed``; JSON files that carry scenario data are used as stored.
    """
    text = _source(instance)
    if text is None:
        return generate_instance(build_nguyen_dupuis(), num_scenarios, seed)
    d = json.loads(text)
    if "scenarios" in d:
        return instance_from_dict(d)
    return generate_instance(network_from_dict(d), int(d.get("num_scenarios", num_scenarios)), seed)


@functools.lru_cache(maxsize=4)
def _problem(instance, num_scenarios, seed):
    return build_problem(load_replicate(instance, num_scenarios, seed))


def run_cell(cfg, algorithm, replicate, keep_solution=False):
    seed = cfg.seed + replicate
    prob = _problem(cfg.instance, cfg.num_scenarios, seed)
    cls, l = algorithm_info(algorithm, prob.S)
    report, sol = solve_capexp(prob.instance, algorithm, seed=seed, tolerance=cfg.tolerance,
                               max_iters=cfg.max_iters, tau=cfg.tau, prob=prob)
    log.info("algorithm %d replicate %d: %s after %d iterations", algorithm, replicate,
             report.status, report.iterations)
    return BenchRow(algorithm, cls, l, replicate, seed, report.iterations, report.wall_time,
                    report.final_error, sol.objective, str(report.status),
                    sol.to_dict() if keep_solution else None)


def _run_cell_args(args):
    return run_cell(*args)


def run_benchmark(cfg, progress=None):
    """All ``(algorithm, replicate)`` cells, sorted by algorithm then replicate."""
    cells = [(cfg, a, r) for r in range(cfg.replicates) for a in cfg.algorithms]
    rows = []
    if cfg.workers == 1:
        for c in cells:
            rows.append(run_cell(*c))
            if progress:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for row in pool.map(_run_cell_args, cells):
                rows.append(row)
                if progress:
                    progress(row)
    rows.sort(key=lambda r: (r.algorithm, r.replicate))
    return rows


def write_csv(rows, path_or_file):
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(row.csv_fields())

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def improvement_rows(rows, baseline=1):
    """Per-replicate % improvement of every algorithm over ``baseline``.

    ``100 (base - alg) / base`` for iterations and for wall time; empty when
    the baseline was not run.
    """
    base = {r.replicate: r for r in rows if r.algorithm == baseline}
    out = []
    for r in rows:
        b = base.get(r.replicate)
        if b is None:
            continue
        it = 100.0 * (b.iterations - r.iterations) / b.iterations if b.iterations else 0.0
        wt = 100.0 * (b.wall_seconds - r.wall_seconds) / b.wall_seconds if b.wall_seconds > 0 else 0.0
        out.append({"algorithm": r.algorithm, "replicate": r.replicate,
                    "iterations_improvement_pct": it, "time_improvement_pct": wt})
    return out


def summarize(rows):
    """Per-algorithm means, medians and status counts, plus improvement medians."""
    imp = improvement_rows(rows)
    out = []
    for a in sorted({r.algorithm for r in rows}):
        rs = [r for r in rows if r.algorithm == a]
        ia = [d["iterations_improvement_pct"] for d in imp if d["algorithm"] == a]
        ta = [d["time_improvement_pct"] for d in imp if d["algorithm"] == a]
        out.append({
            "algorithm": a,
            "class": rs[0].cls,
            "l": rs[0].l,
            "runs": len(rs),
            "converged": sum(r.status == str(Status.CONVERGED) for r in rs),
            "mean_iterations": statistics.fmean(r.iterations for r in rs),
            "median_iterations": statistics.median(r.iterations for r in rs),
            "mean_wall_seconds": statistics.fmean(r.wall_seconds for r in rs),
            "median_iterations_improvement_pct": statistics.median(ia) if ia else math.nan,
            "median_time_improvement_pct": statistics.median(ta) if ta else math.nan,
        })
    return out


def _format_summary(summary):
    lines = [f"{'alg':>3} {'class':>5} {'l':>3} {'conv':>6} {'mean it':>10} {'median it':>10} "
             f"{'mean s':>8} {'impr it%':>9} {'impr t%':>8}"]
    for s in summary:
        lines.append(
            f"{s['algorithm']:>3} {s['class']:>5} {s['l']:>3} {s['converged']:>3}/{s['runs']:<2} "
            f"{s['mean_iterations']:>10.1f} {s['median_iterations']:>10.1f} {s['mean_wall_seconds']:>8.2f} "
            f"{s['median_iterations_improvement_pct']:>9.2f} {s['median_time_improvement_pct']:>8.2f}")
    return "\n".join(lines)


def report_solution(row_or_solution):
    """Per-arc table ``(arc, worst-scenario excess, expansion, expanded)`` as text.

    Accepts a :class:`BenchRow` run with ``keep_solution`` or a solution
    dictionary (``CapexSolution.to_dict()``).
    """
    sol = row_or_solution.solution if isinstance(row_or_solution, BenchRow) else row_or_solution
    if sol is None:
        raise ValueError("row carries no solution; rerun the cell with keep_solution=True")
    lines = [f"{'arc':>4} {'excess':>12} {'x':>12}  expanded"]
    for a in sol["arcs"]:
        lines.append(f"{a['arc']:>4} {a['worst_excess']:>12.4f} {a['x']:>12.4f}  {'yes' if a['expanded'] else ''}")
    lines.append(f"expanded arcs: {sol['expanded_arcs']}")
    return "\n".join(lines)


def exit_code(rows):
    statuses = {r.status for r in rows}
    if str(Status.DIVERGED) in statuses:
        return 3
    if str(Status.MAX_ITERATIONS) in statuses:
        return 2
    return 0


def _parse_cell(text):
    alg, rep = text.split(":")
    return int(alg), int(rep)


def build_parser():
    ap = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    ap.add_argument("--instance", default=BUILTIN, help=f"{BUILTIN} or a JSON file")
    ap.add_argument("--algorithms", default="1-13", help="ids, e.g. 1-13 or 1,10,13")
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--max-iters", type=int, default=200_000)
    ap.add_argument("--scenarios", type=int, default=18, help="scenarios per sampled instance")
    ap.add_argument("--tau", type=float, default=DEFAULT_TAU, help="primal step size")
    ap.add_argument("--out", default="results.csv")
    ap.add_argument("--improvement-out", default=None,
                    help="per-replicate improvement CSV (default: <out>_improvement.csv)")
    ap.add_argument("--dump-instance", default=None, metavar="DIR")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--report-solution", default=None, metavar="ALG:REP")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = BenchConfig(instance=args.instance, algorithms=parse_algorithms(args.algorithms),
                          replicates=args.replicates, seed=args.seed, tolerance=args.tol,
                          max_iters=args.max_iters, workers=args.workers,
                          num_scenarios=args.scenarios, tau=args.tau)
    except (ValueError, OSError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 1

    if args.dump_instance:
        os.makedirs(args.dump_instance, exist_ok=True)
        for r in range(cfg.replicates):
            inst = load_replicate(cfg.instance, cfg.num_scenarios, cfg.seed + r)
            inst.dump(os.path.join(args.dump_instance, f"instance_rep{r:02d}.json"))

    rows = run_benchmark(cfg)
    write_csv(rows, args.out)
    imp_path = args.improvement_out or os.path.splitext(args.out)[0] + "_improvement.csv"
    imp = improvement_rows(rows)
    if imp:
        with open(imp_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(imp[0]), lineterminator="\n")
            w.writeheader()
            for d in imp:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in d.items()})
    print(_format_summary(summarize(rows)))

    if args.report_solution:
        alg, rep = _parse_cell(args.report_solution)
        row = run_cell(cfg, alg, rep, keep_solution=True)
        print(f"\nalgorithm {alg}, replicate {rep} ({row.status}):")
        print(report_solution(row))
    return exit_code(rows)


if __name__ == "__main__":
    sys.exit(main())
