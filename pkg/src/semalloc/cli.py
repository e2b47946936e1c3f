"""Command-line harness: gen-table, run, sweep, validate.

Exit codes: 0 success, 1 validation failure, 2 infeasible scenario, 64 usage
or input error.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .allocator import (AllocationError, AllocatorOptions, audit_result, format_report,
                        result_from_csv, result_to_csv)
from .baselines import METHODS, STRICT_POLICIES, QoeOptions, method_users, run_method
from .metrics import (OK, SweepRow, average_similarity, fig1_csv, fig2_csv, fig3_csv,
                      per_user_report, satisfied_count)
from .scenario import ScenarioConfig, ScenarioError, channel_realization, load_scenario
from .similarity import (DEFAULT_COMPRESSION_RANGE, DEFAULT_SNR_RANGE_DB, SimilarityTable,
                         TableError, generate_table, load_table, make_grid, save_table)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64

DEFAULT_BANDWIDTHS_HZ = tuple(float(b) * 1e6 for b in range(8, 26))
DEFAULT_SEEDS = tuple(range(20))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_float_list(text: str) -> list[float]:
    """``a,b,c`` or an inclusive range ``start:stop:step``."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3:
            raise ValueError("range needs start:stop:step")
        return [float(v) for v in make_grid(*parts)]
    return [float(p) for p in text.split(",") if p.strip()]


def parse_int_list(text: str) -> list[int]:
    """``0,3,7`` or an inclusive range ``0-19``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep and lo:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _list_arg(parse):
    def convert(text):
        try:
            values = parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
        if not values:
            raise argparse.ArgumentTypeError("empty list")
        return values
    return convert


@dataclass(frozen=True)
class SweepSpec:
    bandwidths_hz: tuple[float, ...] = DEFAULT_BANDWIDTHS_HZ
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    methods: tuple[str, ...] = METHODS
    config_text: str = ""
    options: AllocatorOptions = field(default_factory=AllocatorOptions)
    qoe_options: QoeOptions = field(default_factory=QoeOptions)
    strict_policy: str = "upper"

    def __post_init__(self):
        if not self.bandwidths_hz or not self.seeds or not self.methods:
            raise ValueError("sweep lists must be non-empty")
        if any(not b > 0 for b in self.bandwidths_hz):
            raise ValueError("bandwidths must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method {bad[0]!r}")


def scenario_for(config_text: str, seed: int, bandwidth_hz: float | None = None):
    config, users = load_scenario(config_text, seed=seed)
    if bandwidth_hz is not None:
        config = config.with_bandwidth(bandwidth_hz)
    # gains come from the final profiles, so per-user distance overrides apply
    return config, users, channel_realization(users, config)


def check_table_covers(table: SimilarityTable, users) -> None:
    lowest = min(u.snr_threshold_db for u in users)
    if lowest < table.snr_grid_db[0]:
        raise TableError(f"table starts at {table.snr_grid_db[0]:g} dB but a user needs "
                         f"{lowest:.2f} dB")


def _result_meta(config: ScenarioConfig, policy: str) -> dict:
    return {"seed": config.rng_seed, "total_bandwidth_hz": repr(config.total_bandwidth_hz),
            "strict_policy": policy}


def _sweep_cell(spec: SweepSpec, table: SimilarityTable, bandwidth_hz: float, seed: int,
                keep_results: bool):
    config, users, gains = scenario_for(spec.config_text, seed, bandwidth_hz)
    out = []
    for method in spec.methods:
        t0 = time.perf_counter()
        try:
            result = run_method(method, config, users, gains, table, spec.options,
                                spec.qoe_options, spec.strict_policy)
        except AllocationError as exc:
            row = SweepRow(bandwidth_hz, method, seed, None, None, None,
                           (time.perf_counter() - t0) * 1e3, f"infeasible:{exc.status}")
            out.append((row, None))
            continue
        row = SweepRow(bandwidth_hz, method, seed, satisfied_count(result),
                       average_similarity(result), result.objective_trace[-1],
                       (time.perf_counter() - t0) * 1e3, OK)
        text = result_to_csv(result, _result_meta(config, spec.strict_policy)) if keep_results else None
        out.append((row, text))
    return out


def _sweep_cell_packed(args):
    return _sweep_cell(*args)


def run_sweep(spec: SweepSpec, table: SimilarityTable, workers: int = 1, keep_results: bool = False):
    """Run every (bandwidth, seed, method) cell.

    Returns rows sorted by (method, bandwidth, seed) and, if ``keep_results``,
    a parallel list of serialized results (None for failed rows).
    """
    jobs = [(spec, table, bw, seed, keep_results) for bw in spec.bandwidths_hz for seed in spec.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_cell_packed, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        chunks = [_sweep_cell_packed(j) for j in jobs]
    pairs = sorted((p for chunk in chunks for p in chunk), key=lambda p: p[0].sort_key())
    rows = [p[0] for p in pairs]
    return (rows, [p[1] for p in pairs]) if keep_results else rows


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_table_arg(path: str | None) -> SimilarityTable:
    return generate_table() if path is None else load_table(_read_text(path))


def _options(args) -> AllocatorOptions:
    return AllocatorOptions(max_iterations=args.iter_max, convergence_threshold=args.delta,
                            penalty_exponent=args.a)


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen_table(args) -> int:
    if not args.o_min > 0:
        raise UsageError("--o-min must be greater than 0")
    if args.o_max > 1:
        raise UsageError("--o-max must not exceed 1")
    snr = make_grid(args.snr_min, args.snr_max, args.snr_step)
    comp = make_grid(args.o_min, args.o_max, args.o_step)
    table = generate_table(snr, comp)
    _write(Path(args.out), save_table(table))
    rows, cols = table.shape
    print(f"wrote {args.out}: {rows} SNR rows x {cols} compression columns")
    return EXIT_OK


def cmd_run(args) -> int:
    config_text = _read_text(args.config) if args.config else ""
    table = _load_table_arg(args.table)
    config, users, gains = scenario_for(config_text, args.seed, args.bandwidth)
    check_table_covers(table, users)
    methods = METHODS if args.method == "all" else (args.method,)
    qoe = QoeOptions(channel_width_hz=args.qoe_width)
    out_dir = Path(args.out_dir)
    report_rows, status = [], EXIT_OK
    for method in methods:
        suffix = "" if len(methods) == 1 else f"_{method}"
        try:
            result = run_method(method, config, users, gains, table, _options(args), qoe,
                                args.strict_target)
        except AllocationError as exc:
            print(f"{method}: infeasible ({exc})", file=sys.stderr)
            status = EXIT_INFEASIBLE
            continue
        seen = method_users(users, method, config, args.strict_target)
        _write(out_dir / f"report{suffix}.txt", format_report(result, seen))
        _write(out_dir / f"result{suffix}.csv",
               result_to_csv(result, _result_meta(config, args.strict_target)))
        report_rows.extend(per_user_report(result, users))
        if not any(a.served for a in result.per_user):
            status = EXIT_INFEASIBLE
        print(f"{method}: {satisfied_count(result)}/{len(users)} satisfied, "
              f"{result.iterations_used} iteration(s)")
    _write(out_dir / "fig2.csv", fig2_csv(report_rows))
    return status


def cmd_sweep(args) -> int:
    spec = SweepSpec(tuple(args.bandwidths), tuple(args.seeds), tuple(args.methods),
                     _read_text(args.config) if args.config else "", _options(args),
                     QoeOptions(channel_width_hz=args.qoe_width), args.strict_target)
    table = _load_table_arg(args.table)
    t0 = time.perf_counter()
    out = run_sweep(spec, table, workers=args.workers, keep_results=args.save_results)
    rows, texts = out if args.save_results else (out, None)
    out_dir = Path(args.out_dir)
    _write(out_dir / "fig1.csv", fig1_csv(rows))
    _write(out_dir / "fig3.csv", fig3_csv(rows))
    if texts is not None:
        for row, text in zip(rows, texts):
            if text is not None:
                name = f"{row.method}_bw{row.bandwidth_hz:.0f}_seed{row.seed}.csv"
                _write(out_dir / "results" / name, text)
    failed = sum(r.status != OK for r in rows)
    print(f"{len(rows)} rows ({failed} failed) in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def validate_text(result_text: str, config_text: str = "", seed: int | None = None,
                  bandwidth_hz: float | None = None):
    """Audit a serialized result against its regenerated scenario."""
    result, meta = result_from_csv(result_text)
    if seed is None:
        seed = int(meta["seed"]) if "seed" in meta else 0
    if bandwidth_hz is None and "total_bandwidth_hz" in meta:
        bandwidth_hz = float(meta["total_bandwidth_hz"])
    config, users, gains = scenario_for(config_text, seed, bandwidth_hz)
    policy = meta.get("strict_policy", "upper")
    return audit_result(config, method_users(users, result.method, config, policy), gains, result)


def cmd_validate(args) -> int:
    config_text = _read_text(args.config) if args.config else ""
    try:
        violations = validate_text(_read_text(args.result), config_text, args.seed, args.bandwidth)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"result does not match scenario: {exc}") from None
    fatal = [v for v in violations if v.fatal]
    for v in violations:
        who = "network" if v.user_id is None else f"user {v.user_id}"
        print(f"{'FAIL' if v.fatal else 'note'} {v.constraint} {who}: {v.detail}")
    print(f"{len(fatal)} fatal violation(s)")
    return EXIT_VALIDATION if fatal else EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_alloc_flags(p):
    p.add_argument("--config", help="scenario INI file (defaults used if omitted)")
    p.add_argument("--table", help="similarity table CSV (surrogate default if omitted)")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--iter-max", type=int, default=20)
    p.add_argument("--delta", type=float, default=1e-4)
    p.add_argument("--a", type=float, default=None, help="penalty exponent override")
    p.add_argument("--strict-target", choices=STRICT_POLICIES, default="upper")
    p.add_argument("--qoe-width", type=float, default=1e6, help="QoE channel width in Hz")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semalloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-table", help="write a surrogate similarity table")
    g.add_argument("--out", default="similarity_table.csv")
    g.add_argument("--snr-min", type=float, default=DEFAULT_SNR_RANGE_DB[0])
    g.add_argument("--snr-max", type=float, default=DEFAULT_SNR_RANGE_DB[1])
    g.add_argument("--snr-step", type=float, default=DEFAULT_SNR_RANGE_DB[2])
    g.add_argument("--o-min", type=float, default=DEFAULT_COMPRESSION_RANGE[0])
    g.add_argument("--o-max", type=float, default=DEFAULT_COMPRESSION_RANGE[1])
    g.add_argument("--o-step", type=float, default=DEFAULT_COMPRESSION_RANGE[2])
    g.set_defaults(func=cmd_gen_table)

    r = sub.add_parser("run", help="allocate one scenario")
    _add_alloc_flags(r)
    r.add_argument("--method", choices=METHODS + ("all",), default="proposed")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--bandwidth", type=float, default=None, help="total bandwidth in Hz")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="bandwidth x seed x method sweep")
    _add_alloc_flags(s)
    s.add_argument("--bandwidths", type=_list_arg(parse_float_list), default=list(DEFAULT_BANDWIDTHS_HZ))
    s.add_argument("--seeds", type=_list_arg(parse_int_list), default=list(DEFAULT_SEEDS))
    s.add_argument("--methods", type=_list_arg(lambda t: [m.strip() for m in t.split(",") if m.strip()]),
                   default=list(METHODS))
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--save-results", action="store_true", help="also write every result CSV")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="audit a result CSV against its scenario")
    v.add_argument("--result", required=True)
    v.add_argument("--config")
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--bandwidth", type=float, default=None)
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep":
        bad = [m for m in args.methods if m not in METHODS]
        if bad:
            parser.error(f"unknown method {bad[0]!r}")
        if any(not b > 0 for b in args.bandwidths):
            parser.error("bandwidths must be positive")
        if args.workers < 1:
            parser.error("--workers must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"semalloc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, TableError) as exc:
        print(f"semalloc: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
