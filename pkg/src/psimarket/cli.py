"""Command-line entry point: run, compare and validate scenarios.

Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Sequence

from . import metrics as mx
from .dynamics import run_scenario
from .errors import InvalidConfigError, SimulationError
from .scenario import ScenarioConfig, load_scenario, with_overrides

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

# per-seed quantities compared between the two configs
COMPARED = ("gini_slope", "cantillon_slope", "episodes", "stability")


class UsageError(Exception):
    pass


@dataclass
class ComparisonReport:
    seeds: list[int]
    rows: list[dict[str, Any]] = field(default_factory=list)
    tallies: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"seeds": self.seeds, "rows": self.rows, "tallies": self.tallies}

    def tally_line(self) -> str:
        parts = [f"{k}: +{t['positive']} -{t['negative']} ={t['zero']}" for k, t in self.tallies.items()]
        return "sign tally (a - b) " + "; ".join(parts)


def _measures(summary: dict[str, Any]) -> dict[str, float | None]:
    stab = summary.get("psi_stability")
    return {
        "gini_slope": summary["gini_slope"],
        "cantillon_slope": summary["cantillon_slope"],
        "episodes": len(summary["boom_bust_episodes"]),
        "stability": stab["mean_shift_after_burn_in"] if stab else None,
    }


def compare_regimes(cfg_a: ScenarioConfig, cfg_b: ScenarioConfig, seeds: Sequence[int]) -> ComparisonReport:
    """Run both configs on every seed and pair up their headline measures.

    Differences are a minus b; a difference is None when either side has no
    value for that measure (a Cantillon slope outside the fiat regime, say).
    """
    seeds = list(seeds)
    if not seeds:
        raise UsageError("compare needs at least one seed")
    report = ComparisonReport(seeds)
    diffs: dict[str, list[float]] = {k: [] for k in COMPARED}
    for seed in seeds:
        a = _measures(run_scenario(with_overrides(cfg_a, seed=seed, output_dir=None)).summary)
        b = _measures(run_scenario(with_overrides(cfg_b, seed=seed, output_dir=None)).summary)
        row: dict[str, Any] = {"seed": seed}
        for k in COMPARED:
            row[f"{k}_a"], row[f"{k}_b"] = a[k], b[k]
            d = None if a[k] is None or b[k] is None else a[k] - b[k]
            row[f"{k}_diff"] = d
            if d is not None:
                diffs[k].append(d)
        report.rows.append(row)
        log.info("seed %d done", seed)
    report.tallies = {k: mx.sign_tally(v) for k, v in diffs.items()}
    return report


def write_report(report: ComparisonReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cols = ["seed"] + [f"{k}_{s}" for k in COMPARED for s in ("a", "b", "diff")]
    with open(os.path.join(out_dir, "compare.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in report.rows:
            w.writerow(["" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in cols])
    with open(os.path.join(out_dir, "compare.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("compare needs at least one seed")
    return seeds


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="psimarket", description="Monetary-regime market simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run one scenario and write events, metrics and summary")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", required=True)
    cmp_ = sub.add_parser("compare", help="run two scenarios over the same seeds and compare them")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True)
    cmp_.add_argument("--seeds", required=True)
    cmp_.add_argument("--out", required=True)
    val = sub.add_parser("validate", help="parse and validate a scenario file")
    val.add_argument("--scenario", required=True)
    for sp in (run, cmp_, val):
        sp.error = p.error
    return p


def run_cli(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: run, compare or validate")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            load_scenario(args.scenario)
            print(f"ok: {args.scenario}")
        elif args.command == "run":
            cfg = load_scenario(args.scenario)
            every = max(1, cfg.horizon // 10) if args.verbose else 0
            result = run_scenario(cfg, args.out, progress_every=every)
            print(f"wrote {args.out} ({result.summary['frames']} frames, {result.summary['events']} events)")
        else:
            seeds = _parse_seeds(args.seeds)
            report = compare_regimes(load_scenario(args.a), load_scenario(args.b), seeds)
            write_report(report, args.out)
            print(report.tally_line())
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidConfigError as exc:
        key = f" [{exc.key}]" if getattr(exc, "key", None) else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot read or write {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
