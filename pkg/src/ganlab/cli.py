"""ganlab command line: train, grid, verify-divergences, gradcheck, plot.

Exit codes: 0 success, 1 configuration or usage error, 2 failed verification.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import divergence, gradcheck
from .data import scatter_svg
from .grid import load_grid, run_grid
from .losses import ConfigError
from .trainer import TrainConfig, load_config, load_samples, save_run, train

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here usage errors are config errors (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ganlab", description="GAN generator-loss laboratory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="single training run from a JSON config")
    t.add_argument("--config", help="TrainConfig JSON (defaults apply to missing keys)")
    t.add_argument("--seed", type=int)
    t.add_argument("--cycles", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--n-d", type=int)
    t.add_argument("--out", default="run", help="output directory (default: run)")
    t.add_argument("--svg", action="store_true", help="also write scatter.svg of the final samples")

    g = sub.add_parser("grid", help="run an experiment grid from a JSON file")
    g.add_argument("--config", required=True)
    g.add_argument("--seeds", type=_int_list, help="override seeds, e.g. 1,2,3,4,5")
    g.add_argument("--cycles", type=int, help="override cycles for every run")
    g.add_argument("--out", default="grid_out")
    g.add_argument("--threads", type=int, help="parallel runs (default: GANLAB_THREADS or 1)")
    g.add_argument("--svg", action="store_true", help="write one scatter per cell")

    v = sub.add_parser("verify-divergences", help="check the divergence properties on discrete distributions")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--max-k", type=int, default=6)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--csv", help="also write the per-property CSV here")
    v.add_argument("--edm-budget", type=int, default=0, help="also search for an EDM support counterexample")

    c = sub.add_parser("gradcheck", help="finite-difference check of all loss compositions")
    c.add_argument("--repeats", type=int, default=2, help="random instances per composition")
    c.add_argument("--penalty", type=int, default=20, help="random critics per penalty siding")
    c.add_argument("--quiet", action="store_true", help="print failures and totals only")

    pl = sub.add_parser("plot", help="SVG scatter from a saved run directory")
    pl.add_argument("--run", required=True, help="directory written by `ganlab train`")
    pl.add_argument("--out", help="SVG path (default: <run>/scatter.svg)")
    pl.add_argument("--title")
    return p


def _train(args) -> int:
    raw = {}
    if args.config:
        raw = load_config(args.config).to_dict()
    for key in ("seed", "cycles", "eval_every", "n_d"):
        value = getattr(args, key)
        if value is not None:
            raw[key] = value
    config = TrainConfig.from_dict(raw)
    result = train(config)
    out = save_run(result, args.out)
    if args.svg and result.final_fake is not None:
        scatter_svg(result.final_real, result.final_fake, out / "scatter.svg", title=f"seed {config.seed}")
    status = f"diverged at cycle {result.diverged_cycle} ({result.reason})" if result.diverged else "ok"
    print(f"final NNRMSE {result.final_nnrmse:.4f}  {status}  {result.wall_time:.1f}s  -> {out}")
    return EXIT_OK


def _grid(args) -> int:
    grid = load_grid(args.config)
    if args.seeds is not None:
        if not args.seeds:
            raise ConfigError("--seeds is empty")
        grid.seeds = args.seeds
    if args.cycles is not None:
        grid.base = {**grid.base, "cycles": args.cycles}
        TrainConfig.from_dict(grid.base)
    if args.svg:
        grid.svg = True
    result = run_grid(grid, args.out, threads=args.threads)
    print((Path(args.out) / "summary.csv").read_text(encoding="utf-8"), end="")
    n_err = sum(r.status == "error" for r in result.records)
    print(f"{len(result.records)} runs, {n_err} errors -> {args.out}")
    return EXIT_OK


def _verify(args) -> int:
    if args.trials < 1 or args.max_k < 1:
        raise ConfigError("--trials and --max-k must be >= 1")
    report = divergence.verify_divergence_properties(args.trials, args.max_k, np.random.default_rng(args.seed))
    print(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    if args.edm_budget > 0:
        for same in (False, True):
            found = divergence.find_edm_support_counterexample(
                np.random.default_rng(args.seed), args.edm_budget, same_support_only=same
            )
            scope = "same-support" if same else "differing-support"
            if found is None:
                print(f"EDM counterexample search ({scope}, budget {args.edm_budget}): none found")
            else:
                print(f"EDM counterexample ({scope}): p={found.p.tolist()} q={found.q.tolist()} "
                      f"D={found.discriminator.values.tolist()} EDM={found.edm!r}")
    return EXIT_OK if report.ok else EXIT_FAILED


def _gradcheck(args) -> int:
    if args.repeats < 1 or args.penalty < 0:
        raise ConfigError("--repeats must be >= 1 and --penalty >= 0")
    reports = [gradcheck.run_suite(args.repeats)]
    if args.penalty:
        reports.append(gradcheck.penalty_suite(args.penalty))
    for report in reports:
        text = report.to_text().splitlines()
        if args.quiet:
            text = [line for line in text[:-1] if line.endswith("FAIL")] + text[-1:]
        print("\n".join(text))
    return EXIT_OK if all(r.ok for r in reports) else EXIT_FAILED


def _plot(args) -> int:
    real, fake = load_samples(args.run)
    out = Path(args.out) if args.out else Path(args.run) / "scatter.svg"
    title = args.title
    if title is None:
        meta = Path(args.run) / "result.json"
        if meta.exists():
            title = f"seed {json.loads(meta.read_text(encoding='utf-8')).get('seed')}"
    scatter_svg(real, fake, out, title=title)
    print(out)
    return EXIT_OK


COMMANDS = {
    "train": _train,
    "grid": _grid,
    "verify-divergences": _verify,
    "gradcheck": _gradcheck,
    "plot": _plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ganlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, OSError) as exc:
        print(f"ganlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
