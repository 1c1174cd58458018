"""Command-line front end.

    polyrefine verify     --network net.json --input x.txt --radius 0.05
    polyrefine quantify   --network net.nnet --input x.txt --radius 0.05 --splits 32
    polyrefine max-radius --network net.json --input x.txt --engine refine

Exit codes: 0 verified (or search finished), 2 unknown / bound below target,
1 error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import VerifierError, ParseError, ShapeError
from .network import load_network
from .quant import quantify
from .refine import YES, max_verified_radius, verify

log = logging.getLogger("polyrefine")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNKNOWN = 2


@dataclass
class RunConfig:
    command: str
    network: str
    format: str | None
    input: str
    radius: float | None = None
    budget: int = 5
    splits: int = 32
    tie_boundary: bool = True
    prioritize: bool = True
    seed: int = 0
    eta: float | None = None
    engine: str = "refine"
    r_max: float = 1.0
    tol: float = 1e-3
    output: str | None = None
    csv: str | None = None
    jobs: int = 1
    timing: bool = False

    def validate(self) -> None:
        if self.command in ("verify", "quantify") and (self.radius is None or self.radius <= 0):
            raise ValueError("--radius must be positive")
        if self.budget < 0:
            raise ValueError("--budget must be non-negative")
        if self.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        if self.r_max <= 0 or self.tol <= 0:
            raise ValueError("--r-max and --tol must be positive")

    def echo(self) -> dict:
        """Settings that determine the result (execution details left out)."""
        keep = ("command", "network", "format", "input", "budget", "seed")
        extra = {
            "verify": ("radius", "tie_boundary", "prioritize"),
            "quantify": ("radius", "splits", "prioritize", "eta"),
            "max-radius": ("engine", "tie_boundary", "prioritize", "r_max", "tol"),
        }[self.command]
        d = asdict(self)
        return {k: d[k] for k in keep + extra}


def load_point(path) -> np.ndarray:
    text = Path(path).read_text().strip()
    try:
        if text.startswith("["):
            values = json.loads(text)
        else:
            values = [float(tok) for tok in text.replace(",", " ").split()]
        x = np.asarray(values, dtype=float).reshape(-1)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: cannot read input vector ({exc})") from exc
    if x.size == 0:
        raise ParseError(f"{path}: empty input vector")
    return x


def _write_outputs(cfg: RunConfig, payload: dict, rows: list, header: list) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)
    csv_path = cfg.csv or (str(Path(cfg.output).with_suffix(".csv")) if cfg.output else None)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)


def cmd_verify(cfg: RunConfig, net, x, executor) -> int:
    report = verify(net, x, cfg.radius, cfg.budget, cfg.tie_boundary, cfg.prioritize, executor=executor, chunks=cfg.jobs)
    payload = {"config": cfg.echo(), "report": report.to_dict(timing=cfg.timing)}
    header = ["anchor", "radius", "verdict", "label", "region_verdict", "iterations", "renewed_activated", "renewed_deactivated"]
    rows = [
        [report.anchor_label, cfg.radius, report.verdict, t.label, t.verdict, t.iterations_used, t.renewed_activated, t.renewed_deactivated]
        for t in report.traces
    ] or [[report.anchor_label, cfg.radius, report.verdict, "", "", 0, 0, 0]]
    _write_outputs(cfg, payload, rows, header)
    log.info("verdict %s", report.verdict)
    return EXIT_OK if report.verdict == YES else EXIT_UNKNOWN


def cmd_quantify(cfg: RunConfig, net, x, executor) -> int:
    report = quantify(net, x, cfg.radius, cfg.splits, cfg.budget, cfg.prioritize, cfg.eta, executor=executor)
    payload = {"config": cfg.echo(), "report": report.to_dict()}
    header = ["split", "volume_fraction", "verdict", "deeppoly_verified", "unresolved_regions", "contribution"]
    rows = [[s.index, s.volume_fraction, s.verdict, s.deeppoly_verified, len(s.unresolved), s.contribution] for s in report.splits]
    _write_outputs(cfg, payload, rows, header)
    target = 1.0 if cfg.eta is None else cfg.eta
    return EXIT_OK if report.eta_lower_bound >= target else EXIT_UNKNOWN


def cmd_max_radius(cfg: RunConfig, net, x, executor) -> int:
    lo, hi = max_verified_radius(
        net, x, cfg.engine, cfg.r_max, cfg.tol, budget=cfg.budget,
        boundary_mode=cfg.tie_boundary, prioritize=cfg.prioritize, executor=executor, chunks=cfg.jobs,
    )
    payload = {"config": cfg.echo(), "report": {"engine": cfg.engine, "radius": lo, "bracket": [lo, hi]}}
    _write_outputs(cfg, payload, [[cfg.engine, lo, hi]], ["engine", "radius", "bracket_upper"])
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "quantify": cmd_quantify, "max-radius": cmd_max_radius}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyrefine", description="DeepPoly with LP-guided refinement of spurious regions.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", required=True, help="network file (.json or .nnet)")
    common.add_argument("--format", choices=["json", "nnet"], help="override format detection")
    common.add_argument("--input", required=True, help="input vector (JSON list or whitespace/comma separated)")
    common.add_argument("-N", "--budget", type=int, default=5, help="refinement iterations per region (default 5)")
    common.add_argument("--no-prioritize", dest="prioritize", action="store_false", help="process regions in label order")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-o", "--output", help="JSON report path (default stdout)")
    common.add_argument("--csv", help="CSV summary path (default: next to --output)")
    common.add_argument("-j", "--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("verify", parents=[common], help="robustness verification")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--no-tie-boundary", dest="tie_boundary", action="store_false", help="use y_anchor <= y_t instead of the tie boundary")
    p.add_argument("--timing", action="store_true", help="include wall time in the report")

    p = sub.add_parser("quantify", parents=[common], help="quantitative robustness bound")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--splits", type=int, default=32)
    p.add_argument("--eta", type=float, help="target confidence; enables early exit")

    p = sub.add_parser("max-radius", parents=[common], help="binary search for the largest verified radius")
    p.add_argument("--engine", choices=["deeppoly", "refine"], default="refine")
    p.add_argument("--r-max", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--no-tie-boundary", dest="tie_boundary", action="store_false")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    values = {k: v for k, v in vars(args).items() if k in fields}
    return RunConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        cfg.validate()
        net = load_network(cfg.network, cfg.format)
        x = load_point(cfg.input)
        if x.shape[0] != net.input_dim:
            raise ShapeError(f"input has {x.shape[0]} entries, network expects {net.input_dim}")
        pool = ProcessPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else nullcontext()
        with pool as executor:
            return COMMANDS[cfg.command](cfg, net, x, executor)
    except (OSError, VerifierError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
