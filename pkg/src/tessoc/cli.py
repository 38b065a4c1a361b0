"""Command-line interface.

Subcommands:
  simulate            integrate the truth model, write truth + synthetic dataset
  estimate            run the filter (twin-sim pipeline or dataset replay)
  sweep               run the sample-rate matrix on one shared truth/dataset
  check-detectability detectability certificate for the configured sensors
  report              aggregate run metrics into metrics.json

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .config import SUPPORTED_RATES_HZ, build_setup, config_hash, load_config
from .errors import InvalidConfigError, InvalidInputError, NumericalError
from .experiments import (
    run_case_study,
    run_sweep,
    simulate_truth,
    write_raw_dataset,
    write_report,
)
from .network import check_detectability

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    parser.add_argument("--out", type=Path, default=Path("results"), help="output directory")


def _rate(value: str) -> float:
    rate = float(value)
    if rate not in SUPPORTED_RATES_HZ:
        raise argparse.ArgumentTypeError(
            f"rate must be one of {', '.join(f'{r:g}' for r in SUPPORTED_RATES_HZ)} S/s"
        )
    return rate


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tessoc",
        description="Phase-change thermal storage estimation: truth simulation, "
        "SDRE filtering, and twin-model case studies.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate truth trajectories and a synthetic dataset")
    _add_common(p_sim)

    p_est = sub.add_parser("estimate", help="run the state estimator")
    _add_common(p_est)
    p_est.add_argument("--rate", type=_rate, default=None, help="sample rate [S/s]")
    p_est.add_argument(
        "--withhold",
        action="append",
        default=None,
        choices=["tc1", "tc2", "tc3", "tc4"],
        help="sensor to withhold from the filter (repeatable)",
    )
    p_est.add_argument("--dataset", type=Path, default=None, help="replay this raw dataset CSV")

    p_sweep = sub.add_parser("sweep", help="run the sample-rate matrix")
    _add_common(p_sweep)
    p_sweep.add_argument(
        "--rates",
        type=_rate,
        nargs="+",
        default=list(SUPPORTED_RATES_HZ),
        help="rates to sweep [S/s]",
    )
    p_sweep.add_argument(
        "--withhold",
        action="append",
        default=None,
        choices=["tc1", "tc2", "tc3", "tc4"],
        help="sensor to withhold from the filter (repeatable)",
    )
    p_sweep.add_argument("--dataset", type=Path, default=None, help="replay this raw dataset CSV")

    p_det = sub.add_parser("check-detectability", help="numerical detectability certificate")
    _add_common(p_det)
    p_det.add_argument(
        "--withhold",
        action="append",
        default=None,
        choices=["tc1", "tc2", "tc3", "tc4"],
        help="sensor to withhold (repeatable)",
    )
    p_det.add_argument("--dt", type=float, default=2.0, help="certificate step length [s]")
    p_det.add_argument("--horizon", type=int, default=None, help="gramian horizon (default 2n)")

    p_rep = sub.add_parser("report", help="aggregate metrics from finished runs")
    p_rep.add_argument("run_dirs", nargs="*", type=Path, help="run directories with metrics.json")
    p_rep.add_argument("--out", type=Path, default=Path("results/metrics.json"))
    return parser


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    setup = build_setup(cfg, seed=args.seed)
    truth = simulate_truth(setup)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth.coarse.save_csv(out / "truth_coarse.csv")
    truth.inputs.save_csv(out / "inputs.csv")
    write_raw_dataset(truth, setup, out / "dataset.csv")
    print(
        f"simulated {setup.duration:g} s on the {setup.truth_grid.nx}x{setup.truth_grid.ny} "
        f"grid -> {out}/truth_coarse.csv, dataset.csv (config {setup.hash[:12]})"
    )
    return EXIT_OK


def _cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    if args.dataset is not None:
        cfg["experiment"]["mode"] = "replay"
    setup = build_setup(cfg, withhold=args.withhold, rate_hz=args.rate, seed=args.seed)
    result = run_case_study(setup, out_dir=args.out, dataset_path=args.dataset)
    write_report([result], Path(args.out) / "metrics.json")
    print(f"run {result.label}: wrote {args.out}/estimate.csv and metrics.json")
    for key in ("e_rms_over_cells_max_post_transient_K", "max_abs_soc_error"):
        if result.metrics.get(key) is not None:
            print(f"  {key} = {result.metrics[key]:.4g}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.dataset is not None:
        cfg["experiment"]["mode"] = "replay"
    results = run_sweep(
        cfg,
        rates_hz=sorted(args.rates, reverse=True),
        out_dir=args.out,
        withhold=args.withhold,
        seed=args.seed,
        dataset_path=args.dataset,
    )
    report = write_report(results, Path(args.out) / "metrics.json")
    print(f"swept {len(results)} rates -> {args.out}/metrics.json")
    for row in report["rate_table"]:
        cells = row.get("e_rms_per_cell_K") or {}
        summary = ", ".join(f"{k}={v:.4g}" for k, v in list(cells.items())[:1])
        print(f"  {row['rate_hz']:>5g} S/s  withheld={row['withheld']}  {summary}")
    return EXIT_OK


def _cmd_check_detectability(args) -> int:
    cfg = load_config(args.config)
    setup = build_setup(cfg, withhold=args.withhold, seed=args.seed)
    pcm = setup.pcm
    n = setup.estimator_grid.n
    samples = [
        np.full(n, pcm.t_pc - 1.5 * pcm.delta_t_pc),  # all solid
        np.full(n, pcm.t_pc),  # mid phase change
        np.full(n, pcm.t_pc + 1.5 * pcm.delta_t_pc),  # all liquid
    ]
    q = args.horizon if args.horizon is not None else 2 * n
    report = check_detectability(setup.system, samples, dt=args.dt, q=q)
    payload = {
        "verdict": report.verdict,
        "connected": report.connected,
        "c_rowsum_ok": report.c_rowsum_ok,
        "gramian_min_offspan": report.gramian_min_offspan,
        "consensus_excitation": report.consensus_excitation,
        "sensors": [s.name for s in setup.sensors],
        "config_hash": config_hash(cfg),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "detectability.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = []
    for run_dir in args.run_dirs:
        metrics_path = Path(run_dir) / "metrics.json"
        if not metrics_path.exists():
            raise InvalidInputError(f"no metrics.json under {run_dir}")
        rows.append(json.loads(metrics_path.read_text()))

    class _Prebuilt:
        def __init__(self, metrics):
            self.metrics = metrics
            self.label = metrics.get("label", metrics.get("mode", "run"))

    report = write_report([_Prebuilt(m) for m in rows], args.out)
    print(f"aggregated {len(rows)} runs -> {args.out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "sweep": _cmd_sweep,
    "check-detectability": _cmd_check_detectability,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (InvalidConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
