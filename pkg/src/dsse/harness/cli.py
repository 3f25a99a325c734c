"""Command line entry point.

    dsse gen-data SPEC.json --out DIR
    dsse corr PROFILES_P.csv [PROFILES_Q.csv] --nt N [--nearest-pd] --out DIR
    dsse estimate NETWORK CR.csv MEASUREMENTS.json --mode cst --nt 3 --out DIR
    dsse run-scenario CONFIG.json --out DIR
    dsse bench --networks six_bus ieee123

Exit status 0 on success, 2 for unreadable or invalid input, 3 when the
numerics fail (singular measurements, unobservable system, indefinite
correlation).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from dsse.cmcgd import DegenerateMeasurementError
from dsse.complexstats import CorrelationMatrix, NotPositiveDefiniteError, ZeroVarianceError
from dsse.estimator import (
    MeasurementSet, ObservabilityError, estimate, write_estimate_csv, write_estimate_json,
)
from dsse.harness.generator import (
    CommunitySpec, correlation_from_profiles, gen_synthetic_profiles, read_profiles, write_profiles,
)
from dsse.harness.scenario import MODES, ScenarioConfig, bench, load_network, run_scenario, write_wls_csv
from dsse.wls import WlsOptions, wls_estimate

EXIT_INPUT = 2
EXIT_NUMERIC = 3

NUMERIC_ERRORS = (DegenerateMeasurementError, ObservabilityError, NotPositiveDefiniteError,
                  ZeroVarianceError, np.linalg.LinAlgError)
INPUT_ERRORS = (ValueError, KeyError, OSError, TypeError)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> None:
    data = json.loads(Path(args.spec).read_text())
    if args.seed is not None:
        data["seed"] = args.seed
    spec = CommunitySpec.from_dict(data)
    out = _out_dir(args)
    write_profiles(gen_synthetic_profiles(spec), out / "profiles_p.csv", out / "profiles_q.csv")
    print(f"wrote {spec.n_areas} areas x {spec.n_samples} samples to {out}")


def cmd_corr(args) -> None:
    profiles = read_profiles(args.profiles_p, args.profiles_q, args.interval)
    cr = correlation_from_profiles(profiles, nt=args.nt, voltage=args.voltage, repair=args.nearest_pd)
    out = _out_dir(args)
    cr.to_csv(out / "cr.csv")
    print(f"correlation of {cr.n_vars} variables over {cr.nt} slots, "
          f"min eigenvalue {cr.min_eigenvalue():.3g}; wrote {out / 'cr.csv'}")


def cmd_estimate(args) -> None:
    net = load_network(args.network, args.rx_scale)
    cr = CorrelationMatrix.from_csv(args.cr)
    ms = MeasurementSet.read(args.measurements)
    out = _out_dir(args)
    if args.mode == "wls":
        res = wls_estimate(net, ms, WlsOptions(cr=cr.spatial(), step=args.step))
        step = ms.n_steps - 1 if args.step is None else args.step
        write_wls_csv(res, net, step, out / "estimate.csv")
        print(f"wls converged={res.converged} in {res.iterations} iterations; "
              f"quality {res.quality(net.base_voltage):.3f}")
    else:
        est = estimate(net, cr, ms, mode=args.mode, nt=args.nt, step=args.step)
        write_estimate_csv(est, net, out / "estimate.csv")
        write_estimate_json(est, net, out / "estimate.json", full=args.full)
        print(f"{args.mode} over steps {list(est.steps)}; wrote {out / 'estimate.csv'}")


def cmd_run_scenario(args) -> None:
    data = json.loads(Path(args.config).read_text())
    if args.mode:
        data["modes"] = args.mode
    for key, val in (("nt", args.nt), ("seed", args.seed), ("rx_scale", args.rx_scale)):
        if val is not None:
            data[key] = val
    cfg = ScenarioConfig.from_dict(data)
    report = run_scenario(cfg, out_dir=args.out)
    print(report.table())


def cmd_bench(args) -> None:
    rows = bench(tuple(args.networks), tuple(args.mode or MODES), args.repeats, args.seed, args.nt)
    print(f"{'network':<10}{'mode':<6}{'states':>7}{'median ms':>11}{'iter':>6}")
    for r in rows:
        print(f"{r['network']:<10}{r['mode']:<6}{r['n_states']:>7}{1e3 * r['median_s']:>11.2f}"
              f"{r['iterations']:>6}")
    if args.out:
        out = _out_dir(args)
        with (out / "bench.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsse", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthetic community profiles from a CommunitySpec JSON")
    p.add_argument("spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("corr", help="correlation matrix CSV from profile CSVs")
    p.add_argument("profiles_p")
    p.add_argument("profiles_q", nargs="?")
    p.add_argument("--nt", type=int, default=1)
    p.add_argument("--nearest-pd", action="store_true", help="repair to the nearest valid correlation")
    p.add_argument("--voltage", type=complex, default=1.0, help="voltage used to turn power into current")
    p.add_argument("--interval", type=float, default=1.0, help="sample interval in minutes")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_corr)

    p = sub.add_parser("estimate", help="estimate all states from a measurement file")
    p.add_argument("network", help="bundled network name or network JSON")
    p.add_argument("cr")
    p.add_argument("measurements")
    p.add_argument("--mode", choices=MODES, default="cst")
    p.add_argument("--nt", type=int, default=3)
    p.add_argument("--step", type=int)
    p.add_argument("--rx-scale", type=float, default=1.0)
    p.add_argument("--full", action="store_true", help="include the full posterior in estimate.json")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("run-scenario", help="run a case study from a ScenarioConfig JSON")
    p.add_argument("config")
    p.add_argument("--mode", choices=MODES, action="append", help="repeat to run several modes")
    p.add_argument("--nt", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rx-scale", type=float)
    p.add_argument("--out", default="scenario_out")
    p.set_defaults(func=cmd_run_scenario)

    p = sub.add_parser("bench", help="median estimator wall time per network and mode")
    p.add_argument("--networks", nargs="+", default=["six_bus", "ieee123"])
    p.add_argument("--mode", choices=MODES, action="append")
    p.add_argument("--repeats", type=int, default=11)
    p.add_argument("--nt", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"dsse: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except json.JSONDecodeError as exc:
        print(f"dsse: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"dsse: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
