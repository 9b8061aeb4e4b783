"""Command-line entry points: simulate, calibrate, selftest.

Exit codes: 0 for a completed safe run, 2 for a completed run that violated
the safety constraint, 1 for any error. ``simulate`` writes the per-step CSV,
a YAML summary, the three figure-data CSVs, and rendered PNG figures to the
output directory.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .calibration import calibrate
from .config import ConfigError, load_config, save_config
from .report import write_run_outputs
from .scenario import run_closed_loop, summarize
from .selftest import run_selftest

EXIT_SAFE = 0
EXIT_ERROR = 1
EXIT_VIOLATED = 2

_DEFAULT_CONFIG = Path(__file__).resolve().parent.parent.parent / "configs" / "paper.yaml"


def _apply_overrides(spec, args):
    import dataclasses

    changes = {}
    if getattr(args, "filter", None) is not None:
        changes["filter_enabled"] = args.filter == "on"
    if getattr(args, "attack", None) is not None:
        if args.attack == "none":
            changes["attack_mode"] = "none"
            changes["attacked"] = ()
        # "paper" keeps the attack block from the config file
    if getattr(args, "mode", None) is not None:
        changes["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    return dataclasses.replace(spec, **changes) if changes else spec


def cmd_simulate(args) -> int:
    try:
        spec = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    spec = _apply_overrides(spec, args)
    if spec.calibration is None:
        print(
            "error: config has no calibration block; run 'securefilter calibrate' first",
            file=sys.stderr,
        )
        return EXIT_ERROR
    t0 = time.perf_counter()
    records = run_closed_loop(spec)
    summary = summarize(records, spec, wall_clock_s=time.perf_counter() - t0)
    status = "safety-violated" if summary.safety_violated else "safe"
    write_run_outputs(
        records, summary, spec, args.out, status, plots=not args.no_plots
    )
    print(
        f"{status}: h_min={summary.h_min:.4f}, "
        f"{summary.n_uncertified_steps} uncertified steps, "
        f"{summary.n_reconstruction_failures} reconstruction failures "
        f"({summary.wall_clock_s:.1f}s, outputs in {args.out})"
    )
    return EXIT_VIOLATED if summary.safety_violated else EXIT_SAFE


def cmd_calibrate(args) -> int:
    try:
        spec = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if getattr(args, "seed", None) is not None:
        import dataclasses

        spec = dataclasses.replace(spec, seed=args.seed)
    try:
        cal = calibrate(spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    import dataclasses

    out = args.out or args.config
    save_config(dataclasses.replace(spec, calibration=cal), out)
    print(
        f"calibration written to {out}: wbar={cal.wbar:.3e}, L={cal.L:.4f}, "
        f"delta={cal.delta:.3e}, delta'={cal.delta_prime:.3e}, tau={cal.tau:.3e}, "
        f"eps={cal.eps:.4f}, eps1={cal.eps1:.4f}"
    )
    return EXIT_SAFE


def cmd_selftest(args) -> int:
    rows = run_selftest(seed=args.seed, delta=args.delta)
    width = max(len(name) for name, _, _ in rows)
    ok_all = True
    for name, passed, detail in rows:
        ok_all &= passed
        print(f"{name.ljust(width)}  {'PASS' if passed else 'FAIL'}  {detail}")
    return EXIT_SAFE if ok_all else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="securefilter",
        description="Secure state reconstruction and CBF safety filtering "
        "for a unicycle with partially spoofed sensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the closed-loop scenario")
    sim.add_argument("--config", default=str(_DEFAULT_CONFIG), help="scenario YAML")
    sim.add_argument("--out", default="out", help="output directory")
    sim.add_argument("--filter", choices=["on", "off"], help="override filter_enabled")
    sim.add_argument(
        "--attack", choices=["paper", "none"], help="keep or disable the attack"
    )
    sim.add_argument("--mode", choices=["exact", "relaxed"], help="estimator mode")
    sim.add_argument("--seed", type=int, help="override the seed")
    sim.add_argument("--horizon", type=float, help="override the horizon (s)")
    sim.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="freeze the calibration block")
    cal.add_argument("--config", default=str(_DEFAULT_CONFIG), help="scenario YAML")
    cal.add_argument("--out", default=None, help="output YAML (default: in place)")
    cal.add_argument("--seed", type=int, help="override the seed")
    cal.set_defaults(func=cmd_calibrate)

    st = sub.add_parser("selftest", help="run the built-in verification suite")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument(
        "--delta",
        type=float,
        default=None,
        help="override the estimate ball radius used by the lemma check",
    )
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
