"""Command-line entry point.

Subcommands mirror the experiment kinds plus ``replay <manifest>``.  Flags
override values from an optional JSON config file; every run writes a
manifest sufficient to regenerate its outputs bit-exactly.  Exit code 0
iff every hard verdict passed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import EXPERIMENT_KINDS, ExperimentConfig, replay, run_experiment

_FLAGS = {
    "alpha": ("--alpha", float, "noise regularity parameter"),
    "gamma": ("--gamma", float, "dissipation exponent in (1/2, 1]"),
    "n": ("--n", int, "grid size per dimension (even)"),
    "dt": ("--dt", float, "time step"),
    "horizon": ("--T", float, "time horizon"),
    "m": ("--M", int, "ensemble size / trajectory count"),
    "master_seed": ("--seed", int, "master seed"),
    "level": ("--level", str, "field level: velocity | vorticity | hat"),
    "drift": ("--drift", str, "drift: linear | ns | twisted | generalized:<beta>"),
    "kappa": ("--kappa", float, "regularity slack"),
    "cutoff_radius": ("--radius", float, "cutoff radius R"),
    "family_level": ("--family-level", float, "family-wise test level"),
}

_DRIFT_ALIASES = {"ns": "navier_stokes"}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file mirroring the flags")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--exploratory", action="store_true",
                        help="allow parameters outside the supported regimes")
    parser.add_argument("--betas", type=str, default=None,
                        help="comma-separated beta grid for the commutator campaign")
    for dest, (flag, typ, helptext) in _FLAGS.items():
        parser.add_argument(flag, dest=dest, type=typ, default=None, help=helptext)


def _build_config(kind: str, args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config is not None:
        values.update(json.loads(Path(args.config).read_text()))
    for dest in _FLAGS:
        flag_value = getattr(args, dest, None)
        if flag_value is not None:
            values[dest] = flag_value
    if args.exploratory:
        values["exploratory"] = True
    if args.betas:
        values["betas"] = tuple(float(b) for b in args.betas.split(","))
    drift = values.get("drift")
    if drift in _DRIFT_ALIASES:
        values["drift"] = _DRIFT_ALIASES[drift]
    values.pop("kind", None)
    return ExperimentConfig(kind=kind, **values)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sns2d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        _add_common(p)
    rp = sub.add_parser("replay", help="rerun a manifest and verify bit-exact outputs")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--scratch", type=Path, default=None)

    args = parser.parse_args(argv)
    if args.command == "replay":
        ok, diffs = replay(args.manifest, args.scratch)
        if ok:
            print("replay: all outputs identical")
            return 0
        print("replay: MISMATCH")
        for name, (old, new) in diffs.items():
            print(f"  {name}: {old} -> {new}")
        return 1

    try:
        cfg = _build_config(args.command, args)
    except (ValueError, TypeError) as exc:
        parser.error(str(exc))
    out = args.out or Path(f"out_{args.command}")
    manifest = run_experiment(cfg, out)
    hard = {k: v for k, v in manifest["verdicts"].items() if v is not None}
    for name, verdict in sorted(manifest["verdicts"].items()):
        tag = "PASS" if verdict else ("FAIL" if verdict is not None else "info")
        print(f"[{tag}] {name}")
    print(f"manifest: {Path(out) / 'manifest.json'}")
    return 0 if all(hard.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
