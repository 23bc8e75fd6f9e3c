"""Command line entry point: ``plan --config scenario.toml``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import (AmbiguousMode, FormationError, InconsistentModeSequences, SchemaError,
                     SolveFailure)
from .pipeline import (_clean, load_scenario, persist_raw, run_deterministic_mission,
                       run_solo_baseline, run_stochastic_mission)
from .transcription import mission_problem

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SEQUENCE = 4

log = logging.getLogger("formation_uq")


def build_parser():
    ap = argparse.ArgumentParser(prog="formation-uq",
                                 description="Formation mission planning under uncertainty")
    sub = ap.add_subparsers(dest="command", required=True)
    plan = sub.add_parser("plan", help="solve a scenario and write the reports")
    plan.add_argument("--config", required=True, help="scenario TOML/JSON file")
    plan.add_argument("--out", default="out", help="output directory (default: out)")
    mode = plan.add_mutually_exclusive_group()
    mode.add_argument("--solo-baseline", action="store_true",
                      help="only solve every flight solo and report its DOC")
    mode.add_argument("--deterministic", action="store_true",
                      help="only solve the formation mission at the expected parameters")
    mode.add_argument("--validate-only", action="store_true",
                      help="load and validate the inputs without solving")
    plan.add_argument("--dump-nlp", metavar="FILE",
                      help="write the nominal instance NLP structure to FILE")
    plan.add_argument("--workers", type=int, default=None, help="override solver.workers")
    plan.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scenario(args.config, workers=args.workers)
    except (SchemaError, FormationError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        if args.dump_nlp:
            prob, _ = mission_problem(cfg.mission, cfg.grid(), cfg.instance(cfg.expected_theta()))
            from .nlp import dump_problem
            dump_problem(prob, args.dump_nlp)
        if args.validate_only:
            print(f"ok: {cfg.name}: {cfg.mission.n_aircraft} aircraft, "
                  f"{cfg.mission.n_phases} phases, {len(cfg.bindings)} random variables")
            return EXIT_OK
        if args.solo_baseline:
            solo = run_solo_baseline(cfg)
            _write_json(out / "report.json", {"scenario": cfg.name, "doc": {"solo": solo.to_dict()}})
            return EXIT_OK
        if args.deterministic:
            solo = run_solo_baseline(cfg)
            det, _, rec = run_deterministic_mission(cfg, solo)
            persist_raw(out, [], det, solo, rec)
            _write_json(out / "report.json", {
                "scenario": cfg.name, "sequence": rec.sequence,
                "doc": {"deterministic_formation": det.to_dict(), "solo": solo.to_dict()}})
            return EXIT_OK
        report = run_stochastic_mission(cfg, out)
        print(f"wrote {out / 'report.json'}; sequence {list(report.sequence)}")
        return EXIT_OK
    except (InconsistentModeSequences, AmbiguousMode) as exc:
        print(f"mode-sequence inconsistency: {exc}", file=sys.stderr)
        return EXIT_SEQUENCE
    except SolveFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    sys.exit(main())
