"""gradsq <subcommand> --config cfg.json [--seed S] [--out DIR] [--threads T]"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import GradSqError
from .experiments import EXPERIMENTS, make_config, run
from .sampler import thread_count

log = logging.getLogger("gradsq")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gradsq", description="Gradient-squared DGFF experiments.")
    ap.add_argument("subcommand", choices=EXPERIMENTS)
    ap.add_argument("--config", help="JSON config; keys override the subcommand defaults")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads; GRADSQ_THREADS overrides")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        overrides = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                overrides = json.load(fh)
            exp = overrides.get("experiment")
            if exp is not None and exp != args.subcommand:
                raise ValueError(f"config is for {exp!r}, not {args.subcommand!r}")
        config = make_config(args.subcommand, overrides, seed=args.seed,
                             threads=thread_count(args.threads))
        report = run(config, out_dir=args.out)
        paths = report.write(args.out)
    except (GradSqError, ValueError, KeyError, OSError) as exc:
        print(f"gradsq: error: {exc}", file=sys.stderr)
        return 1
    for c in report.criteria:
        status = "PASS" if c["passed"] else "FAIL"
        value = "nan" if c["value"] is None else f"{c['value']:.6g}"
        print(f"{status} {c['name']}: {value} {c['comparison']} {c['threshold']:g} "
              f"[{c['tolerance_key']}]")
    log.info("wrote %s", ", ".join(paths))
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
