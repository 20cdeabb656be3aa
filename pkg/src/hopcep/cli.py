"""Command line front-end: run sweeps, summarize result CSVs, replay rows."""

from __future__ import annotations

import argparse
import sys

from .experiment import ConfigError, replay, run_experiment, summarize


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hopcep", description="Frequency-hopped sounding channel "
        "estimation/prediction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="YAML experiment config")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--profile", choices=["desk", "paper"], default=None,
                       help="override the config's system profile")
    p_run.add_argument("--output-dir", default=None)

    p_sum = sub.add_parser("summarize", help="aggregate a results CSV")
    p_sum.add_argument("csv")
    p_sum.add_argument("--out", default=None, help="write the aggregate CSV here")

    p_rep = sub.add_parser("replay", help="re-run a single result row")
    p_rep.add_argument("csv")
    p_rep.add_argument("--row", type=int, required=True, help="0-based body row")
    p_rep.add_argument("--manifest", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            out = run_experiment(args.config, workers=args.workers,
                                 output_dir=args.output_dir, profile=args.profile)
            print(f"wrote {out['csv']}")
            print(f"wrote {out['manifest']}")
        elif args.command == "summarize":
            rows = summarize(args.csv, out_path=args.out)
            cols = list(rows[0].keys())
            print(",".join(cols))
            for r in rows:
                print(",".join(format(r[c], ".4g") if isinstance(r[c], float)
                               else str(r[c]) for c in cols))
            if args.out:
                print(f"wrote {args.out}")
        elif args.command == "replay":
            res = replay(args.csv, args.row, manifest_path=args.manifest)
            print(f"recorded:   {res['recorded']}")
            print(f"recomputed: {res['recomputed']}")
            print("match" if res["match"] else "MISMATCH")
            return 0 if res["match"] else 2
    except (ConfigError, FileNotFoundError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
