"""Command-line driver.

Exit codes: 0 success, 2 config/validation error, 3 data error,
4 numerical non-convergence under ``--strict``.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, GeoFactorsError
from .pipeline import STAGES, load_config, run_stages
from .synth import generate_synthetic

log = logging.getLogger("geofactors")

STAGE_COMMANDS = {
    "run": STAGES,
    "select": ("select",),
    "cluster": ("cluster",),
    "embed": ("embed",),
    "report": ("report",),
}


def _stage_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--k", type=int, help="fix the number of clusters (skips the elbow)")
    p.add_argument("--lambda", dest="lam", type=float, help="fix the Lasso penalty (skips CV)")
    p.add_argument("--perplexity", type=float, help="t-SNE perplexity")
    p.add_argument("--output-dir", help="override the output directory")
    p.add_argument("--strict", action="store_true",
                   help="treat numerical non-convergence as an error (exit 4)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geofactors", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    _stage_parser(sub, "run", "run every stage")
    _stage_parser(sub, "select", "Lasso + RReliefF feature selection")
    _stage_parser(sub, "cluster", "k-means with elbow choice of k and IR ranking")
    _stage_parser(sub, "embed", "1-D t-SNE factor levels per category")
    _stage_parser(sub, "report", "choropleth GeoJSON")

    s = sub.add_parser("synth", help="write a synthetic input set with a ready config")
    s.add_argument("--out", required=True, help="directory to write into")
    s.add_argument("--units", type=int, default=177)
    s.add_argument("--features", type=int, default=245)
    s.add_argument("--days", type=int, default=46)
    s.add_argument("--planted", type=int, default=10, help="number of IR-relevant features")
    s.add_argument("--blobs", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args) -> dict:
    return {"seed": args.seed, "cluster.k": args.k, "lasso.lambda": args.lam,
            "tsne.perplexity": args.perplexity, "output_dir": args.output_dir,
            "strict": True if args.strict else None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            paths = generate_synthetic(args.out, units=args.units, features=args.features,
                                       days=args.days, planted_relevant=args.planted,
                                       blob_count=args.blobs, seed=args.seed)
            print(paths["config"])
            return 0
        cfg = load_config(args.config, _overrides(args))
        ctx = run_stages(cfg, STAGE_COMMANDS[args.command])
        print(ctx.out / "manifest.json")
        return 0
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return exc.exit_code
    except GeoFactorsError as exc:
        stage = getattr(exc, "stage", None) or "input"
        print(f"error: {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
