"""Command-line entry: regenerate the committed fixtures.

    python -m fixturegen --output-dir fixtures [--seed N] [--skip-checks]
"""

import argparse
import sys

from .generate import DEFAULT_SEED, TrainingDiverged, generate_fixtures


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fixturegen", description=__doc__)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--output-dir", required=True)
    parser.add_argument(
        "--skip-checks",
        action="store_true",
        help="skip the cross-checks against the installed splitinfer CLI",
    )
    args = parser.parse_args(argv)
    try:
        manifest = generate_fixtures(
            args.seed, args.output_dir, run_checks=not args.skip_checks
        )
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    print(f"wrote fixtures for {manifest['name']} "
          f"(A0={manifest['baseline_accuracy']:.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
