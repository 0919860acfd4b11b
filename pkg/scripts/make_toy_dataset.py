#!/usr/bin/env python3
"""Generate the bundled separable toy dataset (images + manifest)."""
import argparse

from atypia.toydata import make_toy_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--n", type=int, default=500)
    parser.add_argument("--positive-fraction", type=float, default=0.15)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    manifest = make_toy_dataset(args.out_dir, args.n, args.positive_fraction, args.seed)
    print(f"wrote {args.n} patches; manifest at {manifest}")


if __name__ == "__main__":
    main()
