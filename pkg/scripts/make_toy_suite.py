#!/usr/bin/env python3
"""Materialize the scripted toy scenarios (LM scripts + JSONL datasets)."""
import argparse

from pathdecode.scenarios import write_suite


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="toy_suite", help="output directory")
    args = parser.parse_args()
    for path in write_suite(args.out):
        print(path)


if __name__ == "__main__":
    main()
