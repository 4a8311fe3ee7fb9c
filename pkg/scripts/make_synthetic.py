"""Write a seeded synthetic dataset as raw files that `mmgraphrec prepare` ingests."""

import argparse
import dataclasses

from mmgraphrec.synthetic import SyntheticSpec, generate, write_raw


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    for f in dataclasses.fields(SyntheticSpec):
        ap.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)
    args = vars(ap.parse_args())
    out = args.pop("out")
    paths = write_raw(out, generate(SyntheticSpec(**args)))
    for k, v in paths.items():
        print(f"{k}: {v}")


if __name__ == "__main__":
    main()
