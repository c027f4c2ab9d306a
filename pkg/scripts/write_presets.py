#!/usr/bin/env python3
"""Regenerate the shipped preset config files from the registry."""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mixkv.config import serialize_config, validate  # noqa: E402
from mixkv.presets import PRESET_NAMES, SCALES, preset, preset_file_name  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--dir",
        default=os.path.join(os.path.dirname(__file__), "..", "presets"),
        help="output directory (default: repo presets/)",
    )
    args = parser.parse_args()
    os.makedirs(args.dir, exist_ok=True)
    for scale in SCALES:
        for name in PRESET_NAMES:
            config = preset(name, scale)
            report = validate(config)
            assert report.ok, f"{name}@{scale}: {report}"
            path = os.path.join(args.dir, preset_file_name(name, scale))
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(serialize_config(config))
            print(path)


if __name__ == "__main__":
    main()
