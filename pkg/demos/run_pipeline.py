"""End-to-end CLI walkthrough on a small synthetic world.

Writes a run config into a working directory, then drives every pipeline
stage through the console entry point exactly as a shell session would.
Takes a couple of minutes single-threaded; pass a directory to keep the
artifacts, otherwise everything lands under ./pipeline_demo.
"""
import json
import os
import sys

from gliorad.cli import main

CONFIG = {
    "schema": "gliorad-run/1",
    "seed": 7,
    "paths": {
        "cohort_csv": "world/cohort.csv",
        "image_root": "world/images",
        "output_dir": "out",
    },
    "pipeline": {"smote": False, "combat": True},
    "selection": {"n": 4, "k": 3, "f_grid": [5, 10]},
    "split_plan": {
        "n_repetitions": 3,
        "inner_folds": 3,
        "train_centers": ["A"],
        "ext_centers": ["B"],
    },
    "models": ["M1-demo", "M1-img", "M1-demo-img"],
    "world": {
        "n": 80,
        "side": 24,
        "image_signal": 1.0,
        "centers": [
            {"name": "A", "weight": 2.0, "offset": -5.0},
            {"name": "B", "weight": 1.0, "offset": 4.0},
        ],
    },
    "export": {"grid_size": 32, "grid_spacing": 1.0},
}


def run(root: str) -> int:
    os.makedirs(root, exist_ok=True)
    config = os.path.join(root, "run.json")
    with open(config, "w") as fh:
        json.dump(CONFIG, fh, indent=2)
    print(f"config: {config}")

    for command in (
        "simulate", "extract", "harmonize", "select",
        "train", "evaluate", "report", "export-dl",
    ):
        print(f"\n$ gliorad {command} --config run.json")
        code = main([command, "--config", config])
        if code != 0:
            return code

    with open(os.path.join(root, "out", "tables", "report.txt")) as fh:
        print("\n" + fh.read())
    print(f"artifacts under {os.path.join(root, 'out')}")
    return 0


if __name__ == "__main__":
    sys.exit(run(sys.argv[1] if len(sys.argv) > 1 else "pipeline_demo"))
