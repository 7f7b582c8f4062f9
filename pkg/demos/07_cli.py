"""
Command line round trip
=======================

train -> eval -> embed through ``geocaps.cli.main``, the same entry point as
the ``geocaps`` console script.
"""

import csv
import json
import tempfile
from pathlib import Path

from geocaps import checkpoint
from geocaps.cli import main

work = Path(tempfile.mkdtemp(prefix="geocaps-demo-"))
config = work / "run.json"
config.write_text(json.dumps({
    "train": {"epochs": 2, "seed": 1},
    "data": {"synthetic": {"n_locations": 160, "seed": 1}},
    "eval": {"k_list": [1, 5, 10]},
}, indent=2))

print("train exit:", main(["train", "--config", str(config), "--out", str(work / "model.gcap")]))
print((work / "model.gcap.loss.csv").read_text())

print("eval exit:", main(["eval", "--config", str(config), "--ckpt", str(work / "model.gcap"),
                          "--report", str(work / "report.csv")]))
print((work / "report.csv").read_text())

print("embed exit:", main(["embed", "--ckpt", str(work / "model.gcap"), "--input", "synthetic",
                           "--branch", "satellite", "--split", "test", "--out", str(work / "sat.csv")]))
with open(work / "sat.csv") as fh:
    rows = list(csv.reader(fh))
print("embedding rows:", len(rows) - 1, "columns:", len(rows[0]))

# the checkpoint is self-describing
ckpt = checkpoint.read_checkpoint(work / "model.gcap")
print("epochs completed:", ckpt.meta["epochs_completed"], "tensors:", len(ckpt.tensors))

# errors come back as exit codes with one line on stderr
print("wrong branch exit:", main(["embed", "--ckpt", str(work / "model.gcap"), "--input", "synthetic",
                                  "--branch", "street", "--out", str(work / "x.csv")]))
print("missing checkpoint exit:", main(["eval", "--config", str(config), "--ckpt", str(work / "none.gcap"),
                                        "--report", str(work / "r.csv")]))
