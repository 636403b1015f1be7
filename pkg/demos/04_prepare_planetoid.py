"""
Preparing a Planetoid citation dataset
======================================

The package never downloads data. If you have the public Planetoid files
(``ind.citeseer.x``, ``.tx``, ``.allx``, ``.y``, ``.ty``, ``.ally``,
``.graph``, ``.test.index``) in a directory, this script converts them into
the plain-text layout the CLI reads and then draws the 20-labels-per-class
split.

    python demos/04_prepare_planetoid.py --raw ~/planetoid/data --name citeseer \
        --out data/citeseer

Afterwards the usual protocol is::

    scrl train --data data/citeseer --out runs/full --lpc 20 --sweep-seeds 5
    scrl train --data data/citeseer --out runs/no-ssl --lpc 20 --sweep-seeds 5 --ablation no-ssl
    scrl train --data data/citeseer --out runs/gcn --lpc 20 --sweep-seeds 5 --ablation topology-only

and ``SCRL_CITESEER_DIR=data/citeseer pytest tests/test_acceptance.py`` runs
the Citeseer acceptance checks.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from scrl.graph import convert_planetoid, make_splits

parser = argparse.ArgumentParser(description="convert Planetoid pickles")
parser.add_argument("--raw", required=True, help="directory holding ind.<name>.* files")
parser.add_argument("--name", default="citeseer")
parser.add_argument("--out", required=True)
parser.add_argument("--lpc", type=int, default=20)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--val-size", type=int, default=500)
parser.add_argument("--test-size", type=int, default=1000)
args = parser.parse_args()

ds = convert_planetoid(args.raw, args.name, args.out, labels_per_class=args.lpc,
                       seed=args.seed, val_size=args.val_size, test_size=args.test_size)
print(f"{args.name}: N={ds.num_nodes} d={ds.num_features} M={ds.num_classes} "
      f"edges={ds.adjacency.nnz // 2}")
print("class sizes:", np.bincount(ds.labels, minlength=ds.num_classes).tolist())

# %%
# Citeseer has 15 test-index slots with no paper attached; they appear as
# isolated nodes with all-zero features, are listed under "unlabeled" in
# meta.json, and never enter a split.
meta = json.loads((Path(args.out) / "meta.json").read_text())
print(f"placeholder nodes: {meta.get('unlabeled', [])}")

splits = make_splits(ds.labels, args.lpc, seed=args.seed, num_classes=ds.num_classes,
                     val_size=args.val_size, test_size=args.test_size,
                     exclude=meta.get("unlabeled"))
with open(Path(args.out) / "splits.json", "w") as fh:
    json.dump(splits, fh)
print({k: len(v) for k, v in splits.items()})
