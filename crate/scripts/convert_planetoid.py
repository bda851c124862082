#!/usr/bin/env python3
"""Convert a Planetoid citation dataset (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index})
into the directory format read by gmlp: edges.tsv, features.txt, labels.txt, splits.txt.

Splits follow the standard Planetoid protocol: the first len(y) nodes train,
the next 500 validate, and test.index lists the test nodes.

    python3 scripts/convert_planetoid.py --raw path/to/planetoid/data --name cora --out data/cora
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_part(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(raw: Path, name: str, out: Path) -> None:
    x, y, tx, ty, allx, ally, graph = (
        load_part(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph")
    )
    test_index = [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    if name == "citeseer":
        # citeseer has isolated test nodes missing from tx/ty; pad with zeros
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    features = sp.vstack((allx, tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack((ally, ty))
    onehot[test_index, :] = onehot[test_sorted, :]
    n = features.shape[0]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)

    splits = np.array(["none"] * n, dtype=object)
    splits[np.arange(len(y))] = "train"
    splits[np.arange(len(y), len(y) + 500)] = "val"
    splits[test_index] = "test"
    for v in np.where((labels < 0) & (splits != "none"))[0]:
        splits[v] = "none"

    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.tsv", "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u}\t{v}\n")
    dense = features.toarray()
    with open(out / "features.txt", "w") as f:
        for row in dense:
            f.write(" ".join("1" if x == 1 else f"{x:g}" for x in row) + "\n")
    (out / "labels.txt").write_text("".join(f"{int(l)}\n" for l in labels))
    (out / "splits.txt").write_text("".join(f"{s}\n" for s in splits))

    counts = {s: int((splits == s).sum()) for s in ("train", "val", "test")}
    print(
        f"{name}: nodes={n} edges={len(edges)} features={dense.shape[1]} "
        f"classes={int(labels.max()) + 1} {counts} -> {out}",
        file=sys.stderr,
    )


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--raw", type=Path, required=True, help="directory holding the ind.<name>.* files")
    p.add_argument("--name", default="cora")
    p.add_argument("--out", type=Path, required=True)
    args = p.parse_args()
    convert(args.raw, args.name, args.out)


if __name__ == "__main__":
    main()
