"""Materialise the desk-scale MNIST pool as IDX files.

The official MNIST archives are not always reachable. ``mlxtend`` ships 5,000
genuine MNIST training digits (500 per class) as a CSV; this module rewrites
them in IDX format so the regular loader can read them.
"""
import gzip
import importlib.util
import os

import numpy as np

from syncpretrain.dataset import LabeledDataset, write_idx

IMAGES = "desk-images-idx3-ubyte"
LABELS = "desk-labels-idx1-ubyte"


def mlxtend_csv():
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError("mlxtend is not installed (pip install mlxtend)")
    path = os.path.join(spec.submodule_search_locations[0], "data", "data", "mnist_5k.csv.gz")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} missing from the mlxtend install")
    return path


def write_desk_idx(out_dir):
    """Write the IDX pair into ``out_dir`` (if not already there); return the two paths."""
    os.makedirs(out_dir, exist_ok=True)
    images = os.path.join(out_dir, IMAGES)
    labels = os.path.join(out_dir, LABELS)
    if os.path.exists(images) and os.path.exists(labels):
        return images, labels
    with gzip.open(mlxtend_csv(), "rt") as f:
        table = np.loadtxt(f, delimiter=",")
    data = LabeledDataset(table[:, :-1] / 255.0, table[:, -1].astype(np.int64))
    write_idx(data, images + ".tmp", labels + ".tmp")
    os.replace(images + ".tmp", images)
    os.replace(labels + ".tmp", labels)
    return images, labels
