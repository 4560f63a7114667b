"""Shared fixtures.

The digit corpus is written once per session as an IDX directory: 8x8
grayscale digit images rescaled to the 0-255 byte range, every fifth sample
held out for evaluation (1438 train / 359 eval).
"""
import numpy as np
import pytest


@pytest.fixture(scope="session")
def digits_dir(tmp_path_factory):
    from sklearn.datasets import load_digits

    from osal.datapool import write_idx_images, write_idx_labels

    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    eval_mask = np.arange(len(labels)) % 5 == 4
    path = tmp_path_factory.mktemp("digits-idx")
    write_idx_images(path / "train-images-idx3-ubyte", images[~eval_mask])
    write_idx_labels(path / "train-labels-idx1-ubyte", labels[~eval_mask])
    write_idx_images(path / "t10k-images-idx3-ubyte", images[eval_mask])
    write_idx_labels(path / "t10k-labels-idx1-ubyte", labels[eval_mask])
    return path
