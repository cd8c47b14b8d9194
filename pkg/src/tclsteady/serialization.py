"""JSON encoding of complex matrices: rows of ``[re, im]`` pairs."""
from __future__ import annotations

import numpy as np


def matrix_to_json(x: np.ndarray) -> list:
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {x.shape}")
    return [[[float(z.real), float(z.imag)] for z in row] for row in x]


def matrix_from_json(doc) -> np.ndarray:
    """Decode nested rows of pairs, or a flat row-major list of pairs for a square matrix."""
    arr = np.asarray(doc, dtype=float)
    if arr.ndim == 3 and arr.shape[2] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim == 2 and arr.shape[1] == 2:
        n = int(round(np.sqrt(arr.shape[0])))
        if n * n != arr.shape[0]:
            raise ValueError(f"flat matrix with {arr.shape[0]} entries is not square")
        return (arr[:, 0] + 1j * arr[:, 1]).reshape(n, n)
    raise ValueError(f"cannot decode matrix from array of shape {arr.shape}")
