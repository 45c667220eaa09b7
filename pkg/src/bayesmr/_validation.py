"""Input validation helpers."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_rows(rows, allow_nan: bool = True) -> np.ndarray:
    """Validate an ``(N, J+2)`` table of genotypes, exposure and outcome."""
    data = check_array(rows, dtype=np.float64, ensure_all_finite="allow-nan" if allow_nan else True,
                       ensure_min_samples=1, ensure_min_features=3, copy=True)
    if np.isinf(data).any():
        raise ValueError("input contains infinite values")
    return data
