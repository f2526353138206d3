from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptySet


def chamfer(pc1, pc2) -> float:
    """Symmetric chamfer distance: mean squared nearest distance, both ways, summed."""
    a = np.asarray(pc1, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(pc2, dtype=np.float64).reshape(-1, 3)
    if not len(a) or not len(b):
        raise EmptySet("chamfer needs two non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.mean(d_ab**2) + np.mean(d_ba**2))
