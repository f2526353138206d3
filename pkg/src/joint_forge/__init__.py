"""Joint-axis prediction and pose search between pairs of CAD parts.

Parts are boundary-representation graphs whose faces and edges carry joint
axes. A Siamese graph-attention network scores every cross-part entity pair;
a Monte-Carlo overlap and contact cost, minimized by Nelder-Mead, then places
one part against the other along the chosen axes.
"""

import os as _os

# one threading layer avoids the TBB version probe on import
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
