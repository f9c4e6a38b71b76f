"""Counter-based Gaussian draws for reproducible parallel ensembles.

Every (seed, trajectory, step) triple owns a disjoint Philox counter
stream, so increments are bit-identical no matter how the ensemble is
partitioned, ordered, or resumed from a checkpoint.  Within a stream the
draw index is the mode/degree-of-freedom index, fixed by the basis
ordering.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox


def normals(seed: int, trajectory: int, step: int, count: int) -> np.ndarray:
    """Standard normal draws for one trajectory at one time step."""
    bg = Philox(key=np.uint64(seed), counter=[0, 0, int(step), int(trajectory)])
    return Generator(bg).standard_normal(count)


def ensemble_normals(seed: int, trajectories: np.ndarray, step: int,
                     count: int) -> np.ndarray:
    """Stacked draws, one independent stream per trajectory id.

    Returns shape (len(trajectories), count).  Rows depend only on
    (seed, trajectory id, step), never on the batch composition.
    """
    out = np.empty((len(trajectories), count))
    for i, tr in enumerate(trajectories):
        out[i] = normals(seed, int(tr), step, count)
    return out
