import itertools
import warnings

import numpy as np
import pytest

from blockmodel_lab.core import Labeling


@pytest.fixture(autouse=True)
def _silence_regime_warnings():
    # many fixtures intentionally run below the K k^2 regime or above d = n/10
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


def brute_force_error_k(hatZ: Labeling, trueZ: Labeling) -> float:
    """Independent oracle: enumerate all k! community bijections."""
    n, k = hatZ.n, hatZ.k
    best = n + 1
    for perm in itertools.permutations(range(k)):
        mism = int(np.count_nonzero(np.array(perm)[hatZ.assign] != trueZ.assign))
        best = min(best, mism)
    return best / n


def naive_majority_oracle(adj_dense: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One round of plain majority voting, reimplemented independently."""
    out = x.copy()
    for u in range(len(x)):
        vote = 0
        for v in range(len(x)):
            if adj_dense[u, v]:
                vote += x[v]
        if vote > 0:
            out[u] = 1
        elif vote < 0:
            out[u] = -1
    return out


def random_labeling(rng, n, k) -> Labeling:
    return Labeling(assign=rng.integers(0, k, size=n), k=k)
