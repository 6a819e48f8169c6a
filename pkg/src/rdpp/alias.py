"""Walker/Vose alias table: O(n) build, O(1) per draw."""
from __future__ import annotations

import numpy as np


class AliasTable:
    """Sampling structure for a fixed discrete distribution over ``range(n)``.

    Built with Vose's stable variant, so bucket probabilities never drift
    outside ``[0, 1]``. ``probabilities()`` recovers the represented
    distribution exactly (up to float rounding) from the table itself.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d array")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must have positive total")
        n = w.size
        scaled = (w / total) * n
        prob = np.ones(n)
        alias = np.arange(n, dtype=np.int64)
        small = list(np.flatnonzero(scaled < 1.0))
        large = list(np.flatnonzero(scaled >= 1.0))
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        self.n = n
        self.prob = prob
        self.alias = alias
        self.total = float(total)
        self.prob.setflags(write=False)
        self.alias.setflags(write=False)

    def sample(self, rng, size=None):
        """Draw indices; ``size=None`` returns a single int."""
        if size is None:
            u = rng.random() * self.n
            j = int(u)
            return j if (u - j) < self.prob[j] else int(self.alias[j])
        u = rng.random(size) * self.n
        j = u.astype(np.int64)
        np.minimum(j, self.n - 1, out=j)
        keep = (u - j) < self.prob[j]
        return np.where(keep, j, self.alias[j])

    def probabilities(self):
        p = self.prob.copy()
        np.add.at(p, self.alias, 1.0 - self.prob)
        return p / self.n
