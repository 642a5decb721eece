"""Published 10-phase rehearsal tables (ten classes per group), transcribed verbatim."""
import numpy as np

POWERLAW_10 = np.array([
    [10000, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [5000, 10000, 0, 0, 0, 0, 0, 0, 0, 0],
    [3333, 5000, 10000, 0, 0, 0, 0, 0, 0, 0],
    [2500, 3333, 5000, 10000, 0, 0, 0, 0, 0, 0],
    [2000, 2500, 3333, 5000, 10000, 0, 0, 0, 0, 0],
    [1666, 2000, 2500, 3333, 5000, 10000, 0, 0, 0, 0],
    [1428, 1666, 2000, 2500, 3333, 5000, 10000, 0, 0, 0],
    [1250, 1428, 1666, 2000, 2500, 3333, 5000, 10000, 0, 0],
    [1111, 1250, 1428, 1666, 2000, 2500, 3333, 5000, 10000, 0],
    [1000, 1111, 1250, 1428, 1666, 2000, 2500, 3333, 5000, 10000],
])

EXPONENTIAL_10 = np.array([
    [10000, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [6239, 10000, 0, 0, 0, 0, 0, 0, 0, 0],
    [3892, 6239, 10000, 0, 0, 0, 0, 0, 0, 0],
    [2428, 3892, 6239, 10000, 0, 0, 0, 0, 0, 0],
    [1515, 2428, 3892, 6239, 10000, 0, 0, 0, 0, 0],
    [945, 1515, 2428, 3892, 6239, 10000, 0, 0, 0, 0],
    [589, 945, 1515, 2428, 3892, 6239, 10000, 0, 0, 0],
    [368, 589, 945, 1515, 2428, 3892, 6239, 10000, 0, 0],
    [229, 368, 589, 945, 1515, 2428, 3892, 6239, 10000, 0],
    [143, 229, 368, 589, 945, 1515, 2428, 3892, 6239, 10000],
])

# (min_prop, b) for the power law; N = 5000 and N = 10000 share exponents
POWERLAW_CONSTANTS = [(0.10, 1.0), (0.05, 1.301), (0.02, 1.699), (0.01, 2.0)]

# (N, min_prop, a, b) for the exponential
EXPONENTIAL_CONSTANTS = [
    (5000, 0.10, 8015.987, 0.472),
    (5000, 0.05, 9587.287, 0.651),
    (5000, 0.02, 12434.041, 0.911),
    (10000, 0.10, 16031.974, 0.472),
]
EXPONENTIAL_ANOMALOUS_1PCT = (5000, 0.01, 13591.41, 1.0)


def table_rehearsal_sum(table: np.ndarray) -> int:
    """Sum of every cell strictly below the diagonal (introduction entries excluded)."""
    total = 0
    for t in range(table.shape[0]):
        for g in range(table.shape[1]):
            if g < t:
                total += int(table[t, g])
    return total
