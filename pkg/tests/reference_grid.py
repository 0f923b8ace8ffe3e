"""Reference Vasicek error grid at n in {1e5, ..., 1e6}, keyed by (k, l).

Blank cells are absent; the key set is the admissible (l, k) region.
"""

REFERENCE_ERRORS = {
    (1, 18): 4.79986, (1, 19): 4.39994,
    (2, 16): 0.55168, (2, 17): 0.59204, (2, 18): 0.64261, (2, 19): 0.63193,
    (3, 14): 0.13564, (3, 15): 0.19179, (3, 16): 0.17408, (3, 17): 0.43068, (3, 18): 0.45217, (3, 19): 0.82545,
    (4, 13): 0.065, (4, 14): 0.16896, (4, 15): 0.0839, (4, 16): 0.21815, (4, 17): 0.36891, (4, 18): 0.46106,
    (4, 19): 0.86921,
    (5, 13): 0.11211, (5, 14): 0.14296, (5, 15): 0.24044, (5, 16): 0.29471, (5, 17): 0.30672, (5, 18): 0.36704,
    (5, 19): 0.72157,
    (6, 13): 0.07487, (6, 14): 0.10097, (6, 15): 0.21671, (6, 16): 0.19126, (6, 17): 0.2234, (6, 18): 0.44338,
    (6, 19): 0.57126,
    (7, 14): 0.10343, (7, 15): 0.16694, (7, 16): 0.20898, (7, 17): 0.19727, (7, 18): 0.48259, (7, 19): 0.55946,
    (8, 14): 0.1056, (8, 15): 0.22114, (8, 16): 0.24371, (8, 17): 0.25512, (8, 18): 0.63417, (8, 19): 0.7991,
    (9, 15): 0.11754, (9, 16): 0.19612, (9, 17): 0.29589, (9, 18): 0.32613, (9, 19): 0.51654,
    (10, 15): 0.14666, (10, 16): 0.17857, (10, 17): 0.24282, (10, 18): 0.18316, (10, 19): 0.56393,
    (11, 16): 0.31039, (11, 17): 0.22011, (11, 18): 0.63986, (11, 19): 0.71099,
    (12, 16): 0.23643, (12, 17): 0.22018, (12, 18): 0.31369, (12, 19): 0.51456,
    (13, 17): 0.40641, (13, 18): 0.50407, (13, 19): 0.43586,
    (14, 17): 0.27931, (14, 18): 0.50327, (14, 19): 0.29167,
    (15, 18): 0.43433, (15, 19): 0.38009,
    (16, 18): 0.52718, (16, 19): 0.41497,
    (17, 19): 0.65534,
    (18, 19): 0.52093,
}

# same grid at n in {1e6, ..., 1e7}, only the cell used in acceptance checks
REFERENCE_ERRORS_LARGE_N = {(4, 13): 0.05567}
