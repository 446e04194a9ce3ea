"""Frozen point-pair pattern for steered BRIEF descriptors.

Each row is (x1, y1, x2, y2), offsets from the keypoint within radius 13 so any
rotation stays inside a 31x31 patch.  Generated once from a seeded Gaussian
(sigma = 31/5); never regenerate at runtime.
"""

PATTERN = (
    (5, -6, -6, 7), (-1, 4, 2, -4), (7, -4, 12, -1), (-2, -4, 0, 9),
    (0, 6, -4, -6), (-8, 5, 3, -11), (0, 8, -4, -11), (1, -6, -7, 0),
    (1, 7, -1, -5), (6, 7, -5, -1), (6, -8, 0, 8), (3, 7, -2, -12),
    (12, -4, -3, 3), (-6, -6, 5, 10), (-6, 2, 6, 1), (0, 5, 3, 8),
    (12, -2, -4, 7), (-12, -2, 4, 7), (2, 2, 5, 1), (3, 9, -1, 1),
    (-1, 5, 0, 0), (-6, 6, 5, 2), (1, 7, -4, 2), (-4, -2, 12, 2),
    (0, -7, -5, -2), (5, 0, -4, 8), (9, 5, -1, -1), (5, 1, -5, -11),
    (-6, -10, 3, -11), (3, 1, 2, 0), (5, 6, -3, 9), (1, 1, 6, -2),
    (1, 5, -1, 8), (4, -5, -1, -11), (-4, 7, -2, 4), (-1, 3, 6, -7),
    (-2, -1, -7, 3), (2, 3, -2, -4), (7, 4, 6, 1), (-1, -1, 2, 0),
    (5, 5, -3, -3), (8, 0, 2, 3), (0, -12, 10, 4), (-1, -10, -3, 5),
    (10, 7, -2, 3), (5, -6, 11, -5), (-6, -2, -3, 11), (10, 7, -1, 5),
    (5, 4, -2, 1), (-1, -12, 0, -3), (-3, -6, -7, 0), (0, -2, -8, -6),
    (-3, 6, 12, -2), (4, -2, 6, -1), (3, 6, -3, -3), (3, -4, 8, -9),
    (-1, -1, 6, 8), (-8, 3, -5, 1), (1, -3, -8, 10), (3, 1, -8, 2),
    (5, 1, -4, -4), (3, 0, 2, 11), (-4, -4, 8, -1), (3, 1, 2, 0),
    (-3, 3, -3, 4), (-2, 5, -3, 0), (1, -3, -10, 0), (6, 2, -8, -4),
    (-10, 2, -5, 0), (-4, 3, -1, 3), (-1, 2, -6, 1), (0, 1, 3, -3),
    (8, -1, -5, 2), (0, 13, -6, -5), (2, 3, 2, -9), (-1, 1, -2, -10),
    (-4, 6, 9, 1), (2, 2, -2, -5), (3, -4, -2, -10), (-6, 9, 3, -4),
    (2, -7, 5, 2), (8, 3, -3, 1), (-11, 6, 0, 0), (2, 0, 4, 0),
    (2, -2, 1, -12), (-6, 1, 1, -10), (1, -10, 0, -10), (-8, 5, 2, 7),
    (-2, -10, -3, -6), (4, -5, -5, -6), (-10, -2, 6, 8), (-1, 8, 0, 4),
    (2, 10, -5, 7), (7, -1, -4, -7), (10, 5, -3, -10), (-10, 6, -4, -9),
    (10, 1, 7, -4), (0, -3, 5, 1), (-2, 5, -6, 4), (-12, -5, 6, -7),
    (-6, 2, -4, -3), (9, -4, -4, -9), (2, -9, -1, -1), (-1, -6, 4, -3),
    (-5, -1, -7, 2), (-2, -4, -5, -1), (2, 3, -2, -2), (-5, 4, -7, -5),
    (12, 2, -3, 6), (-4, 5, 9, -4), (-11, -2, 0, -4), (7, -5, 8, 3),
    (-1, -4, -12, -2), (-8, -5, 6, 6), (-2, 0, -3, 3), (2, -7, 8, 1),
    (1, -7, -7, -10), (4, 0, -5, -1), (6, 2, -1, 4), (-7, -10, 0, 6),
    (-3, 2, 1, -11), (-3, 1, 4, -1), (8, 3, -3, 11), (-1, -9, -6, 4),
    (6, -1, -4, -8), (-10, -4, 4, -3), (1, 2, -7, -5), (4, -6, -1, 3),
    (5, -2, 12, -2), (2, -3, 9, -4), (-4, -1, 3, 2), (1, -3, 6, 0),
    (-3, 8, -4, -5), (-3, 9, 0, -2), (9, -7, 1, -4), (-3, 2, 8, -1),
    (-5, -4, 6, -4), (1, -1, -6, -5), (-1, 5, -1, -6), (-1, 10, 9, 0),
    (3, -4, 5, -7), (0, 0, -6, 1), (6, 9, 4, -6), (9, 7, 5, 11),
    (7, -1, -4, -5), (1, -3, -9, -6), (0, -2, -2, 5), (4, 0, 5, 4),
    (-7, -6, -4, -12), (-4, 0, -1, -1), (9, 7, -8, -5), (-8, 6, -1, 3),
    (-5, 2, 9, 2), (5, -1, -8, -5), (-8, 2, -4, 5), (2, 0, -1, 1),
    (-5, 5, -2, -6), (5, -11, -10, 0), (6, -3, 11, 3), (-4, -2, -7, -3),
    (-10, 0, -1, 1), (3, 4, 3, 2), (-1, 11, -4, 7), (-1, 6, -11, -4),
    (-7, -6, -5, -6), (3, -7, 3, 3), (-3, 5, -4, 7), (1, -2, -9, -9),
    (3, 5, -7, 2), (5, -5, 4, -8), (4, -1, -1, 1), (7, 1, -5, 0),
    (4, 3, -10, -3), (7, 1, 7, 3), (-2, -4, 7, 3), (-1, 2, -2, 1),
    (-5, 5, 4, 3), (-11, -1, -2, 2), (8, 2, 2, 1), (5, -5, 1, 6),
    (-4, -7, -5, 3), (-7, 2, -2, 2), (5, 0, 2, -1), (1, -1, -3, -5),
    (7, -8, 0, 7), (3, -3, 3, -8), (1, 0, -4, -8), (6, -4, 9, -5),
    (6, 2, -2, 3), (-8, -3, -4, -6), (-8, 5, -8, -5), (1, -7, -6, 9),
    (-3, 1, 5, 4), (-4, -1, 4, -6), (1, -7, 4, -5), (3, 2, 4, -2),
    (5, -2, -7, -6), (-5, 5, -2, 7), (-3, 2, -1, 1), (-8, -4, 9, -2),
    (1, 12, 3, 0), (7, 4, 7, -1), (4, 8, 0, 8), (-6, 4, -2, -5),
    (-3, -3, -7, 3), (-1, 12, 3, -2), (-6, -2, 3, -1), (1, 10, -5, -5),
    (1, -8, 1, 1), (-2, -9, -2, 3), (-7, 1, -1, 5), (-3, -11, -3, 5),
    (-7, 4, 2, -9), (-12, 1, 6, 4), (3, -11, -3, -1), (-3, -1, 1, 8),
    (2, 5, 0, 8), (-7, 8, -7, -9), (1, -4, 2, 4), (5, -6, 3, -12),
    (3, 4, -10, 0), (0, -9, 8, 0), (-1, 4, 4, -1), (-3, 0, -3, -3),
    (-7, -5, -4, 11), (-4, -5, 9, 8), (-7, 5, 7, -2), (-5, -2, -3, 5),
    (1, -2, -12, -3), (-2, -6, -4, 0), (-1, 10, 2, -4), (3, 4, -3, 1),
    (10, 0, -4, 0), (8, -1, 2, 1), (0, 5, 3, -10), (-3, -3, 6, 7),
    (0, 2, 10, 1), (6, -4, 3, 2), (-4, 8, 1, 1), (4, 6, 6, -10),
    (1, -2, 3, -2), (-8, -3, 4, 2), (-3, -1, 5, 4), (-1, 7, -7, -4),
    (-4, 6, 3, -3), (-5, 7, 6, -8), (2, -1, -6, -7), (12, -3, 0, -2),
    (-8, 2, -1, -4), (-3, -3, -5, -1), (4, 3, -9, 4), (0, -8, -5, 8),
    (6, 0, 8, 8), (-6, -1, -4, 2), (2, 6, -4, 2), (-11, -5, 9, 0),
)
