import math

import numpy as np

# (drow, dcol) per direction index, clockwise from north; row grows southward.
DIRS = np.array(
    [[-1, 0], [-1, 1], [0, 1], [1, 1], [1, 0], [1, -1], [0, -1], [-1, -1]],
    dtype=np.int64,
)

# Three-shear factors for a 45 degree clockwise turn in (x=east, y=north).
SHEAR_A = math.tan(math.radians(22.5))
SHEAR_B = -math.sin(math.radians(45.0))
