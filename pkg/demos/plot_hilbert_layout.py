"""
Laying bytes out along a Hilbert curve
======================================

Consecutive bytes land in neighbouring cells, so runs of similar bytes
show up as compact blobs rather than stripes.
"""

import numpy as np
from trafficvis.hilbert import curve_coords, d2xy, layout, xy2d

# An order-1 curve visits a 2x2 grid in a U shape.
print([d2xy(1, d) for d in range(4)])

# xy2d inverts d2xy.
print(xy2d(3, *d2xy(3, 37)))

# The whole walk for one order is cached as two read-only arrays.
xs, ys = curve_coords(2)
grid = np.full((4, 4), -1)
grid[ys, xs] = np.arange(16)
print(grid)

# Lay out 10 bytes on a 4x4 grid. Cells past the data are padding (class 5).
img = layout(b"GET /\x00\x00\x00\xff\x01", order=2)
print(img.cells)
print("class counts:", img.class_counts())
