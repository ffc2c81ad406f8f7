"""Independent parameter counts for the archetypes at default dims.

Counts are written out layer by layer from the architecture description,
without using the library. Run: python3 param_counts.py
"""
from fractions import Fraction

C = 16       # channels
IMG = 8      # image side
RGB = 3
CLASSES = 10


def conv(cin, cout, k):
    return cout * cin * k * k + cout


def dense(cin, cout):
    return cout * cin + cout


def bn(c):
    return 4 * c


def report(name, total, removed):
    pct = Fraction(100 * removed, total)
    print(f"{name}: total={total} removed={removed} percent={float(pct)!r} ({pct})")


# three conv blocks, each followed by a batch norm
fig2a = conv(RGB, C, 3) + 2 * conv(C, C, 3) + 3 * bn(C)
report("fig2a", fig2a, 3 * bn(C))

# conv, pool, three batch norms, flatten of the pooled map, dense
pooled = (IMG - 2) // 2
fig2b = conv(RGB, C, 3) + 3 * bn(C) + dense(C * pooled * pooled, C)
report("fig2b", fig2b, 2 * bn(C))

# two dense into an add, one batch norm, a dense reading the add,
# concat of two branches into a dense
fig2c = 3 * dense(C, C) + bn(C) + dense(2 * C, C)
report("fig2c", fig2c, bn(C))

# stem conv + bn, per block two 1x1 convs, a 1x1 projection and two bns,
# dense head after global pooling
blocks = 3
resnet = conv(RGB, C, 3) + bn(C) + blocks * (3 * conv(C, C, 1) + 2 * bn(C)) + dense(C, CLASSES)
report("resnet3", resnet, (1 + 2 * blocks) * bn(C))
report("resnet3-naive", resnet, (1 + blocks) * bn(C))
