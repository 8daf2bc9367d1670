"""Show the two parameter-saving devices: interpolated forecast coefficients
and pooled inputs, plus the geometric parameter-count ledger they produce.

A block with expressivity ratio r emits only ceil(r*H) forecast knots; linear
interpolation stretches them over the full horizon, so forecasts are piecewise
linear with at most ceil(r*H)-1 slope changes. With the exponential schedule
r_l = r^l the knot total across B blocks is H*r*(1-r^B)/(1-r) instead of H*B.
"""

import numpy as np

from dmidas.blocks import knot_count
from dmidas.engine import interp_upsample, pool1d
from dmidas.model import expressivity_schedule

print("== upsampling knots to a horizon ==")
theta = np.array([0.0, 6.0])
print(f"2 knots {theta} over horizon 4 -> {interp_upsample(theta, 4)}")
theta = np.array([1.0, -1.0, 2.0])
print(f"3 knots {theta} over horizon 9 -> {np.round(interp_upsample(theta, 9), 3)}")
print("(the final segment's slope extends past the last knot)")

print()
print("== pooling coarsens the input window the same way ==")
signal = np.arange(12, dtype=float)
for mode in ("avg", "max", "stride"):
    print(f"  kernel 3 stride 3 {mode:<7}-> {pool1d(signal, 3, 3, mode)}")

print()
print("== exponential expressivity schedule, horizon 96 ==")
horizon, base, blocks = 96, 0.5, 3
ratios = expressivity_schedule(base, blocks)
knots = [knot_count(r, horizon) for r in ratios]
print(f"ratios r^l:        {ratios}")
print(f"knots ceil(r_l*H): {knots}  (total {sum(knots)})")
geometric = horizon * base * (1 - base ** blocks) / (1 - base)
print(f"closed form H*r*(1-r^B)/(1-r) = {geometric:g}")
print(f"full-resolution blocks would need H*B = {horizon * blocks}")
reduction = 100 * (1 - sum(knots) / (horizon * blocks))
print(f"forecast-coefficient reduction: {reduction:.1f}%")

print()
print("== the same table across base ratios ==")
print(f"{'r':>6} {'knot total':>12} {'vs H*B':>10}")
for r in (0.25, 0.5, 0.75, 1.0):
    total = sum(knot_count(x, horizon) for x in expressivity_schedule(r, blocks))
    print(f"{r:>6} {total:>12} {100 * total / (horizon * blocks):>9.1f}%")
