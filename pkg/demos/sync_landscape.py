# How the offset search spends its evaluations. Builds a wobble-like
# shift signal, delays two copies by known amounts, and compares the
# bracketing search against the exhaustive scan it replaces.
import numpy as np

from rigsplat.sync import ShiftSignal, find_offset, l1_alignment_loss

rng = np.random.default_rng(3)
fps, n, pad = 60.0, 240, 35
t = np.arange(n + 2 * pad) / fps

# Two-harmonic suspension wobble plus sensor noise, same recipe the
# synthetic pipeline uses.
base = 2.0 + 1.8 * np.sin(2 * np.pi * 0.35 * t + 1.0) + 0.6 * np.sin(2 * np.pi * 1.3 * t)
noise = 0.05 * base.std()

def stream(cam, delay):
    s = base[pad - delay : pad - delay + n] + rng.normal(0.0, noise, n)
    return ShiftSignal(cam, fps, s)

center = stream("C", 0)
for cam, injected in (("L", 21), ("R", -9)):
    side = stream(cam, injected)
    res = find_offset(center, side, bound=35)
    grid = 2 * 35 + 1
    print(f"{cam}: injected {injected:+d}  found {res.offset:+d}  "
          f"loss {res.loss:.4f}  evaluations {res.evaluations}/{grid}")

# The loss landscape around the left-camera minimum: one sharp valley,
# which is why the bracketing search can skip most of the grid.
side = stream("L", 21)
print("\noffset  loss")
for o in range(15, 28):
    loss = l1_alignment_loss(center, side, o)
    bar = "#" * int(60 * loss / l1_alignment_loss(center, side, 15))
    print(f"{o:+4d}   {loss:.4f} {bar}")
