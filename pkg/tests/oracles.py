"""Independent reference implementations used to freeze expected values."""

import math


def brute_force_transition(state, action, grid, alpha):
    """Enumerate every cell and normalise by hand. Returns ({loc: prob}, fallback)."""
    current = state.history[-1].loc
    counts = {}
    for p in state.history:
        counts[p.loc] = counts.get(p.loc, 0) + 1
    if action == 0:
        return {current: 1.0}, False
    if action == 1:
        return {state.home: 1.0}, False
    if action == 2:
        eligible = {l: c for l, c in counts.items() if l not in (state.home, current)}
        if not eligible:
            return {current: 1.0}, True
        total = sum(eligible.values())
        return {l: c / total for l, c in eligible.items()}, False

    def xy(loc):
        return (loc % grid.width) * grid.cell_size, (loc // grid.width) * grid.cell_size

    cx, cy = xy(current)
    unvisited = [l for l in range(grid.width * grid.height) if l not in counts and l != state.home]
    if not unvisited:
        return {current: 1.0}, True
    ranked = sorted(unvisited, key=lambda l: (math.hypot(xy(l)[0] - cx, xy(l)[1] - cy), l))
    weights = {l: (r + 1) ** -alpha for r, l in enumerate(ranked)}
    total = sum(weights.values())
    return {l: w / total for l, w in weights.items()}, False


def jsd_nats(p, q):
    p = [x / sum(p) for x in p]
    q = [x / sum(q) for x in q]
    m = [(a + b) / 2 for a, b in zip(p, q)]

    def kl(a, b):
        return sum(x * math.log(x / y) for x, y in zip(a, b) if x > 0)

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)
