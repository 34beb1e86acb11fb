"""Independent reference: permutation enumeration with its own plan simulator.

Deliberately shares no code with the package beyond reading instance fields.
"""
import itertools
import math


def _simulate(inst, routes, per_route=False):
    xy = [(n.x, n.y) for n in inst.nodes]
    brk = {}
    for i, j, t in inst.breaks:
        brk[(i, j)] = brk[(j, i)] = t
    t = 0.0
    length = 0.0
    for r in routes:
        if per_route:
            t = 0.0
        load = sum(inst.nodes[c].demand for c in r)
        if load > inst.capacity:
            return None
        prev = 0
        for c in list(r) + [0]:
            d = math.dist(xy[prev], xy[c])
            arrive = t + d
            if arrive >= brk.get((prev, c), math.inf):
                return None
            length += d
            if c:
                lo, hi = inst.nodes[c].window
                if arrive > hi:
                    return None
                arrive = max(arrive, lo)
            t = arrive
            prev = c
    return length


def brute_force(inst, distance_w=4.5, dispatch_w=65.0, per_route=False):
    """Cheapest feasible plan over every customer order and every way of cutting
    it into at most ``max_routes`` consecutive routes."""
    custs = list(range(1, len(inst.nodes)))
    n = len(custs)
    best = None
    for perm in itertools.permutations(custs):
        for k in range(1, min(inst.max_routes, n) + 1):
            for cuts in itertools.combinations(range(1, n), k - 1):
                bounds = (0, *cuts, n)
                routes = [perm[bounds[m]:bounds[m + 1]] for m in range(k)]
                length = _simulate(inst, routes, per_route)
                if length is None:
                    continue
                cost = distance_w * length + dispatch_w * k
                if best is None or cost < best[0] - 1e-9:
                    best = (cost, routes)
    return best
