"""Compiled inner loops.  Each consumes exactly one uniform per step."""

import numba
import numpy as np

OK = 0
NEED_WIDEN = 1


@numba.njit(cache=True)
def walk_chunk(omega, x_min, gen, x, t, t_end, counts, traj, acc):
    """Advance the reflected walk from time ``t`` (position ``x``) to ``t_end``.

    At each ``t >= 1`` the local time of ``X_t`` is incremented and the
    step functional accumulators are updated with the increment
    ``X_{t+1} - X_t``:

    acc[0]  number of up-steps
    acc[1]  sum of the conditional up-probabilities p(X_t)
    acc[2]  running maximum of the position

    ``traj`` (length 0 disables storage) receives ``X_{t+1}`` at index t+1.
    Returns (x, t, status); status NEED_WIDEN means omega(x) is not in the
    window (or counts is too short) and the caller must widen and resume.
    """
    x_max = x_min + omega.size - 1
    store = traj.size > 0
    while t < t_end:
        if x > x_max or x >= counts.size:
            return x, t, NEED_WIDEN
        u = gen.random()
        if x == 0:
            p = 1.0
        else:
            p = omega[x - x_min]
        if t >= 1:
            counts[x] += 1
            acc[1] += p
        if u < p or x == 0:
            x += 1
            if t >= 1:
                acc[0] += 1.0
        else:
            x -= 1
        t += 1
        if x > acc[2]:
            acc[2] = x
        if store:
            traj[t] = x
    return x, t, OK


@numba.njit(cache=True)
def excursion_visits(omega, c, start, target, gen, n_exc, max_steps):
    """Visits to ``target`` during excursions from ``start`` back to ``start``.

    The chain lives on {0..c}, reflected at both ends; ``omega`` holds the
    site probabilities of 0..c.  Returns per-excursion visit counts and
    lengths; a length of -1 marks an excursion censored at ``max_steps``.
    """
    visits = np.zeros(n_exc, dtype=np.int64)
    lengths = np.zeros(n_exc, dtype=np.int64)
    for i in range(n_exc):
        x = start
        steps = 0
        v = 0
        while True:
            u = gen.random()
            if x == 0:
                x = 1
            elif x == c:
                x = c - 1
            elif u < omega[x]:
                x += 1
            else:
                x -= 1
            steps += 1
            if x == start:
                break
            if x == target:
                v += 1
            if steps >= max_steps:
                steps = -1
                break
        visits[i] = v
        lengths[i] = steps
    return visits, lengths


@numba.njit(cache=True)
def conditioned_levels(jumps, probs, h_table, slope, start, n_steps, gen):
    """Levels of a lattice walk h-transformed to stay >= 0.

    ``h_table[u]`` is the harmonic function at level u; beyond the table it
    is extended linearly with ``slope``.  Levels below 0 have h = 0.  The
    start level may be -1 (outside the domain); the first step is then the
    normalized conditioned entrance step.
    """
    out = np.empty(n_steps, dtype=np.int64)
    k = jumps.size
    w = np.empty(k)
    last = h_table.size - 1
    u = start
    for s in range(n_steps):
        total = 0.0
        for j in range(k):
            v = u + jumps[j]
            if v < 0:
                hv = 0.0
            elif v <= last:
                hv = h_table[v]
            else:
                hv = h_table[last] + slope * (v - last)
            w[j] = probs[j] * hv
            total += w[j]
        r = gen.random() * total
        acc = 0.0
        pick = k - 1
        for j in range(k):
            acc += w[j]
            if r < acc and w[j] > 0.0:
                pick = j
                break
        while w[pick] == 0.0:
            pick -= 1
        u = u + jumps[pick]
        out[s] = u
    return out
