"""Compiled Monte Carlo kernels.

Every kernel reseeds numba's thread-local generator from an explicit 32-bit
seed on entry, so the output of a call depends only on its arguments and not
on which thread runs it.

The walks use exact block skipping: when a walk sits ``g >= 2`` levels below
the value of interest, the next ``g - 1`` steps cannot reach it, so only
their net displacement matters and is drawn as one binomial.
"""

import numpy as np
from numba import njit

# Below this gap single steps are cheaper than a binomial draw.
_MIN_BLOCK = 8


@njit(cache=True, nogil=True)
def _walk_argmax(n, p_up, origin, direction):
    """Argmax statistics of a +-1 walk of ``n`` steps started at level 0.

    Positions are reported as ``origin + direction * step``. Returns
    ``(max level, sum of argmax positions, number of argmax positions)``.
    """
    level = 0
    best = 0
    pos_sum = origin
    count = 1
    pos = 0
    while pos < n:
        gap = best - level
        if gap > _MIN_BLOCK:
            block = gap - 1
            if block > n - pos:
                block = n - pos
            ups = np.random.binomial(block, p_up)
            level += 2 * ups - block
            pos += block
            continue
        pos += 1
        if np.random.random() < p_up:
            level += 1
        else:
            level -= 1
        if level > best:
            best = level
            pos_sum = origin + direction * pos
            count = 1
        elif level == best:
            pos_sum += origin + direction * pos
            count += 1
    return best, pos_sum, count


@njit(cache=True, nogil=True)
def alp1_trials(seed, beta, scale, m, p_read_zero, p_read_one_tail, xs, ys, sums, counts):
    """Simulate ALP1 estimation of one entry per trial.

    Each trial draws ``x ~ U[0, beta]``, rounds ``y = RRound(x * scale)``
    capped at ``m``, and walks the read bits: the ``y`` leading bits read 0
    with probability ``p_read_zero`` and the ``m - y`` trailing bits read 1
    with probability ``p_read_one_tail``. The argmax set of the prefix walk is
    returned as (sum, count) so the caller can form the exact average.
    """
    np.random.seed(seed)
    for t in range(xs.shape[0]):
        x = np.random.random() * beta
        r = x * scale
        fl = np.floor(r)
        y = np.int64(fl)
        if np.random.random() < r - fl:
            y += 1
        if y > m:
            y = m
        # Walking left from y, a step goes up when the bit reads 0.
        bl, sl, cl = _walk_argmax(y, p_read_zero, y, -1)
        br, sr, cr = _walk_argmax(m - y, p_read_one_tail, y, 1)
        xs[t] = x
        ys[t] = y
        if bl > br:
            sums[t] = sl
            counts[t] = cl
        elif br > bl:
            sums[t] = sr
            counts[t] = cr
        else:
            # Position y is counted by both sides.
            sums[t] = sl + sr - y
            counts[t] = cl + cr - 1


@njit(cache=True, nogil=True)
def last_nonnegative_steps(seed, p_up, length, out):
    """Largest ``n <= length`` with ``S_n >= 0`` for independent walks ``S``."""
    np.random.seed(seed)
    for w in range(out.shape[0]):
        level = 0
        last = 0
        pos = 0
        while pos < length:
            if level < -_MIN_BLOCK:
                block = -level - 1
                if block > length - pos:
                    block = length - pos
                ups = np.random.binomial(block, p_up)
                level += 2 * ups - block
                pos += block
                continue
            pos += 1
            if np.random.random() < p_up:
                level += 1
            else:
                level -= 1
            if level >= 0:
                last = pos
        out[w] = last
