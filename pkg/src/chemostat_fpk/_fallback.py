"""Pure numpy implementation of the truncated Euler-Maruyama kernel.

Mirrors ``_kernels.simulate_paths`` operation by operation; paths are
vectorised instead of looped.
"""

from __future__ import annotations

import numpy as np

from ._rng import normal_pair

MONOD, HALDANE = 0, 1
SQRT_NOISE, LINEAR_NOISE = 0, 1


def simulate_paths(S, B, failed, keys, out_S, out_B, snap_steps, n_steps, dt,
                   growth_kind, g0, g1, g2, noise_kind, k, D, s_in, c1, c2):
    """Advance ``S``/``B`` in place for ``n_steps`` steps, storing snapshots.

    ``snap_steps`` is a sorted array of step indices; row ``j`` of ``out_S``
    receives the state after ``snap_steps[j]`` steps.
    """
    sqdt = np.sqrt(dt)
    j = 0
    n_snap = len(snap_steps)
    while j < n_snap and snap_steps[j] == 0:
        out_S[j] = S
        out_B[j] = B
        j += 1
    for n in range(n_steps):
        if j >= n_snap:
            break
        w1, w2 = normal_pair(keys, n + 1)
        with np.errstate(all="ignore"):
            if growth_kind == MONOD:
                mu = g0 * S / (g1 + S)
            else:
                mu = g0 * S / (g1 + S + S * S / g2)
            if noise_kind == SQRT_NOISE:
                sig1 = c1 * np.sqrt(S)
                sig2 = c2 * np.sqrt(B)
            else:
                sig1 = c1 * S
                sig2 = c2 * B
            f1 = -k * mu * B + D * (s_in - S)
            f2 = (mu - D) * B
            Sn = S + f1 * dt + sig1 * sqdt * w1
            Bn = B + f2 * dt + sig2 * sqdt * w2
        bad = ~(np.isfinite(Sn) & np.isfinite(Bn)) & (failed == 0)
        if bad.any():
            failed[bad] = 1
        dead = failed != 0
        S[:] = np.where(dead, np.nan, np.maximum(Sn, 0.0))
        B[:] = np.where(dead, np.nan, np.maximum(Bn, 0.0))
        while j < n_snap and snap_steps[j] == n + 1:
            out_S[j] = S
            out_B[j] = B
            j += 1
