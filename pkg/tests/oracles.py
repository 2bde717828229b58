"""Independent oracles used by the test suite.

Everything here is deliberately implemented without reusing the package's
synthesis/evaluation code paths (only the atom model is shared, since it is
the quantity under optimization, not the optimizer).
"""

from __future__ import annotations

import math

import numpy as np

from surfho.codebook import CodebookKey, term_weights
from surfho.surface import SurfaceGeometry, VOLTAGE_MAX, VOLTAGE_MIN


def quantized_optimum(key: CodebookKey, geometry: SurfaceGeometry, model,
                      levels: int, incident_deg: float = 0.0,
                      psi_steps: int = 4096):
    """Exact maximum of the dual-beam objective over the quantized voltage grid.

    Equivalent to exhaustively enumerating all (levels^2)^N configurations,
    reduced by the rotation identity

        max_cfg |sum_n z_n| = max_psi sum_n max_v Re(e^{-j psi} z_n(v))

    which is separable per element once the global phase psi is fixed.  A psi
    grid of S steps underestimates the true optimum by at most a factor
    cos(pi/S), i.e. < 1e-5 dB for the default S.  Returns (objective, u_m,
    u_e) of an optimal configuration.
    """
    w_a, w_b, refl = term_weights(key, geometry, incident_deg)
    axis = np.linspace(VOLTAGE_MIN, VOLTAGE_MAX, levels)
    gm, ge = np.meshgrid(axis, axis, indexing="ij")
    ct, cr = model.coefficients(gm.ravel(), ge.ravel(), geometry.carrier_ghz)
    c2 = cr if refl else ct
    # z[g, n]: per-element term as a function of the grid voltage choice g
    z = np.outer(ct, w_a) + np.outer(c2, w_b)
    best_val = -1.0
    best_choice = None
    for psi in np.linspace(0.0, 2.0 * math.pi, psi_steps, endpoint=False):
        proj = np.real(z * np.exp(-1j * psi))
        choice = np.argmax(proj, axis=0)
        val = proj[choice, np.arange(z.shape[1])].sum()
        if val > best_val:
            best_val = val
            best_choice = choice
    u_m = gm.ravel()[best_choice]
    u_e = ge.ravel()[best_choice]
    achieved = abs(z[best_choice, np.arange(z.shape[1])].sum()) ** 2
    return achieved, u_m, u_e


def brute_force_attachment(oracle, n_gnb=8, n_surf=8, n_ue=4):
    """Plain triple loop over all beam combinations; ties to lowest triple."""
    best = None
    best_val = None
    for g in range(n_gnb):
        for s in range(n_surf):
            for u in range(n_ue):
                v = oracle(g, s, u)
                if v is None:
                    continue
                if best_val is None or v > best_val:
                    best_val = v
                    best = (g, s, u)
    return best, best_val


def replay_a3(samples, h, ttt):
    """Direct replay of the A3/TTT definition over (t, m_n, m_s) samples.

    Returns the first trigger time or None.
    """
    since = None
    for t, m_n, m_s in samples:
        if m_n > m_s + h:
            if since is None:
                since = t
            if t - since >= ttt:
                return t
        else:
            since = None
    return None


def nearest_rank_percentile(values, pct):
    """Textbook nearest-rank percentile on a sorted copy."""
    data = sorted(values)
    if not data:
        raise ValueError("empty data")
    k = max(1, math.ceil(pct / 100.0 * len(data)))
    return data[k - 1]
