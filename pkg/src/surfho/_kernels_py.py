"""Pure-numpy implementations of the hot numeric kernels.

This module mirrors the compiled extension ``surfho._kernels`` exactly; the
dispatcher in :mod:`surfho.kernels` picks whichever is available.  Keep the
two in sync: same signatures, same math, same argument order.

Atom model: two voltage-tuned series resonators behind a thin-sheet boundary
condition.  With normalized electric sheet admittance ``ye`` and magnetic
sheet impedance ``zm``,

    P = (1 - ye) / (1 + ye)
    Q = (1 - zm) / (1 + zm)
    c_t = (P + Q) / 2,   c_r = (P - Q) / 2

which gives |c_t|^2 + |c_r|^2 = (|P|^2 + |Q|^2) / 2 <= 1 whenever both
resonators are passive (Re ye >= 0, Re zm >= 0), so passivity holds by
construction.  Each resonance frequency is affine in its bias voltage.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def atom_coefficients(u_m, u_e, f_ghz, params):
    """Complex (c_t, c_r) for bias voltages at frequency ``f_ghz``.

    ``u_m``/``u_e`` broadcast like numpy arrays; ``params`` is the 8-tuple
    (fe0, fes, ge, ae, fm0, fms, gm, am).
    """
    fe0, fes, ge, ae, fm0, fms, gm, am = params
    u_m = np.asarray(u_m, dtype=np.float64)
    u_e = np.asarray(u_e, dtype=np.float64)
    f = float(f_ghz)
    fe = fe0 + fes * u_e
    fm = fm0 + fms * u_m
    ye = 1j * ae * f / (fe * fe - f * f + 1j * ge * f)
    zm = 1j * am * f / (fm * fm - f * f + 1j * gm * f)
    p = (1.0 - ye) / (1.0 + ye)
    q = (1.0 - zm) / (1.0 + zm)
    return (p + q) / 2.0, (p - q) / 2.0


def ga_objectives(u_m, u_e, w_a, w_b, f_ghz, params, second_reflective):
    """Dual-beam objective |sum_n c_t*w_a + c_2*w_b|^2 per population row.

    ``u_m``/``u_e``: (pop, n) voltages.  ``w_a``/``w_b``: (n,) complex steering
    phasors with the power-split weights already folded in.  ``c_2`` is the
    reflective coefficient when ``second_reflective`` else the transmissive
    one (dual-transmissive mode).
    """
    ct, cr = atom_coefficients(u_m, u_e, f_ghz, params)
    c2 = cr if second_reflective else ct
    total = ct @ w_a + c2 @ w_b
    return np.abs(total) ** 2
