"""Complete elliptic integrals via the arithmetic-geometric mean.

Hand-rolled rather than imported so the quadrature modules higher up the stack
can be cross-checked against an independent route in the tests.  Everything here
is vectorized over numpy arrays; the scalar wrappers live in `averaging`.

Convention: the *parameter* m = k^2, i.e. K(m) = int_0^{pi/2} (1 - m sin^2 t)^{-1/2} dt.
"""

from __future__ import annotations

import numpy as np

__all__ = ["agm_ke"]

# AGM converges quadratically; 40 iterations is far beyond what double
# precision can use, the loop exits early once the c_n underflow the stop
# tolerance relative to a_n.
_MAX_ITER = 40
_STOP = 1e-15


def agm_ke(m):
    """K(m) and E(m) for m in [0, 1), vectorized.

    Returns a pair of arrays (or scalars, matching the input shape).
    Relative error is at the 1e-15 level except within ~1e-12 of m=1 where
    the logarithmic blow-up of K dominates.
    """
    m_arr = np.asarray(m, dtype=float)
    if np.any(m_arr < 0.0) or np.any(m_arr >= 1.0):
        raise ValueError("elliptic parameter m must lie in [0, 1)")

    a = np.ones_like(m_arr)
    b = np.sqrt(1.0 - m_arr)
    # E-series accumulator: E = K * (1 - sum_{n>=0} 2^{n-1} c_n^2), c_0 = sqrt(m)
    c_sq_sum = 0.5 * m_arr
    scale = 1.0
    for _ in range(_MAX_ITER):
        c = 0.5 * (a - b)
        a, b = 0.5 * (a + b), np.sqrt(a * b)
        scale *= 2.0
        c_sq_sum = c_sq_sum + scale * 0.5 * c * c
        if np.all(c <= _STOP * a):
            break
    k_val = np.pi / (2.0 * a)
    e_val = k_val * (1.0 - c_sq_sum)
    if np.isscalar(m) or np.ndim(m) == 0:
        return float(k_val), float(e_val)
    return k_val, e_val
