"""Numba kernels for the branched one-pole envelope smoother.

The smoother is the only console stage whose recursion has a
data-dependent coefficient (attack vs release), so both its forward
scan and its reverse-mode adjoint are hand-written here.  The branch
decisions are returned so the gradient pass can keep them frozen and
so probes can detect finite-difference runs that crossed a switching
point.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def smooth_branched_forward(u, a_att, a_rel, s0):
    """y[n] = a*y[n-1] + (1-a)*u[n], a = a_att when u rises above y[n-1].

    Returns (y, branch) where branch[n] == 1 on attack samples.
    """
    n = u.shape[0]
    s = np.empty(n, dtype=np.float64)
    branch = np.empty(n, dtype=np.uint8)
    prev = s0
    for i in range(n):
        if u[i] > prev:
            a = a_att
            branch[i] = 1
        else:
            a = a_rel
            branch[i] = 0
        prev = a * prev + (1.0 - a) * u[i]
        s[i] = prev
    return s, branch


@njit(cache=True)
def smooth_branched_backward(grad_s, u, s, branch, a_att, a_rel, s0):
    """Adjoint of the smoothing scan with branches frozen at forward values.

    lam[i] = grad_s[i] + a[i+1]*lam[i+1] accumulates total sensitivity of
    the loss to s[i]; from it the input and coefficient gradients follow.
    """
    n = u.shape[0]
    grad_u = np.empty(n, dtype=np.float64)
    g_att = 0.0
    g_rel = 0.0
    lam = 0.0
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            a_next = a_att if branch[i + 1] == 1 else a_rel
        else:
            a_next = 0.0
        lam = grad_s[i] + a_next * lam
        a_i = a_att if branch[i] == 1 else a_rel
        prev = s[i - 1] if i > 0 else s0
        grad_u[i] = (1.0 - a_i) * lam
        da = lam * (prev - u[i])
        if branch[i] == 1:
            g_att += da
        else:
            g_rel += da
    return grad_u, g_att, g_rel
