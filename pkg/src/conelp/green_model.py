"""Three-zone gradient bound for the Green kernel near a conical point.

Zones compare |xi| with |x|:  E1 = {2|x| < |xi|},  E3 = {2|xi| < |x|},
E2 = the closed band |x|/2 <= |xi| <= 2|x|.  In each zone the bound is
homogeneous of degree 1-n in (x, xi, R_x) jointly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularityError

E1, E2, E3 = "E1", "E2", "E3"


@dataclass(frozen=True)
class KernelBoundModel:
    n: int = 3
    alpha: float = 1.0
    c: float = 1.0
    delta: float = 1.0
    # exponent offsets, only touched by negative controls
    e1_shift: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise DomainError("n must be an integer >= 3")
        if not (0 < self.alpha <= 1):
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.c > 0 or not self.delta > 0:
            raise DomainError("c and delta must be positive")

    @classmethod
    def from_strip(cls, strip, n, c=1.0, delta=1.0):
        return cls(n=n, alpha=strip.alpha, c=c, delta=delta)

    def tampered(self):
        """Copy whose E1 exponent is alpha+n instead of alpha+n-1."""
        return KernelBoundModel(self.n, self.alpha, self.c, self.delta, e1_shift=1.0)


def classify_zone(x_norm, xi_norm):
    if not (x_norm > 0 and xi_norm > 0):
        raise DomainError("norms must be positive")
    if 2 * x_norm < xi_norm:
        return E1
    if 2 * xi_norm < x_norm:
        return E3
    return E2


def classify_zones(x_norm, xi_norm):
    """Vectorized classify_zone: integer codes 1, 2, 3."""
    x = np.asarray(x_norm, float)
    xi = np.asarray(xi_norm, float)
    out = np.full(np.broadcast(x, xi).shape, 2, dtype=np.int8)
    out[np.broadcast_to(2 * x < xi, out.shape)] = 1
    out[np.broadcast_to(2 * xi < x, out.shape)] = 3
    return out


def kernel_gradient_bound(x, xi, R_x, model: KernelBoundModel, raw=False):
    """Zone-wise bound on |grad_x g(x, xi)|.

    E2 uses the normal-derivative form c R_x/|x-xi|^n unless `raw`, which
    gives c |x-xi|^{1-n}.
    """
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    d = float(np.linalg.norm(x - xi))
    if d == 0:
        raise SingularityError("x coincides with xi")
    rx, rxi = float(np.linalg.norm(x)), float(np.linalg.norm(xi))
    n, a, c = model.n, model.alpha, model.c
    z = classify_zone(rx, rxi)
    if z == E1:
        return c * rx**a * rxi ** (-(a + n - 1 + model.e1_shift))
    if z == E3:
        return c * rxi ** (a - 1) * rx ** (-(a + n - 2))
    if raw:
        return c * d ** (1 - n)
    return c * R_x / d**n


def homogeneity_identity_check(x, xi, s, model: KernelBoundModel, R_x=None, rtol=1e-12):
    """bound(s x, s xi, s R) == s^{1-n} bound(x, xi, R), in every zone."""
    if not s > 0:
        raise DomainError("scale must be positive")
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    if R_x is None:
        R_x = 0.5 * float(np.linalg.norm(x))
    ok = True
    for raw in (False, True):
        b0 = kernel_gradient_bound(x, xi, R_x, model, raw)
        b1 = kernel_gradient_bound(s * x, s * xi, s * R_x, model, raw)
        ok &= math.isclose(b1, s ** (1 - model.n) * b0, rel_tol=rtol, abs_tol=0.0)
    return bool(ok)


def adjacent_zone_ratio_bounds(n, alpha):
    """Range of E1/E2 and E3/E2 bound ratios on the zone interfaces.

    At |xi| = 2|x| one has |x| <= |x-xi| <= 3|x|; at |xi| = |x|/2 one has
    |x|/2 <= |x-xi| <= 3|x|/2. E2 is taken in its raw form.
    """
    a = alpha
    e12 = (2.0 ** (-(a + n - 1)), 2.0 ** (-(a + n - 1)) * 3.0 ** (n - 1))
    e32 = (2.0 ** (1 - a) * 2.0 ** (1 - n), 2.0 ** (1 - a) * 1.5 ** (n - 1))
    return {"E1/E2": e12, "E3/E2": e32}
