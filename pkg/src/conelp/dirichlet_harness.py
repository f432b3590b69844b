"""Maximal-function harness on a truncated circular cone in R^3.

Geometry: D = {x : |x| < delta, angle(x, e3) < theta0}. The lateral surface
is cut into dyadic radial bands [2^{-k-1} delta, 2^{-k} delta] (k < bands),
each split into `radial` equal pieces, times `azimuth` equal angular
sectors; the lid r = delta is cut into `lid_rings` polar rings times the
same sectors. Boundary data are piecewise constant on these cells, so
L^p norms are exact and the three zone potentials

    v1(y) = |y|^a     int_{|xi| > 2|y|}       |f| |xi|^{-(2+a)}
    v2(y) = R(y)      int_{|y|/2<=|xi|<=2|y|} |f| |y - xi|^{-3}
    v3(y) = |y|^{-1-a} int_{|xi| < |y|/2}     |f| |xi|^{a-1}

are sums of per-cell kernel integrals: closed form for v1, v3 and
adaptive tensor Gauss for v2.

Everything is equivariant under rotation by one azimuthal sector, so cone
samples are generated once per radial row and the v2 sums over sectors
become circular correlations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import ConvergenceError, DomainError
from .green_model import KernelBoundModel

_GX, _GW = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class HarnessConfig:
    bands0: int = 16
    band_step: int = 10
    radial: int = 4
    azimuth: int = 32
    lid_rings: int = 8
    near_factor: float = 1.5
    max_depth: int = 24

    def bands(self, level):
        return self.bands0 + level * self.band_step


@dataclass(frozen=True)
class NontangentialCone:
    aperture: float = 0.5
    height: float = 0.25
    samples: int = 64
    inner: float = 0.02  # smallest |y-x| as a fraction of |x|

    def __post_init__(self):
        if not (0 < self.aperture < 1):
            raise DomainError("aperture must lie in (0, 1)")
        if not (self.height > 0 and self.samples >= 1 and self.inner > 0):
            raise DomainError("height, samples and inner must be positive")


class ConeBoundary:
    """Dyadic cell mesh of the lateral surface plus the lid."""

    def __init__(self, theta0=math.pi / 2, delta=1.0, bands=8, radial=4, azimuth=32, lid_rings=8, n=3):
        if n != 3:
            raise DomainError("the harness geometry is three-dimensional")
        if not (0 < theta0 < math.pi):
            raise DomainError("theta0 must lie in (0, pi)")
        if bands < 1 or radial < 1 or azimuth < 1 or lid_rings < 1:
            raise DomainError("mesh counts must be positive")
        self.n, self.theta0, self.delta = n, float(theta0), float(delta)
        self.bands, self.radial, self.azimuth, self.lid_rings = bands, radial, azimuth, lid_rings
        self.s0, self.c0 = math.sin(theta0), math.cos(theta0)

        # lateral rows, outermost first; band k scaled by an exact power of 2
        j = np.arange(radial)
        lo, hi, band = [], [], []
        for k in range(bands):
            base = delta * 2.0 ** (-k - 1)
            lo.append(base * (1 + (radial - 1 - j) / radial))
            hi.append(base * (1 + (radial - j) / radial))
            band.append(np.full(radial, k))
        self.r_lo = np.concatenate(lo)
        self.r_hi = np.concatenate(hi)
        self.row_band = np.concatenate(band)
        self.r_c = 0.5 * (self.r_lo + self.r_hi)
        self.n_lat = len(self.r_lo)
        self.dphi = 2 * math.pi / azimuth
        self.phi_lo = np.arange(azimuth) * self.dphi
        self.phi_c = self.phi_lo + 0.5 * self.dphi
        tl = np.arange(lid_rings) * theta0 / lid_rings
        self.t_lo, self.t_hi = tl, tl + theta0 / lid_rings
        self.n_rows = self.n_lat + lid_rings

        lat_area = self.s0 * 0.5 * (self.r_hi**2 - self.r_lo**2) * self.dphi
        lid_area = delta**2 * (np.cos(self.t_lo) - np.cos(self.t_hi)) * self.dphi
        self.row_area = np.concatenate([lat_area, lid_area])
        self.weights = np.repeat(self.row_area[:, None], azimuth, axis=1)
        self.row_radius = np.concatenate([self.r_c, np.full(lid_rings, delta)])

    @classmethod
    def from_config(cls, theta0, cfg: HarnessConfig, level=0, delta=1.0):
        return cls(theta0, delta, cfg.bands(level), cfg.radial, cfg.azimuth, cfg.lid_rings)

    def lateral_area(self):
        """Analytic area of the full lateral surface 0 < r < delta."""
        return math.pi * self.delta**2 * self.s0

    def lateral_points(self):
        r = self.r_c[:, None]
        ph = self.phi_c[None, :]
        return np.stack([r * self.s0 * np.cos(ph), r * self.s0 * np.sin(ph), r * self.c0 + 0 * ph], axis=-1)

    def inside(self, y):
        y = np.atleast_2d(y)
        r = np.linalg.norm(y, axis=1)
        ang = np.arccos(np.clip(y[:, 2] / np.maximum(r, 1e-300), -1, 1))
        return (r > 0) & (r < self.delta) & (ang < self.theta0)

    def dist_to_boundary(self, y):
        """Distance to lateral surface or lid, by reduction to the meridian half plane."""
        y = np.atleast_2d(y)
        rho = np.hypot(y[:, 0], y[:, 1])
        z = y[:, 2]
        g = np.array([self.s0, self.c0])  # unit generator direction
        t = np.clip(rho * g[0] + z * g[1], 0.0, self.delta)
        d_lat = np.hypot(rho - t * g[0], z - t * g[1])
        r = np.hypot(rho, z)
        ang = np.arctan2(rho, z)
        rim = np.hypot(rho - self.delta * g[0], z - self.delta * g[1])
        d_lid = np.where(ang <= self.theta0, np.abs(self.delta - r), rim)
        return np.minimum(d_lat, d_lid)


@dataclass
class BoundaryData:
    values: np.ndarray  # (n_rows, azimuth)
    description: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise DomainError("boundary data must be finite")


def data_constant(bnd: ConeBoundary, value=1.0):
    return BoundaryData(np.full((bnd.n_rows, bnd.azimuth), float(value)), "constant", {"value": value})


def data_random(bnd: ConeBoundary, seed=42, index=0, base_radial=2, base_azimuth=16):
    """Seeded piecewise-constant data on a coarse grid, refined cells inherit.

    One RNG stream per (seed, index, band), so adding bands toward the
    vertex never changes the values further out.
    """
    rr = max(1, bnd.radial // base_radial)
    ra = max(1, bnd.azimuth // base_azimuth)
    nr, na = bnd.radial // rr, bnd.azimuth // ra
    vals = np.empty((bnd.n_rows, bnd.azimuth))
    for k in range(bnd.bands):
        coarse = np.random.default_rng([seed, index, k]).random((nr, na))
        vals[k * bnd.radial:(k + 1) * bnd.radial] = np.repeat(np.repeat(coarse, rr, 0), ra, 1)
    lid = np.random.default_rng([seed, index, 1 << 20]).random((1, na))
    vals[bnd.n_lat:] = np.repeat(lid, ra, 1)
    return BoundaryData(vals, "random-seeded", {"seed": seed, "index": index})


def data_band(bnd: ConeBoundary, band=0, total=1.0):
    """Constant on one dyadic band, normalized to int |f| = total."""
    vals = np.zeros((bnd.n_rows, bnd.azimuth))
    rows = bnd.row_band == band
    area = bnd.row_area[: bnd.n_lat][rows].sum() * bnd.azimuth
    vals[: bnd.n_lat][rows] = total / area
    return BoundaryData(vals, "band-localized", {"band": band, "total": total})


def singular_exponent(p, eps, n=3):
    return (n - 1) * (1 - eps) / p


def data_vertex_singular(bnd: ConeBoundary, p, eps=1e-3):
    """Cell averages of |xi|^{-beta}, beta = (n-1)(1-eps)/p."""
    beta = singular_exponent(p, eps, bnd.n)
    lo, hi = bnd.r_lo, bnd.r_hi
    e = 2.0 - beta
    num = (hi**e - lo**e) / e if abs(e) > 1e-14 else np.log(hi / lo)
    avg = num / (0.5 * (hi**2 - lo**2))
    vals = np.empty((bnd.n_rows, bnd.azimuth))
    vals[: bnd.n_lat] = avg[:, None]
    vals[bnd.n_lat:] = bnd.delta**-beta
    return BoundaryData(vals, "vertex-singular", {"p": p, "eps": eps, "beta": beta})


# ------------------------------------------------------------------ norms

def lp_norm(values, weights, p):
    v = np.abs(np.asarray(values, float)).ravel()
    w = np.asarray(weights, float).ravel()
    if math.isinf(p):
        return float(v.max()) if v.size else 0.0
    return float((w @ v**p) ** (1.0 / p))


def weak_lp_quasinorm(values, weights, p):
    """(sup_t t^p sigma(|v| > t))^{1/p} for a step function.

    On each gap between consecutive distinct values the level-set measure is
    constant, so the supremum is approached at the upper end of the gap:
    t -> v_k from below with sigma(|v| >= v_k).
    """
    if p < 1:
        raise DomainError("p must be >= 1")
    v = np.abs(np.asarray(values, float)).ravel()
    w = np.asarray(weights, float).ravel()
    if math.isinf(p):
        return float(v.max()) if v.size else 0.0
    keep = v > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        return 0.0
    order = np.argsort(-v, kind="stable")
    v, w = v[order], w[order]
    cum = np.cumsum(w)
    # measure of {|v| >= v_k} is cum at the last repeat of v_k
    last = np.r_[v[1:] != v[:-1], True]
    vals = v[last] ** p * cum[last]
    return float(vals.max() ** (1.0 / p))


# --------------------------------------------------------- kernel integrals

def _zone_closed_forms(bnd: ConeBoundary, rho, alpha):
    """Per-row integrals of |xi|^{-(2+a)} over E1 and |xi|^{a-1} over E3, one sector."""
    rho = np.asarray(rho, float)[:, None]
    lo, hi = bnd.r_lo[None, :], bnd.r_hi[None, :]
    fac = bnd.s0 * bnd.dphi
    a = alpha
    l1 = np.maximum(lo, 2 * rho)
    I1 = np.where(hi > l1, fac * (l1**-a - hi**-a) / a, 0.0)
    h3 = np.minimum(hi, 0.5 * rho)
    I3 = np.where(h3 > lo, fac * (h3 ** (a + 1) - lo ** (a + 1)) / (a + 1), 0.0)
    lid_area = bnd.row_area[bnd.n_lat:][None, :]
    I1_lid = np.where(bnd.delta > 2 * rho, lid_area * bnd.delta ** -(2 + a), 0.0)
    I3_lid = np.where(bnd.delta < 0.5 * rho, lid_area * bnd.delta ** (a - 1), 0.0)
    return np.hstack([I1, I1_lid]), np.hstack([I3, I3_lid])


def _patch_points(bnd, surf, u0, u1, v0, v1):
    """Gauss nodes (m, g*g, 3) and weights*jacobian (m, g*g) on patches."""
    g = len(_GX)
    uu = 0.5 * (u0 + u1)[:, None] + 0.5 * (u1 - u0)[:, None] * _GX[None, :]
    vv = 0.5 * (v0 + v1)[:, None] + 0.5 * (v1 - v0)[:, None] * _GX[None, :]
    U = np.repeat(uu, g, axis=1)
    V = np.tile(vv, (1, g))
    W = np.outer(_GW, _GW).ravel()[None, :] * (0.25 * (u1 - u0) * (v1 - v0))[:, None]
    lat = surf == 0
    sinu = np.where(lat[:, None], bnd.s0, np.sin(U))
    cosu = np.where(lat[:, None], bnd.c0, np.cos(U))
    rad = np.where(lat[:, None], U, bnd.delta)
    pts = np.stack([rad * sinu * np.cos(V), rad * sinu * np.sin(V), rad * cosu], axis=-1)
    jac = np.where(lat[:, None], U * bnd.s0, bnd.delta**2 * np.sin(U))
    return pts, W * jac


def _patch_center_diam(bnd, surf, u0, u1, v0, v1):
    um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
    lat = surf == 0
    sinu = np.where(lat, bnd.s0, np.sin(um))
    cosu = np.where(lat, bnd.c0, np.cos(um))
    rad = np.where(lat, um, bnd.delta)
    c = np.stack([rad * sinu * np.cos(vm), rad * sinu * np.sin(vm), rad * cosu], axis=-1)
    du = np.where(lat, u1 - u0, bnd.delta * (u1 - u0))
    arc = np.where(lat, u1 * bnd.s0, bnd.delta * np.sin(np.maximum(u0, np.minimum(u1, math.pi / 2)))) * (v1 - v0)
    return c, np.hypot(du, arc)


def e2_weights(bnd: ConeBoundary, Y, near_factor=1.5, max_depth=24, chunk=200_000):
    """Per-cell integrals of R(y)/|y-xi|^3 over the E2 part of each cell.

    Returns (rows, W) with rows an (m, Rmax) index array (padding -1) and W
    an (m, Rmax, azimuth) array. Cells closer than near_factor*diameter
    to y are split in four until they are far or max_depth is reached.
    """
    Y = np.atleast_2d(np.asarray(Y, float))
    m = len(Y)
    rho = np.linalg.norm(Y, axis=1)
    R = bnd.dist_to_boundary(Y)
    lo2, hi2 = 0.5 * rho, 2 * rho
    # participating rows per point
    lat_in = (bnd.r_hi[None, :] > lo2[:, None]) & (bnd.r_lo[None, :] < hi2[:, None])
    lid_in = (bnd.delta >= lo2) & (bnd.delta <= hi2)
    inrow = np.hstack([lat_in, np.repeat(lid_in[:, None], bnd.lid_rings, axis=1)])
    Rmax = max(1, int(inrow.sum(axis=1).max()))
    rows = np.full((m, Rmax), -1, dtype=np.int64)
    W = np.zeros((m, Rmax, bnd.azimuth))
    slot = np.full((m, bnd.n_rows), -1, dtype=np.int64)
    for i in range(m):
        idx = np.nonzero(inrow[i])[0]
        rows[i, : len(idx)] = idx
        slot[i, idx] = np.arange(len(idx))

    yi, rr = np.nonzero(inrow)
    yi = np.repeat(yi, bnd.azimuth)
    rr = np.repeat(rr, bnd.azimuth)
    kk = np.tile(np.arange(bnd.azimuth), len(yi) // bnd.azimuth)
    lat = rr < bnd.n_lat
    surf = np.where(lat, 0, 1)
    lidrow = np.where(lat, 0, rr - bnd.n_lat)
    u0 = np.where(lat, np.maximum(bnd.r_lo[np.minimum(rr, bnd.n_lat - 1)], lo2[yi]), bnd.t_lo[lidrow])
    u1 = np.where(lat, np.minimum(bnd.r_hi[np.minimum(rr, bnd.n_lat - 1)], hi2[yi]), bnd.t_hi[lidrow])
    v0 = bnd.phi_lo[kk]
    v1 = v0 + bnd.dphi
    depth = 0
    flat = W.reshape(-1)
    while len(yi):
        if depth > max_depth:
            raise ConvergenceError("E2 quadrature did not separate from the evaluation point")
        c, diam = _patch_center_diam(bnd, surf, u0, u1, v0, v1)
        dist = np.linalg.norm(c - Y[yi], axis=1)
        near = dist < near_factor * diam
        far = ~near
        fi = np.nonzero(far)[0]
        for s in range(0, len(fi), chunk):
            sel = fi[s:s + chunk]
            pts, wj = _patch_points(bnd, surf[sel], u0[sel], u1[sel], v0[sel], v1[sel])
            d = np.linalg.norm(pts - Y[yi[sel]][:, None, :], axis=-1)
            val = R[yi[sel]] * np.sum(wj / d**3, axis=1)
            target = (yi[sel] * Rmax + slot[yi[sel], rr[sel]]) * bnd.azimuth + kk[sel]
            np.add.at(flat, target, val)
        ni = np.nonzero(near)[0]
        um = 0.5 * (u0[ni] + u1[ni])
        vm = 0.5 * (v0[ni] + v1[ni])
        yi = np.tile(yi[ni], 4)
        rr = np.tile(rr[ni], 4)
        kk = np.tile(kk[ni], 4)
        surf = np.tile(surf[ni], 4)
        u0, u1, v0, v1 = (np.concatenate([u0[ni], um, u0[ni], um]), np.concatenate([um, u1[ni], um, u1[ni]]),
                          np.concatenate([v0[ni], v0[ni], vm, vm]), np.concatenate([vm, vm, v1[ni], v1[ni]]))
        depth += 1
    return rows, W


def potential_terms(y, f: BoundaryData, bnd: ConeBoundary, model: KernelBoundModel, cfg: HarnessConfig | None = None):
    """(v1, v2, v3) at interior point(s) y."""
    cfg = cfg or HarnessConfig()
    Y = np.atleast_2d(np.asarray(y, float))
    if not np.all(bnd.inside(Y)):
        raise DomainError("evaluation point must lie inside the truncated cone")
    rho = np.linalg.norm(Y, axis=1)
    F = np.abs(f.values)
    I1, I3 = _zone_closed_forms(bnd, rho, model.alpha)
    rowsum = F.sum(axis=1)
    a = model.alpha
    v1 = model.c * rho**a * (I1 @ rowsum)
    v3 = model.c * rho ** (-1 - a) * (I3 @ rowsum)
    rows, W = e2_weights(bnd, Y, cfg.near_factor, cfg.max_depth)
    Fz = np.vstack([F, np.zeros((1, bnd.azimuth))])
    v2 = model.c * np.einsum("mrk,mrk->m", W, Fz[rows])
    out = np.stack([v1, v2, v3], axis=1)
    return tuple(out[0]) if np.ndim(y) == 1 else out


# --------------------------------------------------------- cone sampling

def cone_samples(bnd: ConeBoundary, x, cone: NontangentialCone, max_tries=64):
    """Deterministic interior samples of the nontangential cone at boundary point x."""
    x = np.asarray(x, float)
    rx = np.linalg.norm(x)
    ph = math.atan2(x[1], x[0])
    e_r = x / rx
    e_ph = np.array([-math.sin(ph), math.cos(ph), 0.0])
    nrm = np.array([-bnd.c0 * math.cos(ph), -bnd.c0 * math.sin(ph), bnd.s0])  # inward
    tmin = min(cone.inner * rx, cone.height)
    need = cone.samples
    gen = qmc.Halton(d=3, scramble=False)
    gen.fast_forward(1)
    out = []
    for _ in range(max_tries):
        u = gen.random(4 * need)
        t = tmin * (cone.height / tmin) ** u[:, 0]
        cb = cone.aperture + (1 - cone.aperture) * u[:, 1]  # cos of tilt from the normal
        sb = np.sqrt(1 - cb**2)
        g = 2 * math.pi * u[:, 2]
        d = cb[:, None] * nrm + sb[:, None] * (np.cos(g)[:, None] * e_r + np.sin(g)[:, None] * e_ph)
        y = x + t[:, None] * d
        ok = bnd.inside(y)
        ok[ok] &= bnd.dist_to_boundary(y[ok]) >= cone.aperture * np.linalg.norm(y[ok] - x, axis=1)
        out.extend(y[ok])
        if len(out) >= need:
            break
    return np.array(out[:need]).reshape(-1, 3)


# -------------------------------------------------------------- maximal

@dataclass
class MaximalReport:
    v1_star: np.ndarray
    v2_star: np.ndarray
    v3_star: np.ndarray
    u_star: np.ndarray
    w: np.ndarray
    z: np.ndarray
    radius: np.ndarray  # |x| per evaluation point
    weights: np.ndarray
    empty: np.ndarray  # rows with no admissible cone sample
    f_norms: dict
    norms: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)


class ConeOperator:
    """Precomputed cone samples and kernel weights for one mesh.

    Evaluation points are the lateral cell centres; the lid only carries data.
    """

    def __init__(self, bnd: ConeBoundary, cone: NontangentialCone, model: KernelBoundModel,
                 cfg: HarnessConfig | None = None):
        if model.n != bnd.n:
            raise DomainError("model and boundary dimensions differ")
        self.bnd, self.cone, self.model = bnd, cone, model
        self.cfg = cfg or HarnessConfig()
        pts = bnd.lateral_points()[:, 0, :]  # one representative sector
        S = cone.samples
        Y = np.zeros((bnd.n_lat, S, 3))
        valid = np.zeros((bnd.n_lat, S), bool)
        for i, x in enumerate(pts):
            ys = cone_samples(bnd, x, cone)
            Y[i, : len(ys)] = ys
            valid[i, : len(ys)] = True
        self.x = pts
        self.Y, self.valid = Y, valid
        self.empty = ~valid.any(axis=1)
        flatY = Y[valid]
        rho = np.linalg.norm(flatY, axis=1)
        self.rho = rho
        self.I1, self.I3 = _zone_closed_forms(bnd, rho, model.alpha)
        self.rows, W = e2_weights(bnd, flatY, self.cfg.near_factor, self.cfg.max_depth)
        # correlation over sectors: V[s, j] = sum_{r,k} W[s,r,k] F[r, k+j]
        self.What = np.conj(np.fft.rfft(W, axis=-1))
        near = np.linalg.norm(Y - pts[:, None, :], axis=-1) <= np.linalg.norm(pts, axis=1)[:, None]
        self.near = near[valid]
        self.owner = np.repeat(np.arange(bnd.n_lat), valid.sum(axis=1))

    def potentials(self, f: BoundaryData):
        """v1, v2, v3 at all samples and all sectors: arrays (n_samples, azimuth)."""
        bnd, mdl = self.bnd, self.model
        F = np.abs(f.values)
        a = mdl.alpha
        rowsum = F.sum(axis=1)
        v1 = mdl.c * self.rho**a * (self.I1 @ rowsum)
        v3 = mdl.c * self.rho ** (-1 - a) * (self.I3 @ rowsum)
        Fh = np.fft.rfft(np.vstack([F, np.zeros((1, bnd.azimuth))]), axis=-1)
        v2 = mdl.c * np.fft.irfft(np.einsum("srk,srk->sk", self.What, Fh[self.rows]), n=bnd.azimuth, axis=-1)
        v2 = np.maximum(v2, 0.0)  # round-off from the transform
        A = bnd.azimuth
        return np.repeat(v1[:, None], A, 1), v2, np.repeat(v3[:, None], A, 1)

    def _rowmax(self, vals, mask=None):
        out = np.zeros((self.bnd.n_lat, vals.shape[1]))
        v = vals if mask is None else np.where(mask[:, None], vals, 0.0)
        np.maximum.at(out, self.owner, v)
        return out

    def maximal(self, f: BoundaryData, p=None) -> MaximalReport:
        v1, v2, v3 = self.potentials(f)
        bnd = self.bnd
        rep = MaximalReport(
            v1_star=self._rowmax(v1), v2_star=self._rowmax(v2), v3_star=self._rowmax(v3),
            u_star=self._rowmax(v1 + v2 + v3),
            w=self._rowmax(v2, self.near), z=self._rowmax(v2, ~self.near),
            radius=np.repeat(bnd.r_c[:, None], bnd.azimuth, 1),
            weights=bnd.weights[: bnd.n_lat], empty=self.empty,
            f_norms={"L1": lp_norm(f.values, bnd.weights, 1), "Linf": lp_norm(f.values, bnd.weights, math.inf)},
        )
        if p is not None:
            rep.f_norms["Lp"] = lp_norm(f.values, bnd.weights, p)
        ok = ~self.empty
        for name in ("v1_star", "v2_star", "v3_star"):
            vals, w = getattr(rep, name)[ok], rep.weights[ok]
            d = {"Linf": lp_norm(vals, w, math.inf), "weak_L1": weak_lp_quasinorm(vals, w, 1)}
            if p is not None:
                d["Lp"] = lp_norm(vals, w, p)
                d["weak_Lp"] = weak_lp_quasinorm(vals, w, p)
            rep.norms[name] = d
        L1 = rep.f_norms["L1"]
        if L1 > 0:
            zc = rep.z[ok] * rep.radius[ok] ** (bnd.n - 1) / L1
            rep.constants["z_decay"] = float(zc.max())
            rep.constants["v1_decay"] = float((rep.v1_star[ok] * rep.radius[ok] ** (bnd.n - 1)).max() / L1)
        return rep


def maximal_surrogate(x, f: BoundaryData, cone: NontangentialCone, bnd: ConeBoundary, model: KernelBoundModel,
                      cfg: HarnessConfig | None = None):
    """Stars at a single boundary point x: dict with v1*, v2*, v3*, u*, w, z."""
    x = np.asarray(x, float)
    if np.linalg.norm(x) == 0:
        raise DomainError("the vertex is excluded")
    ys = cone_samples(bnd, x, cone)
    if len(ys) == 0:
        return {"empty": True}
    V = np.atleast_2d(potential_terms(ys, f, bnd, model, cfg))
    near = np.linalg.norm(ys - x, axis=1) <= np.linalg.norm(x)
    out = {"empty": False, "v1_star": V[:, 0].max(), "v2_star": V[:, 1].max(), "v3_star": V[:, 2].max(),
           "u_star": V.sum(axis=1).max(),
           "w": V[near, 1].max() if near.any() else 0.0, "z": V[~near, 1].max() if (~near).any() else 0.0}
    return out


# ------------------------------------------------------------ verification

LEMMA_RATIOS = {
    1: [("v1_star", "weak_L1", "L1"), ("v1_star", "Linf", "Linf")],
    2: [("v3_star", "weak_Lp", "Lp"), ("v3_star", "Linf", "Linf")],
    3: [("v2_star", "Linf", "Linf")],
    4: [("v2_star", "Lp", "Lp")],
}
DRIFT_TOL = 0.2
GROWTH_MIN = 2.0


def lemma_ratios(rep: MaximalReport, lemma_id):
    out = {}
    for comp, vnorm, fnorm in LEMMA_RATIOS[lemma_id]:
        den = rep.f_norms.get(fnorm)
        if den is None:
            continue
        out[f"{comp}.{vnorm}/f.{fnorm}"] = rep.norms[comp][vnorm] / den if den > 0 else 0.0
    if lemma_id == 4 and "z_decay" in rep.constants:
        out["z_decay"] = rep.constants["z_decay"]
    return out


def p_threshold(alpha, n=3):
    return (n - 1) / (alpha + n - 2)


@dataclass
class LemmaVerdict:
    lemma: int
    p: float
    branch: str  # "bounded" | "sharpness"
    verdict: str  # PASS | FAIL | DIVERGES
    levels: list
    ratios: list  # per f: {ratio name: [value per level]}
    constants: dict
    diagnostics: list
    assumptions: list = field(default_factory=list)


def verify_lemma(lemma_id, f_suite, p, theta0, cone: NontangentialCone, model: KernelBoundModel,
                 refinement_levels=3, cfg: HarnessConfig | None = None, operators=None) -> LemmaVerdict:
    """Norm ratios of the lemma across vertex refinements.

    `f_suite` is a list of callables bnd -> BoundaryData (the data must be
    regenerated on each mesh). Bounded branch: every ratio drifts by at most
    20% between the two finest levels. Sharpness branch (lemma 2 with p at
    or below (n-1)/(n-2+alpha)): every ratio grows by at least 2x per level.
    """
    if lemma_id not in LEMMA_RATIOS:
        raise DomainError("lemma_id must be 1, 2, 3 or 4")
    if refinement_levels < 2:
        raise DomainError("need at least two refinement levels")
    cfg = cfg or HarnessConfig()
    sharp = lemma_id == 2 and p <= p_threshold(model.alpha, model.n)
    levels, per_f = [], [dict() for _ in f_suite]
    for lev in range(refinement_levels):
        if operators is not None:
            op = operators(lev)
        else:
            op = ConeOperator(ConeBoundary.from_config(theta0, cfg, lev), cone, model, cfg)
        levels.append(op.bnd.bands)
        for i, make in enumerate(f_suite):
            rep = op.maximal(make(op.bnd), p)
            for k, v in lemma_ratios(rep, lemma_id).items():
                if sharp and not k.endswith("weak_Lp/f.Lp"):
                    continue
                per_f[i].setdefault(k, []).append(v)
    diags, verdicts = [], []
    for i, rs in enumerate(per_f):
        for k, vals in rs.items():
            if sharp:
                growth = [b / a if a > 0 else math.inf for a, b in zip(vals[:-1], vals[1:])]
                ok = all(g >= GROWTH_MIN for g in growth)
                diags.append({"f": i, "ratio": k, "values": vals, "growth": growth, "ok": ok})
            else:
                a, b = vals[-2], vals[-1]
                drift = abs(b - a) / max(abs(b), 1e-300)
                ok = math.isfinite(b) and drift <= DRIFT_TOL
                diags.append({"f": i, "ratio": k, "values": vals, "drift": drift, "ok": ok})
            verdicts.append(ok)
    if all(verdicts):
        verdict = "DIVERGES" if sharp else "PASS"
    else:
        verdict = "FAIL"
    consts = {}
    for rs in per_f:
        for k, vals in rs.items():
            consts[k] = max(consts.get(k, 0.0), vals[-1])
    assume = []
    if lemma_id == 4:
        assume.append("solvability on C^1 modifications near the vertex is assumed, not tested")
    return LemmaVerdict(lemma_id, p, "sharpness" if sharp else "bounded", verdict, levels,
                        per_f, consts, diags, assume)


# ------------------------------------------------------- dyadic accounting

def enlarged_band_members(radius, delta, n_lo, n_hi):
    """Indices n in [n_lo, n_hi] with 2^{-n-2} delta <= radius < 2^{-n+3} delta."""
    ns = np.arange(n_lo, n_hi + 1)
    return ns[(2.0 ** (-ns - 2) * delta <= radius) & (radius < 2.0 ** (-ns + 3) * delta)]


def dyadic_band_accounting(bnd: ConeBoundary, f: BoundaryData | None = None, p=2.0):
    """Rescaling of mesh bands and overlap of the enlarged bands."""
    R = bnd.radial
    rescale_ok = True
    for k in range(bnd.bands - 1):
        a = slice(k * R, (k + 1) * R)
        b = slice((k + 1) * R, (k + 2) * R)
        rescale_ok &= bool(np.array_equal(bnd.r_lo[b], 0.5 * bnd.r_lo[a]))
        rescale_ok &= bool(np.array_equal(bnd.r_hi[b], 0.5 * bnd.r_hi[a]))
        rescale_ok &= bool(np.array_equal(bnd.r_c[b], 0.5 * bnd.r_c[a]))
    radii = bnd.row_radius
    counts = np.array([len(enlarged_band_members(r, bnd.delta, 0, bnd.bands - 1)) for r in radii])
    rep = {"rescale_exact": bool(rescale_ok), "max_overlap": int(counts.max()),
           "overlap_ok": bool(counts.max() <= 5), "counts": counts}
    if f is not None:
        g = np.abs(f.values) ** p * bnd.weights
        tot = g.sum()
        rep["band_sum_ratio"] = float((counts[:, None] * g).sum() / tot) if tot > 0 else 0.0
    return rep
