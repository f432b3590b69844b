"""The Lamé/Stokes operator pencil on a spherical cap.

phi(t), its critical root t(M) and the resulting eigenvalue-free strip are
closed-form. The pencil itself is discretized per azimuthal mode on a
staggered colatitude grid and probed through an energy-scaled relative
smallest singular value.

Mode reduction. For a degree-m scalar harmonic Y on S^{n-2} (mu = m(m+n-3))
a homogeneous field is

    U = r^l (a Y e_r + b Y e_theta + c mu^{-1/2} grad_eta Y),   P = r^{l-1} p Y,

and -r^{2-l} Delta U + r^{2-l} grad P = 0, r^{1-l} div U + (1-2nu) p = 0
become a 4x4 ODE system in theta. Divergence-free tangential fields of
S^{n-2} give a separate scalar ("toroidal") family with coefficient
kappa = m(m+n-3), present for every m >= 1 when n >= 4 and only for m = 1
(the azimuthal swirl) when n = 3.

Discretization. a, c, p and toroidal t sit at cell centres, b at faces.
The weak form is written as S(l) = S0 + l S1 + l^2 S2 with symmetric K and
mass M so that S(l)^H = S(-q - conj(l)); in particular S is Hermitian on
Re l = -q/2, exactly as the continuous pencil.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import BracketError, ConvergenceError, DomainError, PreconditionError, SingularityError
from .sphere_spectra import CapDomain, DiscretizationConfig, dirichlet_eigenvalue_cap

DEFAULT_THRESHOLD = 1e-4
DEFAULT_IM_MAX = 4.0


@dataclass(frozen=True)
class MaterialParams:
    nu: float = 0.5

    def __post_init__(self):
        if not (self.nu <= 0.5) or not math.isfinite(self.nu):
            raise DomainError(f"Poisson ratio must be <= 1/2, got {self.nu}")

    @property
    def is_stokes(self):
        return self.nu == 0.5


@dataclass(frozen=True)
class PhiContext:
    n: int
    nu: float
    M: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise DomainError("n must be an integer >= 3")
        MaterialParams(self.nu)
        if not self.M > 0:
            raise DomainError("M must be positive")


@dataclass
class StripReport:
    t_of_M: float
    alpha: float
    halfwidth: float
    p_min: float
    center: float


@dataclass
class PencilAssembly:
    lam: complex
    mode: int
    matrix: np.ndarray
    grid: DiscretizationConfig | None = None
    scaling: np.ndarray | None = None  # SPD energy matrix; None means plain 2-norm scaling
    family: str = "spheroidal"
    layout: dict = field(default_factory=dict)


@dataclass
class ScanReport:
    grid: list
    sigma_min: np.ndarray
    threshold: float
    flagged: list
    argmin_mode: list = field(default_factory=list)
    strip: StripReport | None = None
    control: dict | None = None
    re_values: np.ndarray | None = None
    im_values: np.ndarray | None = None


# ----------------------------------------------------------------- phi, t(M)

def phi_eval(t, ctx: PhiContext):
    n, nu, M = ctx.n, ctx.nu, ctx.M
    return (t + 1) * (t + n - 1) * (2 * t + n - 2) - (3 - 4 * nu - t) * (M - t) * (M + t + n - 2)


def _gap(t, ctx):
    return phi_eval(t, ctx) - (ctx.n - 1) * (2 * t + ctx.n - 2)


def t_of_M(ctx: PhiContext, subintervals=10_000, tol=1e-12):
    """Smallest root of phi(t) = (n-1)(2t+n-2) in (-(n-2)/2, M)."""
    lo = -(ctx.n - 2) / 2
    ts = np.linspace(lo, ctx.M, subintervals + 1)
    g = _gap(ts, ctx)
    sg = np.sign(g)
    change = np.nonzero(sg[:-1] * sg[1:] <= 0)[0]
    if sg[0] == 0:  # a zero at the open left end is not a root
        change = change[change > 0]
    if len(change) == 0:
        raise BracketError("no sign change of phi(t) - (n-1)(2t+n-2) on the interval",
                           samples=list(zip(ts[::1000].tolist(), g[::1000].tolist())))
    i = int(change[0])
    if sg[i] == 0:
        root = float(ts[i])
    else:
        a, b = float(ts[i]), float(ts[i + 1])
        ga = _gap(a, ctx)
        while b - a > tol:
            mid = 0.5 * (a + b)
            gm = _gap(mid, ctx)
            if gm == 0:
                a = b = mid
                break
            if np.sign(gm) == np.sign(ga):
                a, ga = mid, gm
            else:
                b = mid
        root = 0.5 * (a + b)
    if not root < ctx.M:
        raise BracketError("root coincides with the open right end M", samples=None)
    if not root > 0:
        raise BracketError(f"smallest root {root} is not positive", samples=None)
    neg = ts[(ts > lo) & (ts <= 0)]
    if np.any(_gap(neg, ctx) >= 0):
        raise BracketError("sign change detected in (-(n-2)/2, 0]", samples=None)
    return root


def strip_report(ctx: PhiContext) -> StripReport:
    t = t_of_M(ctx)
    n = ctx.n
    alpha = min(1.0, t)
    return StripReport(t, alpha, alpha + (n - 2) / 2, (n - 1) / (alpha + n - 2), -(n - 2) / 2)


def strip_from_alpha(t, n):
    alpha = min(1.0, t)
    return StripReport(t, alpha, alpha + (n - 2) / 2, (n - 1) / (alpha + n - 2), -(n - 2) / 2)


def cap_strip(cap: CapDomain, mat: MaterialParams, cfg: DiscretizationConfig | None = None):
    """Strip report with M taken from the cap's first Dirichlet eigenvalue."""
    ev = dirichlet_eigenvalue_cap(cap, 0, cfg or DiscretizationConfig())
    return strip_report(PhiContext(cap.n, mat.nu, ev.M_exponent)), ev


def phi_sign_audit(ns=(3, 4, 5, 6), nus=(0.0, 0.25, 0.5), Ms=(0.25, 0.5, 1.0, 2.0, 4.0), samples=10_001):
    """Violations of: gap < 0 on [-(n-2)/2, 0] and gap(M) > 0."""
    bad = []
    for n in ns:
        for nu in nus:
            for M in Ms:
                ctx = PhiContext(n, nu, M)
                ts = np.linspace(-(n - 2) / 2, 0.0, samples)
                g = _gap(ts, ctx)
                if np.any(g >= 0):
                    bad.append((n, nu, M, "nonnegative on [-(n-2)/2, 0]"))
                if not _gap(M, ctx) > 0:
                    bad.append((n, nu, M, "nonpositive at M"))
    return bad


# ------------------------------------------------------------ discretization

def pencil_grid(cap: CapDomain, N: int):
    """Cell centres and faces of the colatitude mesh."""
    h = cap.theta0 / N
    return (np.arange(N) + 0.5) * h, np.arange(N + 1) * h


def _center_laplacian(cap, m, N):
    """Kc (Dirichlet at theta0) and centre masses: -Delta_m ~ Mc^{-1}(Kc + pot)."""
    q = cap.q
    h = cap.theta0 / N
    tc, tf = pencil_grid(cap, N)
    Mc = np.sin(tc) ** q * h
    wf = np.sin(tf) ** q
    wv = wf[1:] / h
    wv[-1] *= 2.0  # half-cell distance to the wall
    # faces 1..N-1 couple neighbours, face N is the wall
    Kc = np.zeros((N, N))
    i = np.arange(N - 1)
    Kc[i, i] += wv[:-1]
    Kc[i + 1, i + 1] += wv[:-1]
    Kc[i, i + 1] -= wv[:-1]
    Kc[i + 1, i] -= wv[:-1]
    Kc[N - 1, N - 1] += wv[-1]
    return Kc, Mc, tc


@functools.lru_cache(maxsize=64)
def _spheroidal_blocks(n, theta0, nu, m, N):
    cap = CapDomain(n, theta0)
    q = n - 2
    mu = m * (m + q - 1)
    sm = math.sqrt(mu)
    h = theta0 / N
    tc, tf = pencil_grid(cap, N)
    sc, cc = np.sin(tc), np.cos(tc)
    Mc = sc**q * h
    wf = np.sin(tf) ** q
    Kc, _, _ = _center_laplacian(cap, m, N)

    has_c = m > 0
    fb = np.arange(0 if m == 1 else 1, N)  # b lives on these faces
    nb = len(fb)
    kk = np.arange(nb)
    # face f is the left face of centre f and the right face of centre f-1
    left = fb <= N - 1
    right = fb >= 1
    Dfc = np.zeros((N, nb))
    Ifc = np.zeros((N, nb))
    Dfc[fb[left], kk[left]] -= 1 / h
    Ifc[fb[left], kk[left]] += 0.5
    Dfc[fb[right] - 1, kk[right]] += 1 / h
    Ifc[fb[right] - 1, kk[right]] += 0.5

    Kb = Dfc.T @ (Mc[:, None] * Dfc) + Ifc.T @ ((Mc * ((mu + q) / sc**2 - q + 1))[:, None] * Ifc)
    Mb = wf[fb] * h
    if m == 1:
        Mb[0] = h ** (q + 1) / 2 ** (q + 1) / (q + 1)  # pole half cell
    Ka = Kc + np.diag(Mc * (mu / sc**2 + q + 1))
    Xab = np.zeros((N, nb))
    Xab[fb[left], kk[left]] -= 2 * wf[fb[left]]
    Xab[fb[right] - 1, kk[right]] += 2 * wf[fb[right]]

    na, nc = N, (N if has_c else 0)
    nv = na + nb + nc
    ia, ib, ic = slice(0, na), slice(na, na + nb), slice(na + nb, nv)
    K = np.zeros((nv, nv))
    Mv = np.zeros((nv, nv))
    K[ia, ia] = Ka
    K[ib, ib] = Kb
    K[ia, ib] = Xab
    K[ib, ia] = Xab.T
    Mv[ia, ia] = np.diag(Mc)
    Mv[ib, ib] = np.diag(Mb)
    if has_c:
        K[ic, ic] = Kc + np.diag(Mc * (mu - q + 2) / sc**2)
        K[ia, ic] = np.diag(-2 * sm * Mc / sc)
        K[ic, ia] = K[ia, ic]
        Xbc = (-2 * sm * cc / sc**2 * Mc)[:, None] * Ifc
        K[ic, ib] = Xbc
        K[ib, ic] = Xbc.T
        Mv[ic, ic] = np.diag(Mc)

    G0 = np.zeros((nv, N))
    E = np.zeros((nv, N))
    G0[ia] = -np.diag(Mc)
    E[ia] = np.diag(Mc)
    inner = (fb >= 1) & (fb <= N - 1)
    Gb = np.zeros((nb, N))
    Gb[kk[inner], fb[inner]] = wf[fb[inner]]
    Gb[kk[inner], fb[inner] - 1] = -wf[fb[inner]]
    G0[ib] = Gb
    if has_c:
        G0[ic] = np.diag(sm * Mc / sc)
    Mp = np.diag(Mc)
    Z = np.zeros((N, N))
    S0 = np.block([[K, G0], [G0.T - q * E.T, -(1 - 2 * nu) * Mp]])
    S1 = np.block([[-q * Mv, E], [-E.T, Z]])
    S2 = np.block([[-Mv, np.zeros((nv, N))], [np.zeros((N, nv)), Z]])
    P = np.block([[K + (q * q / 4 + 1) * Mv, np.zeros((nv, N))], [np.zeros((N, nv)), Mp]])
    layout = {"a": (0, na), "b": (na, na + nb), "c": (na + nb, nv), "p": (nv, nv + N),
              "b_faces": fb, "velocity": nv}
    blocks = dict(K=K, M=Mv, G0=G0, E=E, Mp=Mp)
    return S0, S1, S2, P, layout, blocks


@functools.lru_cache(maxsize=64)
def _toroidal_blocks(n, theta0, m, N):
    cap = CapDomain(n, theta0)
    q = n - 2
    kappa = m * (m + n - 3)
    Kc, Mc, tc = _center_laplacian(cap, m, N)
    K = Kc + np.diag(Mc * kappa / np.sin(tc) ** 2)
    Mv = np.diag(Mc)
    return K, -q * Mv, -Mv, K + (q * q / 4 + 1) * Mv, {"t": (0, N)}, dict(K=K, M=Mv)


def toroidal_modes(n, max_mode):
    if n == 3:
        return [1] if max_mode >= 1 else []
    return list(range(1, max_mode + 1))


def pencil_coefficients(cap: CapDomain, mat: MaterialParams, mode: int, N: int,
                        family="spheroidal", formulation="mixed"):
    """(S0, S1, S2, P, layout) with S(l) = S0 + l S1 + l^2 S2 and energy matrix P."""
    if mode < 0 or int(mode) != mode:
        raise DomainError("mode must be a nonnegative integer")
    if family == "toroidal":
        if mode not in toroidal_modes(cap.n, mode):
            raise DomainError(f"no toroidal family for mode {mode} when n = {cap.n}")
        S0, S1, S2, P, layout, _ = _toroidal_blocks(cap.n, cap.theta0, mode, N)
        return S0, S1, S2, P, layout
    if family != "spheroidal":
        raise DomainError(f"unknown family {family!r}")
    if formulation == "mixed":
        S0, S1, S2, P, layout, _ = _spheroidal_blocks(cap.n, cap.theta0, mat.nu, mode, N)
        return S0, S1, S2, P, layout
    if formulation == "displacement":
        raise PreconditionError("the displacement form is a quadratic pencil only after "
                                "eliminating pressure; use displacement_matrix(...)")
    raise DomainError(f"unknown formulation {formulation!r}")


def displacement_matrix(cap: CapDomain, mat: MaterialParams, lam, mode: int, N: int):
    """Pressure-eliminated Lamé operator K - (l^2+q l)M + (G0+lE)Mp^{-1}(G0^T-(q+l)E^T)/(1-2nu)."""
    if mat.is_stokes:
        raise PreconditionError("nu = 1/2 has no displacement-only form; use the mixed formulation")
    _, _, _, _, layout, B = _spheroidal_blocks(cap.n, cap.theta0, mat.nu, mode, N)
    q = cap.q
    K, Mv, G0, E, Mp = B["K"], B["M"], B["G0"], B["E"], B["Mp"]
    mpinv = 1.0 / np.diag(Mp)
    G = G0 + lam * E
    D = G0.T - (q + lam) * E.T
    return K - (lam**2 + q * lam) * Mv + (G * mpinv) @ D / (1 - 2 * mat.nu)


def assemble_pencil(cap: CapDomain, mat: MaterialParams, lam, mode: int, cfg: DiscretizationConfig | None = None,
                    family="spheroidal", formulation="mixed") -> PencilAssembly:
    """Discrete pencil at one complex lambda for one azimuthal mode.

    `formulation="mixed"` works for every nu <= 1/2 and is the only option
    for Stokes; `"displacement"` eliminates the pressure (nu < 1/2 only).
    """
    cfg = cfg or DiscretizationConfig(grid_points=128)
    N = cfg.grid_points
    lam = complex(lam)
    if formulation == "displacement":
        A = displacement_matrix(cap, mat, lam, mode, N)
        _, _, _, P, layout, _ = _spheroidal_blocks(cap.n, cap.theta0, mat.nu, mode, N)
        nv = layout["velocity"]
        return PencilAssembly(lam, mode, A, cfg, P[:nv, :nv], family, layout)
    S0, S1, S2, P, layout = pencil_coefficients(cap, mat, mode, N, family, formulation)
    A = S0 + lam * S1 + lam**2 * S2
    return PencilAssembly(lam, mode, A, cfg, P, family, layout)


def _scaled(A, P):
    L = linalg.cholesky(P, lower=True)
    X = linalg.solve_triangular(L, A, lower=True)
    return linalg.solve_triangular(L, X.conj().T, lower=True).conj().T


def min_singular_value(asm: PencilAssembly, absolute=False):
    """Relative smallest singular value sigma_min / sigma_max.

    With an energy matrix P = L L^H attached the singular values are those of
    L^{-1} A L^{-H}, which removes the mesh-dependent scale of the stiffness
    part; otherwise the plain matrix is used.
    """
    A = np.asarray(asm.matrix)
    if not np.all(np.isfinite(A)):
        raise ConvergenceError("non-finite entries in the assembled pencil")
    try:
        B = _scaled(A, asm.scaling) if asm.scaling is not None else A
        s = linalg.svdvals(B)
    except (linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceError(f"singular value decomposition failed: {exc}") from exc
    if s[0] == 0:
        return 0.0
    return float(s[-1]) if absolute else float(s[-1] / s[0])


# ------------------------------------------------------------------- scans

def _families(cap, max_mode):
    out = [("spheroidal", m) for m in range(max_mode + 1)]
    out += [("toroidal", m) for m in toroidal_modes(cap.n, max_mode)]
    return out


def _scaled_blocks(cap, mat, fam, m, N):
    S0, S1, S2, P, _ = pencil_coefficients(cap, mat, m, N, fam)
    L = linalg.cholesky(P, lower=True)

    def sc(S):
        X = linalg.solve_triangular(L, S, lower=True)
        return linalg.solve_triangular(L, X.T, lower=True).T

    return sc(S0), sc(S1), sc(S2)


def _rel_sigma(blocks, lam):
    A0, A1, A2 = blocks
    if lam.imag == 0:
        A = A0 + lam.real * A1 + lam.real**2 * A2
    else:
        A = A0 + lam * A1 + lam * lam * A2
    s = linalg.svdvals(A, check_finite=False)
    return float(s[-1] / s[0])


def strip_lattice(strip: StripReport, grid_re: int, grid_im: int, im_max=DEFAULT_IM_MAX, margin=0.01):
    c, hw = strip.center, strip.halfwidth * (1 - margin)
    re = np.array([c]) if grid_re == 1 else c + hw * (2 * np.arange(grid_re) / (grid_re - 1) - 1)
    im = np.array([0.0]) if grid_im == 1 else im_max * (2 * np.arange(grid_im) / (grid_im - 1) - 1)
    return re, im


def strip_scan(cap: CapDomain, mat: MaterialParams, grid_re: int = 21, grid_im: int = 21,
               cfg: DiscretizationConfig | None = None, threshold=DEFAULT_THRESHOLD,
               im_max=DEFAULT_IM_MAX, strip: StripReport | None = None, use_symmetry=True,
               control=True) -> ScanReport:
    """Relative sigma_min over a lattice covering the strip, minimized over modes.

    The lattice spans Re l within 1% of the strip edges and |Im l| <= im_max.
    The discrete pencil satisfies sigma(l) = sigma(conj l) = sigma(-q - conj l)
    exactly, so by default only one quadrant of the symmetric lattice is
    computed and mirrored.
    """
    if grid_re < 1 or grid_im < 1:
        raise DomainError("lattice sizes must be >= 1")
    cfg = cfg or DiscretizationConfig(grid_points=128, max_azimuthal_mode=4)
    N = cfg.grid_points
    if strip is None:
        strip, _ = cap_strip(cap, mat)
    re, im = strip_lattice(strip, grid_re, grid_im, im_max)
    fams = _families(cap, cfg.max_azimuthal_mode)
    blocks = {fm: _scaled_blocks(cap, mat, fm[0], fm[1], N) for fm in fams}

    R, I = len(re), len(im)
    sig = np.full((R, I), np.inf)
    arg = np.full((R, I), -1, dtype=object)
    for i in range(R):
        for j in range(I):
            ii, jj = i, j
            if use_symmetry:
                ii = max(i, R - 1 - i)
                jj = max(j, I - 1 - j)
                if (ii, jj) != (i, j) and np.isfinite(sig[ii, jj]):
                    sig[i, j], arg[i, j] = sig[ii, jj], arg[ii, jj]
                    continue
            lam = complex(re[ii], im[jj])
            best, who = np.inf, None
            for fm in fams:
                v = _rel_sigma(blocks[fm], lam)
                if v < best:
                    best, who = v, fm
            sig[ii, jj], arg[ii, jj] = best, who
            sig[i, j], arg[i, j] = best, who
    grid = [complex(re[i], im[j]) for i in range(R) for j in range(I)]
    flat = sig.reshape(-1)
    modes = [f"{a[0]}:{a[1]}" for a in arg.reshape(-1)]
    flagged = [g for g, s in zip(grid, flat) if not s >= threshold]
    ctrl = None
    if control:
        cb = _scaled_blocks(cap, mat, "spheroidal", 1, N) if cfg.max_azimuthal_mode < 1 else blocks[("spheroidal", 1)]
        v = _rel_sigma(cb, complex(1.0, 0.0))
        ctrl = {"lambda": 1.0, "mode": 1, "sigma": v, "below_threshold": bool(v < threshold)}
    return ScanReport(grid, flat, threshold, flagged, modes, strip, ctrl, re, im)


# ----------------------------------------------------------------- pressure

def laplace_beltrami_centers(values, cap: CapDomain, mode: int = 0):
    """Discrete Delta_{S^{n-1}} of a mode-m function sampled at cell centres (zero at theta0)."""
    v = np.asarray(values)
    N = len(v)
    Kc, Mc, tc = _center_laplacian(cap, mode, N)
    mu = mode * (mode + cap.n - 3)
    return -(Kc @ v) / Mc - mu / np.sin(tc) ** 2 * v


def pressure_numerator(ur_values, lam, n, cap: CapDomain, mode=0):
    ur = np.asarray(ur_values)
    return laplace_beltrami_centers(ur, cap, mode) + (lam + 1) * (lam + n - 1) * ur


def pressure_from_ur(ur_values, lam, n, nu, cap: CapDomain | None = None, mode=0):
    """p = -(Delta u_r + (l+1)(l+n-1) u_r) / (3 - 4 nu - l), nodewise.

    `ur_values` are samples at the cell centres of `pencil_grid(cap, N)`;
    the cap defaults to the hemisphere.
    """
    den = 3 - 4 * nu - lam
    if den == 0:
        raise SingularityError("lambda = 3 - 4 nu: pressure formula is singular")
    cap = cap or CapDomain(n, math.pi / 2)
    if cap.n != n:
        raise DomainError("cap dimension does not match n")
    return -pressure_numerator(ur_values, lam, n, cap, mode) / den
