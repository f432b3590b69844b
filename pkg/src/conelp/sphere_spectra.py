"""Laplace-Beltrami eigenvalues on axisymmetric spherical caps.

Each azimuthal mode m reduces -Δ on S^{n-1} to the colatitude ODE

    -(sin^q v')'/sin^q + mu v/sin^2 = Lam v,   q = n-2,  mu = m(m+n-3)

with v(theta0) = 0. Two discretizations are provided: a vertex-centred
finite-volume scheme (second order, Richardson-extrapolated) and Chebyshev
collocation in x = cos(theta) for the regularized unknown
v = (1-x^2)^{m/2} g.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, optimize, special

from .errors import ConvergenceError, DomainError

log = logging.getLogger(__name__)

SCHEMES = ("fd", "spectral")


@dataclass(frozen=True)
class CapDomain:
    """Cap {colatitude < theta0} on S^{n-1}; `closed=True` means the whole sphere."""

    n: int
    theta0: float
    closed: bool = False

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise DomainError(f"dimension n must be an integer >= 3, got {self.n}")
        if self.closed:
            object.__setattr__(self, "theta0", math.pi)
            return
        if not (0.0 < self.theta0 < math.pi):
            raise DomainError(f"theta0 must lie in (0, pi), got {self.theta0}")

    @classmethod
    def sphere(cls, n):
        return cls(n, math.pi, closed=True)

    @property
    def q(self):
        return self.n - 2


@dataclass(frozen=True)
class DiscretizationConfig:
    grid_points: int = 512
    scheme: str = "fd"
    max_azimuthal_mode: int = 8
    richardson_levels: int = 3
    tol: float = 1e-10

    def __post_init__(self):
        if self.grid_points < 16:
            raise DomainError("grid_points must be >= 16")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}")
        if self.max_azimuthal_mode < 1:
            raise DomainError("max_azimuthal_mode must be >= 1")
        if self.richardson_levels < 1:
            raise DomainError("richardson_levels must be >= 1")
        if self.grid_points * 2 ** (self.richardson_levels - 1) > 2**24:
            raise DomainError("grid doubling exceeds the supported size")


@dataclass
class EigenResult:
    eigenvalue: float
    M_exponent: float
    residual: float
    mode: int
    levels: list = field(default_factory=list)  # raw per-level values
    observed_order: float | None = None


@dataclass
class ThetaResult:
    theta_omega: float
    attaining_mode: int
    constraint_kind: str
    theta_omega_lambda: float | None = None
    branch_values: dict = field(default_factory=dict)


def exponent_M(eigenvalue, n):
    """Nonnegative root of M(M+n-2) = eigenvalue."""
    if eigenvalue < 0:
        raise DomainError(f"eigenvalue must be >= 0, got {eigenvalue}")
    q = n - 2
    # cancellation-free form of (-q + sqrt(q^2 + 4 Lam)) / 2
    return 2.0 * eigenvalue / (q + math.sqrt(q * q + 4.0 * eigenvalue))


def sphere_volume(k):
    """Surface measure of the unit sphere S^k."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def cap_area(cap: CapDomain):
    q = cap.q
    val, _ = integrate.quad(lambda t: math.sin(t) ** q, 0.0, cap.theta0, epsabs=1e-14, epsrel=1e-13)
    return sphere_volume(cap.n - 2) * val


# ---------------------------------------------------------------- FV scheme

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _sin_power_integral(q, a):
    """int_0^a sin^q for small a (Gauss-Legendre; the integrand is entire)."""
    t = 0.5 * a * (_GL_X + 1.0)
    return float(0.5 * a * _GL_W @ np.sin(t) ** q)


def _fv_system(cap: CapDomain, m: int, N: int):
    """Symmetrized tridiagonal (d, e) and lumped mass for mode m on N cells.

    Unknowns live on nodes theta_i = i h. Pole nodes carry the exact half-cell
    mass; for m >= 1 they are removed (v = 0 there), and the node at theta0 is
    removed for a cap (Dirichlet).
    """
    q = cap.q
    mu = m * (m + q - 1)
    h = cap.theta0 / N
    th = np.arange(N + 1) * h
    wf = np.sin(th[:-1] + 0.5 * h) ** q / h  # flux weight per cell
    diag = np.zeros(N + 1)
    diag[:-1] += wf
    diag[1:] += wf
    off = -wf
    half = _sin_power_integral(q, 0.5 * h)
    mass = np.sin(th) ** q * h
    mass[0] = half
    if cap.closed:
        mass[-1] = half
    pot = np.zeros(N + 1)
    interior = mass > 0
    interior[0] = False
    if cap.closed:
        interior[-1] = False
    pot[interior] = mu / np.sin(th[interior]) ** 2 * mass[interior]
    diag = diag + pot

    lo = 0 if m == 0 else 1
    if cap.closed:
        hi = N + 1 if m == 0 else N
    else:
        hi = N
    d = diag[lo:hi]
    e = off[lo:hi - 1]
    mm = mass[lo:hi]
    s = 1.0 / np.sqrt(mm)
    return d * s * s, e * s[:-1] * s[1:], mm


def _tridiag_residual(d, e, lam, vec):
    r = d * vec - lam * vec
    r[:-1] += e * vec[1:]
    r[1:] += e * vec[:-1]
    return float(np.linalg.norm(r) / max(np.linalg.norm(vec), 1e-300))


def _tridiag_lowest(d, e, k=1):
    w, v = linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1))
    return w, v


def _secular_root(d, e, vec, gamma=None):
    """Smallest root of the secular equation for the tridiagonal (d, e).

    gamma=None: constrained problem, min over x with vec.x = 0.
    gamma>0:    smallest eigenvalue of T + gamma vec vec^T.
    """
    w, V = _tridiag_lowest(d, e, 3)
    comp = V.T @ vec
    nv = np.linalg.norm(vec)
    small = np.abs(comp) < 1e-10 * nv
    if small[0]:
        return float(w[0]), float(abs(comp[0]) / nv)
    ab = np.zeros((3, len(d)))

    def solve(lam):
        ab[0, 1:] = e
        ab[1] = d - lam
        ab[2, :-1] = e
        return linalg.solve_banded((1, 1), ab, vec)

    def f(lam):
        val = float(vec @ solve(lam))
        return val if gamma is None else 1.0 + gamma * val

    scale = max(abs(w[1]), 1.0)
    gap = w[1] - w[0]
    # eigenvalues carry O(eps ||T||) error: back off from the poles until the
    # secular function shows its expected signs
    off = 1e-12 * gap
    a = w[0] + off
    while f(a) > 0 and off < 1e-3 * gap:
        off *= 10
        a = w[0] + off
    off = 1e-12 * gap
    b = w[1] - off
    while f(b) < 0 and off < 1e-3 * gap:
        off *= 10
        b = w[1] - off
    if f(b) <= 0:
        if small[1]:
            # second eigenvector already satisfies the constraint
            return float(w[1]), float(abs(comp[1]) / nv)
        raise ConvergenceError("secular equation not bracketed")
    root = optimize.brentq(f, a, b, xtol=1e-15 * scale, maxiter=500)
    y = solve(root)
    # constraint defect of the bordered solution (T - root) y = vec
    res = abs(f(root)) / (np.linalg.norm(y) * nv) if gamma is None else abs(f(root)) / max(1.0, gamma * nv * nv)
    return float(root), float(res)


def _richardson(vals, order=2):
    """Repeated Richardson elimination for errors in h^order, h^(order+2), ..."""
    table = list(vals)
    p = order
    while len(table) > 1:
        f = 2.0**p
        table = [(f * table[i + 1] - table[i]) / (f - 1.0) for i in range(len(table) - 1)]
        p += 2
    return table[0]


def _observed_order(vals):
    if len(vals) < 3:
        return None
    d1, d2 = vals[0] - vals[1], vals[1] - vals[2]
    if d1 == 0 or d2 == 0 or d1 / d2 <= 0:
        return None
    return math.log2(d1 / d2)


def _fd_levels(cap, m, cfg, solver):
    vals, res = [], 0.0
    for k in range(cfg.richardson_levels):
        N = cfg.grid_points * 2**k
        v, r = solver(cap, m, N)
        vals.append(v)
        res = max(res, r)
    return vals, res


def _fd_dirichlet(cap, m, N):
    d, e, _ = _fv_system(cap, m, N)
    w, V = _tridiag_lowest(d, e, 1)
    scale = np.abs(d).max() + 2 * np.abs(e).max()
    return float(w[0]), _tridiag_residual(d, e, w[0], V[:, 0]) / scale


def _fd_constrained(cap, m, N, gamma=None):
    d, e, mm = _fv_system(cap, m, N)
    vec = np.sqrt(mm)  # the constant function in symmetrized coordinates
    return _secular_root(d, e, vec, gamma)


# ---------------------------------------------------------- spectral scheme

def cheb(N):
    """Chebyshev points x_j = cos(pi j/N) and the differentiation matrix."""
    if N == 0:
        return np.zeros((1, 1)), np.ones(1)
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return D, x


def _bary_matrix(nodes, targets):
    """Lagrange interpolation matrix from Chebyshev-Lobatto nodes to targets."""
    N = len(nodes) - 1
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = targets[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    tmp = w / diff
    P = tmp / tmp.sum(axis=1, keepdims=True)
    rows = np.where(exact.any(axis=1))[0]
    for r in rows:
        P[r] = exact[r].astype(float)
    return P


def _spectral_operator(cap, m, N):
    """Collocation matrix of the g-equation on [x0, 1] and the node set."""
    D, xi = cheb(N)
    x0 = -1.0 if cap.closed else math.cos(cap.theta0)
    half = 0.5 * (1.0 - x0)
    x = x0 + half * (xi + 1.0)
    D1 = D / half
    D2 = D1 @ D1
    n = cap.n
    A = (-(1.0 - x**2))[:, None] * D2 + ((2 * m + n - 1) * x)[:, None] * D1
    A += m * (m + n - 2) * np.eye(N + 1)
    keep = np.ones(N + 1, bool)
    if not cap.closed:
        keep[-1] = False  # x = x0 is the last Chebyshev node: g = 0
    return A[np.ix_(keep, keep)], x, keep, xi


def _mean_weights(cap, N, xi, keep):
    """w with w.g ~ integral of g(x)(1-x^2)^{(n-3)/2} over [x0, 1]."""
    a = 0.5 * (cap.n - 3)
    K = N + 8
    if cap.closed:
        z, W = special.roots_jacobi(K, a, a)
        t = z
        scale = 1.0
        smooth = np.ones_like(z)
    else:
        x0 = math.cos(cap.theta0)
        half = 0.5 * (1.0 - x0)
        # x = 1 - half (1 - z): Jacobi weight (1-z)^a covers (1-x)^a
        z, W = special.roots_jacobi(K, a, 0.0)
        xz = x0 + half * (z + 1.0)
        smooth = (1.0 + xz) ** a
        scale = half ** (a + 1.0)
        # xi coordinate of the quadrature nodes
        t = z
    P = _bary_matrix(xi, t)
    w = scale * (W * smooth) @ P
    return w[keep]


def _spectral_dirichlet(cap, m, N):
    A, _, _, _ = _spectral_operator(cap, m, N)
    w, V = linalg.eig(A)
    w = np.real_if_close(w, tol=1e6)
    order = np.argsort(w.real)
    lam = float(w[order[0]].real)
    v = V[:, order[0]]
    res = float(np.linalg.norm(A @ v - lam * v) / np.linalg.norm(v) / np.abs(A).sum(axis=1).max())
    return lam, res


def _spectral_constrained(cap, N):
    A, x, keep, xi = _spectral_operator(cap, 0, N)
    k = A.shape[0]
    wts = _mean_weights(cap, N, xi, keep)
    Aug = np.zeros((k + 1, k + 1))
    Aug[:k, :k] = A
    Aug[:k, k] = -1.0
    Aug[k, :k] = wts / np.abs(wts).max()
    B = np.zeros_like(Aug)
    B[:k, :k] = np.eye(k)
    w, V = linalg.eig(Aug, B)
    fin = np.isfinite(w) & (np.abs(w.imag) < 1e-6 * np.maximum(1.0, np.abs(w.real)))
    cand = np.sort(w[fin].real)
    cand = cand[cand > 1e-12]
    return float(cand[0]), 0.0


# ------------------------------------------------------------- public API

def _check_mode(mode, cfg):
    if mode < 0 or int(mode) != mode:
        raise DomainError("mode must be a nonnegative integer")
    if mode > cfg.max_azimuthal_mode:
        raise DomainError(f"mode {mode} exceeds max_azimuthal_mode={cfg.max_azimuthal_mode}")


def dirichlet_eigenvalue_cap(cap: CapDomain, mode: int = 0, cfg: DiscretizationConfig | None = None) -> EigenResult:
    """Smallest Dirichlet eigenvalue of -Δ on the cap within azimuthal mode `mode`.

    The global first eigenvalue of the cap is the mode-0 value: the ground
    state is axisymmetric. For the closed sphere no boundary condition is
    imposed.
    """
    cfg = cfg or DiscretizationConfig()
    _check_mode(mode, cfg)
    if cfg.scheme == "fd":
        vals, res = _fd_levels(cap, mode, cfg, _fd_dirichlet)
        lam = _richardson(vals)
        order = _observed_order(vals)
    else:
        lam, res = _spectral_dirichlet(cap, mode, cfg.grid_points)
        vals, order = [lam], None
    if not res <= cfg.tol:
        raise ConvergenceError(f"eigen-residual {res:.3e} above tolerance", residual=res)
    lam = max(lam, 0.0)
    return EigenResult(lam, exponent_M(lam, cap.n), res, mode, vals, order)


def constrained_mode0_eigenvalue(cap: CapDomain, cfg: DiscretizationConfig | None = None) -> float:
    """Lowest axisymmetric eigenvalue among mean-zero functions."""
    cfg = cfg or DiscretizationConfig()
    if cfg.scheme == "fd":
        vals, res = _fd_levels(cap, 0, cfg, _fd_constrained)
        if not res <= 1e-8:
            raise ConvergenceError(f"constrained solve defect {res:.3e}", residual=res)
        return _richardson(vals)
    return _spectral_constrained(cap, cfg.grid_points)[0]


def theta_omega(cap: CapDomain, cfg: DiscretizationConfig | None = None) -> ThetaResult:
    """Smallest Dirichlet Rayleigh quotient over mean-zero functions on the cap.

    Mode 0 carries the mean-zero constraint; every m >= 1 eigenfunction has
    zero mean automatically, so those modes enter unconstrained.
    """
    cfg = cfg or DiscretizationConfig()
    branch = {0: constrained_mode0_eigenvalue(cap, cfg)}
    for m in range(1, cfg.max_azimuthal_mode + 1):
        branch[m] = dirichlet_eigenvalue_cap(cap, m, cfg).eigenvalue
    best = min(branch, key=branch.get)
    if best == cfg.max_azimuthal_mode:
        log.warning("Theta minimum attained at the largest searched mode %d", best)
    kind = "mean-zero" if best == 0 else "unconstrained-mode"
    return ThetaResult(branch[best], best, kind, None, branch)


def lambda_branch_value(lambda_re, lambda_im, n, nu):
    """(3-4nu-Re l)|l+n-1|^2 / ((1-2nu)(2 Re l+n-2)); +inf when nu = 1/2."""
    if nu == 0.5:
        return math.inf
    lam = complex(lambda_re, lambda_im)
    return (3 - 4 * nu - lambda_re) * abs(lam + n - 1) ** 2 / ((1 - 2 * nu) * (2 * lambda_re + n - 2))


def _check_lambda(lambda_re, n, nu):
    if nu > 0.5:
        raise DomainError(f"nu must be <= 1/2, got {nu}")
    if not 2 * lambda_re + n - 2 > 0:
        from .errors import PreconditionError

        raise PreconditionError("need 2 Re(lambda) + n - 2 > 0")
    if lambda_re > 3 - 4 * nu:
        from .errors import PreconditionError

        raise PreconditionError("need Re(lambda) <= 3 - 4 nu")


def theta_omega_lambda(theta_omega, lambda_re, lambda_im, n, nu, cap_area=None):
    """min{Theta, branch value}; equals Theta for the incompressible case.

    `cap_area` is accepted for interface symmetry; the closed form does not
    depend on it.
    """
    _check_lambda(lambda_re, n, nu)
    if nu == 0.5:
        return float(theta_omega)
    return float(min(theta_omega, lambda_branch_value(lambda_re, lambda_im, n, nu)))


def theta_omega_lambda_variational(cap: CapDomain, lambda_re, lambda_im, nu, cfg=None):
    """Direct infimum of |grad v|^2 + C|int v|^2 over H^1_0 with ||v|| = 1.

    C = branch/|cap|. This is the rank-one-perturbed Dirichlet problem; only
    axisymmetric v can feel the penalty, other modes contribute their plain
    Dirichlet values, which are never below Theta.
    """
    cfg = cfg or DiscretizationConfig()
    _check_lambda(lambda_re, cap.n, nu)
    if nu == 0.5:
        return theta_omega(cap, cfg).theta_omega
    b = lambda_branch_value(lambda_re, lambda_im, cap.n, nu)
    # Rayleigh in 1-D coordinates: the measure factor vol(S^{n-2}) cancels
    # except once in |int v|^2, leaving gamma = b / int_0^theta0 sin^q.
    gamma = b * sphere_volume(cap.n - 2) / cap_area(cap)
    vals = []
    for k in range(cfg.richardson_levels):
        N = cfg.grid_points * 2**k
        vals.append(_fd_constrained(cap, 0, N, gamma=gamma)[0])
    pen = _richardson(vals)
    th = theta_omega(cap, cfg)
    others = min(v for m, v in th.branch_values.items() if m >= 1)
    return float(min(pen, others))
