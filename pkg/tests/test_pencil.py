import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conelp.errors import DomainError, PreconditionError, SingularityError
from conelp.pencil import (
    MaterialParams,
    PencilAssembly,
    PhiContext,
    _gap,
    assemble_pencil,
    cap_strip,
    displacement_matrix,
    laplace_beltrami_centers,
    min_singular_value,
    pencil_coefficients,
    pencil_grid,
    phi_eval,
    phi_sign_audit,
    pressure_from_ur,
    pressure_numerator,
    strip_from_alpha,
    strip_report,
    strip_scan,
    t_of_M,
)
from conelp.sphere_spectra import CapDomain, DiscretizationConfig

HEMI = CapDomain(3, math.pi / 2)


def cfgN(N, modes=4):
    return DiscretizationConfig(grid_points=N, max_azimuthal_mode=modes)


# -------------------------------------------------------------------- phi

def test_phi_examples():
    ctx = PhiContext(3, 0.5, 1.0)
    assert phi_eval(0.0, ctx) == 0.0
    assert phi_eval(1.0, ctx) == 18.0
    for n, nu, M in [(3, 0.5, 1.0), (4, 0.2, 2.5), (6, 0.0, 0.3)]:
        c = PhiContext(n, nu, M)
        assert phi_eval(M, c) == pytest.approx((M + 1) * (M + n - 1) * (2 * M + n - 2), rel=1e-14)


def test_gap_reduces_to_cubic():
    t = sp.symbols("t")
    ctx = PhiContext(3, sp.Rational(1, 2), 1)
    expr = sp.expand(_gap(t, ctx))
    assert sp.simplify(expr - (t**3 + 7 * t**2 + 6 * t - 2)) == 0


def test_t_of_M_matches_cubic_oracle():
    ref = oracles.hemisphere_stokes_root()
    t = t_of_M(PhiContext(3, 0.5, 1.0))
    assert t == pytest.approx(ref, abs=1e-10)
    assert t == pytest.approx(0.2548, abs=1e-4)
    roots = np.roots([1, 7, 6, -2])
    real = sorted(r.real for r in roots if abs(r.imag) < 1e-12 and 0 < r.real < 1)
    assert t == pytest.approx(real[0], abs=1e-10)


def test_t_of_M_residual_M2():
    ctx = PhiContext(3, 0.5, 2.0)
    t = t_of_M(ctx)
    assert 0 < t < 2
    assert abs(phi_eval(t, ctx) - 2 * (2 * t + 1)) < 1e-10


@given(st.integers(3, 8), st.floats(-1.0, 0.5), st.floats(0.05, 6.0))
@settings(max_examples=60)
def test_t_of_M_properties(n, nu, M):
    ctx = PhiContext(n, nu, M)
    t = t_of_M(ctx)
    assert 0 < t < M
    scale = max(1.0, abs(phi_eval(t, ctx)))
    assert abs(_gap(t, ctx)) <= 1e-9 * scale
    # no smaller root in (0, t)
    ts = np.linspace(0, t, 2001)[:-1]
    assert np.all(_gap(ts, ctx) < 0)


def test_strip_examples():
    s = strip_report(PhiContext(3, 0.5, 1.0))
    ref = oracles.hemisphere_stokes_root()
    assert s.alpha == pytest.approx(ref, abs=1e-10)
    assert s.halfwidth == pytest.approx(ref + 0.5, abs=1e-10)
    assert s.p_min == pytest.approx(2 / (1 + ref), abs=1e-9)
    assert s.p_min == pytest.approx(1.5939, abs=1e-4)
    s2 = strip_from_alpha(2.0, 3)
    assert (s2.alpha, s2.halfwidth, s2.p_min) == (1.0, 1.5, 1.0)
    assert strip_from_alpha(1.0, 5).p_min == 1.0


def test_phi_sign_lattice():
    assert phi_sign_audit() == []


def test_phi_context_validation():
    with pytest.raises(DomainError):
        PhiContext(3, 0.6, 1.0)
    with pytest.raises(DomainError):
        PhiContext(2, 0.5, 1.0)
    with pytest.raises(DomainError):
        PhiContext(3, 0.5, 0.0)
    with pytest.raises(DomainError):
        MaterialParams(float("nan"))


def test_t_of_M_coarse_scan():
    assert t_of_M(PhiContext(3, 0.5, 1.0), subintervals=1) == pytest.approx(oracles.hemisphere_stokes_root(), abs=1e-10)


def test_cap_strip_hemisphere():
    s, ev = cap_strip(HEMI, MaterialParams(0.5))
    assert ev.M_exponent == pytest.approx(1.0, abs=1e-9)
    assert s.t_of_M == pytest.approx(oracles.hemisphere_stokes_root(), abs=1e-8)


# ------------------------------------------------------------- assembly

def test_shear_flow_is_a_homogeneous_solution():
    x1, x2, x3 = sp.symbols("x1 x2 x3")
    U = sp.Matrix([x3, 0, 0])
    lap = [sum(sp.diff(u, v, 2) for v in (x1, x2, x3)) for u in U]
    div = sum(sp.diff(U[i], v) for i, v in enumerate((x1, x2, x3)))
    assert lap == [0, 0, 0] and div == 0
    assert U.subs(x3, 0) == sp.zeros(3, 1)


@pytest.mark.parametrize("nu", [0.5, 0.25, 0.0])
@pytest.mark.parametrize("lam,mode", [(1, 1), (2, 0)])
def test_known_eigenvalues_converge(nu, lam, mode):
    """Half-space solutions: (x3,0,0) at degree 1 and (x1x3, x2x3, -x3^2) + pressure at degree 2."""
    s = [min_singular_value(assemble_pencil(HEMI, MaterialParams(nu), lam, mode, cfgN(N))) for N in (32, 64, 128)]
    assert s[2] < 1e-4
    assert s[0] / s[1] > 3.5 and s[1] / s[2] > 3.5


@pytest.mark.parametrize("nu", [0.5, 0.25])
def test_strip_center_bounded_away(nu):
    s = [min_singular_value(assemble_pencil(HEMI, MaterialParams(nu), -0.5, 0, cfgN(N))) for N in (32, 64, 128)]
    assert min(s) > 0.1
    assert max(s) / min(s) < 1.01


@pytest.mark.parametrize("mode", [0, 1, 2])
@pytest.mark.parametrize("nu", [0.5, 0.3])
def test_pencil_symmetry(mode, nu):
    cap = CapDomain(3, 2.0)
    S0, S1, S2, P, _ = pencil_coefficients(cap, MaterialParams(nu), mode, 40)
    q = cap.q
    for lam in (0.3 + 1.7j, -0.5 + 2j, -1.1 - 0.4j):
        A = S0 + lam * S1 + lam**2 * S2
        mu = -q - np.conj(lam)
        B = S0 + mu * S1 + mu**2 * S2
        assert np.max(np.abs(A.conj().T - B)) < 1e-12 * np.max(np.abs(A))
    A = S0 + (-q / 2 + 1.3j) * S1 + (-q / 2 + 1.3j) ** 2 * S2
    assert np.max(np.abs(A - A.conj().T)) < 1e-12 * np.max(np.abs(A))
    assert np.allclose(P, P.T) and np.all(np.linalg.eigvalsh(P) > 0)


@pytest.mark.parametrize("n", [3, 4])
def test_toroidal_family(n):
    cap = CapDomain(n, 1.2)
    a = assemble_pencil(cap, MaterialParams(0.5), 0.2 + 1j, 1, cfgN(32), family="toroidal")
    assert a.matrix.shape == (32, 32)
    if n == 3:
        with pytest.raises(DomainError):
            assemble_pencil(cap, MaterialParams(0.5), 0.0, 2, cfgN(32), family="toroidal")
    else:
        assemble_pencil(cap, MaterialParams(0.5), 0.0, 2, cfgN(32), family="toroidal")


def test_zero_field_maps_to_zero():
    a = assemble_pencil(HEMI, MaterialParams(0.3), 0.4 + 0.2j, 2, cfgN(32))
    assert np.all(a.matrix @ np.zeros(a.matrix.shape[1]) == 0)


def test_identity_block_sigma():
    asm = PencilAssembly(0j, 0, np.eye(7))
    assert min_singular_value(asm) == 1.0


@pytest.mark.parametrize("nu", [0.25, 0.0, -0.5])
def test_displacement_is_schur_complement(nu):
    mat = MaterialParams(nu)
    lam = 0.37 - 1.2j
    a = assemble_pencil(HEMI, mat, lam, 1, cfgN(24))
    nv = a.layout["velocity"]
    A = a.matrix
    S = A[:nv, :nv] - A[:nv, nv:] @ np.linalg.solve(A[nv:, nv:], A[nv:, :nv])
    D = displacement_matrix(HEMI, mat, lam, 1, 24)
    assert np.max(np.abs(S - D)) < 1e-10 * np.max(np.abs(D))
    d = assemble_pencil(HEMI, mat, lam, 1, cfgN(24), formulation="displacement")
    assert np.array_equal(d.matrix, D)


def test_displacement_rejects_stokes():
    with pytest.raises(PreconditionError):
        displacement_matrix(HEMI, MaterialParams(0.5), 0.0, 0, 16)


# ------------------------------------------------------------------ scans

def test_scan_degenerate_grid():
    rep = strip_scan(HEMI, MaterialParams(0.5), 1, 1, cfgN(32, 2), control=False)
    assert len(rep.grid) == 1 and rep.grid[0] == complex(-0.5, 0.0)
    assert rep.flagged == []


def test_scan_infinite_threshold_flags_all():
    rep = strip_scan(HEMI, MaterialParams(0.5), 3, 3, cfgN(32, 2), threshold=math.inf)
    assert len(rep.flagged) == 9
    assert rep.control["below_threshold"]


def test_scan_symmetry_is_exact():
    cap = CapDomain(3, 1.9)
    mat = MaterialParams(0.3)
    a = strip_scan(cap, mat, 5, 4, cfgN(24, 2), use_symmetry=True, control=False)
    b = strip_scan(cap, mat, 5, 4, cfgN(24, 2), use_symmetry=False, control=False)
    assert np.allclose(a.sigma_min, b.sigma_min, rtol=1e-10, atol=0)


def test_scan_lattice_inside_strip():
    rep = strip_scan(HEMI, MaterialParams(0.5), 5, 3, cfgN(32, 1))
    s = rep.strip
    re = np.array([g.real for g in rep.grid])
    assert np.all(np.abs(re - s.center) < s.halfwidth)
    assert rep.flagged == []


# --------------------------------------------------------------- pressure

def test_pressure_of_zero():
    p = pressure_from_ur(np.zeros(50), 0.3, 3, 0.25)
    assert np.all(p == 0)


def test_pressure_eigenfunction_is_scalar_multiple():
    N, m = 64, 2
    cap = CapDomain(3, 1.3)
    tc, _ = pencil_grid(cap, N)
    L = np.array([laplace_beltrami_centers(e, cap, m) for e in np.eye(N)]).T
    w, V = np.linalg.eig(L)
    k = np.argmax(w.real)
    Lam = -w[k].real
    u = V[:, k].real
    lam, nu, n = 0.7, 0.2, 3
    p = pressure_from_ur(u, lam, n, nu, cap, m)
    expect = -((lam + 1) * (lam + n - 1) - Lam) / (3 - 4 * nu - lam) * u
    assert np.allclose(p, expect, atol=1e-10 * np.max(np.abs(u)))


def test_shear_flow_pressure_vanishes():
    """u_r of (x3, 0, 0) on S^2 is sin(t)cos(t) in mode 1; its pressure is 0.

    The pole cell carries an O(h) nodal error from the mu/sin^2 term, so the
    max norm converges at first order; the mass-weighted norm at second.
    """
    l2, linf = [], []
    for N in (64, 128, 256):
        tc, _ = pencil_grid(HEMI, N)
        ur = np.sin(tc) * np.cos(tc)
        p = pressure_from_ur(ur, 1.0, 3, 0.25, HEMI, 1)
        w = np.sin(tc) * (HEMI.theta0 / N)
        l2.append(math.sqrt(np.sum(w * p**2)))
        linf.append(np.max(np.abs(p)))
    assert l2[-1] < 1e-4 and l2[0] / l2[1] > 3.5 and l2[1] / l2[2] > 3.5
    assert linf[0] / linf[1] > 1.9 and linf[1] / linf[2] > 1.9
    num = pressure_numerator(ur, 1.0, 3, HEMI, 1)
    assert math.sqrt(np.sum(w * num**2)) < 1e-4


def test_pressure_singular_denominator():
    with pytest.raises(SingularityError):
        pressure_from_ur(np.ones(8), 1.0, 3, 0.5)
