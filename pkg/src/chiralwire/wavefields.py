"""Vector spherical harmonics, sphere quadrature and Herglotz wave fields.

The far field operator is represented in the orthonormal circularly
polarized basis A_n^m = (U_n^m + i V_n^m)/sqrt(2) (helicity +1) and
B_n^m = (U_n^m - i V_n^m)/sqrt(2) (helicity -1), n = 1..N, |m| <= n,
where U_n^m is the normalized tangential surface gradient of the scalar
spherical harmonic Y_n^m and V_n^m is its rotation by the radial direction.

Herglotz waves E[A](x) = int_{S^2} A(d) e^{ik d.x} ds(d) with these densities
have closed forms in spherical Bessel functions.  Everything here reduces to
the regular scalar wave functions psi_n^m(x) = j_n(k|x|) Y_n^m(x/|x|):

    E[V_n^m] = -(4 pi i^n / s_n) grad(psi) x x,
    E[U_n^m] = -(4 pi i^{n+1} / (k s_n)) [2 grad(psi) + hess(psi) x
               + k^2 x psi],                      s_n = sqrt(n(n+1)),

and Cartesian derivatives of psi_n^m are exact finite recombinations of
psi_{n+-1}^{m'} (the classical solid harmonic gradient recurrences), which
yields machine precision field gradients without any numerical
differentiation.  A sphere quadrature evaluation path is kept alongside as
an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import spherical_jn

__all__ = [
    "BasisIndex",
    "SphereQuadrature",
    "scalar_harmonics",
    "vsh_eval",
    "vsh_tables",
    "circ_basis",
    "circular_basis_table",
    "herglotz_field",
    "herglotz_tables",
    "herglotz_quadrature",
]


@dataclass(frozen=True)
class BasisIndex:
    """Linear ordering of the circularly polarized basis up to degree N.

    Helicity blocks are contiguous: indices [0, N(N+2)) hold the +1
    (A-type) functions, [N(N+2), 2N(N+2)) the -1 (B-type) functions.
    Within a block the order is n = 1..N, m = -n..n.
    """

    degree_max: int

    def __post_init__(self):
        if self.degree_max < 1:
            raise ValueError("degree_max must be >= 1")

    @property
    def block_size(self):
        n = self.degree_max
        return n * (n + 2)

    @property
    def size(self):
        return 2 * self.block_size

    def index(self, helicity, n, m):
        if helicity not in (+1, -1):
            raise ValueError("helicity must be +1 or -1")
        if not (1 <= n <= self.degree_max) or abs(m) > n:
            raise ValueError("invalid degree/order (n=%s, m=%s)" % (n, m))
        offset = 0 if helicity == +1 else self.block_size
        return offset + n * n - 1 + (m + n)

    def unpack(self, q):
        if not (0 <= q < self.size):
            raise IndexError("basis index out of range")
        helicity = +1 if q < self.block_size else -1
        r = q % self.block_size
        n = int(math.isqrt(r + 1))
        m = r + 1 - n * n - n
        return helicity, n, m

    def block_slice(self, helicity):
        if helicity == +1:
            return slice(0, self.block_size)
        if helicity == -1:
            return slice(self.block_size, self.size)
        raise ValueError("helicity must be +1 or -1")

    def degrees_orders(self):
        """Arrays (n, m) of length block_size in within-block order."""
        ns, ms = [], []
        for n in range(1, self.degree_max + 1):
            for m in range(-n, n + 1):
                ns.append(n)
                ms.append(m)
        return np.array(ns), np.array(ms)


@dataclass(frozen=True)
class SphereQuadrature:
    """Product rule: Gauss-Legendre in the polar cosine, uniform azimuth.

    Exactly integrates spherical polynomials of degree <= exact_degree
    (limited by min(2 n_polar - 1, n_azimuth - 1)); weights sum to 4 pi.
    """

    nodes: np.ndarray
    weights: np.ndarray
    n_polar: int
    n_azimuth: int

    @property
    def exact_degree(self):
        return min(2 * self.n_polar - 1, self.n_azimuth - 1)

    @staticmethod
    def build(n_polar, n_azimuth):
        if n_polar < 1 or n_azimuth < 1:
            raise ValueError("node counts must be positive")
        x, w = np.polynomial.legendre.leggauss(int(n_polar))
        phi = 2.0 * np.pi * np.arange(int(n_azimuth)) / int(n_azimuth)
        ct = np.repeat(x, n_azimuth)
        st = np.sqrt(np.maximum(0.0, 1.0 - ct * ct))
        cp = np.tile(np.cos(phi), n_polar)
        sp = np.tile(np.sin(phi), n_polar)
        nodes = np.stack([st * cp, st * sp, ct], axis=1)
        weights = np.repeat(w, n_azimuth) * (2.0 * np.pi / n_azimuth)
        total = weights.sum()
        if abs(total - 4.0 * np.pi) > 1.0e-12 * 4.0 * np.pi:
            raise AssertionError("sphere quadrature weights sum to %r" % total)
        return SphereQuadrature(nodes, weights, int(n_polar), int(n_azimuth))

    @staticmethod
    def for_degree(degree):
        """Default rule for projecting onto harmonics of degree <= `degree`."""
        return SphereQuadrature.build(degree + 2, 2 * (degree + 2))


def _phase_factors(dirs):
    """cos(theta) and e^{i phi} per direction; phi := 0 exactly at the poles."""
    dirs = np.asarray(dirs, dtype=float)
    ct = np.clip(dirs[..., 2], -1.0, 1.0)
    rho = np.hypot(dirs[..., 0], dirs[..., 1])
    eip = np.ones(dirs.shape[:-1], dtype=complex)
    mask = rho > 0.0
    eip[mask] = (dirs[..., 0][mask] + 1j * dirs[..., 1][mask]) / rho[mask]
    return ct, eip


def _legendre_table(nmax, ct):
    """Orthonormalized associated Legendre values, Condon-Shortley phase on.

    Returns p[(n, m)] flattened as rows indexed by n*(n+1)//2 + m for
    0 <= m <= n <= nmax; stable recurrences upward in degree.
    """
    ct = np.asarray(ct, dtype=float)
    st = np.sqrt(np.maximum(0.0, 1.0 - ct * ct))
    rows = (nmax + 1) * (nmax + 2) // 2
    p = np.zeros((rows, ct.size))
    idx = lambda n, m: n * (n + 1) // 2 + m
    p[0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, nmax + 1):
        p[idx(m, m)] = -math.sqrt((2 * m + 1) / (2.0 * m)) * st * p[idx(m - 1, m - 1)]
    for m in range(0, nmax):
        p[idx(m + 1, m)] = math.sqrt(2 * m + 3.0) * ct * p[idx(m, m)]
    for m in range(0, nmax + 1):
        for n in range(m + 2, nmax + 1):
            a = math.sqrt((4.0 * n * n - 1.0) / (n * n - m * m))
            b = math.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1.0) ** 2 - 1.0))
            p[idx(n, m)] = a * (ct * p[idx(n - 1, m)] - b * p[idx(n - 2, m)])
    return p


def harmonic_index(n, m):
    """Row of (n, m) in the full scalar harmonic table, 0 <= n, |m| <= n."""
    return n * n + n + m


def scalar_harmonics(nmax, dirs):
    """Orthonormal Y_n^m at unit directions; shape ((nmax+1)^2, S).

    Convention: Y_n^m = Pbar_n^m(cos theta) e^{im phi} for m >= 0 with the
    Condon-Shortley phase inside Pbar, and Y_n^{-m} = (-1)^m conj(Y_n^m).
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    ct, eip = _phase_factors(dirs)
    leg = _legendre_table(nmax, ct)
    y = np.zeros(((nmax + 1) ** 2, dirs.shape[0]), dtype=complex)
    eip_pow = np.ones_like(eip)
    for m in range(0, nmax + 1):
        if m > 0:
            eip_pow = eip_pow * eip
        sign = -1.0 if m % 2 else 1.0
        for n in range(m, nmax + 1):
            vals = leg[n * (n + 1) // 2 + m] * eip_pow
            y[harmonic_index(n, m)] = vals
            if m > 0:
                y[harmonic_index(n, -m)] = sign * np.conj(vals)
    return y


def _ladder_coeffs(n, m):
    """Coefficients sqrt(n(n+1) - m(m+-1)) of the angular momentum ladder."""
    return (math.sqrt(max(0.0, n * (n + 1.0) - m * (m + 1.0))),
            math.sqrt(max(0.0, n * (n + 1.0) - m * (m - 1.0))))


def vsh_tables(nmax, dirs):
    """Tangential vector harmonics U, V for all n = 1..nmax, |m| <= n.

    Returns (U, V) with shape (nmax(nmax+2), S, 3), rows ordered like
    BasisIndex within one helicity block.  V is evaluated pole-safely from
    scalar harmonics via the angular momentum operator, V = i L Y / s_n,
    and U = V x r_hat.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    y = scalar_harmonics(nmax, dirs)
    rows = nmax * (nmax + 2)
    v = np.zeros((rows, dirs.shape[0], 3), dtype=complex)
    for n in range(1, nmax + 1):
        s_n = math.sqrt(n * (n + 1.0))
        for m in range(-n, n + 1):
            row = n * n - 1 + (m + n)
            y_nm = y[harmonic_index(n, m)]
            cp, cm = _ladder_coeffs(n, m)
            y_up = y[harmonic_index(n, m + 1)] if m + 1 <= n else 0.0
            y_dn = y[harmonic_index(n, m - 1)] if m - 1 >= -n else 0.0
            lx = 0.5 * (cp * y_up + cm * y_dn)
            ly = -0.5j * (cp * y_up - cm * y_dn)
            lz = m * y_nm
            v[row, :, 0] = 1j * lx / s_n
            v[row, :, 1] = 1j * ly / s_n
            v[row, :, 2] = 1j * lz / s_n
    u = np.cross(v, dirs[None, :, :])
    return u, v


def vsh_eval(n, m, kind, direction):
    """Single vector spherical harmonic at one unit direction.

    kind is 'U' (normalized surface gradient of Y_n^m) or 'V' (its rotation
    by the direction); returns a complex 3-vector.  Poles are regular points
    of the evaluation scheme, no special casing needed by the caller.
    """
    u, v = vsh_tables(n, np.asarray(direction, dtype=float)[None, :])
    row = n * n - 1 + (m + n)
    if kind.upper() == "U":
        return u[row, 0]
    if kind.upper() == "V":
        return v[row, 0]
    raise ValueError("kind must be 'U' or 'V'")


def circ_basis(n, m, helicity, direction):
    """Circularly polarized basis function A (helicity +1) or B (-1)."""
    u, v = vsh_tables(n, np.asarray(direction, dtype=float)[None, :])
    row = n * n - 1 + (m + n)
    if helicity == +1:
        return (u[row, 0] + 1j * v[row, 0]) / math.sqrt(2.0)
    if helicity == -1:
        return (u[row, 0] - 1j * v[row, 0]) / math.sqrt(2.0)
    raise ValueError("helicity must be +1 or -1")


def circular_basis_table(basis, dirs):
    """All basis functions at the given directions; shape (Q, S, 3)."""
    u, v = vsh_tables(basis.degree_max, dirs)
    a = (u + 1j * v) / math.sqrt(2.0)
    b = (u - 1j * v) / math.sqrt(2.0)
    return np.concatenate([a, b], axis=0)


# ---------------------------------------------------------------------------
# scalar solid wave functions and their Cartesian derivative recurrences

def _coef_cos(n, m):
    """cos(theta) Y_n^m = cp Y_{n+1}^m + cm Y_{n-1}^m."""
    cp = math.sqrt((n - m + 1.0) * (n + m + 1.0) / ((2 * n + 1.0) * (2 * n + 3.0)))
    cm = math.sqrt((n - m) * (n + m) / ((2 * n - 1.0) * (2 * n + 1.0))) if n >= 1 else 0.0
    return cp, cm


def _coef_raise(n, m):
    """sin(theta) e^{i phi} Y_n^m = dp Y_{n+1}^{m+1} + dm Y_{n-1}^{m+1}."""
    dp = -math.sqrt((n + m + 1.0) * (n + m + 2.0) / ((2 * n + 1.0) * (2 * n + 3.0)))
    dm = 0.0
    if n >= 1 and abs(m + 1) <= n - 1:
        dm = math.sqrt((n - m) * (n - m - 1.0) / ((2 * n - 1.0) * (2 * n + 1.0)))
    return dp, dm


def _coef_lower(n, m):
    """sin(theta) e^{-i phi} Y_n^m = ep Y_{n+1}^{m-1} + em Y_{n-1}^{m-1}."""
    ep = math.sqrt((n - m + 1.0) * (n - m + 2.0) / ((2 * n + 1.0) * (2 * n + 3.0)))
    em = 0.0
    if n >= 1 and abs(m - 1) <= n - 1:
        em = -math.sqrt((n + m) * (n + m - 1.0) / ((2 * n - 1.0) * (2 * n + 1.0)))
    return ep, em


def derivative_ops(nmax, k):
    """Matrices D_x, D_y, D_z acting on solid wave expansion coefficients.

    If f = sum c_{nm} psi_n^m with psi_n^m = j_n(kr) Y_n^m, then the
    coefficients of df/dx_j are D_j c, provided every nonzero c has degree
    <= nmax - 1 so nothing leaks past the table.  Built from the three
    direction-cosine recurrences of the Y_n^m above; the spherical Bessel
    part turns the n +- 1 recombination into factors -+ k via the i^n
    phases of the plane wave expansion.
    """
    size = (nmax + 1) ** 2
    dx = np.zeros((size, size), dtype=complex)
    dy = np.zeros((size, size), dtype=complex)
    dz = np.zeros((size, size), dtype=complex)

    def add(dmat, n_src, m_src, n_dst, m_dst, coef):
        if coef == 0.0 or n_dst < 0 or n_dst > nmax or abs(m_dst) > n_dst:
            return
        dmat[harmonic_index(n_dst, m_dst), harmonic_index(n_src, m_src)] += coef

    for n in range(0, nmax + 1):
        for m in range(-n, n + 1):
            cp, cm = _coef_cos(n, m)
            add(dz, n, m, n + 1, m, -k * cp)
            add(dz, n, m, n - 1, m, +k * cm)
            dp, dm = _coef_raise(n, m)
            ep, em = _coef_lower(n, m)
            # theta_x Y = (raise + lower)/2, theta_y Y = (raise - lower)/(2i)
            add(dx, n, m, n + 1, m + 1, -0.5 * k * dp)
            add(dx, n, m, n - 1, m + 1, +0.5 * k * dm)
            add(dx, n, m, n + 1, m - 1, -0.5 * k * ep)
            add(dx, n, m, n - 1, m - 1, +0.5 * k * em)
            add(dy, n, m, n + 1, m + 1, +0.5j * k * dp)
            add(dy, n, m, n - 1, m + 1, -0.5j * k * dm)
            add(dy, n, m, n + 1, m - 1, -0.5j * k * ep)
            add(dy, n, m, n - 1, m - 1, +0.5j * k * em)
    return dx, dy, dz


def solid_wave_table(nmax, k, points):
    """psi_n^m(x) = j_n(k|x|) Y_n^m(x/|x|) for all n <= nmax; ((nmax+1)^2, P).

    The origin is a regular point: only the n = 0 row is nonzero there.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(pts, axis=1)
    dirs = np.where(r[:, None] > 0.0, pts / np.where(r[:, None] > 0.0, r[:, None], 1.0),
                    np.array([0.0, 0.0, 1.0]))
    y = scalar_harmonics(nmax, dirs)
    z = k * r
    out = np.empty_like(y)
    for n in range(0, nmax + 1):
        jn = spherical_jn(n, z)
        sl = slice(n * n, (n + 1) ** 2)
        out[sl] = y[sl] * jn
    return out


def _herglotz_from_tables(basis, points, k, tables, want_gradient):
    """Assemble E (and grad E) for the full circular basis from psi tables."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npts = pts.shape[0]
    nmax_basis = basis.degree_max
    rows = nmax_basis * (nmax_basis + 2)
    ns, _ = basis.degrees_orders()

    psi, d1, d2, d3 = tables
    sel = np.array([harmonic_index(n, m)
                    for n in range(1, nmax_basis + 1) for m in range(-n, n + 1)])
    psi_b = psi[sel]                      # (rows, P)
    g = d1[:, sel]                        # (3, rows, P)
    h = d2[:, :, sel]                     # (3, 3, rows, P)

    s_n = np.sqrt(ns * (ns + 1.0))
    i_pow = 1j ** np.mod(ns, 4)
    a_n = (-4.0 * np.pi * i_pow / s_n)[:, None]
    b_n = (-4.0 * np.pi * i_pow * 1j / (k * s_n))[:, None]

    x = pts.T                             # (3, P)
    # E[V] = a_n (g x x), E[U] = b_n (2 g + h x + k^2 x psi)
    gxx = np.empty((rows, npts, 3), dtype=complex)
    gxx[..., 0] = g[1] * x[2] - g[2] * x[1]
    gxx[..., 1] = g[2] * x[0] - g[0] * x[2]
    gxx[..., 2] = g[0] * x[1] - g[1] * x[0]
    e_v = a_n[..., None] * gxx

    hx = np.einsum("ijrp,jp->rpi", h, x)
    e_u = b_n[..., None] * (2.0 * np.moveaxis(g, 0, -1)
                            + hx + (k * k) * psi_b[..., None] * x.T[None])

    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    e_a = (e_u + 1j * e_v) * inv_sqrt2
    e_b = (e_u - 1j * e_v) * inv_sqrt2
    e_all = np.concatenate([e_a, e_b], axis=0)

    if not want_gradient:
        return e_all, None

    t3 = d3[:, :, :, sel]                 # (3, 3, 3, rows, P)
    # dE[V]_i/dx_j = a_n [ (h_{.j} x x)_i + (g x e_j)_i ]
    gv = np.empty((rows, npts, 3, 3), dtype=complex)
    for j in range(3):
        hj = h[:, j]                      # (3, rows, P) columns d_j grad psi
        gv[..., 0, j] = hj[1] * x[2] - hj[2] * x[1]
        gv[..., 1, j] = hj[2] * x[0] - hj[0] * x[2]
        gv[..., 2, j] = hj[0] * x[1] - hj[1] * x[0]
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[1, 0, 2] = eps[2, 1, 0] = -1.0
    gv += np.einsum("ilj,lrp->rpij", eps, g)
    gv *= a_n[..., None, None]

    # dE[U]_i/dx_j = b_n [3 h_{ij} + sum_l x_l t3_{ilj} + k^2 (delta_ij psi
    #                + x_i g_j)]
    gu = 3.0 * np.moveaxis(h, (0, 1), (-2, -1))          # (rows, P, i, j)
    gu = gu + np.einsum("iljrp,lp->rpij", t3, x)
    gu = gu + (k * k) * np.eye(3)[None, None] * psi_b[..., None, None]
    gu = gu + (k * k) * np.einsum("ip,jrp->rpij", x, g)
    gu *= b_n[..., None, None]

    g_a = (gu + 1j * gv) * inv_sqrt2
    g_b = (gu - 1j * gv) * inv_sqrt2
    return e_all, np.concatenate([g_a, g_b], axis=0)


def herglotz_tables(basis, k, points, want_gradient=True):
    """Herglotz fields of every basis density at many points.

    Returns (E, grad) with E of shape (Q, P, 3) and grad of shape
    (Q, P, 3, 3) (grad[q, p, i, j] = dE_i/dx_j), rows in BasisIndex order.
    grad is None when want_gradient is False.
    """
    n_talk = basis.degree_max + (3 if want_gradient else 2)
    psi = solid_wave_table(n_talk, k, points)
    dx, dy, dz = derivative_ops(n_talk, k)
    dmats = np.stack([dx, dy, dz])
    d1 = np.stack([dmats[j].T @ psi for j in range(3)])
    d2 = np.stack([[ (dmats[i] @ dmats[j]).T @ psi for j in range(3)]
                   for i in range(3)])
    d3 = None
    if want_gradient:
        d3 = np.stack([[[ (dmats[i] @ dmats[l] @ dmats[j]).T @ psi
                          for j in range(3)] for l in range(3)] for i in range(3)])
    return _herglotz_from_tables(basis, points, k, (psi, d1, d2, d3), want_gradient)


def herglotz_field(helicity, n, m, k, points, want_gradient=True):
    """Herglotz field (and exact gradient) of one circular basis density.

    E has shape (P, 3), grad (P, 3, 3); single points are accepted as
    1-d arrays and returned with the leading axis kept.
    """
    basis = BasisIndex(n)
    e, g = herglotz_tables(basis, k, np.atleast_2d(np.asarray(points, dtype=float)),
                           want_gradient)
    q = basis.index(helicity, n, m)
    return (e[q], g[q] if want_gradient else None)


def herglotz_quadrature(density_fn, k, points, quad):
    """Direct sphere quadrature of the Herglotz integral; oracle path.

    density_fn maps directions (S, 3) to complex values (S, 3).  Returns
    (E, grad) like herglotz_field.  Accuracy is set by the quadrature
    resolution relative to k * max|x|.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dens = np.asarray(density_fn(quad.nodes), dtype=complex)
    phases = np.exp(1j * k * (quad.nodes @ pts.T))      # (S, P)
    wdens = quad.weights[:, None] * dens
    e = np.einsum("sc,sp->pc", wdens, phases)
    grad = 1j * k * np.einsum("sc,sj,sp->pcj", wdens, quad.nodes, phases)
    return e, grad
