"""Assembly of the truncated far field matrix and its shape derivative.

The asymptotic far field of a thin wire of squared radius rho^2 maps an
incident Herglotz density A to

    (T A)(xhat) = |B'| (k rho)^2 (eps_r - 1)
                  int_Gamma e^{-ik xhat.y} P(xhat) M(y) E[A](y) ds(y),

with P(xhat) the projector onto the tangent plane at xhat and M the
polarization tensor of the rotating elliptical cross section.  Matrix
entries are Galerkin projections onto the circularly polarized basis:
the tangential test functions absorb P(xhat), the line integral uses a
composite Simpson rule on the spline segments, the sphere projection a
Gauss-Legendre product rule resolving basis degree plus phase content.

The shape derivative with respect to a spine displacement h and a twist
increment phi splits into four terms (phase, polarization tensor,
Herglotz gradient, arc length); `assemble_T_derivative` returns it for
one direction, `GradientKernels` contracts an adjoint weight matrix
against all design directions at once at a cost independent of their
number.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import LineQuadrature, eval_spline
from .material import cross_section_tensor, polarization_tensor, polarization_tensor_derivative
from .wavefields import BasisIndex, SphereQuadrature, circular_basis_table, herglotz_tables

__all__ = [
    "FarFieldMatrix",
    "AssemblyWorkspace",
    "QuadratureOverflowError",
    "build_workspace",
    "assemble_T",
    "assemble_T_derivative",
    "blocks",
    "GradientKernels",
    "gradient_kernels",
    "dump_matrix",
    "load_matrix",
]

# extra spherical harmonic degree for the outer quadrature beyond basis
# degree plus phase content ~ k R
SPHERE_DEGREE_MARGIN = 8

# hard cap on the adaptive sphere rule: geometries needing more span
# hundreds of wavelengths and are rejected rather than integrated
SPHERE_DEGREE_LIMIT = 400


class QuadratureOverflowError(ValueError):
    """Geometry too large for the far field sphere quadrature."""


@dataclass(frozen=True)
class FarFieldMatrix:
    """Far field matrix in the circular basis with assembly metadata.

    Rows and columns are BasisIndex-ordered (helicity +1 block first);
    entry (q', q) is the sphere inner product of T applied to basis
    function q against basis function q'.
    """

    matrix: np.ndarray
    degree_max: int
    k: float
    rho: float
    cross_area: float
    eps_r: complex

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        q = 2 * self.degree_max * (self.degree_max + 2)
        if mat.shape != (q, q):
            raise ValueError("matrix shape %s does not match degree %d"
                             % (mat.shape, self.degree_max))
        if not np.all(np.isfinite(mat.view(float))):
            raise ValueError("non-finite entries in far field matrix")

    @property
    def size(self):
        return self.matrix.shape[0]

    @property
    def basis(self):
        return BasisIndex(self.degree_max)

    @property
    def hs_norm(self):
        return float(np.linalg.norm(self.matrix))


def blocks(t):
    """The four helicity blocks {'++', '+-', '-+', '--'} of the matrix.

    The basis is orthonormal and helicity-adapted, so the projections are
    plain index slices; keys are (outgoing, incoming).
    """
    mat = np.asarray(getattr(t, "matrix", t))
    half = mat.shape[0] // 2
    sl = {"+": slice(0, half), "-": slice(half, 2 * half)}
    return {c + d: mat[sl[c], sl[d]] for c in "+-" for d in "+-"}


def _frame_arrays(frame, params):
    if frame.params.shape != params.shape or not np.allclose(frame.params, params,
                                                             rtol=0.0, atol=1.0e-12):
        raise ValueError("frame is not sampled at the line quadrature nodes")
    return frame.t, frame.n, frame.b


@dataclass
class AssemblyWorkspace:
    """Geometry, material and wave field samples shared by T and T'."""

    basis: BasisIndex
    line_quad: LineQuadrature
    sphere: SphereQuadrature
    k: float
    rho: float
    eps_r: complex
    cross_area: float
    pref: complex
    pts: np.ndarray          # (J, 3) spine points
    dp: np.ndarray           # (J, 3) spine derivative p'
    speed: np.ndarray        # (J,)   |p'|
    wline: np.ndarray        # (J,)   Simpson weight times |p'|
    t: np.ndarray            # (J, 3) frame columns
    n: np.ndarray
    b: np.ndarray
    m2: np.ndarray           # cross section tensor eigenvalues (2,)
    mtens: np.ndarray        # (J, 3, 3) polarization tensors
    e_tab: np.ndarray        # (Q, J, 3) Herglotz fields
    grad_tab: np.ndarray | None   # (Q, J, 3, 3) field gradients
    g_tab: np.ndarray        # (Q, J, 3)  M E
    beta: np.ndarray         # (Q, S, 3) basis at sphere nodes
    phase: np.ndarray        # (S, J) e^{-ik xhat.y}
    rmax: float


def build_workspace(spine, frame, cross_section, eps_r, k, rho, degree_max,
                    line_quad, sphere_quad=None, want_gradient=False,
                    strict_degree=False):
    """Precompute all node samples entering the far field matrix.

    The frame must be sampled at the line quadrature nodes.  When
    sphere_quad is omitted a Gauss-Legendre rule resolving degree
    degree_max + ceil(k rmax) + margin is built.  Degrees below the
    circumscribing-radius rule of thumb ceil(k rmax) trigger a warning, or
    an error with strict_degree.
    """
    params = line_quad.params
    tt, nn, bb = _frame_arrays(frame, params)
    pts = eval_spline(spine, params, order=0)
    dp = eval_spline(spine, params, order=1)
    speed = np.linalg.norm(dp, axis=1)
    if np.any(speed <= 0.0):
        raise ValueError("degenerate spine parametrization (|p'| = 0)")
    rmax = float(np.linalg.norm(pts, axis=1).max())
    n_rule = int(math.ceil(k * rmax)) if rmax > 0.0 else 1
    if degree_max < n_rule:
        msg = ("basis degree N=%d below circumscribing-radius rule kR=%.2f"
               % (degree_max, k * rmax))
        if strict_degree:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=2)

    basis = BasisIndex(degree_max)
    if sphere_quad is None:
        target = degree_max + n_rule + SPHERE_DEGREE_MARGIN
        if target > SPHERE_DEGREE_LIMIT:
            raise QuadratureOverflowError(
                "far field quadrature degree %d exceeds the limit %d; the "
                "geometry spans too many wavelengths" % (target, SPHERE_DEGREE_LIMIT))
        sphere_quad = SphereQuadrature.for_degree(target)

    m2 = cross_section_tensor(cross_section, eps_r)
    mtens = polarization_tensor(tt, nn, bb, m2)
    e_tab, grad_tab = herglotz_tables(basis, k, pts, want_gradient=want_gradient)
    g_tab = np.einsum("jce,qje->qjc", mtens, e_tab)
    beta = circular_basis_table(basis, sphere_quad.nodes)
    phase = np.exp(-1j * k * (sphere_quad.nodes @ pts.T))
    pref = cross_section.area * (k * rho) ** 2 * (eps_r - 1.0)
    return AssemblyWorkspace(
        basis=basis, line_quad=line_quad, sphere=sphere_quad, k=k, rho=rho,
        eps_r=eps_r, cross_area=cross_section.area, pref=pref,
        pts=pts, dp=dp, speed=speed, wline=line_quad.weights * speed,
        t=tt, n=nn, b=bb, m2=m2, mtens=mtens,
        e_tab=e_tab, grad_tab=grad_tab, g_tab=g_tab,
        beta=beta, phase=phase, rmax=rmax)


def _project(ws, f):
    """Sphere projection pref * <f, beta>: f is (Q, S, 3) per column."""
    q = ws.basis.size
    s = ws.sphere.weights.size
    x = (np.conj(ws.beta) * ws.sphere.weights[None, :, None]).reshape(q, s * 3)
    y = f.reshape(q, s * 3)
    return ws.pref * (x @ y.T)


def _line_to_sphere(ws, dens, weights):
    """F[q, s, c] = sum_j weights_j phase[s, j] dens[q, j, c]."""
    q = ws.basis.size
    j = ws.pts.shape[0]
    d2 = (dens * weights[None, :, None]).transpose(0, 2, 1).reshape(q * 3, j)
    f2 = d2 @ ws.phase.T
    return f2.reshape(q, 3, -1).transpose(0, 2, 1)


def assemble_T(spine, frame, cross_section, eps_r, k, rho, degree_max,
               line_quad, sphere_quad=None, strict_degree=False,
               workspace=None):
    """Far field matrix of the wire (spine + adapted frame) at wavenumber k.

    Entries scale exactly as rho^2 and vanish for eps_r = 1; pass a
    prebuilt workspace to reuse cached field tables.
    """
    ws = workspace
    if ws is None:
        ws = build_workspace(spine, frame, cross_section, eps_r, k, rho,
                             degree_max, line_quad, sphere_quad,
                             want_gradient=False, strict_degree=strict_degree)
    f = _line_to_sphere(ws, ws.g_tab, ws.wline)
    mat = _project(ws, f)
    return FarFieldMatrix(matrix=mat, degree_max=degree_max, k=k, rho=rho,
                          cross_area=ws.cross_area, eps_r=eps_r)


def _direction_samples(ws, h, phi):
    """Node values (h, h', phi) of a displacement / twist direction."""
    params = ws.line_quad.params
    j = params.size
    if h is None:
        hv = np.zeros((j, 3))
        hp = np.zeros((j, 3))
    else:
        hv = np.atleast_2d(eval_spline(h, params, order=0))
        hp = np.atleast_2d(eval_spline(h, params, order=1))
    pv = np.zeros(j) if phi is None else np.asarray(eval_spline(phi, params, order=0))
    return hv, hp, pv


def assemble_T_derivative(spine, frame, cross_section, eps_r, k, rho,
                          degree_max, line_quad, h=None, phi=None,
                          sphere_quad=None, workspace=None):
    """Shape derivative of the far field matrix along (h, phi).

    h is a displacement spline of the spine (or None for zero), phi a
    twist increment spline; the result is the sum of the phase,
    polarization, field-gradient and arc-length terms, linear in (h, phi).
    """
    ws = workspace
    if ws is None:
        ws = build_workspace(spine, frame, cross_section, eps_r, k, rho,
                             degree_max, line_quad, sphere_quad,
                             want_gradient=True)
    if ws.grad_tab is None:
        raise ValueError("workspace was built without field gradients")
    hv, hp, pv = _direction_samples(ws, h, phi)

    # phase term: -ik (xhat . h)
    xh = ws.sphere.nodes @ hv.T                              # (S, J)
    dens1 = ws.g_tab * ws.wline[None, :, None]
    f1 = np.einsum("sj,sj,qjc->qsc", xh, ws.phase, dens1) * (-1j * ws.k)

    # polarization tensor term via the frame perturbation
    u = np.einsum("jc,jc->j", hp, ws.n) / ws.speed
    v = np.einsum("jc,jc->j", hp, ws.b) / ws.speed
    dm = polarization_tensor_derivative(ws.t, ws.n, ws.b, u, v, pv, ws.m2)
    dens2 = np.einsum("jce,qje->qjc", dm, ws.e_tab)

    # Herglotz gradient term M (grad E) h
    gh = np.einsum("qjea,ja->qje", ws.grad_tab, hv)
    dens3 = np.einsum("jce,qje->qjc", ws.mtens, gh)

    # arc length term (p'.h')/|p'| with the bare Simpson weight
    gamma = np.einsum("jc,jc->j", ws.dp, hp) / ws.speed
    w4 = ws.line_quad.weights * gamma

    f234 = _line_to_sphere(ws, dens2 + dens3, ws.wline)
    f4 = _line_to_sphere(ws, ws.g_tab, w4)
    mat = _project(ws, f1 + f234 + f4)
    return FarFieldMatrix(matrix=mat, degree_max=degree_max, k=k, rho=rho,
                          cross_area=ws.cross_area, eps_r=eps_r)


@dataclass(frozen=True)
class GradientKernels:
    """Adjoint reductions of Re<W, T'(h, phi)> over the line nodes.

    For a fixed weight matrix W the derivative pairing against any
    direction (h, phi) reduces to one dimensional quadrature sums over
    precomputed node kernels, so a full design gradient costs O(J) per
    direction instead of a matrix assembly.
    """

    pref: complex
    k: float
    speed: np.ndarray
    wline: np.ndarray
    w_base: np.ndarray
    dp: np.ndarray
    n: np.ndarray
    b: np.ndarray
    p0: np.ndarray     # (J,)   kernel against G for the arc length term
    p1: np.ndarray     # (J, 3) kernel against G with xhat factor (phase term)
    pm1: np.ndarray    # (J,)   polarization kernels (u, v, phi components)
    pm2: np.ndarray
    pm3: np.ndarray
    pa: np.ndarray     # (J, 3) field gradient kernel

    def pair(self, h_val, h_der, phi_val):
        """Re<W, T'(h, phi)> from node samples of the direction."""
        hv = np.asarray(h_val, dtype=float)
        hp = np.asarray(h_der, dtype=float)
        pv = np.asarray(phi_val, dtype=float)
        u = np.einsum("jc,jc->j", hp, self.n) / self.speed
        v = np.einsum("jc,jc->j", hp, self.b) / self.speed
        gamma = np.einsum("jc,jc->j", self.dp, hp) / self.speed
        acc = (-1j * self.k) * np.einsum("j,ja,ja->", self.wline, hv, self.p1)
        acc = acc + np.einsum("j,j->", self.wline, u * self.pm1 + v * self.pm2
                              + pv * self.pm3)
        acc = acc + np.einsum("j,ja,ja->", self.wline, hv, self.pa)
        acc = acc + np.einsum("j,j->", self.w_base * gamma, self.p0)
        return float((self.pref * acc).real)


def gradient_kernels(ws, weight):
    """Node kernels of W against the four derivative terms.

    weight is the Q x Q adjoint matrix (dS/d conj T for the scalar being
    differentiated); requires a workspace built with want_gradient=True.
    """
    if ws.grad_tab is None:
        raise ValueError("workspace was built without field gradients")
    w = np.asarray(getattr(weight, "matrix", weight))
    q = ws.basis.size
    s = ws.sphere.weights.size
    j = ws.pts.shape[0]

    # u[q, s, c] = sum_q' conj(W[q', q]) conj(beta[q', s, c])
    u = np.einsum("pq,psc->qsc", np.conj(w), np.conj(ws.beta))
    u2 = u.transpose(1, 0, 2).reshape(s, q * 3)

    def contract(dens):
        return u2 @ dens.transpose(0, 2, 1).reshape(q * 3, j)   # (S, J)

    kg = contract(ws.g_tab)

    one_m1 = 1.0 - ws.m2[0]
    one_m2 = 1.0 - ws.m2[1]
    dm12 = ws.m2[0] - ws.m2[1]
    et = np.einsum("qjc,jc->qj", ws.e_tab, ws.t)
    en = np.einsum("qjc,jc->qj", ws.e_tab, ws.n)
    eb = np.einsum("qjc,jc->qj", ws.e_tab, ws.b)
    # S1 E = (1-m1)(n (t.E) + t (n.E)), etc.
    s1e = one_m1 * (ws.n[None] * et[..., None] + ws.t[None] * en[..., None])
    s2e = one_m2 * (ws.b[None] * et[..., None] + ws.t[None] * eb[..., None])
    s3e = dm12 * (ws.b[None] * en[..., None] + ws.n[None] * eb[..., None])
    k1 = contract(s1e)
    k2 = contract(s2e)
    k3 = contract(s3e)

    ga = np.einsum("jce,qjea->qjca", ws.mtens, ws.grad_tab)
    ka = (u2 @ ga.transpose(0, 2, 1, 3).reshape(q * 3, j * 3)).reshape(s, j, 3)

    aw = ws.sphere.weights[:, None] * ws.phase                 # (S, J)
    p0 = np.einsum("sj,sj->j", aw, kg)
    p1 = np.einsum("sj,sa,sj->ja", aw, ws.sphere.nodes, kg)
    pm1 = np.einsum("sj,sj->j", aw, k1)
    pm2 = np.einsum("sj,sj->j", aw, k2)
    pm3 = np.einsum("sj,sj->j", aw, k3)
    pa = np.einsum("sj,sja->ja", aw, ka)
    return GradientKernels(pref=ws.pref, k=ws.k, speed=ws.speed,
                           wline=ws.wline, w_base=ws.line_quad.weights,
                           dp=ws.dp, n=ws.n, b=ws.b,
                           p0=p0, p1=p1, pm1=pm1, pm2=pm2, pm3=pm3, pa=pa)


def dump_matrix(t, path):
    """Write size, degree, k, rho, cross section area, eps_r and entries.

    Text format, one header line then Q*Q row-major entries as
    're im' pairs with full float precision, for regression diffing.
    """
    mat = t.matrix
    with open(path, "w") as fh:
        fh.write("%d %d %r %r %r %r %r\n" % (t.size, t.degree_max, float(t.k),
                                             float(t.rho), float(t.cross_area),
                                             float(t.eps_r.real),
                                             float(t.eps_r.imag)))
        for val in mat.ravel():
            fh.write("%r %r\n" % (float(val.real), float(val.imag)))


def load_matrix(path):
    """Read a matrix written by dump_matrix."""
    with open(path) as fh:
        head = fh.readline().split()
        q, deg = int(head[0]), int(head[1])
        k, rho, area = float(head[2]), float(head[3]), float(head[4])
        eps = complex(float(head[5]), float(head[6]))
        data = np.loadtxt(fh)
    if data.shape != (q * q, 2):
        raise ValueError("matrix payload has wrong size")
    mat = (data[:, 0] + 1j * data[:, 1]).reshape(q, q)
    return FarFieldMatrix(matrix=mat, degree_max=deg, k=k, rho=rho,
                          cross_area=area, eps_r=eps)
