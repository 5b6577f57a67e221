"""Regularized design objective Phi and its gradient.

The design vector packs the spine knot coordinates and twist knot values
of a wire into one flat array; the objective is

    Phi = -jHS + alpha1 Psi1 + alpha2 Psi2 + alpha3 Psi3,

where jHS is the normalized em-chirality of the far field matrix, Psi1
promotes uniformly distributed knots at total length L, Psi2 penalizes
curvature and Psi3 penalizes twisting of the cross section.  The frame
entering the far field matrix is not a function of the design vector
alone: it is transported from a reference state (the current optimizer
iterate) by the tangent-aligning rotation plus the twist increment, which
is exactly the evolution the analytic gradient linearizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import chirality, farfield
from .geometry import (AdaptedFrame, LineQuadrature, SpineSpline, TwistSpline,
                       WireDesign, apply_twist, build_rmf, cardinal_splines,
                       eval_spline, transport_twist_correction, update_frame)
from .material import (EllipticalCrossSection, builtin_permittivity,
                       wavenumber)

__all__ = [
    "DesignVector",
    "ObjectiveConfig",
    "pack_design",
    "unpack_design",
    "psi1",
    "psi1_gradient",
    "psi2",
    "psi2_gradient",
    "psi3",
    "psi3_gradient",
    "evaluate_phi",
    "evaluate_phi_gradient",
    "log_header",
    "log_line",
]


def pack_design(spine_values, twist_values):
    """Flatten knot data to the design layout [x.. y.. z.. twist..]."""
    sv = np.asarray(spine_values, dtype=float)
    tv = np.asarray(twist_values, dtype=float)
    if sv.ndim != 2 or sv.shape[1] != 3 or tv.shape != (sv.shape[0],):
        raise ValueError("need spine values (n, 3) and twist values (n,)")
    return np.concatenate([sv[:, 0], sv[:, 1], sv[:, 2], tv])


def unpack_design(x):
    """Inverse of pack_design; validates length divisible by four."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size % 4:
        raise ValueError("design vector length must be 4n")
    if not np.all(np.isfinite(x)):
        raise ValueError("design vector has non-finite entries")
    n = x.size // 4
    spine = np.stack([x[0:n], x[n:2 * n], x[2 * n:3 * n]], axis=1)
    return spine, x[3 * n:].copy()


@dataclass(frozen=True)
class DesignVector:
    """Flat design state: spine knot coordinates then twist knot values."""

    values: np.ndarray

    def __post_init__(self):
        unpack_design(self.values)

    @property
    def n_knots(self):
        return self.values.size // 4

    @property
    def spine_values(self):
        return unpack_design(self.values)[0]

    @property
    def twist_values(self):
        return unpack_design(self.values)[1]

    @staticmethod
    def from_design(design):
        return DesignVector(pack_design(design.spine, design.twist))


@dataclass
class ObjectiveConfig:
    """Problem data, penalty weights and the frame transport reference.

    base_x / base_frame define the state the frame is transported from;
    the optimizer refreshes them after every accepted step.  synthetic_t
    short-circuits the far field assembly (test seam); synthetic_zero_dt
    makes the matrix derivative vanish in the gradient (test seam).
    """

    knots: np.ndarray
    alpha1: float
    alpha2: float
    alpha3: float
    f_opt: float                      # Hz
    metal: str
    cross_section: EllipticalCrossSection
    length: float
    degree_max: int
    pts_per_seg: int = 11
    rho: float | None = None
    permittivity_table: object = None
    sphere_quad: object = None
    base_x: np.ndarray | None = None
    base_frame: AdaptedFrame | None = None
    base_beta: np.ndarray | None = None
    synthetic_t: object = None
    synthetic_zero_dt: bool = False
    k: float = field(init=False)
    lam: float = field(init=False)
    eps_r: complex = field(init=False)
    line_quad: LineQuadrature = field(init=False)

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0.0:
            raise ValueError("penalty weights must be nonnegative")
        if self.length <= 0.0:
            raise ValueError("length must be positive")
        self.knots = np.asarray(self.knots, dtype=float)
        table = self.permittivity_table
        if table is None:
            table = builtin_permittivity(self.metal)
            self.permittivity_table = table
        self.k = wavenumber(self.f_opt)
        self.lam = 2.0 * math.pi / self.k
        self.eps_r = table.lookup(self.f_opt)
        if self.rho is None:
            ab = self.cross_section.a * self.cross_section.b
            self.rho = 0.05 / (self.k * math.sqrt(ab))
        self.line_quad = LineQuadrature.build(self.knots, self.pts_per_seg)
        card = cardinal_splines(self.knots)
        p = self.line_quad.params
        self._lv = card(p)            # (J, n) cardinal values
        self._ld = card(p, 1)
        self._ldd = card(p, 2)

    def wire_state(self, x):
        """(spine, twist values, transported frame) at design vector x."""
        sv, tv = unpack_design(x)
        spine = SpineSpline(self.knots, sv)
        if self.base_frame is None:
            raise ValueError("config has no reference frame")
        if self.base_x is not None and np.array_equal(np.asarray(x), self.base_x):
            return spine, tv, self.base_frame
        base_tv = unpack_design(self.base_x)[1]
        dtw = TwistSpline(self.knots, tv - base_tv)
        frame = update_frame(self.base_frame, spine, dtw)
        return spine, tv, frame

    def beta_at(self, x, spine=None, tv=None):
        """Twist rate samples at design vector x, transported analytically.

        The reference state carries beta; any other state adds the twist
        increment rate plus the twist picked up by the tangent-aligning
        rotation field, so no finite differences of frame samples enter
        the objective.
        """
        if self.base_beta is None:
            raise ValueError("config has no reference twist rate")
        if self.base_x is not None and np.array_equal(np.asarray(x), self.base_x):
            return self.base_beta
        if spine is None or tv is None:
            sv, tv = unpack_design(x)
            spine = SpineSpline(self.knots, sv)
        params = self.line_quad.params
        base_tv = unpack_design(self.base_x)[1]
        dphi = eval_spline(TwistSpline(self.knots, tv - base_tv), params, 1)
        dp = eval_spline(spine, params, 1)
        ddp = eval_spline(spine, params, 2)
        speed = np.linalg.norm(dp, axis=1)
        t_new = dp / speed[:, None]
        dt_new = _tangent_derivative(dp, ddp, speed)
        corr = transport_twist_correction(self._base_t, t_new,
                                          self._base_dt, dt_new)
        return self.base_beta + dphi + corr

    def rebase(self, x, frame, beta):
        """Make (x, frame, beta) the transport reference state."""
        self.base_x = np.asarray(x, dtype=float).copy()
        self.base_frame = frame
        self.base_beta = np.asarray(beta, dtype=float).copy()
        sv = unpack_design(self.base_x)[0]
        spine = SpineSpline(self.knots, sv)
        params = self.line_quad.params
        dp = eval_spline(spine, params, 1)
        ddp = eval_spline(spine, params, 2)
        speed = np.linalg.norm(dp, axis=1)
        self._base_t = dp / speed[:, None]
        self._base_dt = _tangent_derivative(dp, ddp, speed)

    def rebase_to(self, x):
        """Transport frame and twist rate to x and make it the reference."""
        spine, tv, frame = self.wire_state(x)
        beta = self.beta_at(x, spine, tv)
        self.rebase(x, frame, beta)
        return spine, frame


def config_from_design(design, alpha1, alpha2, alpha3, f_opt, metal,
                       cross_section, degree_max, pts_per_seg=11, rho=None,
                       permittivity_table=None):
    """Build a config whose reference state is a stored wire design."""
    cfg = ObjectiveConfig(knots=design.knots, alpha1=alpha1, alpha2=alpha2,
                          alpha3=alpha3, f_opt=f_opt, metal=metal,
                          cross_section=cross_section, length=design.length,
                          degree_max=degree_max, pts_per_seg=pts_per_seg,
                          rho=rho, permittivity_table=permittivity_table)
    frame = build_rmf(SpineSpline(design.knots, design.spine),
                      cfg.line_quad.params, design.reference_normal)
    tw = TwistSpline(design.knots, design.twist)
    frame = apply_twist(frame, tw)
    # a rotation minimizing frame is twist free, so beta is the twist rate
    beta = eval_spline(tw, cfg.line_quad.params, 1)
    cfg.rebase(pack_design(design.spine, design.twist), frame, beta)
    return cfg


# ---------------------------------------------------------------------------
# penalty functionals

def _segment_lengths(spine, quad):
    speed = np.linalg.norm(eval_spline(spine, quad.params, 1), axis=1)
    n_seg = quad.seg_starts.size
    out = np.empty(n_seg)
    for j in range(n_seg):
        sl = quad.segment_slice(j)
        out[j] = quad.segment_weights(j) @ speed[sl]
    return out


def psi1(spine, quad, length):
    """Knot distribution penalty: squared deviation of the segment arc
    lengths from the equal share L/(n-1)."""
    seg = _segment_lengths(spine, quad)
    share = 1.0 / seg.size
    return float(np.sum((share - seg / length) ** 2))


def psi1_gradient(spine, quad, length, lv, ld):
    """Gradient of psi1 over all 3n spine coordinates; (n, 3) layout."""
    params = quad.params
    dp = eval_spline(spine, params, 1)
    speed = np.linalg.norm(dp, axis=1)
    unit = dp / speed[:, None]
    seg = _segment_lengths(spine, quad)
    share = 1.0 / seg.size
    coef = share - seg / length
    n = lv.shape[1]
    grad = np.zeros((n, 3))
    for j in range(seg.size):
        sl = quad.segment_slice(j)
        w = quad.segment_weights(j)
        # d(seg_j)[h] = int_seg (p'.h')/|p'|
        block = (w[:, None] * unit[sl]).T @ ld[sl]          # (3, n)
        grad += (-2.0 * coef[j] / length) * block.T
    return grad


def psi2(spine, quad, length):
    """Mean squared curvature: (1/L) int kappa^2 |p'| dt."""
    dp = eval_spline(spine, quad.params, 1)
    ddp = eval_spline(spine, quad.params, 2)
    speed = np.linalg.norm(dp, axis=1)
    cross = np.cross(dp, ddp)
    dens = np.einsum("jc,jc->j", cross, cross) / speed ** 5
    return float(quad.weights @ dens) / length


def psi2_gradient(spine, quad, length, lv, ld, ldd):
    """Gradient of psi2 over the spine coordinates; (n, 3) layout."""
    params = quad.params
    dp = eval_spline(spine, params, 1)
    ddp = eval_spline(spine, params, 2)
    speed = np.linalg.norm(dp, axis=1)
    pp = np.einsum("jc,jc->j", dp, ddp)
    dd = np.einsum("jc,jc->j", ddp, ddp)
    s3, s5, s7 = speed ** 3, speed ** 5, speed ** 7
    # integrand derivative: a1 . h'' + a2 . h'
    a1 = 2.0 * ddp / s3[:, None] - 2.0 * (pp / s5)[:, None] * dp
    a2 = (-3.0 * (dd / s5)[:, None] * dp - 2.0 * (pp / s5)[:, None] * ddp
          + 5.0 * (pp ** 2 / s7)[:, None] * dp)
    w = quad.weights
    grad = (ldd.T @ (w[:, None] * a1) + ld.T @ (w[:, None] * a2)) / length
    return grad


def _tangent_derivative(dp, ddp, speed):
    pp = np.einsum("jc,jc->j", dp, ddp)
    return ddp / speed[:, None] - dp * (pp / speed ** 3)[:, None]


def psi3(spine, beta, quad, length):
    """Mean squared twist rate: (1/L) int beta^2 |p'| dt, beta = n'.b."""
    speed = np.linalg.norm(eval_spline(spine, quad.params, 1), axis=1)
    return float(quad.weights @ (np.asarray(beta) ** 2 * speed)) / length


def psi3_gradient(spine, frame, beta, quad, length, lv, ld):
    """Gradient of psi3: spine part (n, 3) and twist part (n,)."""
    params = quad.params
    dp = eval_spline(spine, params, 1)
    ddp = eval_spline(spine, params, 2)
    speed = np.linalg.norm(dp, axis=1)
    beta = np.asarray(beta, dtype=float)
    tprime = _tangent_derivative(dp, ddp, speed)
    tpb = np.einsum("jc,jc->j", tprime, frame.b)
    tpn = np.einsum("jc,jc->j", tprime, frame.n)
    # d beta[h] = (-(h'.n)(t'.b) + (h'.b)(t'.n)) / |p'|
    a = (2.0 * beta)[:, None] * (-frame.n * tpb[:, None] + frame.b * tpn[:, None]) \
        + (beta ** 2 / speed)[:, None] * dp
    w = quad.weights
    grad_p = (ld.T @ (w[:, None] * a)) / length
    grad_t = (ld.T @ (w * 2.0 * beta * speed)) / length
    return grad_p, grad_t


# ---------------------------------------------------------------------------
# objective

def _assemble(cfg, spine, frame, want_gradient):
    return farfield.build_workspace(spine, frame, cfg.cross_section, cfg.eps_r,
                                    cfg.k, cfg.rho, cfg.degree_max,
                                    cfg.line_quad, cfg.sphere_quad,
                                    want_gradient=want_gradient)


def evaluate_phi(x, cfg):
    """Objective value at design vector x.

    Returns (phi, ChiralityReport, {'psi1','psi2','psi3'}).  The report
    comes from the assembled far field matrix (or the synthetic test
    matrix when the seam is set).  Inside phi the curvature and twist
    rate penalties are counted per wavelength of arc (psi2 and psi3 are
    multiplied by lam^2), which makes all three penalties dimensionless
    and the objective invariant under rescaling a design together with
    the wavelength.  The returned penalty values are the normalized
    ones, i.e. exactly what the weights multiply.
    """
    spine, tv, frame = cfg.wire_state(x)
    if cfg.synthetic_t is not None:
        report = chirality.measure(cfg.synthetic_t)
    else:
        ws = _assemble(cfg, spine, frame, want_gradient=False)
        t = farfield.assemble_T(spine, frame, cfg.cross_section, cfg.eps_r,
                                cfg.k, cfg.rho, cfg.degree_max, cfg.line_quad,
                                workspace=ws)
        report = chirality.measure(t)
    lam2 = cfg.lam ** 2
    p1 = psi1(spine, cfg.line_quad, cfg.length)
    p2 = lam2 * psi2(spine, cfg.line_quad, cfg.length)
    p3 = lam2 * psi3(spine, cfg.beta_at(x, spine, tv), cfg.line_quad,
                     cfg.length)
    phi = (-report.jHS + cfg.alpha1 * p1 + cfg.alpha2 * p2 + cfg.alpha3 * p3)
    return phi, report, {"psi1": p1, "psi2": p2, "psi3": p3}


def _jhs_weight(t_matrix):
    """Adjoint matrix W with jHS'[T]H = Re<H, W> for the HS pairing."""
    bl = chirality.split_blocks(t_matrix)
    norms = {key: float(np.linalg.norm(val)) for key, val in bl.items()}
    hs = math.sqrt(sum(v * v for v in norms.values()))
    chi = math.hypot(norms["++"] - norms["--"], norms["-+"] - norms["+-"])
    floor = 1.0e-12 * hs
    if hs == 0.0 or chi <= floor:
        raise chirality.DomainXError("chiHS vanishes, jHS not differentiable")
    if min(norms.values()) <= floor:
        raise chirality.DomainXError("a helicity block norm vanishes")
    coef = {
        "++": (norms["++"] - norms["--"]) / (chi * norms["++"]),
        "--": -(norms["++"] - norms["--"]) / (chi * norms["--"]),
        "-+": (norms["-+"] - norms["+-"]) / (chi * norms["-+"]),
        "+-": -(norms["-+"] - norms["+-"]) / (chi * norms["+-"]),
    }
    half = t_matrix.shape[0] // 2
    w = np.empty_like(t_matrix)
    sl = {"+": slice(0, half), "-": slice(half, 2 * half)}
    for c in "+-":
        for d in "+-":
            key = c + d
            w[sl[c], sl[d]] = (coef[key] / hs) * bl[key] - (chi / hs ** 3) * bl[key]
    return w


def evaluate_phi_gradient(x, cfg):
    """Gradient of phi over the 4n design coordinates.

    The far field part pairs the jHS adjoint matrix against the shape
    derivative in every cardinal spline direction via precomputed node
    kernels; the penalty parts use their closed-form derivative
    integrands.  Raises DomainXError when jHS is not differentiable at x.
    """
    spine, tv, frame = cfg.wire_state(x)
    n = cfg.knots.size
    lv, ld, ldd = cfg._lv, cfg._ld, cfg._ldd
    grad = np.zeros(4 * n)

    if not cfg.synthetic_zero_dt:
        if cfg.synthetic_t is not None:
            raise ValueError("cannot differentiate a synthetic far field matrix")
        ws = _assemble(cfg, spine, frame, want_gradient=True)
        t = farfield.assemble_T(spine, frame, cfg.cross_section, cfg.eps_r,
                                cfg.k, cfg.rho, cfg.degree_max, cfg.line_quad,
                                workspace=ws)
        w = _jhs_weight(t.matrix)
        kern = farfield.gradient_kernels(ws, w)
        wl = kern.wline
        # spine directions: value part couples to the phase and field
        # gradient kernels, derivative part to the polarization and arc
        # length kernels
        val_side = wl[:, None] * (-1j * kern.k * kern.p1 + kern.pa)   # (J, 3)
        der_side = (wl * kern.pm1 / kern.speed)[:, None] * kern.n \
            + (wl * kern.pm2 / kern.speed)[:, None] * kern.b \
            + (kern.w_base * kern.p0 / kern.speed)[:, None] * kern.dp
        g_spine = (kern.pref * (lv.T @ val_side + ld.T @ der_side)).real
        g_twist = (kern.pref * (lv.T @ (wl * kern.pm3))).real
        # phi = -jHS + penalties
        grad[:3 * n] -= g_spine.T.reshape(3 * n)
        grad[3 * n:] -= g_twist

    lam2 = cfg.lam ** 2
    if cfg.alpha1 > 0.0:
        g1 = psi1_gradient(spine, cfg.line_quad, cfg.length, lv, ld)
        grad[:3 * n] += cfg.alpha1 * g1.T.reshape(3 * n)
    if cfg.alpha2 > 0.0:
        g2 = psi2_gradient(spine, cfg.line_quad, cfg.length, lv, ld, ldd)
        grad[:3 * n] += cfg.alpha2 * lam2 * g2.T.reshape(3 * n)
    if cfg.alpha3 > 0.0:
        beta = cfg.beta_at(x, spine, tv)
        g3p, g3t = psi3_gradient(spine, frame, beta, cfg.line_quad, cfg.length,
                                 lv, ld)
        grad[:3 * n] += cfg.alpha3 * lam2 * g3p.T.reshape(3 * n)
        grad[3 * n:] += cfg.alpha3 * lam2 * g3t
    return grad


def log_header():
    return "iteration,phi,j2,jHS,hs_norm,psi1,psi2,psi3"


def log_line(iteration, phi, report, psis):
    return "%d,%.12e,%.8f,%.8f,%.12e,%.6e,%.6e,%.6e" % (
        iteration, phi, report.j2, report.jHS, report.hs_norm,
        psis["psi1"], psis["psi2"], psis["psi3"])
