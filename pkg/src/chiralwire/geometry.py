"""Spline curves, adapted orthonormal frames and curve quadrature.

A nanowire midline is a cubic not-a-knot spline through n knots on a fixed
parameter interval [0, L].  Cross sections are oriented by an orthonormal
frame (t, n, b) along the curve: a rotation minimizing frame built once at
initialization, twisted about the tangent by a scalar spline, and transported
between optimizer iterates by the tangent-aligning rotation (no re-derivation
of the reference normal mid-run).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "FrameFlipError",
    "WireDesign",
    "SpineSpline",
    "TwistSpline",
    "AdaptedFrame",
    "LineQuadrature",
    "eval_spline",
    "build_rmf",
    "apply_twist",
    "update_frame",
    "curvature",
    "twist_rate",
    "relative_twist",
    "read_design",
    "write_design",
]

FLIP_TOL = 1.0e-6
ORTHO_TOL = 1.0e-12


class FrameFlipError(RuntimeError):
    """Raised when a tangent reverses by (nearly) 180 degrees in one update."""


def _as_knots(knots):
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or knots.size < 4:
        raise ValueError("need a 1-d array of at least 4 knot parameters")
    if not np.all(np.diff(knots) > 0.0):
        raise ValueError("knot parameters must be strictly increasing")
    return knots


class _Spline:
    """Cubic not-a-knot interpolant on a fixed knot partition."""

    def __init__(self, knots, values):
        self.knots = _as_knots(knots)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != self.knots.size:
            raise ValueError("one value row per knot required")
        self._cs = CubicSpline(self.knots, self.values, bc_type="not-a-knot")

    @property
    def domain(self):
        return self.knots[0], self.knots[-1]

    def __call__(self, t, order=0):
        return eval_spline(self, t, order)


class SpineSpline(_Spline):
    """Vector-valued midline spline p: [0, L] -> R^3."""

    def __init__(self, knots, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != 3:
            raise ValueError("spine knot values must have shape (n, 3)")
        super().__init__(knots, values)


class TwistSpline(_Spline):
    """Scalar twist angle spline theta: [0, L] -> R (radians)."""

    def __init__(self, knots, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1:
            raise ValueError("twist knot values must be a 1-d array")
        super().__init__(knots, values)


def eval_spline(spline, t, order=0):
    """Evaluate a spline or one of its first two derivatives.

    Parameters outside the knot interval raise ValueError; the curves are
    only defined on [0, L] and extrapolation would silently corrupt the
    quadratures downstream.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    t = np.asarray(t, dtype=float)
    lo, hi = spline.domain
    pad = 1.0e-12 * max(abs(lo), abs(hi), 1.0)
    if np.any(t < lo - pad) or np.any(t > hi + pad):
        raise ValueError("parameter outside the spline domain [%g, %g]" % (lo, hi))
    return spline._cs(np.clip(t, lo, hi), nu=order)


def cardinal_splines(knots):
    """Not-a-knot cardinal basis: column j interpolates the j-th unit vector.

    Returns a CubicSpline whose evaluation at t has shape (..., n); entry j
    is the cardinal function L_j(t).  Any spline on this partition is
    sum_j values[j] * L_j, which is what makes knot-wise design derivatives
    a fixed linear map.
    """
    knots = _as_knots(knots)
    return CubicSpline(knots, np.eye(knots.size), bc_type="not-a-knot")


@dataclass
class AdaptedFrame:
    """Orthonormal frame samples (t, n, b) at fixed curve parameters."""

    params: np.ndarray
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray

    def copy(self):
        return AdaptedFrame(self.params.copy(), self.t.copy(), self.n.copy(), self.b.copy())

    def check(self, tol=ORTHO_TOL):
        """Verify unit length, mutual orthogonality and right-handedness."""
        for u in (self.t, self.n, self.b):
            err = np.abs(np.einsum("ij,ij->i", u, u) - 1.0).max()
            if err > tol:
                raise ValueError("frame vector not unit length (err=%g)" % err)
        for u, v in ((self.t, self.n), (self.t, self.b), (self.n, self.b)):
            err = np.abs(np.einsum("ij,ij->i", u, v)).max()
            if err > tol:
                raise ValueError("frame vectors not orthogonal (err=%g)" % err)
        handed = np.einsum("ij,ij->i", np.cross(self.t, self.n), self.b)
        if np.abs(handed - 1.0).max() > 10.0 * tol:
            raise ValueError("frame is not right handed")
        return self


def _orthonormalize(t, n):
    """Project n off t, normalize both, rebuild b; used to stop drift."""
    t = t / np.linalg.norm(t, axis=-1, keepdims=True)
    n = n - np.einsum("ij,ij->i", n, t)[:, None] * t
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    return t, n, np.cross(t, n)


def _double_reflection_step(p0, t0, n0, p1, t1):
    """One double reflection step of the rotation minimizing frame."""
    v1 = p1 - p0
    c1 = v1 @ v1
    if c1 == 0.0:
        return n0
    r_l = n0 - (2.0 / c1) * (v1 @ n0) * v1
    t_l = t0 - (2.0 / c1) * (v1 @ t0) * v1
    v2 = t1 - t_l
    c2 = v2 @ v2
    if c2 == 0.0:
        return r_l
    return r_l - (2.0 / c2) * (v2 @ r_l) * v2


def build_rmf(spine, params, reference_normal, steps=4096):
    """Rotation minimizing frame of the spine by double reflection.

    The frame is propagated over a fixed uniform grid of `steps` steps
    spanning the full spline domain and restricted to the requested
    parameters by one local step each, so the result is a property of the
    curve alone: different parameter sets sample the same frame, not
    re-integrations of it.  reference_normal seeds n at the domain start;
    it must be orthogonal to the initial tangent up to 1e-8 (it is
    re-orthogonalized below that, rejected above).
    """
    params = np.asarray(params, dtype=float)
    if params.ndim != 1 or params.size < 2:
        raise ValueError("need at least two frame parameters")
    if np.any(np.diff(params) <= 0.0):
        raise ValueError("frame parameters must be strictly increasing")
    steps = int(steps)
    if steps < 2:
        raise ValueError("steps must be >= 2")

    t0, t1 = spine.domain
    grid = np.linspace(t0, t1, steps + 1)
    pts = eval_spline(spine, grid, 0)
    der = eval_spline(spine, grid, 1)
    speed = np.linalg.norm(der, axis=1)
    if speed.min() <= 0.0 or not np.all(np.isfinite(speed)):
        raise ValueError("spine is not regular on the frame grid")
    tang = der / speed[:, None]

    n0 = np.asarray(reference_normal, dtype=float)
    norm0 = np.linalg.norm(n0)
    if norm0 == 0.0:
        raise ValueError("reference normal must be nonzero")
    n0 = n0 / norm0
    dot0 = float(n0 @ tang[0])
    if abs(dot0) >= 1.0e-8:
        raise ValueError("reference normal not orthogonal to the initial tangent")
    n0 = n0 - dot0 * tang[0]
    n0 = n0 / np.linalg.norm(n0)

    normals = np.empty_like(tang)
    normals[0] = n0
    for i in range(grid.shape[0] - 1):
        normals[i + 1] = _double_reflection_step(pts[i], tang[i], normals[i],
                                                 pts[i + 1], tang[i + 1])
        normals[i + 1] /= np.linalg.norm(normals[i + 1])

    # restrict: one local step from the nearest grid node at or below each
    # requested parameter
    p_pts = eval_spline(spine, params, 0)
    p_der = eval_spline(spine, params, 1)
    p_speed = np.linalg.norm(p_der, axis=1)
    if p_speed.min() <= 0.0:
        raise ValueError("spine is not regular at the requested parameters")
    p_tang = p_der / p_speed[:, None]
    idx = np.clip(np.searchsorted(grid, params, side="right") - 1, 0, steps)
    n_s = np.empty_like(p_tang)
    for j, (p, i) in enumerate(zip(params, idx)):
        n_s[j] = _double_reflection_step(pts[i], tang[i], normals[i],
                                         p_pts[j], p_tang[j])
    t_s, n_s, b_s = _orthonormalize(p_tang, n_s)
    return AdaptedFrame(params.copy(), t_s, n_s, b_s)


def apply_twist(frame, twist):
    """Rotate (n, b) about t by the twist spline angle at each sample."""
    theta = eval_spline(twist, frame.params, 0)
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    n_new = c * frame.n + s * frame.b
    b_new = -s * frame.n + c * frame.b
    return AdaptedFrame(frame.params.copy(), frame.t.copy(), n_new, b_new)


def _rotate_by_angle(frame, phi):
    c, s = np.cos(phi)[:, None], np.sin(phi)[:, None]
    n_new = c * frame.n + s * frame.b
    b_new = -s * frame.n + c * frame.b
    return n_new, b_new


def update_frame(frame, new_spine, phi=None, flip_tol=FLIP_TOL, polish=True):
    """Transport a frame to a perturbed curve and twist state.

    First rotates (n, b) about the old tangent by the twist increment phi
    (a TwistSpline, an array of angles per sample, or None), then maps the
    triad by the rotation that takes each old tangent to the new one.  A
    near-reversal of the tangent (1 + t_old.t_new <= flip_tol) raises
    FrameFlipError; the optimizer treats that as a failed step.
    """
    if phi is None:
        n_phi, b_phi = frame.n, frame.b
    else:
        if isinstance(phi, TwistSpline) or hasattr(phi, "_cs"):
            angles = eval_spline(phi, frame.params, 0)
        else:
            angles = np.asarray(phi, dtype=float)
            if angles.shape != frame.params.shape:
                raise ValueError("per-sample twist increments must match the frame grid")
        n_phi, b_phi = _rotate_by_angle(frame, angles)

    der = eval_spline(new_spine, frame.params, 1)
    speed = np.linalg.norm(der, axis=1)
    if speed.min() <= 0.0:
        raise ValueError("perturbed spine is not regular on the frame grid")
    t_new = der / speed[:, None]

    dot = 1.0 + np.einsum("ij,ij->i", frame.t, t_new)
    if dot.min() <= flip_tol:
        raise FrameFlipError("tangent flipped (1 + t.t' = %g)" % dot.min())

    axis = np.cross(frame.t, t_new)
    cos = (dot - 1.0)[:, None]
    n_new = cos * n_phi - np.einsum("ij,ij->i", t_new, n_phi)[:, None] * frame.t \
        - (np.einsum("ij,ij->i", t_new, b_phi) / dot)[:, None] * axis
    b_new = cos * b_phi - np.einsum("ij,ij->i", t_new, b_phi)[:, None] * frame.t \
        + (np.einsum("ij,ij->i", t_new, n_phi) / dot)[:, None] * axis

    if polish:
        t_new, n_new, b_new = _orthonormalize(t_new, n_new)
    return AdaptedFrame(frame.params.copy(), t_new, n_new, b_new)


def min_self_distance(spine, params, skip=2):
    """Smallest distance between non-neighboring spine samples.

    Pairs closer than `skip` indices along the curve are excluded (they
    are legitimately close); the caller compares the result against the
    wire diameter to detect near self-intersection.
    """
    pts = eval_spline(spine, np.asarray(params, dtype=float), 0)
    m = pts.shape[0]
    if m <= skip + 1:
        return math.inf
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    idx = np.arange(m)
    mask = np.abs(idx[:, None] - idx[None, :]) > skip
    return float(dist[mask].min())


def curvature(spine, t):
    """Curvature |p' x p''| / |p'|^3 at the given parameters."""
    d1 = np.atleast_2d(eval_spline(spine, t, 1))
    d2 = np.atleast_2d(eval_spline(spine, t, 2))
    num = np.linalg.norm(np.cross(d1, d2), axis=1)
    den = np.linalg.norm(d1, axis=1) ** 3
    out = num / den
    return out if np.ndim(t) else float(out[0])


def _fd_derivative(values, grid):
    """Fourth order finite differences on a uniform grid (rows of `values`)."""
    h = grid[1] - grid[0]
    if values.shape[0] < 7:
        return np.gradient(values, grid, axis=0)
    out = np.empty_like(values)
    v = values
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    # one sided fourth order stencils at the boundary rows
    c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h)
    out[0] = c @ v[:5]
    out[1] = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * h) @ v[:5]
    out[-1] = -(c @ v[-1:-6:-1])
    out[-2] = -(np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * h) @ v[-1:-6:-1])
    return out


def transport_twist_correction(t_old, t_new, dt_old, dt_new):
    """Twist rate picked up by the tangent-aligning rotation field.

    For the pointwise minimal rotation R(tau) taking t_old(tau) to
    t_new(tau), the transported frame acquires the extra twist rate
    omega . t_new, with omega the angular velocity of R along the curve;
    dt_old / dt_new are the parameter derivatives of the tangents.  All
    arguments are (J, 3); returns (J,).  The formula follows from the
    quaternion of the minimal rotation, q = (q0, w/(2 q0)) with
    w = t_old x t_new and q0 = sqrt((1 + t_old . t_new)/2).
    """
    e, f = t_old, t_new
    c = np.einsum("jc,jc->j", e, f)
    if np.any(1.0 + c <= FLIP_TOL):
        raise FrameFlipError("tangent reversal inside twist transport")
    w = np.cross(e, f)
    q0 = np.sqrt(0.5 * (1.0 + c))
    qv = w / (2.0 * q0)[:, None]
    cp = np.einsum("jc,jc->j", dt_old, f) + np.einsum("jc,jc->j", e, dt_new)
    wp = np.cross(dt_old, f) + np.cross(e, dt_new)
    q0p = cp / (4.0 * q0)
    qvp = wp / (2.0 * q0)[:, None] - w * (cp / (8.0 * q0 ** 3))[:, None]
    omega = 2.0 * (q0[:, None] * qvp - q0p[:, None] * qv - np.cross(qvp, qv))
    return np.einsum("jc,jc->j", omega, f)


def twist_rate(frame, seg_starts=None, pts_per_seg=None):
    """Twist rate beta = n'(s) . b(s) with respect to the curve parameter.

    Frames are known only at samples, so n' comes from fourth order finite
    differences.  When the samples come from a composite quadrature grid
    (seg_starts / pts_per_seg given), the stencils are applied segment by
    segment so they never straddle a spline knot, where third derivatives
    of the underlying curves jump; shared boundary nodes average the two
    one sided estimates.
    """
    grid = frame.params
    if seg_starts is not None:
        dn = np.zeros_like(frame.n)
        hits = np.zeros(grid.size)
        for s in np.asarray(seg_starts, dtype=int):
            sl = slice(s, s + pts_per_seg)
            dn[sl] += _fd_derivative(frame.n[sl], grid[sl])
            hits[sl] += 1.0
        dn /= hits[:, None]
        return np.einsum("ij,ij->i", dn, frame.b)
    steps = np.diff(grid)
    if steps.size and (steps.max() - steps.min()) > 1.0e-9 * steps.max():
        # fall back to numpy's nonuniform stencil
        dn = np.gradient(frame.n, grid, axis=0)
    else:
        dn = _fd_derivative(frame.n, grid)
    return np.einsum("ij,ij->i", dn, frame.b)


def relative_twist(frame, base_frame):
    """Unwrapped rotation angle of frame about the shared tangent.

    Both frames must be sampled on the same parameters of the same spine
    (equal tangents); the result gamma satisfies
    n = cos(gamma) n_base + sin(gamma) b_base at every sample, continuous
    along the curve, so rotating base_frame by gamma reproduces frame.
    """
    c = np.einsum("ij,ij->i", frame.n, base_frame.n)
    s = np.einsum("ij,ij->i", frame.n, base_frame.b)
    return np.unwrap(np.arctan2(s, c))


@dataclass(frozen=True)
class LineQuadrature:
    """Composite Simpson rule over the spline segments of [0, L].

    params holds the global node parameters (segment endpoints shared, so
    for uniform knots the grid is globally uniform), weights the accumulated
    Simpson weights.  seg_starts[j] is the index of the first node of
    segment j; each segment spans pts_per_seg nodes.
    """

    params: np.ndarray
    weights: np.ndarray
    seg_starts: np.ndarray
    pts_per_seg: int

    @staticmethod
    def build(knots, pts_per_seg=11):
        knots = _as_knots(knots)
        pts = int(pts_per_seg)
        if pts < 3 or pts % 2 == 0:
            raise ValueError("pts_per_seg must be an odd integer >= 3")
        nseg = knots.size - 1
        stride = pts - 1
        total = nseg * stride + 1
        params = np.empty(total)
        weights = np.zeros(total)
        seg_starts = np.arange(nseg) * stride
        base = np.ones(pts)
        base[1:-1:2] = 4.0
        base[2:-1:2] = 2.0
        for j in range(nseg):
            a, b = knots[j], knots[j + 1]
            h = (b - a) / stride
            sl = slice(j * stride, j * stride + pts)
            params[sl] = np.linspace(a, b, pts)
            weights[sl] += base * (h / 3.0)
        return LineQuadrature(params, weights, seg_starts, pts)

    def segment_slice(self, j):
        s = self.seg_starts[j]
        return slice(s, s + self.pts_per_seg)

    def segment_weights(self, j):
        a = self.params[self.seg_starts[j]]
        b = self.params[self.seg_starts[j] + self.pts_per_seg - 1]
        h = (b - a) / (self.pts_per_seg - 1)
        w = np.ones(self.pts_per_seg)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (h / 3.0)


@dataclass(frozen=True)
class WireDesign:
    """Complete serializable description of one nanowire design."""

    length: float
    knots: np.ndarray
    spine: np.ndarray
    twist: np.ndarray
    reference_normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "spine", np.asarray(self.spine, dtype=float))
        object.__setattr__(self, "twist", np.asarray(self.twist, dtype=float))
        object.__setattr__(self, "reference_normal",
                           np.asarray(self.reference_normal, dtype=float))
        if self.knots.ndim != 1 or self.knots.size < 2 or \
                not np.all(np.diff(self.knots) > 0.0):
            raise ValueError("knot parameters must be strictly increasing")
        if self.spine.shape != (self.knots.size, 3):
            raise ValueError("spine knots must have shape (n, 3)")
        if self.twist.shape != (self.knots.size,):
            raise ValueError("twist knots must have shape (n,)")

    @property
    def n_knots(self):
        return self.knots.size

    def spine_spline(self):
        return SpineSpline(self.knots, self.spine)

    def twist_spline(self):
        return TwistSpline(self.knots, self.twist)


def write_design(design, path, header=()):
    """Write a design file; floats are stored as repr so reads are bit exact."""
    lines = ["# nanowire design"]
    for h in header:
        lines.append("# " + str(h))
    lines.append("length_m = %s" % repr(float(design.length)))
    lines.append("knot_parameters = " + " ".join(repr(float(v)) for v in design.knots))
    lines.append("reference_normal = " + " ".join(repr(float(v)) for v in design.reference_normal))
    lines.append("twist_knots = " + " ".join(repr(float(v)) for v in design.twist))
    lines.append("spine_knots =")
    for row in design.spine:
        lines.append("  " + " ".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_design(path):
    """Read a design file written by write_design."""
    scalars = {}
    spine_rows = []
    in_spine = False
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if in_spine:
                if line.startswith((" ", "\t")):
                    spine_rows.append([float(v) for v in line.split()])
                    continue
                in_spine = False
            if "=" in line:
                key, _, val = line.partition("=")
                key = key.strip()
                val = val.strip()
                if key == "spine_knots" and not val:
                    in_spine = True
                else:
                    scalars[key] = val
    for key in ("length_m", "knot_parameters", "reference_normal", "twist_knots"):
        if key not in scalars:
            raise ValueError("design file missing field %r" % key)
    if not spine_rows:
        raise ValueError("design file missing spine_knots block")
    return WireDesign(
        length=float(scalars["length_m"]),
        knots=np.array([float(v) for v in scalars["knot_parameters"].split()]),
        spine=np.array(spine_rows),
        twist=np.array([float(v) for v in scalars["twist_knots"].split()]),
        reference_normal=np.array([float(v) for v in scalars["reference_normal"].split()]),
    )
