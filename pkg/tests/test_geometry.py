"""Splines, adapted frames, line quadrature and wire design files."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from chiralwire.geometry import (
    AdaptedFrame,
    FrameFlipError,
    LineQuadrature,
    SpineSpline,
    TwistSpline,
    WireDesign,
    apply_twist,
    build_rmf,
    curvature,
    eval_spline,
    min_self_distance,
    read_design,
    relative_twist,
    twist_rate,
    update_frame,
    write_design,
)

from conftest import make_bent_design


# ---------------------------------------------------------------------------
# splines

def test_spline_reproduces_cubic_polynomial():
    # a not-a-knot cubic spline through samples of a cubic is that cubic
    knots = np.linspace(0.0, 2.0, 7)
    coef = np.array([0.3, -1.2, 0.8, 0.45])
    vals = np.polyval(coef, knots)
    sp = TwistSpline(knots, vals)
    t = np.linspace(0.0, 2.0, 113)
    assert_allclose(eval_spline(sp, t), np.polyval(coef, t),
                    rtol=0.0, atol=1.0e-12)
    dcoef = np.polyder(coef)
    assert_allclose(eval_spline(sp, t, 1), np.polyval(dcoef, t),
                    rtol=0.0, atol=1.0e-11)
    assert_allclose(eval_spline(sp, t, 2), np.polyval(np.polyder(dcoef), t),
                    rtol=0.0, atol=1.0e-10)


def test_spline_interpolates_knots():
    rng = np.random.default_rng(5)
    knots = np.linspace(0.0, 1.0, 9)
    vals = rng.standard_normal((9, 3))
    sp = SpineSpline(knots, vals)
    assert_allclose(sp(knots), vals, rtol=0.0, atol=1.0e-14)


def test_spine_spline_shape_checks():
    knots = np.linspace(0.0, 1.0, 5)
    with pytest.raises(ValueError):
        SpineSpline(knots, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        SpineSpline(knots[::-1], np.zeros((5, 3)))


# ---------------------------------------------------------------------------
# line quadrature

def test_line_quadrature_simpson_exact_for_cubics():
    knots = np.array([0.0, 0.4, 1.0, 1.7])
    quad = LineQuadrature.build(knots, 5)
    vals = quad.params ** 3 - 2.0 * quad.params
    exact = 1.7 ** 4 / 4.0 - 1.7 ** 2
    assert_allclose(quad.weights @ vals, exact, rtol=1.0e-14)


def test_line_quadrature_weight_sum_and_knot_alignment():
    knots = np.linspace(0.0, 3.0, 7)
    quad = LineQuadrature.build(knots, 11)
    assert_allclose(quad.weights.sum(), 3.0, rtol=1.0e-14)
    stride = quad.pts_per_seg - 1
    for j, kv in enumerate(knots):
        assert quad.params[j * stride] == kv
    assert quad.params.size == 6 * stride + 1


def test_line_quadrature_rejects_even_counts():
    with pytest.raises(ValueError):
        LineQuadrature.build(np.linspace(0.0, 1.0, 4), 4)


# ---------------------------------------------------------------------------
# frames

def test_rmf_straight_line_is_constant():
    knots = np.linspace(0.0, 1.0, 6)
    spine = SpineSpline(knots, np.stack([np.zeros(6), np.zeros(6), knots],
                                        axis=1))
    params = np.linspace(0.0, 1.0, 41)
    fr = build_rmf(spine, params, np.array([1.0, 0.0, 0.0]))
    assert_allclose(fr.t, np.tile([0.0, 0.0, 1.0], (41, 1)), atol=1.0e-14)
    assert_allclose(fr.n, np.tile([1.0, 0.0, 0.0], (41, 1)), atol=1.0e-12)
    assert_allclose(fr.b, np.tile([0.0, 1.0, 0.0], (41, 1)), atol=1.0e-12)


def test_rmf_planar_arc_keeps_binormal():
    # for a planar curve the rotation minimizing frame has no twist, so
    # the out-of-plane direction stays fixed along the whole arc
    R = 2.0
    ang = np.linspace(0.0, 1.2, 9)
    knots = R * ang
    spine = SpineSpline(knots, np.stack([R * np.cos(ang), R * np.sin(ang),
                                         np.zeros(9)], axis=1))
    params = np.linspace(knots[0], knots[-1], 33)
    t0 = spine(knots[0], 1)
    t0 /= np.linalg.norm(t0)
    n0 = np.array([-1.0, 0.0, 0.0])
    n0 -= (n0 @ t0) * t0
    n0 /= np.linalg.norm(n0)
    fr = build_rmf(spine, params, n0)
    assert_allclose(np.abs(fr.b[:, 2]), np.ones(33), atol=1.0e-6)
    rate = twist_rate(fr)
    assert np.abs(rate).max() < 1.0e-4


def test_rmf_twist_rate_near_zero_on_bent_wire():
    design = make_bent_design(1.0, 8, seed=3)
    quad = LineQuadrature.build(design.knots, 9)
    fr = build_rmf(design.spine_spline(), quad.params,
                   design.reference_normal)
    fr.check()
    rate = twist_rate(fr, quad.seg_starts, quad.pts_per_seg)
    assert np.abs(rate).max() < 2.0e-3


def test_apply_twist_rotates_by_spline_angle():
    design = make_bent_design(1.0, 6, seed=1)
    params = np.linspace(0.0, 1.0, 21)
    fr = build_rmf(design.spine_spline(), params, design.reference_normal)
    tw = design.twist_spline()
    out = apply_twist(fr, tw)
    th = eval_spline(tw, params)
    expect_n = np.cos(th)[:, None] * fr.n + np.sin(th)[:, None] * fr.b
    assert_allclose(out.n, expect_n, atol=1.0e-14)
    out.check()


def test_update_frame_same_spine_is_pure_rotation():
    design = make_bent_design(1.0, 6, seed=2)
    params = np.linspace(0.0, 1.0, 25)
    spine = design.spine_spline()
    fr = build_rmf(spine, params, design.reference_normal)
    ang = np.full(params.shape, 0.4)
    out = update_frame(fr, spine, ang)
    expect = math.cos(0.4) * fr.n + math.sin(0.4) * fr.b
    assert_allclose(out.n, expect, atol=1.0e-12)


def test_update_frame_flip_raises():
    knots = np.linspace(0.0, 1.0, 5)
    line = np.stack([np.zeros(5), np.zeros(5), knots], axis=1)
    spine = SpineSpline(knots, line)
    params = np.linspace(0.0, 1.0, 17)
    fr = build_rmf(spine, params, np.array([1.0, 0.0, 0.0]))
    reversed_spine = SpineSpline(knots, line * np.array([1.0, 1.0, -1.0]))
    with pytest.raises(FrameFlipError):
        update_frame(fr, reversed_spine)


def test_relative_twist_recovers_applied_angles():
    design = make_bent_design(1.0, 6, seed=4)
    params = np.linspace(0.0, 1.0, 31)
    fr = build_rmf(design.spine_spline(), params, design.reference_normal)
    # angles exceeding pi exercise the unwrapping
    tw = TwistSpline(design.knots, np.linspace(0.0, 7.0, design.n_knots))
    out = apply_twist(fr, tw)
    gamma = relative_twist(out, fr)
    assert_allclose(gamma, eval_spline(tw, params), atol=1.0e-12)


def test_curvature_of_circle():
    R = 0.7
    ang = np.linspace(0.0, 1.5, 25)
    knots = R * ang
    spine = SpineSpline(knots, np.stack([R * np.cos(ang), R * np.sin(ang),
                                         np.zeros(25)], axis=1))
    t = np.linspace(knots[2], knots[-3], 11)
    assert_allclose(curvature(spine, t), np.full(11, 1.0 / R), rtol=1.0e-3)


def test_min_self_distance_flags_near_touch():
    # hairpin: two straight legs 0.05 apart
    knots = np.linspace(0.0, 2.0, 21)
    s = knots / 2.0
    x = np.where(s < 0.5, 0.0, 0.05)
    z = np.where(s < 0.5, s, 1.0 - s)
    spine = SpineSpline(knots, np.stack([x, np.zeros(21), z], axis=1))
    params = np.linspace(0.0, 2.0, 81)
    d = min_self_distance(spine, params, skip=10)
    assert d < 0.08


# ---------------------------------------------------------------------------
# design files

def test_design_io_round_trip(tmp_path):
    design = make_bent_design(2.5e-7, 7, seed=9)
    path = tmp_path / "wire.txt"
    write_design(design, path, ("source = unit-test",))
    back = read_design(path)
    assert back.length == design.length
    assert np.array_equal(back.knots, design.knots)
    assert np.array_equal(back.spine, design.spine)
    assert np.array_equal(back.twist, design.twist)
    assert np.array_equal(back.reference_normal, design.reference_normal)
    # a second write of the reread design is byte identical
    path2 = tmp_path / "wire2.txt"
    write_design(back, path2, ("source = unit-test",))
    assert path.read_text() == path2.read_text()


def test_design_validation():
    knots = np.linspace(0.0, 1.0, 5)
    good = dict(length=1.0, knots=knots, spine=np.zeros((5, 3)),
                twist=np.zeros(5), reference_normal=np.array([1.0, 0.0, 0.0]))
    good["spine"][:, 2] = knots
    WireDesign(**good)
    bad = dict(good, knots=knots[::-1].copy())
    with pytest.raises(ValueError):
        WireDesign(**bad)
    bad = dict(good, twist=np.zeros(4))
    with pytest.raises(ValueError):
        WireDesign(**bad)


def test_read_design_rejects_junk(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("length_m = 1.0\nnot a key value line\n")
    with pytest.raises(ValueError):
        read_design(path)
