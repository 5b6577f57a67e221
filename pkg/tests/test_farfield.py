"""Far field matrix assembly, shape derivative and adjoint kernels."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from chiralwire.farfield import (
    FarFieldMatrix,
    QuadratureOverflowError,
    assemble_T,
    assemble_T_derivative,
    blocks,
    build_workspace,
    dump_matrix,
    gradient_kernels,
    load_matrix,
)
from chiralwire.geometry import (
    LineQuadrature,
    SpineSpline,
    TwistSpline,
    apply_twist,
    build_rmf,
    eval_spline,
)
from chiralwire.material import EllipticalCrossSection, THZ, wavenumber

from conftest import make_bent_design


def _assemble_design(design, eps_r, k, cross_section, degree, pts_per_seg=7,
                     rho=None, reflect=False, rotation=None, **kw):
    """T of a design; optional mirror across z = 0 or rigid rotation."""
    knots = design.knots
    spk = design.spine.copy()
    twk = design.twist.copy()
    ref = design.reference_normal.copy()
    if reflect:
        spk[:, 2] = -spk[:, 2]
        twk = -twk
        ref[2] = -ref[2]
    if rotation is not None:
        spk = spk @ rotation.T
        ref = rotation @ ref
    spine = SpineSpline(knots, spk)
    quad = LineQuadrature.build(knots, pts_per_seg)
    t0 = eval_spline(spine, np.array([knots[0]]), 1)[0]
    t0 /= np.linalg.norm(t0)
    ref = ref - (ref @ t0) * t0
    ref /= np.linalg.norm(ref)
    frame = apply_twist(build_rmf(spine, quad.params, ref), TwistSpline(knots, twk))
    if rho is None:
        rho = 0.05 / (k * np.sqrt(cross_section.a * cross_section.b))
    return assemble_T(spine, frame, cross_section, eps_r, k, rho, degree,
                      quad, **kw)


@pytest.fixture(scope="module")
def setup_500(silver, lam_500):
    k = wavenumber(500.0 * THZ)
    eps_r = silver.lookup(500.0 * THZ)
    cs = EllipticalCrossSection.from_aspect(16.05)
    return k, eps_r, cs


def test_matrix_metadata_and_validation(setup_500, lam_500):
    k, eps_r, cs = setup_500
    design = make_bent_design(0.5 * lam_500, 5)
    t = _assemble_design(design, eps_r, k, cs, degree=3)
    assert t.size == 2 * 3 * 5
    assert t.basis.degree_max == 3
    assert t.hs_norm == pytest.approx(np.linalg.norm(t.matrix), rel=1.0e-15)
    with pytest.raises(ValueError):
        FarFieldMatrix(matrix=np.zeros((4, 4), dtype=complex), degree_max=3,
                       k=k, rho=t.rho, cross_area=cs.area, eps_r=eps_r)
    bad = t.matrix.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        FarFieldMatrix(matrix=bad, degree_max=3, k=k, rho=t.rho,
                       cross_area=cs.area, eps_r=eps_r)


def test_blocks_partition_matrix(setup_500, lam_500):
    k, eps_r, cs = setup_500
    t = _assemble_design(make_bent_design(0.5 * lam_500, 5), eps_r, k, cs, degree=2)
    blk = blocks(t)
    assert set(blk) == {"++", "+-", "-+", "--"}
    half = t.size // 2
    rebuilt = np.block([[blk["++"], blk["+-"]], [blk["-+"], blk["--"]]])
    assert_allclose(rebuilt, t.matrix, rtol=0.0, atol=0.0)
    assert blk["++"].shape == (half, half)


def test_rho_scaling_is_exact(setup_500, lam_500):
    # entries scale exactly as rho^2, so the norm ratio is exactly 4
    k, eps_r, cs = setup_500
    design = make_bent_design(0.5 * lam_500, 5, bend=0.15, twist_amp=0.5)
    rho = 0.05 / (k * np.sqrt(cs.a * cs.b))
    t1 = _assemble_design(design, eps_r, k, cs, degree=3, rho=rho)
    t2 = _assemble_design(design, eps_r, k, cs, degree=3, rho=2.0 * rho)
    assert_allclose(t2.matrix, 4.0 * t1.matrix, rtol=1.0e-12)
    assert t2.hs_norm / t1.hs_norm == pytest.approx(4.0, rel=1.0e-12)


def test_transparent_material_gives_zero(setup_500, lam_500):
    k, _, cs = setup_500
    t = _assemble_design(make_bent_design(0.5 * lam_500, 5), 1.0 + 0.0j, k, cs,
                         degree=2)
    assert np.abs(t.matrix).max() == 0.0


def test_mirror_swaps_helicity_blocks(setup_500, lam_500):
    k, eps_r, cs = setup_500
    design = make_bent_design(0.5 * lam_500, 6, bend=0.2, twist_amp=0.8, seed=3)
    t = _assemble_design(design, eps_r, k, cs, degree=3)
    t_m = _assemble_design(design, eps_r, k, cs, degree=3, reflect=True)
    b = blocks(t)
    b_m = blocks(t_m)
    scale = t.hs_norm
    for one, two in (("++", "--"), ("+-", "-+")):
        n1 = np.linalg.norm(b[one])
        n2 = np.linalg.norm(b_m[two])
        assert abs(n1 - n2) < 1.0e-8 * scale
    # the original is genuinely chiral: opposite blocks differ
    assert abs(np.linalg.norm(b["++"]) - np.linalg.norm(b["--"])) > 1.0e-4 * scale


def test_rotation_preserves_block_singular_values(setup_500,
                                                  lam_500):
    k, eps_r, cs = setup_500
    design = make_bent_design(0.5 * lam_500, 6, bend=0.2, twist_amp=0.8, seed=4)
    ang = 0.7
    rot = np.array([[np.cos(ang), -np.sin(ang), 0.0],
                    [np.sin(ang), np.cos(ang), 0.0],
                    [0.0, 0.0, 1.0]])
    rot = rot @ np.array([[1.0, 0.0, 0.0],
                          [0.0, np.cos(0.3), -np.sin(0.3)],
                          [0.0, np.sin(0.3), np.cos(0.3)]])
    t = _assemble_design(design, eps_r, k, cs, degree=3)
    t_r = _assemble_design(design, eps_r, k, cs, degree=3, rotation=rot)
    b = blocks(t)
    b_r = blocks(t_r)
    scale = t.hs_norm
    for key in ("++", "+-", "-+", "--"):
        s1 = np.linalg.svd(b[key], compute_uv=False)
        s2 = np.linalg.svd(b_r[key], compute_uv=False)
        assert np.abs(s1 - s2).max() < 1.0e-8 * scale


def test_derivative_matches_finite_differences(setup_500,
                                               lam_500):
    k, eps_r, cs = setup_500
    design = make_bent_design(0.5 * lam_500, 5, bend=0.1, twist_amp=0.4, seed=7)
    knots = design.knots
    spine = SpineSpline(knots, design.spine)
    quad = LineQuadrature.build(knots, 7)
    t0v = eval_spline(spine, np.array([knots[0]]), 1)[0]
    t0v /= np.linalg.norm(t0v)
    ref = design.reference_normal - (design.reference_normal @ t0v) * t0v
    ref /= np.linalg.norm(ref)
    base = build_rmf(spine, quad.params, ref)
    frame = apply_twist(base, TwistSpline(knots, design.twist))
    rho = 0.05 / (k * np.sqrt(cs.a * cs.b))
    deg = 3

    rng = np.random.default_rng(11)

    # twist direction: exact frame update is a further rotation about t
    dtw = 0.5 * rng.standard_normal(knots.size)
    phi = TwistSpline(knots, dtw)
    td = assemble_T_derivative(spine, frame, cs, eps_r, k, rho, deg, quad,
                               phi=phi)
    eps_fd = 1.0e-5
    mats = []
    for sgn in (+1.0, -1.0):
        fr = apply_twist(base, TwistSpline(knots, design.twist + sgn * eps_fd * dtw))
        mats.append(assemble_T(spine, fr, cs, eps_r, k, rho, deg, quad).matrix)
    fd = (mats[0] - mats[1]) / (2.0 * eps_fd)
    assert_allclose(td.matrix, fd, atol=1.0e-6 * np.abs(fd).max())

    # rigid translation: the adapted frame is unchanged
    h0 = 1.0e-2 * lam_500 * rng.standard_normal(3)
    h = SpineSpline(knots, np.tile(h0, (knots.size, 1)))
    td = assemble_T_derivative(spine, frame, cs, eps_r, k, rho, deg, quad, h=h)
    mats = []
    for sgn in (+1.0, -1.0):
        sp = SpineSpline(knots, design.spine + sgn * eps_fd * h0)
        mats.append(assemble_T(sp, frame, cs, eps_r, k, rho, deg, quad).matrix)
    fd = (mats[0] - mats[1]) / (2.0 * eps_fd)
    assert_allclose(td.matrix, fd, atol=1.0e-6 * np.abs(fd).max())


def test_gradient_kernels_match_dense_derivative(setup_500,
                                                 lam_500):
    # adjoint kernel path and dense assembly are independent routes
    k, eps_r, cs = setup_500
    design = make_bent_design(0.5 * lam_500, 6, bend=0.12, twist_amp=0.5, seed=9)
    knots = design.knots
    spine = SpineSpline(knots, design.spine)
    quad = LineQuadrature.build(knots, 7)
    t0v = eval_spline(spine, np.array([knots[0]]), 1)[0]
    t0v /= np.linalg.norm(t0v)
    ref = design.reference_normal - (design.reference_normal @ t0v) * t0v
    ref /= np.linalg.norm(ref)
    frame = apply_twist(build_rmf(spine, quad.params, ref),
                        TwistSpline(knots, design.twist))
    rho = 0.05 / (k * np.sqrt(cs.a * cs.b))
    deg = 3
    ws = build_workspace(spine, frame, cs, eps_r, k, rho, deg, quad,
                         want_gradient=True)
    rng = np.random.default_rng(13)
    q = ws.basis.size
    w = rng.standard_normal((q, q)) + 1j * rng.standard_normal((q, q))
    kernels = gradient_kernels(ws, w)
    for trial in range(3):
        hk = 0.1 * lam_500 * rng.standard_normal((knots.size, 3))
        pk = 0.4 * rng.standard_normal(knots.size)
        hsp = SpineSpline(knots, hk)
        psp = TwistSpline(knots, pk)
        td = assemble_T_derivative(spine, frame, cs, eps_r, k, rho, deg, quad,
                                   h=hsp, phi=psp, workspace=ws)
        dense = float(np.sum(np.conj(w) * td.matrix).real)
        paired = kernels.pair(eval_spline(hsp, quad.params, 0),
                              eval_spline(hsp, quad.params, 1),
                              eval_spline(psp, quad.params, 0))
        assert paired == pytest.approx(dense, rel=1.0e-10)


def test_dump_load_round_trip(tmp_path, setup_500, lam_500):
    k, eps_r, cs = setup_500
    t = _assemble_design(make_bent_design(0.5 * lam_500, 5), eps_r, k, cs,
                         degree=2)
    path = tmp_path / "tmat.txt"
    dump_matrix(t, path)
    back = load_matrix(path)
    assert_allclose(back.matrix, t.matrix, rtol=0.0, atol=0.0)
    assert back.degree_max == t.degree_max
    assert back.k == t.k and back.rho == pytest.approx(t.rho, rel=1.0e-15)
    assert back.eps_r == t.eps_r
    with pytest.raises(ValueError):
        bad = tmp_path / "bad.txt"
        lines = path.read_text().splitlines()
        bad.write_text("\n".join(lines[:-3]) + "\n")
        load_matrix(bad)


def test_degree_warning_and_strict_mode(setup_500, lam_500):
    k, eps_r, cs = setup_500
    design = make_bent_design(1.0 * lam_500, 5)
    # half wavelength radius -> k R ~ pi, so degree 2 is below the rule
    with pytest.warns(UserWarning, match="circumscribing"):
        _assemble_design(design, eps_r, k, cs, degree=2)
    with pytest.raises(ValueError, match="circumscribing"):
        _assemble_design(design, eps_r, k, cs, degree=2, strict_degree=True)


def test_quadrature_overflow_rejected(setup_500):
    k, eps_r, cs = setup_500
    # a wire spanning hundreds of wavelengths exceeds the quadrature cap
    length = 500.0 * 2.0 * np.pi / k
    knots = np.linspace(0.0, length, 4)
    spk = np.zeros((4, 3))
    spk[:, 2] = knots - 0.5 * length
    spine = SpineSpline(knots, spk)
    quad = LineQuadrature.build(knots, 3)
    frame = build_rmf(spine, quad.params, np.array([1.0, 0.0, 0.0]))
    with pytest.warns(UserWarning):
        with pytest.raises(QuadratureOverflowError):
            build_workspace(spine, frame, cs, eps_r, k, 1.0e-9, 3, quad)


def test_frame_grid_mismatch_rejected(setup_500, lam_500):
    k, eps_r, cs = setup_500
    design = make_bent_design(0.5 * lam_500, 5)
    spine = SpineSpline(design.knots, design.spine)
    quad7 = LineQuadrature.build(design.knots, 7)
    quad5 = LineQuadrature.build(design.knots, 5)
    frame = build_rmf(spine, quad5.params, design.reference_normal)
    with pytest.raises(ValueError, match="quadrature nodes"):
        build_workspace(spine, frame, cs, eps_r, k, 1.0e-9, 3, quad7)
