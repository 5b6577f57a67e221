"""Permittivity tables, cross-sections and the polarization tensor."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import chiralwire.material as material
from chiralwire.material import (
    EPS0,
    MU0,
    EllipticalCrossSection,
    PermittivityTable,
    THZ,
    builtin_permittivity,
    check_polarization_bounds,
    cross_section_tensor,
    plasmonic_resonance,
    polarization_tensor,
    read_permittivity_csv,
    wavenumber,
    write_permittivity_csv,
)


def test_wavenumber_is_vacuum_dispersion():
    f = 500.0 * THZ
    assert_allclose(wavenumber(f), 2.0 * math.pi * f * math.sqrt(EPS0 * MU0),
                    rtol=1.0e-15)
    assert wavenumber(f) == pytest.approx(10449042.955555836, rel=1.0e-12)


def test_builtin_tables_grid_values():
    silver = builtin_permittivity("silver")
    gold = builtin_permittivity("gold")
    assert silver.lookup(500.0 * THZ) == pytest.approx(-16.05 + 0.44j)
    assert gold.lookup(700.0 * THZ) == pytest.approx(-1.69 + 5.66j)
    assert silver.f_min == 300.0 * THZ and silver.f_max == 800.0 * THZ
    with pytest.raises(KeyError):
        builtin_permittivity("copper")


def test_lookup_interpolates_and_guards_range():
    silver = builtin_permittivity("silver")
    lo = silver.lookup(500.0 * THZ)
    hi = silver.lookup(550.0 * THZ)
    assert silver.lookup(525.0 * THZ) == pytest.approx(0.5 * (lo + hi))
    with pytest.raises(ValueError):
        silver.lookup(299.0 * THZ)
    with pytest.raises(ValueError):
        silver.lookup(801.0 * THZ)


def test_table_validation():
    f = np.array([400.0, 500.0]) * THZ
    with pytest.raises(ValueError):
        PermittivityTable("x", f[::-1].copy(), np.array([-2 + 1j, -3 + 1j]))
    with pytest.raises(ValueError):
        PermittivityTable("x", f, np.array([2.0 + 1j, -3 + 1j]))
    with pytest.raises(ValueError):
        PermittivityTable("x", f, np.array([-2 - 1j, -3 + 1j]))


def test_permittivity_csv_round_trip(tmp_path):
    tables = [builtin_permittivity(m) for m in ("silver", "gold")]
    path = tmp_path / "eps.csv"
    write_permittivity_csv(path, tables, header=("round trip check",))
    back = read_permittivity_csv(path)
    for table in tables:
        assert_allclose(back[table.metal].freqs_hz, table.freqs_hz)
        assert_allclose(back[table.metal].eps_r, table.eps_r)
    with pytest.raises(ValueError):
        empty = tmp_path / "empty.csv"
        empty.write_text("# nothing\nmetal,f_THz,re_eps,im_eps\n")
        read_permittivity_csv(empty)


def test_cross_section_basics():
    cs = EllipticalCrossSection.from_aspect(16.05)
    assert cs.b == pytest.approx(0.99)
    assert cs.a == pytest.approx(0.99 / 16.05)
    assert cs.aspect == pytest.approx(16.05)
    assert cs.area == pytest.approx(math.pi * cs.a * cs.b)
    with pytest.raises(ValueError):
        EllipticalCrossSection(a=0.5, b=0.3)
    with pytest.raises(ValueError):
        EllipticalCrossSection(a=0.0, b=0.3)


def test_plasmonic_resonance_matches_aspect(silver):
    cs = EllipticalCrossSection.from_aspect(16.05)
    f = plasmonic_resonance(silver, cs)
    assert f == pytest.approx(500.0 * THZ, abs=0.05 * THZ)
    # no frequency in the band reaches such a negative real part
    assert plasmonic_resonance(silver, EllipticalCrossSection.from_aspect(60.0)) is None


def test_polarization_tensor_properties(silver):
    rng = np.random.default_rng(12)
    eps_r = silver.lookup(500.0 * THZ)
    for aspect in (1.92, 7.14, 16.05):
        cs = EllipticalCrossSection.from_aspect(aspect)
        out = check_polarization_bounds(eps_r, cs, rng, n_frames=16)
        worst = max(out.values())
        assert worst < 1.0e-10, out


def test_polarization_tensor_tangent_action(silver):
    # tangent response is exactly 1, in-plane response follows the ellipse
    eps_r = silver.lookup(600.0 * THZ)
    cs = EllipticalCrossSection.from_aspect(9.78)
    m2 = cross_section_tensor(cs, eps_r)
    t = np.array([0.0, 0.0, 1.0])
    n = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    m = polarization_tensor(t, n, b, m2)
    assert_allclose(m @ t, t, atol=1.0e-14)
    assert_allclose(m @ n, m2[0] * n, atol=1.0e-14)
    assert_allclose(m @ b, m2[1] * b, atol=1.0e-14)
    assert np.abs(m - m.T).max() < 1.0e-13


def test_broken_denominators_violate_bounds(silver):
    rng = np.random.default_rng(3)
    eps_r = silver.lookup(500.0 * THZ)
    cs = EllipticalCrossSection.from_aspect(7.14)
    original = material._tensor_denominators

    def broken(a, b, eps_r):
        return a - eps_r * b, b - eps_r * a

    material._tensor_denominators = broken
    try:
        out = check_polarization_bounds(eps_r, cs, rng, n_frames=16)
    finally:
        material._tensor_denominators = original
    assert max(out.values()) > 1.0e-6
