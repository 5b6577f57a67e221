"""Metal permittivities and electric polarization tensors of thin wires.

The wire material enters the asymptotic far field operator only through its
relative permittivity eps_r(f) and the polarization tensor of the elliptical
cross section.  Measured permittivities for silver and gold are tabulated on
a 300..800 THz grid and interpolated linearly in frequency.

Unit conventions: frequencies in Hz inside the library (CLI keys use THz),
lengths in meters.  The vacuum constants are deliberately the two-digit
values below; every wavenumber in the package derives from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EPS0",
    "MU0",
    "THZ",
    "wavenumber",
    "PermittivityTable",
    "builtin_permittivity",
    "read_permittivity_csv",
    "write_permittivity_csv",
    "EllipticalCrossSection",
    "cross_section_tensor",
    "PolarizationSample",
    "polarization_tensor",
    "polarization_tensor_derivative",
    "plasmonic_resonance",
    "check_polarization_bounds",
]

EPS0 = 8.85e-12   # F/m
MU0 = 1.25e-6     # H/m
THZ = 1.0e12


def wavenumber(f_hz):
    """Free space wavenumber k = 2 pi f sqrt(eps0 mu0)."""
    return 2.0 * math.pi * f_hz * math.sqrt(EPS0 * MU0)


# measured relative permittivities on a uniform 300..800 THz grid
_FREQS_THZ = np.arange(300.0, 801.0, 50.0)

_SILVER = np.array([
    -50.55 + 0.57j, -36.23 + 0.48j, -26.94 + 0.32j, -20.57 + 0.44j,
    -16.05 + 0.44j, -12.62 + 0.42j, -9.78 + 0.31j, -7.64 + 0.25j,
    -5.94 + 0.20j, -4.41 + 0.21j, -3.10 + 0.21j,
])

_GOLD = np.array([
    -41.78 + 2.94j, -28.84 + 1.77j, -20.11 + 1.24j, -14.10 + 1.04j,
    -9.36 + 1.53j, -5.59 + 2.19j, -2.54 + 3.65j, -1.73 + 5.06j,
    -1.69 + 5.66j, -1.66 + 5.74j, -1.50 + 5.63j,
])


@dataclass(frozen=True)
class PermittivityTable:
    """Relative permittivity samples of one metal on a frequency grid."""

    metal: str
    freqs_hz: np.ndarray
    eps_r: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=float)
        e = np.asarray(self.eps_r, dtype=complex)
        if f.ndim != 1 or f.size < 2 or e.shape != f.shape:
            raise ValueError("need matching 1-d frequency and permittivity arrays")
        if not np.all(np.diff(f) > 0.0):
            raise ValueError("frequencies must be strictly increasing")
        if not (np.all(e.real < 0.0) and np.all(e.imag > 0.0)):
            raise ValueError("expected Re(eps_r) < 0 and Im(eps_r) > 0 throughout")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "eps_r", e)

    @property
    def f_min(self):
        return float(self.freqs_hz[0])

    @property
    def f_max(self):
        return float(self.freqs_hz[-1])

    def lookup(self, f_hz):
        """Linear interpolation of eps_r; frequencies outside the grid raise."""
        f = np.asarray(f_hz, dtype=float)
        pad = 1.0e-9 * self.f_max
        if np.any(f < self.f_min - pad) or np.any(f > self.f_max + pad):
            raise ValueError(
                "frequency outside tabulated range [%g, %g] Hz" % (self.f_min, self.f_max))
        f = np.clip(f, self.f_min, self.f_max)
        re = np.interp(f, self.freqs_hz, self.eps_r.real)
        im = np.interp(f, self.freqs_hz, self.eps_r.imag)
        out = re + 1j * im
        return out if f.ndim else complex(out)


def builtin_permittivity(metal):
    """Tabulated data for 'silver' or 'gold'."""
    key = metal.strip().lower()
    if key == "silver":
        return PermittivityTable("silver", _FREQS_THZ * THZ, _SILVER)
    if key == "gold":
        return PermittivityTable("gold", _FREQS_THZ * THZ, _GOLD)
    raise KeyError("unknown metal %r (builtin tables: silver, gold)" % metal)


def read_permittivity_csv(path):
    """Read 'metal,f_THz,re_eps,im_eps' rows; returns {metal: PermittivityTable}."""
    rows = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if parts[0].lower() == "metal":
                continue
            if len(parts) != 4:
                raise ValueError("bad permittivity row: %r" % line)
            metal = parts[0].lower()
            rows.setdefault(metal, []).append(
                (float(parts[1]), float(parts[2]), float(parts[3])))
    tables = {}
    for metal, data in rows.items():
        data.sort()
        f = np.array([d[0] for d in data]) * THZ
        e = np.array([complex(d[1], d[2]) for d in data])
        tables[metal] = PermittivityTable(metal, f, e)
    if not tables:
        raise ValueError("no permittivity rows found in %s" % path)
    return tables


def write_permittivity_csv(path, tables, header=()):
    with open(path, "w") as fh:
        for h in header:
            fh.write("# %s\n" % h)
        fh.write("metal,f_THz,re_eps,im_eps\n")
        for table in tables:
            for f, e in zip(table.freqs_hz, table.eps_r):
                fh.write("%s,%s,%s,%s\n" % (table.metal, repr(float(f) / THZ),
                                            repr(float(e.real)), repr(float(e.imag))))


@dataclass(frozen=True)
class EllipticalCrossSection:
    """Reference cross section: ellipse with semi-axes a <= b, both < 1.

    The physical cross section is the reference ellipse scaled by rho; the
    short semi-axis a lies along the frame normal n, the long one along the
    binormal b.  Keeping b < 1 guarantees the scaled wire stays inside its
    rho-tube for every aspect ratio.
    """

    a: float
    b: float

    def __post_init__(self):
        if not (0.0 < self.a <= self.b < 1.0):
            raise ValueError("cross section requires 0 < a <= b < 1")

    @property
    def area(self):
        """Reference area |B'| = pi a b."""
        return math.pi * self.a * self.b

    @property
    def aspect(self):
        return self.b / self.a

    @staticmethod
    def from_aspect(aspect, b=0.99):
        """Normalized constructor used by the CLI: fixes b, sets a = b/aspect."""
        if aspect < 1.0:
            raise ValueError("aspect ratio b/a must be >= 1")
        return EllipticalCrossSection(b / aspect, b)


def _tensor_denominators(a, b, eps_r):
    # isolated so validation tests can inject a broken variant
    return a + eps_r * b, b + eps_r * a


def cross_section_tensor(cross_section, eps_r):
    """In-plane polarization tensor of the ellipse, diag(m1, m2).

    m1 belongs to the normal direction (semi-axis a), m2 to the binormal
    (semi-axis b).  Resonances occur where a denominator crosses zero,
    i.e. Re(eps_r) = -b/a for the first entry.
    """
    a, b = cross_section.a, cross_section.b
    d1, d2 = _tensor_denominators(a, b, eps_r)
    return np.array([(a + b) / d1, (a + b) / d2], dtype=complex)


def polarization_tensor(t, n, b, m2):
    """Full 3x3 polarization tensor(s) M = V diag(1, m1, m2) V^T.

    t, n, b are frame vectors of shape (..., 3); m2 the pair from
    cross_section_tensor.  Tangential response is exactly 1 (a needle is
    transparent along its axis at leading order); the in-plane response
    follows the ellipse.
    """
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    b = np.asarray(b, dtype=float)
    m1c, m2c = complex(m2[0]), complex(m2[1])
    outer = lambda u: u[..., :, None] * u[..., None, :]
    return outer(t) + m1c * outer(n) + m2c * outer(b)


def polarization_tensor_derivative(t, n, b, u, v, phi, m2):
    """Directional derivative of the polarization tensor along a design move.

    The frame perturbation has columns V' = [u n + v b | -u t + phi b |
    -v t - phi n] with u = (h'.n)/|p'|, v = (h'.b)/|p'| and phi the twist
    increment; the tensor derivative is V' D V^T + V D V'^T with
    D = diag(1, m1, m2).  u, v, phi broadcast over the leading axes of the
    frame vectors.
    """
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.asarray(u, dtype=float)[..., None]
    v = np.asarray(v, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    cols = (t, n, b)
    dcols = (u * n + v * b, -u * t + phi * b, -v * t - phi * n)
    diag = (1.0 + 0.0j, complex(m2[0]), complex(m2[1]))
    out = 0.0
    for d, c, dc in zip(diag, cols, dcols):
        sym = dc[..., :, None] * c[..., None, :] + c[..., :, None] * dc[..., None, :]
        out = out + d * sym
    return out


@dataclass(frozen=True)
class PolarizationSample:
    """Polarization tensor at one wire point together with its tangent."""

    tensor: np.ndarray
    tangent: np.ndarray

    def check(self, tol=1.0e-12):
        m = np.asarray(self.tensor)
        t = np.asarray(self.tangent, dtype=float)
        if np.abs(m - m.T).max() > tol:
            raise ValueError("polarization tensor not symmetric")
        if np.abs(m @ t - t).max() > tol:
            raise ValueError("tangent is not a unit eigenvector")
        im_eigs = np.linalg.eigvalsh(m.imag)
        if im_eigs.max() > tol:
            raise ValueError("imaginary part not negative semidefinite")
        return self


def plasmonic_resonance(table, cross_section, tol_hz=0.05 * THZ):
    """Frequency where Re(eps_r(f)) = -b/a, or None when there is no root.

    Only the denominator a + eps_r b of the normal-direction entry can
    resonate for metals (the other branch would need Re(eps_r) = -a/b > -1).
    Bisection on the linear interpolant down to tol_hz (0.05 THz, i.e. the
    returned value is within 0.1 THz of the crossing).
    """
    target = -cross_section.b / cross_section.a
    re = table.eps_r.real
    g = re - target
    idx = None
    for j in range(g.size - 1):
        if g[j] == 0.0:
            return float(table.freqs_hz[j])
        if g[j] * g[j + 1] < 0.0:
            idx = j
            break
    if idx is None:
        if g[-1] == 0.0:
            return float(table.freqs_hz[-1])
        return None
    lo, hi = float(table.freqs_hz[idx]), float(table.freqs_hz[idx + 1])
    glo = g[idx]
    while hi - lo > tol_hz:
        mid = 0.5 * (lo + hi)
        gm = table.lookup(mid).real - target
        if gm == 0.0:
            return mid
        if glo * gm < 0.0:
            hi = mid
        else:
            lo, glo = mid, gm
    return 0.5 * (lo + hi)


def _passivity_angle(eps_r):
    """Rotation angle gamma placing all three permittivity phasors correctly.

    With em = eps0*eps_r, the conjugates of em and em - eps0 sit in the
    third quadrant; writing them as |.|e^{i alpha}, |.|e^{i beta} with
    alpha, beta in (pi, 3pi/2), gamma = 3pi/2 - (alpha + beta)/2 lies in
    (0, pi/2) and satisfies Re(e^{i gamma} conj(eps0)) > 0,
    Re(e^{i gamma} conj(em)) > 0, Re(e^{i gamma} conj(em - eps0)) < 0.
    """
    em = EPS0 * complex(eps_r)
    alpha = math.atan2((-em.conjugate()).imag, (-em.conjugate()).real) + math.pi
    dm = (em - EPS0).conjugate()
    beta = math.atan2((-dm).imag, (-dm).real) + math.pi
    for ang in (alpha, beta):
        if not (math.pi < ang < 1.5 * math.pi):
            raise ValueError("permittivity phasor outside the third quadrant")
    return 1.5 * math.pi - 0.5 * (alpha + beta)


def check_polarization_bounds(eps_r, cross_section, rng, n_frames=32):
    """Quadratic form bounds satisfied by every physical polarization tensor.

    Over random orthonormal frames, verifies (violations returned as a dict
    of maxima, all of which should be <= ~1e-10):

    * symmetry of M,
    * the tangent eigenvector relation M t = t,
    * xi . Im(conj(em - eps0) M) xi / Im(conj(em - eps0)) <= |xi|^2,
    * xi . Re(e^{i gamma} conj(em - eps0) M) xi / Re(e^{i gamma}
      conj(em - eps0)) >= |xi|^2 for the constructed gamma,
    * gamma in (0, pi/2) with the three sign conditions that define it.
    """
    eps_r = complex(eps_r)
    em = EPS0 * eps_r
    dm = (em - EPS0).conjugate()
    gamma = _passivity_angle(eps_r)
    rot = complex(math.cos(gamma), math.sin(gamma))

    out = {
        "symmetry": 0.0,
        "tangent_eigenvector": 0.0,
        "imag_form_excess": 0.0,
        "real_form_deficit": 0.0,
        "gamma_sign_conditions": 0.0,
    }
    if not (0.0 < gamma < 0.5 * math.pi):
        out["gamma_sign_conditions"] = float("inf")
    signs = ((rot * EPS0).real > 0.0,
             (rot * em.conjugate()).real > 0.0,
             (rot * dm).real < 0.0)
    if not all(signs):
        out["gamma_sign_conditions"] = float("inf")

    m2 = cross_section_tensor(cross_section, eps_r)
    for _ in range(n_frames):
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(q) < 0.0:
            q[:, 2] = -q[:, 2]
        t, n, b = q[:, 0], q[:, 1], q[:, 2]
        m = polarization_tensor(t, n, b, m2)
        out["symmetry"] = max(out["symmetry"], float(np.abs(m - m.T).max()))
        out["tangent_eigenvector"] = max(
            out["tangent_eigenvector"], float(np.abs(m @ t - t).max()))
        a_form = (dm * m).imag / dm.imag
        out["imag_form_excess"] = max(
            out["imag_form_excess"],
            float(np.linalg.eigvalsh(0.5 * (a_form + a_form.T)).max() - 1.0))
        b_form = (rot * dm * m).real / (rot * dm).real
        out["real_form_deficit"] = max(
            out["real_form_deficit"],
            float(1.0 - np.linalg.eigvalsh(0.5 * (b_form + b_form.T)).min()))
    return out
