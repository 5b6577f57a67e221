"""Electromagnetic chirality measures of a blocked far field matrix.

A far field matrix in the circularly polarized basis splits into four
helicity blocks T^{cd} (c = outgoing, d = incoming polarization).  The
scatterer is em-chiral to the extent that its response to the two incoming
polarizations differs; this is quantified by comparing singular value
sequences (chi2) or block Hilbert-Schmidt norms (chiHS, a smooth
relaxation), both normalized by the total interaction strength ||T||_HS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BLOCK_KEYS",
    "DomainXError",
    "ChiralityReport",
    "split_blocks",
    "measure",
    "chiHS_derivative",
    "jHS_gradient",
]

BLOCK_KEYS = ("++", "+-", "-+", "--")

# partner pairs entering chiHS: (++ vs --) and (-+ vs +-)
_PARTNER = {"++": "--", "--": "++", "+-": "-+", "-+": "+-"}


class DomainXError(ValueError):
    """Raised when chiHS is not differentiable at the given matrix.

    Differentiability requires chiHS > 0 and all four block norms positive;
    the tolerance is relative to the total Hilbert-Schmidt norm so the test
    is scale-free.
    """


def _as_matrix(t):
    mat = np.asarray(getattr(t, "matrix", t))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] % 2:
        raise ValueError("expected a square matrix with even size")
    return mat


def split_blocks(t):
    """Helicity blocks of a square matrix as {'++': .., '+-': .., ...}.

    Key order is (outgoing, incoming); the leading half of the index range
    is the +1 block of the basis ordering.
    """
    mat = _as_matrix(t)
    half = mat.shape[0] // 2
    sl = {"+": slice(0, half), "-": slice(half, 2 * half)}
    return {c + d: mat[sl[c], sl[d]] for c in "+-" for d in "+-"}


def _hs(a, b=None):
    if b is None:
        return float(np.linalg.norm(a))
    return complex(np.vdot(b, a))       # <a, b> = sum a conj(b)


@dataclass(frozen=True)
class ChiralityReport:
    """Chirality measures and the per-block spectral data behind them.

    chi2 compares the descending singular value sequences of partner
    blocks; chiHS compares only their total norms, 0 <= chiHS <= chi2 <=
    hs_norm.  j2 = chi2/hs_norm and jHS = chiHS/hs_norm lie in [0, 1],
    reaching 1 only for a maximally em-chiral response.
    """

    chi2: float
    chiHS: float
    hs_norm: float
    j2: float
    jHS: float
    block_norms: dict
    block_sigmas: dict

    def to_text(self):
        lines = [
            "chi2   = %.12e" % self.chi2,
            "chiHS  = %.12e" % self.chiHS,
            "hsnorm = %.12e" % self.hs_norm,
            "j2     = %.12f" % self.j2,
            "jHS    = %.12f" % self.jHS,
        ]
        for key in BLOCK_KEYS:
            lines.append("norm[%s] = %.12e" % (key, self.block_norms[key]))
        for key in BLOCK_KEYS:
            vals = " ".join("%.6e" % s for s in self.block_sigmas[key])
            lines.append("sigma[%s] = %s" % (key, vals))
        return "\n".join(lines) + "\n"


def measure(t):
    """Chirality measures of a far field matrix (or plain square array).

    Computes the four block SVDs, the sequence distance chi2, the smooth
    relaxation chiHS, the total Hilbert-Schmidt norm and the normalized
    measures j2, jHS.  A zero matrix raises ValueError since the
    normalized measures are undefined there.
    """
    blocks = split_blocks(t)
    norms = {key: _hs(val) for key, val in blocks.items()}
    sigmas = {key: np.linalg.svd(val, compute_uv=False) for key, val in blocks.items()}
    hs_norm = math.sqrt(sum(v * v for v in norms.values()))
    if hs_norm == 0.0:
        raise ValueError("zero matrix has no normalized chirality")
    chi2 = math.sqrt(float(np.sum((sigmas["++"] - sigmas["--"]) ** 2))
                     + float(np.sum((sigmas["+-"] - sigmas["-+"]) ** 2)))
    chi_hs = math.hypot(norms["++"] - norms["--"], norms["-+"] - norms["+-"])
    return ChiralityReport(
        chi2=chi2,
        chiHS=chi_hs,
        hs_norm=hs_norm,
        j2=chi2 / hs_norm,
        jHS=chi_hs / hs_norm,
        block_norms=norms,
        block_sigmas=sigmas,
    )


def _domain_data(g, tol_x):
    blocks = split_blocks(g)
    norms = {key: _hs(val) for key, val in blocks.items()}
    hs_norm = math.sqrt(sum(v * v for v in norms.values()))
    chi_hs = math.hypot(norms["++"] - norms["--"], norms["-+"] - norms["+-"])
    floor = tol_x * hs_norm
    if hs_norm == 0.0 or chi_hs <= floor:
        raise DomainXError("chiHS vanishes (chiHS=%.3e, floor=%.3e)" % (chi_hs, floor))
    bad = [key for key in BLOCK_KEYS if norms[key] <= floor]
    if bad:
        raise DomainXError("block norm(s) %s below %.3e" % (bad, floor))
    return blocks, norms, chi_hs


def chiHS_derivative(g, h, tol_x=1.0e-12):
    """Directional derivative of chiHS at g applied to the increment h.

    Requires g in the differentiability domain: chiHS(g) and all four
    block norms exceed tol_x relative to ||g||_HS, else DomainXError.
    """
    gb, norms, chi_hs = _domain_data(g, tol_x)
    hb = split_blocks(h)
    ip = {key: (_hs(gb[key], hb[key])).real for key in BLOCK_KEYS}
    val = ((norms["++"] - norms["--"]) * (ip["++"] / norms["++"] - ip["--"] / norms["--"])
           + (norms["-+"] - norms["+-"]) * (ip["-+"] / norms["-+"] - ip["+-"] / norms["+-"]))
    return val / chi_hs


def jHS_gradient(t, derivs, tol_x=1.0e-12):
    """Gradient of jHS = chiHS/||T|| along a family of matrix derivatives.

    derivs is a sequence (or array of shape (D, Q, Q)) of directional
    derivatives of the far field matrix; returns the length-D real vector
    chiHS'[T]H / ||T|| - chiHS(T) Re<T,H> / ||T||^3 per direction.
    """
    gb, norms, chi_hs = _domain_data(t, tol_x)
    hs_norm = math.sqrt(sum(v * v for v in norms.values()))
    mat = _as_matrix(t)
    out = np.empty(len(derivs))
    for i, h in enumerate(derivs):
        dchi = chiHS_derivative(mat, h, tol_x)
        ipth = float(np.vdot(np.asarray(getattr(h, "matrix", h)), mat).real)
        out[i] = dchi / hs_norm - chi_hs * ipth / hs_norm ** 3
    return out
