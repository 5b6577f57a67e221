"""Operational shell: configuration files, CLI, runs, scans, campaigns.

Commands
--------
optimize    shape-optimize one wire and persist geometry/history/report
scan        frequency sweep of the chirality measures of a stored wire
multistart  seeded campaign of optimize runs from random helix initials
validate    run the numerical property suites and report per-suite status
export      triangulated tube surface of a stored wire (ASCII OFF)

Configuration is flat ``key = value`` text; every physical key carries
its unit in the name (f_opt_thz, length_lambda, rho_rule).  Each output
file starts with the fully resolved configuration, the seed and the code
version, so any result can be reproduced bit for bit by rerunning from
its own provenance block.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import chirality, farfield, material, objective, optimizer
from .chirality import DomainXError
from .farfield import QuadratureOverflowError
from .geometry import (
    AdaptedFrame,
    FrameFlipError,
    LineQuadrature,
    SpineSpline,
    TwistSpline,
    WireDesign,
    apply_twist,
    build_rmf,
    eval_spline,
    min_self_distance,
    read_design,
    relative_twist,
    twist_rate,
    update_frame,
    write_design,
)
from .material import (
    EllipticalCrossSection,
    THZ,
    builtin_permittivity,
    check_polarization_bounds,
    plasmonic_resonance,
    wavenumber,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "run_optimize",
    "run_scan",
    "run_multistart",
    "run_validate",
    "export_geometry",
    "main",
]

log = logging.getLogger("chiralwire")

COMMANDS = ("optimize", "scan", "multistart", "validate", "export")

MODE_ALIASES = {"full": "full", "twist": "twist", "twist-only": "twist",
                "spine": "spine", "spine-only": "spine"}


class ConfigError(ValueError):
    """Invalid configuration or input file; exits with code 1."""


def _code_version():
    from . import __version__
    return __version__


@dataclass
class RunConfig:
    """Fully resolved settings of one command invocation."""

    command: str = ""
    metal: str = "silver"
    f_opt_thz: float = 500.0
    aspect: str = "resonance"
    length_lambda: float = 0.5
    n_knots: int = 10
    truncation_n: int = 0
    truncation_floor: int = 2
    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 5.0e-5
    rho_rule: float = 0.05
    seed: int = 0
    mode: str = "twist"
    max_iter: int = 500
    checkpoint_every: int = 10
    pts_per_seg: int = 11
    scan_min_thz: float = 300.0
    scan_max_thz: float = 800.0
    scan_step_thz: float = 5.0
    starts: int = 20
    helix_turns: float = 4.0
    helix_height_max_lambda: float = 2.0 / 3.0
    helix_radius_max_lambda: float = 0.5
    workers: int = 1
    init_design: str = ""
    geometry: str = ""
    resume: str = ""
    out_dir: str = "runs"
    mesh_samples_axial: int = 200
    mesh_samples_around: int = 32
    cap_ends: bool = False
    code_version: str = ""


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError("expected a boolean, got %r" % raw)


def _parse_value(key, raw, kind):
    try:
        if kind is bool:
            return _parse_bool(raw)
        if kind is int:
            if key == "truncation_n" and raw.strip().lower() == "auto":
                return 0
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError("bad value for %s: %s" % (key, exc)) from exc


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_PY_TYPES = {"str": str, "float": float, "int": int, "bool": bool}


def set_key(cfg, key, raw, base_dir="."):
    """Assign one textual key=value pair onto a RunConfig."""
    if key not in _FIELD_TYPES:
        raise ConfigError("unknown configuration key %r" % key)
    kind = _PY_TYPES[_FIELD_TYPES[key]]
    value = _parse_value(key, raw, kind)
    # input paths are resolved against the config file so a provenance
    # block can be replayed from anywhere; out_dir stays cwd-relative so
    # replaying a provenance file reproduces the run in place
    if key in ("init_design", "geometry", "resume") and value:
        if not os.path.isabs(value):
            value = os.path.normpath(os.path.join(base_dir, value))
    setattr(cfg, key, value)
    return cfg


def load_config(path, cfg=None):
    """Read a flat key=value config file (comments and blanks allowed).

    Relative paths inside the file are resolved against the file's own
    directory, so a provenance block can be rerun from anywhere.
    """
    if cfg is None:
        cfg = RunConfig()
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError("cannot read config: %s" % exc) from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected key = value" % (path, lineno))
        key, _, val = line.partition("=")
        set_key(cfg, key.strip(), val.strip(), base_dir)
    return cfg


def validate_config(cfg):
    """Check the RunConfig invariants; raises ConfigError on violation."""
    if cfg.command not in COMMANDS:
        raise ConfigError("unknown command %r" % cfg.command)
    try:
        builtin_permittivity(cfg.metal)
    except KeyError as exc:
        raise ConfigError("unknown metal %r" % cfg.metal) from exc
    if cfg.mode not in MODE_ALIASES:
        raise ConfigError("mode must be one of %s" % (sorted(MODE_ALIASES),))
    cfg.mode = MODE_ALIASES[cfg.mode]
    positive = ("f_opt_thz", "length_lambda", "rho_rule", "scan_step_thz",
                "helix_turns")
    for key in positive:
        if not getattr(cfg, key) > 0.0:
            raise ConfigError("%s must be positive" % key)
    nonneg = ("alpha1", "alpha2", "alpha3", "helix_height_max_lambda",
              "helix_radius_max_lambda")
    for key in nonneg:
        if getattr(cfg, key) < 0.0:
            raise ConfigError("%s must be nonnegative" % key)
    if cfg.aspect != "resonance":
        try:
            aspect = float(cfg.aspect)
        except ValueError as exc:
            raise ConfigError("aspect must be a number or 'resonance'") from exc
        if aspect < 1.0:
            raise ConfigError("aspect b/a must be >= 1")
    if cfg.n_knots < 4:
        raise ConfigError("n_knots must be at least 4 (cubic splines)")
    if cfg.truncation_n < 0:
        raise ConfigError("truncation_n must be 'auto' or a positive integer")
    if cfg.truncation_floor < 1:
        raise ConfigError("truncation_floor must be at least 1")
    if cfg.pts_per_seg < 3 or cfg.pts_per_seg % 2 == 0:
        raise ConfigError("pts_per_seg must be an odd integer >= 3")
    if cfg.max_iter < 1 or cfg.checkpoint_every < 1:
        raise ConfigError("max_iter and checkpoint_every must be >= 1")
    if cfg.starts < 1:
        raise ConfigError("starts must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.mesh_samples_axial < 2 or cfg.mesh_samples_around < 3:
        raise ConfigError("mesh sampling too coarse")
    table = builtin_permittivity(cfg.metal)
    lo, hi = table.f_min / THZ, table.f_max / THZ
    if not (lo <= cfg.scan_min_thz < cfg.scan_max_thz <= hi):
        raise ConfigError("scan range must lie inside [%g, %g] THz" % (lo, hi))
    span = cfg.scan_max_thz - cfg.scan_min_thz
    steps = span / cfg.scan_step_thz
    if abs(steps - round(steps)) > 1.0e-9:
        raise ConfigError("scan_step_thz must divide the scan range")
    if not (lo <= cfg.f_opt_thz <= hi):
        raise ConfigError("f_opt_thz must lie inside [%g, %g] THz" % (lo, hi))
    if cfg.command == "optimize" and cfg.init_design:
        if not os.path.isfile(cfg.init_design):
            raise ConfigError("init_design file not found: %s" % cfg.init_design)
    if cfg.command in ("scan", "export"):
        if not cfg.geometry:
            raise ConfigError("command %r needs a geometry file" % cfg.command)
        if not os.path.isfile(cfg.geometry):
            raise ConfigError("geometry file not found: %s" % cfg.geometry)
    if cfg.resume and not os.path.isfile(cfg.resume):
        raise ConfigError("resume checkpoint not found: %s" % cfg.resume)
    return cfg


# ---------------------------------------------------------------------------
# resolution helpers

def resolve_aspect(cfg, table):
    """Numeric aspect ratio b/a; 'resonance' picks -Re(eps_r(f_opt))."""
    if cfg.aspect == "resonance":
        eps = table.lookup(cfg.f_opt_thz * THZ)
        aspect = -eps.real
        if aspect < 1.0:
            raise ConfigError(
                "no plasmonic resonance aspect at %g THz (Re eps_r = %.3f)"
                % (cfg.f_opt_thz, eps.real))
        return aspect
    return float(cfg.aspect)


def _resolved_lines(cfg, aspect):
    """key = value lines of the fully resolved configuration."""
    out = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if f.name == "aspect":
            val = repr(float(aspect))
        elif f.name == "code_version":
            val = _code_version()
        elif isinstance(val, float):
            val = repr(val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        out.append("%s = %s" % (f.name, val))
    return out


def _write_text(path, comment_lines, body):
    lines = ["# " + c for c in comment_lines]
    with open(path, "w") as fh:
        if lines:
            fh.write("\n".join(lines) + "\n")
        fh.write(body)


def _rho_for(cfg, cross_section, k):
    return cfg.rho_rule / (k * math.sqrt(cross_section.a * cross_section.b))


def _degree_for(cfg, k, radius):
    rule = int(math.ceil(k * radius)) + 1 if radius > 0.0 else 1
    return max(cfg.truncation_floor, rule)


def straight_design(cfg, lam_opt):
    """Straight wire along z, centered at the origin, untwisted."""
    length = cfg.length_lambda * lam_opt
    knots = np.linspace(0.0, length, cfg.n_knots)
    spine = np.zeros((cfg.n_knots, 3))
    spine[:, 2] = knots - 0.5 * length
    return WireDesign(length=length, knots=knots, spine=spine,
                      twist=np.zeros(cfg.n_knots),
                      reference_normal=np.array([1.0, 0.0, 0.0]))


def helix_design(cfg, lam_opt, rng):
    """Random helix initial guess: turns fixed, height/radius uniform.

    The helix is parametrized by arclength (constant speed), centered on
    the z axis, with a small random twist so the start is em-chiral.
    """
    height = rng.uniform(0.0, cfg.helix_height_max_lambda * lam_opt)
    radius = rng.uniform(0.0, cfg.helix_radius_max_lambda * lam_opt)
    turns = cfg.helix_turns
    circum = 2.0 * math.pi * turns * radius
    length = math.hypot(circum, height)
    knots = np.linspace(0.0, length, cfg.n_knots)
    s = knots / length
    ang = 2.0 * math.pi * turns * s
    spine = np.stack([radius * np.cos(ang), radius * np.sin(ang),
                      height * (s - 0.5)], axis=1)
    twist = rng.uniform(-0.1, 0.1, cfg.n_knots)
    t0 = SpineSpline(knots, spine)(0.0, 1)
    t0 /= np.linalg.norm(t0)
    normal = np.array([0.0, 0.0, 1.0])
    if abs(t0 @ normal) > 0.9:
        normal = np.array([1.0, 0.0, 0.0])
    normal = normal - (normal @ t0) * t0
    normal /= np.linalg.norm(normal)
    return WireDesign(length=length, knots=knots, spine=spine, twist=twist,
                      reference_normal=normal)


def design_to_file_twist(cfg_obj):
    """Design whose stored twist reproduces the transported final frame.

    The optimizer transports frames between iterates, so the final frame
    is generally not the rotation minimizing frame of the final spine
    rotated by the final twist spline.  For serialization the frame is
    re-expressed relative to a fresh rotation minimizing frame: the file
    then reconstructs the optimized wire exactly at the knots and up to
    spline interpolation error in between.
    """
    sv, _ = objective.unpack_design(cfg_obj.base_x)
    quad = cfg_obj.line_quad
    spine = SpineSpline(cfg_obj.knots, sv)
    ref_normal = cfg_obj.base_frame.n[0].copy()
    rmf = build_rmf(spine, quad.params, ref_normal)
    gamma = relative_twist(cfg_obj.base_frame, rmf)
    idx = np.concatenate([quad.seg_starts, [quad.params.size - 1]])
    return WireDesign(length=cfg_obj.length, knots=cfg_obj.knots, spine=sv,
                      twist=gamma[idx], reference_normal=ref_normal)


# ---------------------------------------------------------------------------
# optimize

def _optimize_core(cfg, design, out_dir, seed, provenance):
    """Run one optimization and persist all artifacts into out_dir."""
    table = builtin_permittivity(cfg.metal)
    aspect = resolve_aspect(cfg, table)
    cs = EllipticalCrossSection.from_aspect(aspect)
    f_opt = cfg.f_opt_thz * THZ
    k = wavenumber(f_opt)

    quad = LineQuadrature.build(design.knots, cfg.pts_per_seg)
    pts = eval_spline(design.spine_spline(), quad.params)
    radius = float(np.linalg.norm(pts, axis=1).max())
    if cfg.truncation_n > 0:
        degree0, degree_rule = cfg.truncation_n, None
    else:
        degree0 = _degree_for(cfg, k, radius)

        def degree_rule(x):
            sv, _ = objective.unpack_design(x)
            p = eval_spline(SpineSpline(design.knots, sv), quad.params)
            return _degree_for(cfg, k, float(np.linalg.norm(p, axis=1).max()))

    cfg_obj = objective.config_from_design(
        design, cfg.alpha1, cfg.alpha2, cfg.alpha3, f_opt, cfg.metal, cs,
        degree0, pts_per_seg=cfg.pts_per_seg,
        rho=_rho_for(cfg, cs, k), permittivity_table=table)

    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "provenance.txt"),
                ["chiralwire %s provenance" % _code_version()],
                "\n".join(provenance) + "\n")
    write_design(design, os.path.join(out_dir, "design_init.txt"), provenance)

    params = optimizer.BfgsParams(max_iter=cfg.max_iter,
                                  checkpoint_every=cfg.checkpoint_every)
    x0 = objective.pack_design(design.spine, design.twist)
    lines = []
    result = optimizer.optimize(
        x0, cfg_obj, params, mode=cfg.mode, seed=seed,
        checkpoint_path=os.path.join(out_dir, "checkpoint.npz"),
        log_lines=lines, resume_from=cfg.resume or None,
        degree_rule=degree_rule)

    out_design = design_to_file_twist(cfg_obj)
    write_design(out_design, os.path.join(out_dir, "design_out.txt"),
                 provenance)
    _write_text(os.path.join(out_dir, "iterations.csv"), provenance,
                objective.log_header() + "\n" + "\n".join(lines) + "\n")
    body = ["status = %s" % result.status,
            "iterations = %d" % result.iterations,
            "phi = %s" % repr(result.phi),
            "psi1 = %s" % repr(result.psis["psi1"]),
            "psi2 = %s" % repr(result.psis["psi2"]),
            "psi3 = %s" % repr(result.psis["psi3"]),
            "domain_retries = %d" % result.domain_retries]
    _write_text(os.path.join(out_dir, "report.txt"), provenance,
                "\n".join(body) + "\n" + result.report.to_text())
    log.info("%s: status=%s iterations=%d phi=%.6f j2=%.4f jHS=%.4f",
             out_dir, result.status, result.iterations, result.phi,
             result.report.j2, result.report.jHS)
    return result


def run_optimize(cfg):
    """Optimize one wire design per the configuration; returns the result."""
    table = builtin_permittivity(cfg.metal)
    aspect = resolve_aspect(cfg, table)
    lam_opt = 2.0 * math.pi / wavenumber(cfg.f_opt_thz * THZ)
    if cfg.init_design:
        design = read_design(cfg.init_design)
    else:
        design = straight_design(cfg, lam_opt)
    provenance = _provenance(cfg, aspect, init_name="design_init.txt")
    return _optimize_core(cfg, design, cfg.out_dir, cfg.seed, provenance)


def _provenance(cfg, aspect, init_name=None):
    lines = _resolved_lines(cfg, aspect)
    if init_name is not None:
        lines = [ln if not ln.startswith("init_design =") else
                 "init_design = %s" % init_name for ln in lines]
    return lines


# ---------------------------------------------------------------------------
# scan

def _design_state(design, pts_per_seg):
    """Spline, frame and quadrature of a stored design."""
    quad = LineQuadrature.build(design.knots, pts_per_seg)
    spine = design.spine_spline()
    frame = build_rmf(spine, quad.params, design.reference_normal)
    frame = apply_twist(frame, design.twist_spline())
    return spine, frame, quad


def run_scan(cfg):
    """Frequency sweep of J2, JHS and |T|_HS for a fixed stored wire."""
    design = read_design(cfg.geometry)
    table = builtin_permittivity(cfg.metal)
    aspect = resolve_aspect(cfg, table)
    cs = EllipticalCrossSection.from_aspect(aspect)
    k_opt = wavenumber(cfg.f_opt_thz * THZ)
    rho = _rho_for(cfg, cs, k_opt)
    spine, frame, quad = _design_state(design, cfg.pts_per_seg)
    pts = eval_spline(spine, quad.params)
    radius = float(np.linalg.norm(pts, axis=1).max())

    n_steps = int(round((cfg.scan_max_thz - cfg.scan_min_thz)
                        / cfg.scan_step_thz))
    freqs = cfg.scan_min_thz + cfg.scan_step_thz * np.arange(n_steps + 1)
    rows = []
    for f_thz in freqs:
        k = wavenumber(f_thz * THZ)
        eps_r = table.lookup(f_thz * THZ)
        degree = cfg.truncation_n if cfg.truncation_n > 0 else \
            _degree_for(cfg, k, radius)
        t = farfield.assemble_T(spine, frame, cs, eps_r, k, rho, degree, quad)
        rep = chirality.measure(t)
        rows.append((f_thz, rep.j2, rep.jHS, rep.hs_norm))
    hs = np.array([r[3] for r in rows])
    peak = freqs[int(np.argmax(hs))]
    res = plasmonic_resonance(table, cs)
    log.info("scan peak |T|_HS at %.1f THz; plasmonic resonance at %s THz",
             peak, "%.1f" % (res / THZ) if res else "none")

    provenance = _resolved_lines(cfg, aspect)
    body = ["f_THz,J2,JHS,hs_norm"]
    body += ["%.6f,%.8f,%.8f,%.12e" % r for r in rows]
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "scan.csv")
    _write_text(path, provenance, "\n".join(body) + "\n")
    log.info("wrote %s (%d rows)", path, len(rows))
    return rows


# ---------------------------------------------------------------------------
# multistart

def _campaign_entry(payload):
    """One campaign run; top level so process pools can pickle it."""
    cfg = RunConfig(**payload["cfg"])
    design = WireDesign(length=payload["length"], knots=payload["knots"],
                        spine=payload["spine"], twist=payload["twist"],
                        reference_normal=payload["normal"])
    try:
        result = _optimize_core(cfg, design, payload["out_dir"],
                                payload["seed"], payload["provenance"])
        return {"index": payload["index"], "status": result.status,
                "phi": result.phi, "j2": result.report.j2,
                "jHS": result.report.jHS, "error": ""}
    except (DomainXError, FrameFlipError, QuadratureOverflowError,
            ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return {"index": payload["index"], "status": "failed",
                "phi": math.nan, "j2": math.nan, "jHS": math.nan,
                "error": "%s: %s" % (type(exc).__name__, exc)}


def run_multistart(cfg):
    """Campaign of optimize runs from seeded random helix initial guesses.

    Per-run seeds and helix samples derive from the campaign seed by
    counter, so the campaign is reproducible run by run; failed runs are
    logged and skipped, and results are ranked by final J_HS.
    """
    table = builtin_permittivity(cfg.metal)
    aspect = resolve_aspect(cfg, table)
    lam_opt = 2.0 * math.pi / wavenumber(cfg.f_opt_thz * THZ)
    payloads = []
    cfg_dict = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    # each campaign run is a self-contained optimize invocation, so its
    # provenance block replays that one run
    cfg_dict["resume"] = ""
    cfg_dict["command"] = "optimize"
    for i in range(cfg.starts):
        ss = np.random.SeedSequence([cfg.seed & 0xFFFFFFFF, i])
        rng = np.random.default_rng(ss)
        design = helix_design(cfg, lam_opt, rng)
        run_seed = int(ss.generate_state(1)[0])
        run_dir = os.path.join(cfg.out_dir, "run_%02d" % i)
        run_cfg = dict(cfg_dict, out_dir=run_dir, seed=run_seed)
        provenance = _provenance(replace(cfg, command="optimize",
                                         out_dir=run_dir, seed=run_seed),
                                 aspect, init_name="design_init.txt")
        payloads.append({"index": i, "cfg": run_cfg, "seed": run_seed,
                         "out_dir": run_dir, "length": design.length,
                         "knots": design.knots, "spine": design.spine,
                         "twist": design.twist,
                         "normal": design.reference_normal,
                         "provenance": provenance})

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_campaign_entry, payloads))
    else:
        outcomes = [_campaign_entry(p) for p in payloads]

    for out in outcomes:
        if out["status"] == "failed":
            log.warning("run %d failed: %s", out["index"], out["error"])
    good = [o for o in outcomes if o["status"] != "failed"]
    if not good:
        raise RuntimeError("all %d campaign runs failed" % cfg.starts)
    ranked = sorted(good, key=lambda o: -o["jHS"])

    provenance = _resolved_lines(cfg, aspect)
    body = ["rank,run,seed,status,phi,J2,JHS"]
    for rank, o in enumerate(ranked, start=1):
        body.append("%d,run_%02d,%d,%s,%s,%.8f,%.8f" % (
            rank, o["index"], payloads[o["index"]]["seed"], o["status"],
            repr(o["phi"]), o["j2"], o["jHS"]))
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "summary.csv")
    _write_text(path, provenance, "\n".join(body) + "\n")
    best = ranked[0]
    log.info("campaign best: run_%02d J2=%.4f JHS=%.4f (%d/%d runs ok)",
             best["index"], best["j2"], best["jHS"], len(good), len(outcomes))
    return ranked


# ---------------------------------------------------------------------------
# validation battery

def _random_design(cfg, lam_opt, rng, bend=0.1, twist_amp=0.3):
    length = cfg.length_lambda * lam_opt
    n = cfg.n_knots
    knots = np.linspace(0.0, length, n)
    s = knots / length
    spine = np.stack([bend * length * np.sin(2.0 * np.pi * s),
                      bend * 0.6 * length * np.sin(3.0 * np.pi * s + 0.4),
                      knots - 0.5 * length], axis=1)
    twist = twist_amp * (2.0 * rng.random(n) - 1.0)
    sp = SpineSpline(knots, spine)
    t0 = sp(0.0, 1)
    t0 /= np.linalg.norm(t0)
    e = np.array([1.0, 0.0, 0.0])
    e -= (e @ t0) * t0
    e /= np.linalg.norm(e)
    return WireDesign(length=length, knots=knots, spine=spine, twist=twist,
                      reference_normal=e)


def _suite_frames(cfg, lam_opt, rng):
    design = _random_design(cfg, lam_opt, rng)
    spine, frame, quad = _design_state(design, cfg.pts_per_seg)
    worst = 0.0
    for a, b in ((frame.t, frame.n), (frame.t, frame.b), (frame.n, frame.b)):
        worst = max(worst, float(np.abs(np.einsum("ij,ij->i", a, b)).max()))
    for a in (frame.t, frame.n, frame.b):
        worst = max(worst, float(np.abs(np.linalg.norm(a, axis=1) - 1.0).max()))
    rmf = build_rmf(spine, quad.params, design.reference_normal)
    rate = float(np.abs(twist_rate(rmf, quad.seg_starts, quad.pts_per_seg)).max())
    rate_rel = rate * lam_opt  # radians per wavelength of arclength
    rot = update_frame(frame, spine, np.full(quad.params.shape, 0.25))
    err_rot = float(np.abs(rot.n - (math.cos(0.25) * frame.n
                                    + math.sin(0.25) * frame.b)).max())
    worst = max(worst, err_rot)
    ok = worst < 1.0e-9 and rate_rel < 1.0e-3
    return ("frames", "ok" if ok else "fail",
            "orthonormality/rotation %.2e, rmf twist per lambda %.2e"
            % (worst, rate_rel))


def _suite_polarization(cfg, rng):
    worst = 0.0
    for metal in ("silver", "gold"):
        table = builtin_permittivity(metal)
        for eps_r in table.eps_r:
            for aspect in (1.92, 3.85, 7.14, 12.5):
                cs = EllipticalCrossSection.from_aspect(aspect)
                out = check_polarization_bounds(eps_r, cs, rng, n_frames=6)
                worst = max(worst, max(out.values()))
    status = "ok" if worst < 1.0e-10 else "fail"
    return ("polarization_bounds", status, "max violation %.2e" % worst)


def _suite_chirality_bounds(cfg, lam_opt, rng):
    worst = 0.0
    n = 2
    q = 2 * n * (n + 2)
    for _ in range(1000):
        m = rng.standard_normal((q, q)) + 1j * rng.standard_normal((q, q))
        rep = chirality.measure(m)
        scale = rep.hs_norm
        worst = max(worst,
                    -rep.chiHS / scale,
                    (rep.chiHS - rep.chi2) / scale,
                    (rep.chi2 - rep.hs_norm) / scale)
    for i in range(6):
        rep = _measure_design(cfg, lam_opt, np.random.default_rng(90 + i))
        scale = rep.hs_norm
        worst = max(worst,
                    -rep.chiHS / scale,
                    (rep.chiHS - rep.chi2) / scale,
                    (rep.chi2 - rep.hs_norm) / scale)
    status = "ok" if worst < 1.0e-10 else "fail"
    return ("chirality_bounds", status, "max excess %.2e" % worst)


def _assembled_T(cfg, lam_opt, rng, reflect=False, rotate=None):
    design = _random_design(cfg, lam_opt, rng)
    spine_knots, twist = design.spine, design.twist
    normal = design.reference_normal
    if reflect:
        mirror = np.array([1.0, 1.0, -1.0])
        spine_knots = spine_knots * mirror
        twist = -twist
        normal = normal * mirror
        t0 = SpineSpline(design.knots, spine_knots)(design.knots[0], 1)
        t0 /= np.linalg.norm(t0)
        normal = normal - (normal @ t0) * t0
        normal /= np.linalg.norm(normal)
    if rotate is not None:
        spine_knots = spine_knots @ rotate.T
        normal = normal @ rotate.T
    design = WireDesign(length=design.length, knots=design.knots,
                        spine=spine_knots, twist=twist,
                        reference_normal=normal)
    spine, frame, quad = _design_state(design, cfg.pts_per_seg)
    table = builtin_permittivity(cfg.metal)
    aspect = resolve_aspect(cfg, table)
    cs = EllipticalCrossSection.from_aspect(aspect)
    k = wavenumber(cfg.f_opt_thz * THZ)
    eps_r = table.lookup(cfg.f_opt_thz * THZ)
    rho = _rho_for(cfg, cs, k)
    pts = eval_spline(spine, quad.params)
    degree = _degree_for(cfg, k, float(np.linalg.norm(pts, axis=1).max()))
    return farfield.assemble_T(spine, frame, cs, eps_r, k, rho, degree, quad)


def _measure_design(cfg, lam_opt, rng):
    return chirality.measure(_assembled_T(cfg, lam_opt, rng))


def _suite_symmetry(cfg, lam_opt, rng):
    t_base = _assembled_T(cfg, lam_opt, np.random.default_rng(7))
    t_mirror = _assembled_T(cfg, lam_opt, np.random.default_rng(7),
                            reflect=True)
    rep_b = chirality.measure(t_base)
    rep_m = chirality.measure(t_mirror)
    swap = max(abs(rep_b.block_norms["++"] - rep_m.block_norms["--"]),
               abs(rep_b.block_norms["--"] - rep_m.block_norms["++"]),
               abs(rep_b.block_norms["+-"] - rep_m.block_norms["-+"]),
               abs(rep_b.block_norms["-+"] - rep_m.block_norms["+-"]))
    swap /= rep_b.hs_norm
    ang = rng.uniform(0.0, 2.0 * math.pi)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    kx = np.array([[0.0, -axis[2], axis[1]],
                   [axis[2], 0.0, -axis[0]],
                   [-axis[1], axis[0], 0.0]])
    rot = np.eye(3) + math.sin(ang) * kx + (1.0 - math.cos(ang)) * (kx @ kx)
    t_rot = _assembled_T(cfg, lam_opt, np.random.default_rng(7), rotate=rot)
    rep_r = chirality.measure(t_rot)
    sig = 0.0
    for key in ("++", "+-", "-+", "--"):
        sb, sr = rep_b.block_sigmas[key], rep_r.block_sigmas[key]
        sig = max(sig, float(np.abs(sb - sr).max()) / rep_b.hs_norm)
    ok = swap < 1.0e-8 and sig < 1.0e-8
    return ("symmetry", "ok" if ok else "fail",
            "mirror swap %.2e, rotation sigmas %.2e" % (swap, sig))


def _suite_scale_invariance(cfg, lam_opt):
    design = _random_design(cfg, lam_opt, np.random.default_rng(31))
    spine, frame, quad = _design_state(design, cfg.pts_per_seg)
    table = builtin_permittivity(cfg.metal)
    aspect = resolve_aspect(cfg, table)
    cs = EllipticalCrossSection.from_aspect(aspect)
    k = wavenumber(cfg.f_opt_thz * THZ)
    eps_r = table.lookup(cfg.f_opt_thz * THZ)
    rho = _rho_for(cfg, cs, k)
    pts = eval_spline(spine, quad.params)
    degree = _degree_for(cfg, k, float(np.linalg.norm(pts, axis=1).max()))
    t1 = farfield.assemble_T(spine, frame, cs, eps_r, k, rho, degree, quad)
    t2 = farfield.assemble_T(spine, frame, cs, eps_r, k, 2.0 * rho, degree,
                             quad)
    r1, r2 = chirality.measure(t1), chirality.measure(t2)
    dj = max(abs(r1.j2 - r2.j2), abs(r1.jHS - r2.jHS))
    ratio = abs(r2.hs_norm / r1.hs_norm - 4.0)
    ok = dj < 1.0e-12 and ratio < 1.0e-12
    return ("scale_invariance", "ok" if ok else "fail",
            "dJ %.2e, |ratio-4| %.2e" % (dj, ratio))


def _suite_gradient(cfg, lam_opt):
    worst = 0.0
    for seed in (3, 4):
        rng = np.random.default_rng(seed)
        small = replace(cfg, n_knots=6)
        design = _random_design(small, lam_opt, rng)
        table = builtin_permittivity(cfg.metal)
        aspect = resolve_aspect(cfg, table)
        cs = EllipticalCrossSection.from_aspect(aspect)
        cfg_obj = objective.config_from_design(
            design, 0.7, 1.0e-15, 1.0e-16, cfg.f_opt_thz * THZ, cfg.metal,
            cs, 3, pts_per_seg=7, permittivity_table=table)
        x = objective.pack_design(design.spine, design.twist)
        grad = objective.evaluate_phi_gradient(x, cfg_obj)
        n = design.n_knots
        steps = np.full(4 * n, 1.0e-6)
        steps[:3 * n] = 1.0e-6 * design.length
        fd = np.zeros_like(grad)
        for j in range(4 * n):
            xp, xm = x.copy(), x.copy()
            xp[j] += steps[j]
            xm[j] -= steps[j]
            fp = objective.evaluate_phi(xp, cfg_obj)[0]
            fm = objective.evaluate_phi(xm, cfg_obj)[0]
            fd[j] = (fp - fm) / (2.0 * steps[j])
        err = np.abs(grad - fd).max() / max(np.abs(fd).max(), 1.0e-30)
        worst = max(worst, float(err))
    status = "ok" if worst < 1.0e-5 else "fail"
    return ("gradient", status, "max relative error %.2e" % worst)


def _suite_truncation(cfg, lam_opt):
    design = _random_design(cfg, lam_opt, np.random.default_rng(17))
    spine = design.spine_spline()
    quad = LineQuadrature.build(design.knots, cfg.pts_per_seg)
    pts = eval_spline(spine, quad.params)
    radius = float(np.linalg.norm(pts, axis=1).max())
    k = wavenumber(cfg.f_opt_thz * THZ)
    rule = int(math.ceil(k * radius))
    used = cfg.truncation_n if cfg.truncation_n > 0 else \
        _degree_for(cfg, k, radius)
    if used < rule:
        return ("truncation", "warn",
                "N=%d below circumscribing rule kR=%.2f" % (used, k * radius))
    return ("truncation", "ok", "N=%d, kR=%.2f" % (used, k * radius))


def run_validate(cfg, mutate=None):
    """Numerical property battery; returns a list of (suite, status, detail).

    mutate='flip_denominator_sign' runs the battery against an
    intentionally broken polarization tensor (test seam) to prove the
    bound suite has teeth.
    """
    lam_opt = 2.0 * math.pi / wavenumber(cfg.f_opt_thz * THZ)
    rng = np.random.default_rng(cfg.seed)
    original = material._tensor_denominators
    if mutate == "flip_denominator_sign":
        def broken(a, b, eps_r):
            return a - eps_r * b, b - eps_r * a
        material._tensor_denominators = broken
    elif mutate is not None:
        raise ConfigError("unknown mutation %r" % mutate)
    try:
        results = [
            _suite_frames(cfg, lam_opt, rng),
            _suite_polarization(cfg, rng),
            _suite_chirality_bounds(cfg, lam_opt, rng),
            _suite_symmetry(cfg, lam_opt, rng),
            _suite_scale_invariance(cfg, lam_opt),
            _suite_truncation(cfg, lam_opt),
            _suite_gradient(cfg, lam_opt),
        ]
    finally:
        material._tensor_denominators = original
    for name, status, detail in results:
        log.info("suite %-22s %-4s %s", name, status, detail)
    return results


# ---------------------------------------------------------------------------
# mesh export

def export_geometry(cfg):
    """Triangulated tube surface of a stored design, in ASCII OFF format.

    The cross-section ellipse (semi-axes rho*a along the normal, rho*b
    along the binormal) is swept along the adapted frame; end caps are
    triangle fans, added when cap_ends is set.
    """
    design = read_design(cfg.geometry)
    table = builtin_permittivity(cfg.metal)
    aspect = resolve_aspect(cfg, table)
    cs = EllipticalCrossSection.from_aspect(aspect)
    k = wavenumber(cfg.f_opt_thz * THZ)
    rho = _rho_for(cfg, cs, k)
    if k * rho > 0.1:
        log.warning("ACCURACY: k*rho = %.3f exceeds 0.1; the asymptotic "
                    "thin-wire model is unreliable for this radius", k * rho)

    n_ax, n_ar = cfg.mesh_samples_axial, cfg.mesh_samples_around
    params = np.linspace(design.knots[0], design.knots[-1], n_ax)
    spine = design.spine_spline()
    frame = build_rmf(spine, params, design.reference_normal)
    frame = apply_twist(frame, design.twist_spline())
    pts = eval_spline(spine, params)

    # ignore arclength-local pairs (a tube cannot collide with itself
    # within a few diameters of arc; curvature governs that regime)
    diameter = 2.0 * rho * cs.b
    dpar = params[1] - params[0]
    skip = max(2, int(math.ceil(3.0 * diameter / dpar)))
    if skip < n_ax - 1:
        dist = min_self_distance(spine, params, skip=skip)
        if dist < diameter:
            log.warning("tube self-intersects: min spine separation %.3e "
                        "below tube diameter %.3e", dist, diameter)

    ang = 2.0 * math.pi * np.arange(n_ar) / n_ar
    ca, sa = np.cos(ang), np.sin(ang)
    verts = (pts[:, None, :]
             + rho * cs.a * ca[None, :, None] * frame.n[:, None, :]
             + rho * cs.b * sa[None, :, None] * frame.b[:, None, :])
    verts = verts.reshape(-1, 3)
    faces = []
    for i in range(n_ax - 1):
        base0, base1 = i * n_ar, (i + 1) * n_ar
        for j in range(n_ar):
            jn = (j + 1) % n_ar
            faces.append((base0 + j, base1 + j, base1 + jn))
            faces.append((base0 + j, base1 + jn, base0 + jn))
    if cfg.cap_ends:
        verts = np.vstack([verts, pts[0], pts[-1]])
        c0, c1 = verts.shape[0] - 2, verts.shape[0] - 1
        last = (n_ax - 1) * n_ar
        for j in range(n_ar):
            jn = (j + 1) % n_ar
            faces.append((c0, jn, j))
            faces.append((c1, last + j, last + jn))

    provenance = _resolved_lines(cfg, aspect)
    lines = ["OFF"]
    lines += ["# " + c for c in provenance]
    lines.append("%d %d 0" % (verts.shape[0], len(faces)))
    lines += [" ".join(repr(float(c)) for c in v) for v in verts]
    lines += ["3 %d %d %d" % f for f in faces]
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "mesh.off")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    log.info("wrote %s (%d vertices, %d faces)", path, verts.shape[0],
             len(faces))
    return path


# ---------------------------------------------------------------------------
# CLI

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="chiralwire",
        description="Design of thin metallic nanowires with maximal "
                    "electromagnetic chirality.")
    parser.add_argument("--version", action="version",
                        version="chiralwire %s" % _code_version())
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
            ("optimize", "shape-optimize one wire design"),
            ("scan", "frequency sweep of a stored wire"),
            ("multistart", "campaign from random helix initial guesses"),
            ("validate", "run the numerical property suites"),
            ("export", "triangulated tube surface of a stored wire")):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", help="flat key=value configuration file")
        if name in ("scan", "export"):
            p.add_argument("--geometry", help="stored wire design file")
        p.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                       help="configuration overrides")
        p.add_argument("--verbose", action="store_true",
                       help="debug-level logging")
    return parser


def _config_from_args(args):
    cfg = RunConfig()
    if args.config:
        load_config(args.config, cfg)
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError("override %r is not KEY=VALUE" % item)
        key, _, val = item.partition("=")
        set_key(cfg, key.strip(), val.strip())
    if getattr(args, "geometry", None):
        set_key(cfg, "geometry", args.geometry)
    cfg.command = args.command
    return validate_config(cfg)


def main(argv=None):
    """CLI entry point; returns 0 ok, 1 config error, 2 numerical failure."""
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return 1
    try:
        if cfg.command == "optimize":
            run_optimize(cfg)
        elif cfg.command == "scan":
            run_scan(cfg)
        elif cfg.command == "multistart":
            run_multistart(cfg)
        elif cfg.command == "validate":
            results = run_validate(cfg)
            print("\n".join("%-22s %-4s %s" % r for r in results))
            if any(status == "fail" for _, status, _ in results):
                return 2
        elif cfg.command == "export":
            export_geometry(cfg)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return 1
    except (DomainXError, FrameFlipError, QuadratureOverflowError,
            np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return 2
    return 0
