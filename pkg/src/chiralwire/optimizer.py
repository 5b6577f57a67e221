"""Cautious BFGS with backtracking Armijo line search.

The Hessian approximation is updated only when the curvature ratio
y.s/|s|^2 exceeds a small multiple of the current gradient norm, which
keeps it positive definite without Wolfe conditions.  The generic core
works on any (f, grad) pair; the nanowire driver layers the frame
transport bookkeeping on top: each accepted step rebases the objective
config so the adapted frame is propagated, never rebuilt, and rejected
trial steps (tangent flips) count as failed Armijo trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import objective as obj
from .chirality import DomainXError
from .farfield import QuadratureOverflowError
from .geometry import AdaptedFrame, FrameFlipError

__all__ = [
    "BfgsParams",
    "BfgsState",
    "BfgsProblem",
    "StepReport",
    "TrialRejected",
    "bfgs_step",
    "minimize",
    "OptimizeResult",
    "design_scale",
    "optimize",
    "save_checkpoint",
    "load_checkpoint",
]


class TrialRejected(RuntimeError):
    """A trial point is invalid (e.g. frame flip): treat as Armijo failure."""


@dataclass(frozen=True)
class BfgsParams:
    eps_cautious: float = 1.0e-5
    sigma: float = 1.0e-4
    delta: float = 0.9
    rel_step_tol: float = 1.0e-4
    max_iter: int = 500
    max_backtracks: int = 60
    checkpoint_every: int = 10


@dataclass
class BfgsState:
    x: np.ndarray
    hess: np.ndarray
    phi: float
    grad: np.ndarray
    iteration: int = 0

    def check_hessian(self, tol=1.0e-12):
        h = self.hess
        sym = np.abs(h - h.T).max()
        if sym > tol * max(1.0, np.abs(h).max()):
            raise AssertionError("Hessian approximation lost symmetry")
        w = np.linalg.eigvalsh(0.5 * (h + h.T))
        if w.min() <= 0.0:
            raise AssertionError("Hessian approximation lost definiteness")
        return float(w.min())


@dataclass(frozen=True)
class BfgsProblem:
    """f and grad close over everything problem-specific.

    mask zeroes gradient components to freeze coordinate blocks; since the
    initial Hessian is the identity, frozen coordinates never move.
    trial_errors lists exception types from f that reject a trial point.
    """

    f: object
    grad: object
    mask: np.ndarray | None = None
    trial_errors: tuple = (TrialRejected,)

    def masked_grad(self, x):
        g = np.asarray(self.grad(x), dtype=float)
        if self.mask is not None:
            g = g * self.mask
        return g


@dataclass(frozen=True)
class StepReport:
    accepted: bool
    step_size: float
    backtracks: int
    phi_before: float
    phi_after: float
    directional: float
    cautious_update: bool
    rel_step: float


def _direction(hess, grad):
    try:
        c = cho_factor(hess, lower=True, check_finite=False)
        d = -cho_solve(c, grad, check_finite=False)
    except (LinAlgError, ValueError):
        return -grad, True
    if not np.all(np.isfinite(d)) or float(d @ grad) >= 0.0:
        return -grad, True
    return d, False


def bfgs_step(state, problem, params=BfgsParams()):
    """One cautious BFGS iteration; returns (new state, StepReport).

    The line search tries x + delta^j d for the smallest j satisfying the
    Armijo condition; trial-rejection exceptions from f count as failed
    trials.  The Hessian update is skipped unless y.s/|s|^2 exceeds
    eps_cautious times the pre-step gradient norm.
    """
    g = state.grad
    d, refreshed = _direction(state.hess, g)
    hess = np.eye(g.size) if refreshed else state.hess
    slope = float(g @ d)

    lam = 1.0
    phi_new = None
    x_new = None
    backtracks = 0
    for j in range(params.max_backtracks):
        trial = state.x + lam * d
        try:
            val = problem.f(trial)
        except problem.trial_errors:
            val = None
        if val is not None and val <= state.phi + params.sigma * lam * slope:
            phi_new, x_new, backtracks = val, trial, j
            break
        lam *= params.delta
    if phi_new is None:
        report = StepReport(accepted=False, step_size=0.0,
                            backtracks=params.max_backtracks,
                            phi_before=state.phi, phi_after=state.phi,
                            directional=slope, cautious_update=False,
                            rel_step=0.0)
        return state, report

    g_new = problem.masked_grad(x_new)
    s = x_new - state.x
    y = g_new - g
    ss = float(s @ s)
    ys = float(y @ s)
    cautious = ss > 0.0 and ys / ss > params.eps_cautious * float(np.linalg.norm(g))
    if cautious:
        hs = hess @ s
        shs = float(s @ hs)
        hess = hess - np.outer(hs, hs) / shs + np.outer(y, y) / ys

    x_norm = float(np.linalg.norm(state.x))
    rel = float(np.linalg.norm(s)) / x_norm if x_norm > 0.0 else math.inf
    new_state = BfgsState(x=x_new, hess=hess, phi=phi_new, grad=g_new,
                          iteration=state.iteration + 1)
    report = StepReport(accepted=True, step_size=float(lam),
                        backtracks=backtracks, phi_before=state.phi,
                        phi_after=phi_new, directional=slope,
                        cautious_update=cautious, rel_step=rel)
    return new_state, report


def minimize(f, grad, x0, params=BfgsParams(), mask=None, callback=None,
             trial_errors=(TrialRejected,)):
    """Run cautious BFGS from x0; returns (final state, status, reports).

    status is one of 'converged' (relative step below tolerance),
    'stationary' (zero gradient), 'max_iter', or 'stagnation' (line search
    exhausted).  callback(state, report) runs after every accepted step.
    """
    problem = BfgsProblem(f=f, grad=grad,
                          mask=None if mask is None else np.asarray(mask, dtype=float),
                          trial_errors=tuple(trial_errors))
    x0 = np.asarray(x0, dtype=float)
    state = BfgsState(x=x0.copy(), hess=np.eye(x0.size), phi=float(f(x0)),
                      grad=problem.masked_grad(x0))
    reports = []
    if float(np.linalg.norm(state.grad)) == 0.0:
        return state, "stationary", reports
    for _ in range(params.max_iter):
        state, report = bfgs_step(state, problem, params)
        reports.append(report)
        if not report.accepted:
            return state, "stagnation", reports
        if callback is not None:
            callback(state, report)
        if report.rel_step < params.rel_step_tol:
            return state, "converged", reports
        if float(np.linalg.norm(state.grad)) == 0.0:
            return state, "stationary", reports
    return state, "max_iter", reports


# ---------------------------------------------------------------------------
# nanowire driver

@dataclass
class OptimizeResult:
    x: np.ndarray
    phi: float
    report: object
    psis: dict
    status: str
    iterations: int
    history: list = field(default_factory=list)
    domain_retries: int = 0


def _twist_jitter(x, seed, tag, amp):
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, tag]))
    n = x.size // 4
    out = x.copy()
    out[3 * n:] += amp * rng.standard_normal(n)
    return out


def design_scale(cfg, n):
    """Diagonal scaling taking physical design vectors to search space.

    Spine coordinates are divided by (the nearest power of two to) the
    operating wavelength so a unit step of the identity initial Hessian
    moves knots by about one wavelength; twist knots are already
    order-one radians and stay as they are.  A power of two makes the
    round trip scaled -> physical -> scaled exact, so frozen blocks
    come back bit-identical.
    """
    lam = 2.0 * math.pi / cfg.k
    scale = np.ones(4 * n)
    scale[:3 * n] = 2.0 ** round(math.log2(lam))
    return scale


def optimize(x0, cfg, params=BfgsParams(), mode="full", seed=0,
             checkpoint_path=None, log_lines=None, resume_from=None,
             degree_rule=None):
    """Shape-optimize a wire design from the packed vector x0.

    mode selects which gradient blocks act: 'full', 'twist' (spine knots
    frozen) or 'spine' (twist knots frozen).  cfg must carry the reference
    frame of x0; it is rebased after every accepted step so frames are
    transported along the optimization path.  The search itself runs on
    wavelength-scaled coordinates (see design_scale) so that identity
    initial Hessian steps are commensurate with the geometry; iterates
    reported in the result and passed to cfg are physical.  An achiral
    start (jHS not differentiable) or a mid-run domain collapse is
    answered by one seeded twist jitter; a second consecutive failure
    stops the run.  log_lines, when given, receives one CSV line per
    accepted iterate.  resume_from restores a checkpoint (overriding x0)
    and continues the same run.  degree_rule, when given, maps a physical
    design vector to a truncation degree; it is re-applied after every
    accepted step and the objective value and gradient are refreshed when
    the degree changes (line-search trials within one step share a degree).
    """
    if mode not in ("full", "twist", "spine"):
        raise ValueError("mode must be 'full', 'twist' or 'spine'")
    x0 = np.asarray(x0, dtype=float).copy()
    n = x0.size // 4
    scale = design_scale(cfg, n)
    mask = np.ones(4 * n)
    if mode == "twist":
        mask[:3 * n] = 0.0
    elif mode == "spine":
        mask[3 * n:] = 0.0

    last_eval = {}

    def f(z):
        x = z * scale
        try:
            phi, rep, psis = obj.evaluate_phi(x, cfg)
        except (FrameFlipError, QuadratureOverflowError) as exc:
            raise TrialRejected(str(exc)) from exc
        last_eval["z"] = np.asarray(z).copy()
        last_eval["x"] = x
        last_eval["report"], last_eval["psis"] = rep, psis
        return phi

    def grad(z):
        return scale * obj.evaluate_phi_gradient(z * scale, cfg)

    problem = BfgsProblem(f=f, grad=grad, mask=mask)

    # initial state; an achiral start gets one seeded random twist
    def initial(z):
        phi0 = f(z)
        g0 = problem.masked_grad(z)
        return BfgsState(x=z, hess=np.eye(z.size), phi=phi0, grad=g0)

    domain_retries = 0
    if resume_from is not None:
        state, frame = load_checkpoint(resume_from)
        if state.x.size != 4 * n or \
                not np.array_equal(frame.params, cfg.line_quad.params):
            raise ValueError("checkpoint does not match the objective "
                             "configuration; resume with the original one")
        load_checkpoint(resume_from, cfg)
    else:
        if cfg.base_x is None:
            raise ValueError("cfg carries no reference frame; build it "
                             "with config_from_design or rebase it first")
        z0 = x0 / scale
        # round-trip the scaling so evaluations at z0 hit the reference
        # state of cfg exactly
        x00 = z0 * scale
        if cfg.base_x is None or not np.array_equal(x00, cfg.base_x):
            cfg.rebase_to(x00)
        try:
            state = initial(z0)
        except DomainXError:
            domain_retries += 1
            rng = np.random.default_rng(
                np.random.SeedSequence([seed & 0xFFFFFFFF, 0]))
            z0[3 * n:] += rng.uniform(-0.1, 0.1, n)
            cfg.rebase_to(z0 * scale)
            state = initial(z0)

    history = []

    def record(st):
        rep = last_eval.get("report")
        psis = last_eval.get("psis")
        history.append({"iteration": st.iteration, "phi": st.phi,
                        "jHS": rep.jHS if rep else None,
                        "j2": rep.j2 if rep else None})
        if log_lines is not None and rep is not None:
            log_lines.append(obj.log_line(st.iteration, st.phi, rep, psis))

    # ensure the stashed report matches the current iterate
    if last_eval.get("z") is None or not np.array_equal(last_eval["z"], state.x):
        f(state.x)
    record(state)

    status = "max_iter"
    just_jittered = False
    if float(np.linalg.norm(state.grad)) == 0.0:
        status = "stationary"
    else:
        while state.iteration < params.max_iter:
            try:
                state_new, report = bfgs_step(state, problem, params)
            except DomainXError:
                if just_jittered:
                    status = "domain_error"
                    break
                domain_retries += 1
                just_jittered = True
                zj = _twist_jitter(state.x, seed, state.iteration + 1, 1.0e-3)
                try:
                    phi_j = f(zj)
                    cfg.rebase_to(zj * scale)
                    state = BfgsState(x=zj, hess=np.eye(zj.size), phi=phi_j,
                                      grad=problem.masked_grad(zj),
                                      iteration=state.iteration)
                    continue
                except (DomainXError, TrialRejected):
                    status = "domain_error"
                    break
            if not report.accepted:
                status = "stagnation"
                break
            just_jittered = False
            # propagate the frame to the accepted iterate and rebase
            if not np.array_equal(last_eval.get("z"), state_new.x):
                f(state_new.x)
            cfg.rebase_to(state_new.x * scale)
            if degree_rule is not None:
                deg = int(degree_rule(state_new.x * scale))
                if deg != cfg.degree_max:
                    cfg.degree_max = deg
                    state_new = BfgsState(x=state_new.x, hess=state_new.hess,
                                          phi=f(state_new.x),
                                          grad=problem.masked_grad(state_new.x),
                                          iteration=state_new.iteration)
            state = state_new
            record(state)
            if checkpoint_path is not None and \
                    state.iteration % params.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, state, cfg, scale)
            if report.rel_step < params.rel_step_tol:
                status = "converged"
                break
            if float(np.linalg.norm(state.grad)) == 0.0:
                status = "stationary"
                break

    x_fin = state.x * scale
    phi_fin, rep_fin, psis_fin = obj.evaluate_phi(x_fin, cfg)
    return OptimizeResult(x=x_fin, phi=phi_fin, report=rep_fin,
                          psis=psis_fin, status=status,
                          iterations=state.iteration, history=history,
                          domain_retries=domain_retries)


def save_checkpoint(path, state, cfg, scale=None):
    """Design vector, Hessian, reference state and counters: exact resume.

    state lives in the optimizer's scaled coordinates when scale is
    given; the stored design vector x is always physical.
    """
    if scale is None:
        scale = np.ones(state.x.size)
    np.savez(path, x=state.x * scale, z=state.x, scale=scale,
             hess=state.hess, phi=state.phi, grad=state.grad,
             iteration=state.iteration, degree_max=cfg.degree_max,
             frame_params=cfg.base_frame.params, frame_t=cfg.base_frame.t,
             frame_n=cfg.base_frame.n, frame_b=cfg.base_frame.b,
             beta=cfg.base_beta)


def load_checkpoint(path, cfg=None):
    """Read a checkpoint; with cfg given, restore its reference state.

    The returned BfgsState is in the optimizer's scaled coordinates (the
    stored scale array maps them to the physical design vector x).
    """
    data = np.load(path)
    state = BfgsState(x=data["z"], hess=data["hess"], phi=float(data["phi"]),
                      grad=data["grad"], iteration=int(data["iteration"]))
    frame = AdaptedFrame(params=data["frame_params"], t=data["frame_t"],
                         n=data["frame_n"], b=data["frame_b"])
    if cfg is not None:
        cfg.degree_max = int(data["degree_max"])
        cfg.rebase(data["x"], frame, data["beta"])
    return state, frame
