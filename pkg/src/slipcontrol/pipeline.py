"""Four-stage control run: optional free decay, active convection with the
kitchen source, control-off dissipation, and final-norm assessment.

Every sweep member is one scaled viscous run at a fixed ``eps``; the
inviscid and layer ingredients do not depend on ``eps`` and are computed
once per process and variant.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary_layer import build_layer_coefficients, evolve_layer, init_layer, omega_wall_mask
from .config import Config, _render
from .errors import ConfigError, SlipControlError
from .euler_stage import build_envelope, build_potential_flow, flush_seeds, solve_u1, trace_flow
from .fields import ScalarField, VectorField, velocity_from_vorticity, BoundaryField
from .geometry import DomainSpec, build_domain
from .ns_solver import (
    CONTROLLED,
    ExpansionBundle,
    LayerHistory,
    MACGrid,
    ViscousState,
    build_control_trace,
    extract_remainder,
    final_norm,
    layer_columns,
    state_from_nodes,
    step_viscous,
    write_history,
)
from .wpd import TOL_MOMENT, compute_moments, design_kitchen_control, relax_heat, scaled_layer_norm

STAGE4_NOTE = (
    "Stage 4 substitution: the local exact null controllability step is not reproduced. "
    "After the control is switched off the state decays freely under the Navier condition, "
    "and the run reports how small ||u_eps(T/eps)|| is instead of driving it exactly to rest."
)

DESIGNED = "designed"
ABLATION = "ablation"


@dataclass
class StagePlan:
    stage1_free_decay: float
    stage2_convection: tuple
    stage3_dissipation: dict
    stage4_smallness: str = STAGE4_NOTE

    def __post_init__(self):
        if self.stage1_free_decay < 0:
            raise ConfigError("stage 1 duration must be non-negative")
        t0, t1 = self.stage2_convection
        if not t1 > t0:
            raise ConfigError("active phase must have positive length")
        for eps, (a, b) in self.stage3_dissipation.items():
            if not b > a >= t1:
                raise ConfigError(f"dissipation phase for eps = {eps} is not after the active phase")


def stage_plan(cfg: Config) -> StagePlan:
    T = cfg.get("envelope", "T")
    return StagePlan(cfg.get("viscous", "stage1"), (0.0, T), {e: (T, T / e) for e in cfg.get("sweep", "eps")})


@dataclass
class MemberResult:
    eps: float
    variant: str
    final_norm: float
    layer_norm: float
    remainder_T: float
    remainder_final: float
    div_max: float
    n_steps: int
    history: list
    modes_after_T: tuple
    seconds: float

    @property
    def final_over_eps(self):
        return self.final_norm / self.eps

    @property
    def layer_over_eps(self):
        return self.layer_norm / self.eps


@dataclass
class RunReport:
    config: Config
    flush: object
    feasible: bool
    design: dict
    members: list
    checks: list
    run_id: str
    seconds: float
    stop_reason: str = ""
    stage_plan: StagePlan | None = None
    seed: int = 0

    def table(self):
        """``{eps: {variant: (final/eps, layer/eps)}}``."""
        out = {}
        for m in self.members:
            out.setdefault(m.eps, {})[m.variant] = (m.final_over_eps, m.layer_over_eps)
        return out

    @property
    def passed(self):
        return self.feasible and all(ok for _, ok, _ in self.checks)


# ---------------------------------------------------------------------------
# ingredients


def domain_from_config(cfg: Config):
    kind = cfg.get("domain", "kind")
    sigma = cfg.get("domain", "sigma") if kind == "rectangle" else cfg.get("domain", "theta0")
    spec = DomainSpec(kind, cfg.get("domain", "length"), sigma, cfg.get("domain", "kitchen_depth"),
                      cfg.get("domain", "nx"), cfg.get("domain", "ny"))
    return build_domain(spec)


def build_u_star(domain, cfg: Config, seed) -> VectorField:
    """Gaussian vorticity blob (plus optional seeded low-mode noise), zero normal trace."""
    g = domain.grid
    pts = g.points()
    x0, y0 = cfg.get("viscous", "ustar_x"), cfg.get("viscous", "ustar_y")
    w = cfg.get("viscous", "ustar_width")
    r2 = (pts[..., 0] - x0) ** 2 + (pts[..., 1] - y0) ** 2
    om = cfg.get("viscous", "ustar_amplitude") * np.exp(-r2 / w**2)
    noise = cfg.get("viscous", "noise")
    if noise > 0:
        rng = np.random.default_rng(seed)
        L = domain.length
        for kx in range(1, 4):
            for ky in range(1, 4):
                a = rng.standard_normal()
                om = om + noise * a * np.sin(kx * np.pi * pts[..., 0] / L) * np.sin(ky * np.pi * pts[..., 1])
    return velocity_from_vorticity(g, ScalarField(g, om), BoundaryField.zeros(g))


@dataclass
class Ingredients:
    domain: object
    envelope: object
    flow: object
    flush: object
    u_star: VectorField
    u1: object
    layer_T: object
    history: LayerHistory
    relax: object
    design: dict


_CACHE = {}


def _config_key(cfg: Config, designed, seed):
    return (tuple(sorted((k, _render(v)) for k, v in cfg.values.items())), designed, seed)


def prepare(cfg: Config, designed: bool, seed=0) -> Ingredients:
    """Stage-2 ingredients (``eps`` independent); memoized per process."""
    key = _config_key(cfg, designed, seed)
    if key in _CACHE:
        return _CACHE[key]
    domain = domain_from_config(cfg)
    T = cfg.get("envelope", "T")
    env = build_envelope(T, cfg.get("envelope", "mass"), cfg.get("envelope", "profile"))
    pf = build_potential_flow(domain, env)
    flush = trace_flow(pf, flush_seeds(domain), T, dt=T / 200)
    if not flush.flushed:
        ing = Ingredients(domain, env, pf, flush, None, None, None, None, None, {"feasible": False})
        _CACHE[key] = ing
        return ing
    u_star = build_u_star(domain, cfg, seed)
    u1 = solve_u1(domain, pf, u_star, T, n_samples=21)

    alpha = cfg.get("viscous", "friction")
    coeffs = build_layer_coefficients(domain, pf, alpha)
    travel = float(env.cumulative(T)) * coeffs.uniform_speed
    v = init_layer(domain, z_max=cfg.get("layer", "z_max"), h_z=cfg.get("layer", "h_z"), travel=travel,
                   decay_tol=cfg.get("layer", "decay_tol"))
    dt_l, theta = T / cfg.get("layer", "steps"), cfg.get("layer", "theta")
    K = cfg.get("wpd", "K")
    ctrl = None
    if designed:
        ctrl = design_kitchen_control(coeffs, None, env, T, K, v, domain, dt=dt_l, theta=theta,
                                      scale=cfg.get("wpd", "scale"), k_max=cfg.get("wpd", "k_max"))
    L = domain.length
    times, cols = [0.0], [layer_columns(v, L)]

    def grab(p):
        times.append(p.t)
        cols.append(layer_columns(p, L))

    vT = evolve_layer(v, coeffs, ctrl, T, dt_l, theta=theta, callback=grab)
    history = LayerHistory(np.array(times), vT.z_grid.copy(), np.array(cols), vT.walls)

    mask = omega_wall_mask(domain, vT.s_grid)
    m = compute_moments(vT, K)
    moments = np.abs(m.values[:, mask]).max(axis=(0, 1))
    eps_list = cfg.get("sweep", "eps")
    horizons = sorted({T / e for e in eps_list})
    z_need = 10.0 * math.sqrt(max(horizons) - T) + cfg.get("layer", "z_max")
    relax = relax_heat(vT, (T, max(horizons)), horizons, K=max(K, 0), window=(cfg.get("wpd", "window_lo"),
                       cfg.get("wpd", "window_hi")), z_max=z_need, keep=horizons)
    design = {
        "feasible": True,
        "designed": designed,
        "K": K,
        "max_moment_T": [float(x) for x in moments],
        "cost": float(ctrl.cost(T)) if ctrl is not None else 0.0,
    }
    ing = Ingredients(domain, env, pf, flush, u_star, u1, vT, history, relax, design)
    _CACHE[key] = ing
    return ing


# ---------------------------------------------------------------------------
# one viscous run


def run_member(cfg: Config, eps, designed: bool, seed=0, history_path=None) -> MemberResult:
    tic = time.perf_counter()
    ing = prepare(cfg, designed, seed)
    if not ing.design["feasible"]:
        raise SlipControlError("stage 2 infeasible: flushing precondition fails")
    domain = ing.domain
    T = cfg.get("envelope", "T")
    alpha = cfg.get("viscous", "friction")
    g = MACGrid(domain.length, domain.spec.nx, domain.spec.ny)
    h = min(g.hx, g.hy)
    u1 = ing.u1
    state = state_from_nodes(g, VectorField(domain.grid, eps * ing.u_star.values), eps, alpha)
    rows = []

    # stage 1: free decay from the initial state (control off)
    t1 = cfg.get("viscous", "stage1")
    if t1 > 0:
        n1 = max(1, math.ceil(t1 / cfg.get("viscous", "dt_after")))
        for _ in range(n1):
            state = step_viscous(state, None, t1 / n1)
        u_new = VectorField(domain.grid, state.to_nodes(domain.grid).values / eps)
        u1 = solve_u1(domain, ing.flow, u_new, T, n_samples=21)
        state.t = 0.0

    bundle = ExpansionBundle(domain, ing.flow, T, u1, ing.history,
                             {T: ing.layer_T, T / eps: ing.relax.snapshot(T / eps)})
    rows.append((0.0, state.norm(), float("nan"), state.div_max()))

    # stage 2: active phase
    gmax = float(np.max(np.hypot(*ing.flow.grad_alpha.values)))
    umax = gmax * float(np.max(ing.envelope.eta(np.linspace(0, T, 2001)))) + eps * 2 * ing.u_star.max_abs() + 1e-12
    cfl = cfg.get("viscous", "cfl")
    n_act = max(1, math.ceil(T * umax / (cfl * h)))
    dt = T / n_act
    for k in range(n_act):
        t_new = T * (k + 1) / n_act
        state = step_viscous(state, build_control_trace(bundle, g, eps, t_new), dt, cfl_max=2 * cfl)
        state.t = t_new
        if (k + 1) % 10 == 0 or k + 1 == n_act:
            rows.append((t_new, state.norm(), float("nan"), state.div_max()))
    r_T = extract_remainder(state, bundle, eps).norm
    rows[-1] = (T, state.norm(), r_T, state.div_max())

    # stage 3: control off, Navier condition on every wall
    t_end = T / eps
    n_off = max(1, math.ceil((t_end - T) / cfg.get("viscous", "dt_after")))
    dt = (t_end - T) / n_off
    modes = []
    for k in range(n_off):
        t_new = T + (t_end - T) * (k + 1) / n_off
        trace = build_control_trace(bundle, g, eps, t_new)
        modes.append(trace.mode)
        state = step_viscous(state, trace, dt, cfl_max=1e3)
        state.t = t_new
        if (k + 1) % 20 == 0 or k + 1 == n_off:
            rows.append((t_new, state.norm(), float("nan"), state.div_max()))
    if any(m == CONTROLLED for m in modes):
        raise SlipControlError("control trace active after the active phase")

    # stage 4: assessment
    rem = extract_remainder(state, bundle, eps)
    rows[-1] = (t_end, state.norm(), rem.norm, state.div_max())
    if history_path is not None:
        write_history(rows, history_path)
    layer = scaled_layer_norm(ing.relax, eps, T, domain)
    return MemberResult(float(eps), DESIGNED if designed else ABLATION, final_norm(state), layer, r_T,
                        rem.norm, state.div_max(), n_act + n_off, rows, tuple(sorted(set(modes))),
                        time.perf_counter() - tic)


def _task(args):
    cfg, eps, designed, seed = args
    return run_member(cfg, eps, designed, seed)


def _run_members(cfg: Config, variants, seed, workers):
    jobs = [(cfg, e, d, seed) for d in variants for e in cfg.get("sweep", "eps")]
    if workers <= 1 or len(jobs) == 1:
        return [_task(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(_task, jobs))


# ---------------------------------------------------------------------------
# checks and reports


def _strictly_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def evaluate_checks(report: RunReport):
    checks = []
    checks.append(("flushed", bool(report.flush.flushed), f"worst exit time {report.flush.worst_exit_time:.4g}"))
    mom = report.design.get("max_moment_T")
    if report.design.get("designed") and mom is not None:
        checks.append(("moments_cancelled", max(mom) < TOL_MOMENT, f"max |m_k(T)| on the domain wall {max(mom):.3e}"))
    tab = report.table()
    eps_desc = sorted(tab, reverse=True)
    for variant in (DESIGNED,):
        vals = [tab[e][variant][0] for e in eps_desc if variant in tab[e]]
        if len(vals) == len(eps_desc) and len(vals) > 1:
            checks.append((f"{variant}_decreasing", _strictly_decreasing(vals),
                           "final/eps " + ", ".join(f"{v:.4g}" for v in vals)))
    pairs = [(e, tab[e]) for e in eps_desc if DESIGNED in tab[e] and ABLATION in tab[e]]
    if pairs:
        ok = all(t[DESIGNED][0] < t[ABLATION][0] for _, t in pairs)
        checks.append(("designed_beats_ablation", ok,
                       "; ".join(f"eps={e:g}: {t[DESIGNED][0]:.4g} vs {t[ABLATION][0]:.4g}" for e, t in pairs)))
    finite = all(math.isfinite(m.final_norm) for m in report.members)
    checks.append(("finite", finite, "all final norms finite"))
    return checks


def _run_id(cfg: Config, seed, variants):
    h = hashlib.sha1((cfg.echo() + f"seed={seed};variants={variants}").encode()).hexdigest()
    return h[:12]


def _assemble(cfg, variants, seed, workers):
    tic = time.perf_counter()
    designed_first = variants[0] if variants else True
    ing = prepare(cfg, designed_first, seed)
    plan = stage_plan(cfg)
    if not ing.design["feasible"]:
        rep = RunReport(cfg, ing.flush, False, ing.design, [], [], _run_id(cfg, seed, variants),
                        time.perf_counter() - tic, "stage 2 infeasible: envelope mass too small to flush "
                        "the domain (flushing precondition fails)", plan, seed)
        rep.checks = [("flushed", False, f"worst exit time {ing.flush.worst_exit_time:.4g}")]
        return rep
    members = _run_members(cfg, variants, seed, workers)
    design = dict(ing.design)
    if True in variants:
        design = dict(prepare(cfg, True, seed).design)
    rep = RunReport(cfg, ing.flush, True, design, members, [], _run_id(cfg, seed, variants),
                    time.perf_counter() - tic, "", plan, seed)
    if cfg.get("sweep", "checks"):
        rep.checks = evaluate_checks(rep)
    return rep


def run_pipeline(cfg: Config, seed=None, workers=None) -> RunReport:
    """One variant (``wpd.design``) over the sweep."""
    seed = cfg.get("sweep", "seed") if seed is None else seed
    workers = cfg.get("sweep", "workers") if workers is None else workers
    return _assemble(cfg, (cfg.get("wpd", "design"),), seed, workers)


def run_ablation(cfg: Config, seed=None, workers=None) -> RunReport:
    """Designed and undesigned twins (they differ only in the kitchen source)."""
    seed = cfg.get("sweep", "seed") if seed is None else seed
    workers = cfg.get("sweep", "workers") if workers is None else workers
    return _assemble(cfg, (True, False), seed, workers)


REPORT_COLUMNS = ["eps", "variant", "final_norm", "final_over_eps", "layer_over_eps", "remainder_T",
                  "remainder_final", "div_max", "steps"]


def export_report(report: RunReport, out_dir) -> int:
    """Write ``report.csv``, per-stage CSVs, the config echo and ``summary.txt``.

    Returns the exit code: 0 when every enabled check passed, 1 otherwise.
    Wall-clock times go to the summary only, so the CSVs are reproducible.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for m in sorted(report.members, key=lambda m: (m.variant, -m.eps)):
                w.writerow([repr(m.eps), m.variant, repr(m.final_norm), repr(m.final_over_eps),
                            repr(m.layer_over_eps), repr(m.remainder_T), repr(m.remainder_final),
                            repr(m.div_max), m.n_steps])
        report.flush.to_csv(os.path.join(out_dir, "stage2_flush.csv"))
        with open(os.path.join(out_dir, "stage2_design.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k in sorted(report.design):
                w.writerow([k, _render(report.design[k]) if not isinstance(report.design[k], list)
                            else ",".join(repr(x) for x in report.design[k])])
        for m in report.members:
            write_history(m.history, os.path.join(out_dir, f"stage3_history_{m.variant}_eps{m.eps:g}.csv"))
        if report.members:
            tab = report.table()
            with open(os.path.join(out_dir, "stage4_ablation.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["eps", "designed_final_over_eps", "ablation_final_over_eps",
                            "designed_layer_over_eps", "ablation_layer_over_eps"])
                for e in sorted(tab, reverse=True):
                    row = tab[e]
                    get = lambda v, i: repr(row[v][i]) if v in row else ""
                    w.writerow([repr(e), get(DESIGNED, 0), get(ABLATION, 0), get(DESIGNED, 1), get(ABLATION, 1)])
        with open(os.path.join(out_dir, "config_echo.ini"), "w") as fh:
            fh.write(report.config.echo())
        code = 0 if report.passed else 1
        with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
            fh.write(summary_text(report))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report: {exc.strerror}", exc.filename) from None
    return code


def summary_text(report: RunReport) -> str:
    lines = [f"run id: {report.run_id}", f"seed: {report.seed}", f"wall clock: {report.seconds:.1f} s", ""]
    if report.stop_reason:
        lines.append(f"STOPPED: {report.stop_reason}")
    lines.append(f"flushed: {report.flush.flushed} (worst exit time {report.flush.worst_exit_time:.4g})")
    d = report.design
    if d.get("feasible"):
        lines.append(f"moment design: K = {d['K']}, designed = {d['designed']}, "
                     f"max |m_k(T)| = {', '.join(f'{x:.3e}' for x in d['max_moment_T'])}, cost = {d['cost']:.4g}")
    if report.members:
        lines.append("")
        lines.append("eps       variant    ||u(T/eps)||/eps  layer/eps   ||r(T/eps)||")
        for m in sorted(report.members, key=lambda m: (m.variant, -m.eps)):
            lines.append(f"{m.eps:<9g} {m.variant:<10} {m.final_over_eps:<17.6g} {m.layer_over_eps:<11.6g} "
                         f"{m.remainder_final:.6g}")
    lines.append("")
    for name, ok, info in report.checks:
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {info}")
    lines.append("")
    lines.append(STAGE4_NOTE)
    lines.append("")
    lines.append("result: " + ("PASS" if report.passed else "FAIL"))
    return "\n".join(lines) + "\n"
