"""Curvature flows with flip surgery, adaptive stepping and telemetry.

Two vertex-scaling flows drive a PL metric toward constant weighted
curvature: du/dt = R_av - R (relaxation toward the average) and
du/dt = laplacian(R) (smoothed relaxation).  Both conserve the weight
sum and descend the same convex energy the Newton solver minimizes, so
each explicit step is accept/reject guarded by that energy.  When an
edge loses the Delaunay property along an accepted step it is flipped
at the point where it turns cocircular and the base lengths are carried
across, keeping u meaningful on the new triangulation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .errors import InsufficientTail, LogFactorOverflow, StepSizeUnderflow
from .geometry import (
    alpha_curvature,
    alpha_laplacian_apply,
    curvature,
    degenerate_faces,
    delaunay_surgery,
    scale_metric,
)
from .mesh import Triangulation
from .solver import Target, _apply_gauge, _carry_chart, _first_wall, energy_W_alpha

log = logging.getLogger(__name__)

DT_FLOOR = 1e-16
MAX_HALVINGS = 40
GROWTH_FACTOR = 1.2
GROWTH_STREAK = 5

# Energy comparisons are meaningless below roundoff of the value itself;
# without this allowance a converged flow would reject every step and
# drive dt to underflow instead of reporting convergence.
ENERGY_NOISE = 1e-12


@dataclass(frozen=True)
class FlipRecord:
    """One surgery event: edge replaced by the opposite diagonal."""

    t: float
    edge: int
    new_edge: int
    old_length: float
    new_length: float


@dataclass(frozen=True)
class FlowConfig:
    kind: str = "yamabe"
    dt: float = 0.05
    tol: float = 1e-10
    max_steps: int = 20000
    surgery: bool = True
    integrator: str = "euler"
    renormalize: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("yamabe", "calabi"):
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")


@dataclass
class FlowState:
    """Flow trajectory point plus the bookkeeping that travels with it.

    ``base`` holds lengths of the current triangulation at u = 0, so the
    current metric is exp(u_i + u_j) * base_ij.  ``u_ref``/``w_offset``
    anchor the energy chart (the offset keeps the reported energy
    continuous across flips), ``rbar`` is the average curvature frozen
    at the start (the conserved weight sum keeps it meaningful), and
    ``conserved_target`` is the weight sum the renormalization restores.
    """

    tri: Triangulation
    base: dict[int, float]
    u: np.ndarray
    alpha: float
    t: float = 0.0
    flips: list[FlipRecord] = field(default_factory=list)
    step_count: int = 0
    # adaptive stepping
    dt: float | None = None
    last_dt: float = 0.0
    accept_streak: int = 0
    # energy chart
    u_ref: np.ndarray | None = None
    w_offset: float = 0.0
    w_value: float = 0.0
    rbar: np.ndarray | None = None
    conserved_target: float = 0.0


@dataclass(frozen=True)
class HistoryRow:
    t: float
    max_dev: float
    conserved: float
    energy: float
    flips: int
    dt: float


@dataclass
class FlowHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    status: str = "running"
    unsupported_regime: bool = False

    def to_csv(self) -> str:
        lines = ["t,max_dev,conserved,energy,flips,dt"]
        for r in self.rows:
            lines.append(f"{r.t:.17g},{r.max_dev:.17g},{r.conserved:.17g},"
                         f"{r.energy:.17g},{r.flips},{r.dt:.17g}")
        return "\n".join(lines) + "\n"


def conserved_sum(u: np.ndarray, alpha: float) -> float:
    """The flow invariant: sum of exp(alpha*u) (alpha != 0) or sum of u."""
    if alpha == 0.0:
        return float(np.sum(u))
    return float(np.sum(np.exp(alpha * u)))


def make_state(tri: Triangulation, base: dict[int, float], u0,
               alpha: float) -> FlowState:
    """Assemble a FlowState at time zero (no surgery performed here)."""
    u0 = np.asarray(u0, dtype=float).copy()
    if u0.shape != (tri.vertex_count,):
        raise ValueError(f"u0 has shape {u0.shape}, expected "
                         f"({tri.vertex_count},)")
    rbar, _ = Target.constant().resolve(alpha, tri.chi, u0)
    return FlowState(tri=tri, base=base, u=u0, alpha=float(alpha),
                     u_ref=u0.copy(), rbar=rbar,
                     conserved_target=conserved_sum(u0, alpha))


def _curvature_report(state: FlowState, u=None) -> geometry.CurvatureReport:
    u_at = state.u if u is None else u
    scaled = scale_metric(state.tri, state.base, u_at)
    return alpha_curvature(curvature(state.tri, scaled), u_at, state.alpha,
                           chi=state.tri.chi)


def yamabe_rhs(state: FlowState) -> np.ndarray:
    """du/dt pulling each weighted curvature toward the average."""
    rep = _curvature_report(state)
    return rep.R_av - rep.R_alpha


def calabi_rhs(state: FlowState) -> np.ndarray:
    """du/dt equal to the weighted Laplacian of the weighted curvature."""
    rep = _curvature_report(state)
    scaled = scale_metric(state.tri, state.base, state.u)
    return alpha_laplacian_apply(state.tri, scaled, state.u, state.alpha,
                                 rep.R_alpha)


def _rhs_at(state: FlowState, kind: str, u: np.ndarray) -> np.ndarray:
    probe = replace(state, u=u)
    return yamabe_rhs(probe) if kind == "yamabe" else calabi_rhs(probe)


def _energy_at(state: FlowState, u: np.ndarray) -> float:
    rep = energy_W_alpha(state.tri, state.base, u, state.u_ref, state.alpha,
                         state.rbar, offset=state.w_offset, method="closed",
                         with_hessian=False)
    return rep.value


def _advance(state: FlowState, config: FlowConfig, rhs0: np.ndarray,
             dt: float) -> np.ndarray:
    if config.integrator == "euler":
        return state.u + dt * rhs0
    k1 = rhs0
    k2 = _rhs_at(state, config.kind, state.u + 0.5 * dt * k1)
    k3 = _rhs_at(state, config.kind, state.u + 0.5 * dt * k2)
    k4 = _rhs_at(state, config.kind, state.u + dt * k3)
    return state.u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _wall_surgery(tri: Triangulation, base: dict[int, float],
                  u_from: np.ndarray, u_to: np.ndarray, u_ref: np.ndarray,
                  offset: float, alpha: float, rbar: np.ndarray,
                  t_from: float, dt_used: float
                  ) -> tuple[Triangulation, dict[int, float], np.ndarray,
                             float, list[FlipRecord]]:
    """Carry the chart along an accepted step, flipping at the walls.

    Walks the straight segment from u_from to u_to; each flip happens at
    the point where its edge turns cocircular, where the length carried
    to the new diagonal does not depend on the step size, so flows and
    Newton solves stay comparable in u down to rigidity tolerances.  The
    energy anchor (u_ref, offset) is re-glued at every event.  Returns
    the arrival chart, anchor and the flip records (timestamped by the
    fraction of the step walked).
    """
    records: list[FlipRecord] = []
    cur = np.asarray(u_from, dtype=float).copy()
    span = float(np.linalg.norm(u_to - u_from))
    cap = geometry.FLIP_CAP_FACTOR * tri.edge_count ** 2
    while True:
        delta = u_to - cur
        if not np.any(delta):
            break
        s_cap, hit = _first_wall(tri, base, cur, delta)
        cur = cur + s_cap * delta
        if not hit:
            break
        w_here = energy_W_alpha(tri, base, cur, u_ref, alpha, rbar,
                                offset=offset, method="closed",
                                with_hessian=False).value
        tri2, base2, infos = delaunay_surgery(tri, base, cur)
        if not infos:
            break
        done = 1.0 - float(np.linalg.norm(u_to - cur)) / span if span else 1.0
        t_ev = t_from + done * dt_used
        tri_i, scaled_i = tri, scale_metric(tri, base, cur)
        for info in infos:
            old_len = scaled_i[info.removed_edge]
            tri_i, scaled_i, _ = geometry.flip_with_length(
                tri_i, scaled_i, info.removed_edge)
            records.append(FlipRecord(
                t=t_ev, edge=info.removed_edge, new_edge=info.new_edge,
                old_length=old_len, new_length=scaled_i[info.new_edge]))
        offset = w_here
        u_ref = cur.copy()
        tri, base = tri2, base2
        if len(records) > cap:
            raise StepSizeUnderflow(
                f"{len(records)} flips within a single step at t={t_from:.6g}")
    return tri, base, u_ref, offset, records


def step(state: FlowState, config: FlowConfig) -> FlowState:
    """One accepted integrator step: integrate, surger, renormalize.

    A trial is rejected (dt halved, up to 40 times or the 1e-16 floor)
    when a face would degenerate or the descent energy would visibly
    increase.  dt recovers by a factor 1.2 after 5 consecutive accepts,
    never beyond config.dt.  With surgery on, flips happen at the points
    along the step where their edges turn cocircular.
    """
    rhs0 = (yamabe_rhs if config.kind == "yamabe" else calabi_rhs)(state)
    dt = config.dt if state.dt is None else state.dt
    noise = ENERGY_NOISE * (1.0 + abs(state.w_value))

    halved = False
    u_try = None
    w_try = math.inf
    bad: list[int] | None = None
    for _ in range(MAX_HALVINGS + 1):
        try:
            candidate = _advance(state, config, rhs0, dt)
            scaled = scale_metric(state.tri, state.base, candidate)
            bad = degenerate_faces(state.tri, scaled)
        except LogFactorOverflow:
            bad = None
        if bad == []:
            w_try = _energy_at(state, candidate)
            if w_try <= state.w_value + noise:
                u_try = candidate
                break
        halved = True
        dt *= 0.5
        if dt < DT_FLOOR:
            break
    if u_try is None:
        blocker = (f"faces {bad} degenerate" if bad
                   else "metric overflow" if bad is None
                   else "energy would increase")
        raise StepSizeUnderflow(
            f"dt fell below {DT_FLOOR} at t={state.t:.6g}: {blocker}")

    t_new = state.t + dt
    tri_c, base_c = state.tri, state.base
    u_ref, offset = state.u_ref, state.w_offset
    flips_new = list(state.flips)
    flipped = False
    if config.surgery:
        tri_c, base_c, u_ref, offset, records = _wall_surgery(
            tri_c, base_c, state.u, u_try, u_ref, offset, state.alpha,
            state.rbar, state.t, dt)
        if records:
            flips_new.extend(records)
            flipped = True

    if config.renormalize:
        u_final = _apply_gauge(u_try, state.alpha, state.conserved_target)
        moved = not np.array_equal(u_final, u_try)
    else:
        u_final = u_try
        moved = False
    if flipped or moved:
        probe = replace(state, tri=tri_c, base=base_c, u_ref=u_ref,
                        w_offset=offset)
        w_final = _energy_at(probe, u_final)
    else:
        w_final = w_try

    streak = 0 if halved else state.accept_streak + 1
    dt_next = dt
    if streak >= GROWTH_STREAK:
        dt_next = min(dt * GROWTH_FACTOR, config.dt)
        streak = 0

    return replace(state, tri=tri_c, base=base_c, u=u_final, t=t_new,
                   flips=flips_new, step_count=state.step_count + 1,
                   dt=dt_next, last_dt=dt, accept_streak=streak,
                   u_ref=u_ref, w_offset=offset, w_value=w_final)


def run_flow(tri: Triangulation, base: dict[int, float], u0, alpha: float,
             config: FlowConfig) -> tuple[FlowState, FlowHistory]:
    """Iterate ``step`` until max_dev < tol or the step budget runs out.

    The start is canonicalized the same way the Newton solver does it:
    surgery at u = 0, then the chart is carried along the segment to u0
    with flips at the walls, so converged flows and Newton solves land
    in comparable coordinates.  Those pre-flow flips are counted in the
    first history row but not in the flip log (they happen before t=0).
    History gains one row per accepted step; status is "converged" or
    "max_steps".  Runs with alpha*chi > 0 proceed but are flagged, since
    nothing is promised there.
    """
    u0 = np.asarray(u0, dtype=float).copy()
    n = tri.vertex_count
    if u0.shape != (n,):
        raise ValueError(f"u0 has shape {u0.shape}, expected ({n},)")
    tri0, base0, infos0 = delaunay_surgery(tri, base, np.zeros(n))
    tri0, base0, carried = _carry_chart(tri0, base0, np.zeros(n), u0)
    state = make_state(tri0, base0, u0, alpha)

    history = FlowHistory()
    history.unsupported_regime = alpha * tri.chi > 0
    if history.unsupported_regime:
        log.warning("alpha*chi = %g > 0: convergence not guaranteed",
                    alpha * tri.chi)

    rep = _curvature_report(state)
    history.rows.append(HistoryRow(
        t=0.0, max_dev=rep.max_dev,
        conserved=conserved_sum(state.u, alpha),
        energy=state.w_value, flips=len(infos0) + carried, dt=0.0))

    max_dev = rep.max_dev
    while max_dev >= config.tol:
        if state.step_count >= config.max_steps:
            history.status = "max_steps"
            break
        seen = len(state.flips)
        state = step(state, config)
        rep = _curvature_report(state)
        max_dev = rep.max_dev
        history.rows.append(HistoryRow(
            t=state.t, max_dev=max_dev,
            conserved=conserved_sum(state.u, alpha),
            energy=state.w_value, flips=len(state.flips) - seen,
            dt=state.last_dt))
    else:
        history.status = "converged"
    log.info("run_flow(%s): %s after %d steps, t=%.6g, max_dev=%.3e",
             config.kind, history.status, state.step_count, state.t, max_dev)
    return state, history


def curvature_evolution_residual(state: FlowState,
                                 config: FlowConfig) -> np.ndarray:
    """Centered FD of dR/dt along the flow minus its closed form.

    Yamabe: dR/dt = laplacian(R) + alpha*R*(R - R_av); the smoothed flow
    replaces the right side by -laplacian(laplacian(R)) - alpha*R*laplacian(R).
    No surgery or renormalization happens between the probe points, and
    the result is O(dt^2) small on nondegenerate states.
    """
    dt = config.dt
    rhs0 = (yamabe_rhs if config.kind == "yamabe" else calabi_rhs)(state)

    def r_at(u: np.ndarray) -> np.ndarray:
        scaled = scale_metric(state.tri, state.base, u)
        return curvature(state.tri, scaled) * np.exp(-state.alpha * u)

    fd = (r_at(state.u + dt * rhs0) - r_at(state.u - dt * rhs0)) / (2.0 * dt)

    rep = _curvature_report(state)
    scaled0 = scale_metric(state.tri, state.base, state.u)
    lap = alpha_laplacian_apply(state.tri, scaled0, state.u, state.alpha,
                                rep.R_alpha)
    if config.kind == "yamabe":
        closed = lap + state.alpha * rep.R_alpha * (rep.R_alpha - rep.R_av)
    else:
        lap2 = alpha_laplacian_apply(state.tri, scaled0, state.u, state.alpha,
                                     lap)
        closed = -lap2 - state.alpha * rep.R_alpha * lap
    return fd - closed


def exponential_rate_probe(history: FlowHistory, alpha: float,
                           R_av: float) -> float:
    """Least-squares slope of ln(max_dev) against t over the decay tail.

    The tail starts once max_dev has dropped two decades below its first
    recorded value and stops above the floating-point floor; fewer than
    8 usable rows raises InsufficientTail.  For a qualifying run the
    slope should reach at least 80 percent of alpha * R_av.
    """
    pts = [(r.t, r.max_dev) for r in history.rows if r.max_dev > 0.0]
    if len(pts) < 8:
        raise InsufficientTail(
            f"only {len(pts)} rows with positive deviation")
    head = pts[0][1]
    tail = [(t, d) for t, d in pts if 1e-12 <= d <= 1e-2 * head]
    if len(tail) < 8:
        raise InsufficientTail(
            f"only {len(tail)} rows in the asymptotic window")
    t = np.array([p[0] for p in tail])
    y = np.log(np.array([p[1] for p in tail]))
    slope = np.polyfit(t, y, 1)[0]
    return float(slope)
