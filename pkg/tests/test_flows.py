"""Flow integration: right sides, stepping, surgery, history, rate fits."""

import math

import numpy as np
import pytest

from conftest import all_fixture_meshes, unit_lengths

from plcurv import geometry
from plcurv.errors import InsufficientTail
from plcurv.flows import (
    FlowConfig,
    FlowHistory,
    HistoryRow,
    calabi_rhs,
    conserved_sum,
    curvature_evolution_residual,
    exponential_rate_probe,
    make_state,
    run_flow,
    step,
    yamabe_rhs,
)
from plcurv.geometry import alpha_curvature, curvature, scale_metric
from plcurv.mesh import build_triangulation
from plcurv.solver import Target, newton_solve


def state_report(state):
    scaled = scale_metric(state.tri, state.base, state.u)
    return alpha_curvature(curvature(state.tri, scaled), state.u, state.alpha,
                           chi=state.tri.chi)


def kite_state(tri, alpha=1.0, stretch=1.9):
    """Unit lattice with one edge stretched past cocircularity."""
    base = unit_lengths(tri)
    e = sorted(base)[0]
    base[e] = stretch
    assert geometry.is_delaunay_all(tri, base) == [e]
    return make_state(tri, base, np.zeros(tri.vertex_count), alpha), e


class TestRhs:
    def test_flat_torus_both_zero(self, torus9):
        state = make_state(torus9, unit_lengths(torus9), np.zeros(9), 2.0)
        assert np.max(np.abs(yamabe_rhs(state))) < 1e-13
        assert np.max(np.abs(calabi_rhs(state))) < 1e-13

    def test_regular_tetrahedron_stationary(self, tetra):
        # all R_alpha equal pi at u = 0, so both right sides vanish
        state = make_state(tetra, unit_lengths(tetra), np.zeros(4), -1.0)
        assert np.max(np.abs(yamabe_rhs(state))) < 1e-13
        assert np.max(np.abs(calabi_rhs(state))) < 1e-13

    def test_converged_solution_is_stationary(self, torus9):
        res = newton_solve(torus9, unit_lengths(torus9),
                           np.full(9, 0.17), 1.0, Target.constant())
        state = make_state(res.tri, res.base, res.u, 1.0)
        assert np.max(np.abs(yamabe_rhs(state))) < 1e-9

    def test_calabi_weighted_sum_vanishes(self):
        rng = np.random.default_rng(21)
        for name, tri, lens in all_fixture_meshes():
            for alpha in (-2.0, 0.0, 1.5):
                u = rng.uniform(-0.2, 0.2, tri.vertex_count)
                state = make_state(tri, lens, u, alpha)
                rhs = calabi_rhs(state)
                total = float(np.sum(np.exp(alpha * u) * rhs))
                assert abs(total) < 1e-10, (name, alpha)

    def test_nonconstant_curvature_moves(self, tetra):
        u0 = np.array([0.1, 0.0, 0.0, 0.0])
        state = make_state(tetra, unit_lengths(tetra), u0, -1.0)
        assert np.max(np.abs(yamabe_rhs(state))) > 1e-3
        assert state_report(state).max_dev > 1e-3


class TestStep:
    def test_stationary_state_only_advances_time(self, torus9):
        state = make_state(torus9, unit_lengths(torus9), np.zeros(9), 1.0)
        cfg = FlowConfig(kind="yamabe", dt=0.25)
        out = step(state, cfg)
        assert out.t == 0.25
        assert out.step_count == 1
        # the flat start is stationary to roundoff (K itself carries ~1e-16)
        assert np.max(np.abs(out.u - state.u)) < 1e-15
        assert out.flips == []

    def test_yamabe_step_decreases_deviation(self, tetra):
        u0 = np.array([0.1, 0.0, 0.0, 0.0])
        state = make_state(tetra, unit_lengths(tetra), u0, -1.0)
        before = state_report(state).max_dev
        out = step(state, FlowConfig(kind="yamabe", dt=0.05))
        assert state_report(out).max_dev < before

    def test_surgery_logs_flip_and_preserves_deficits(self, torus9):
        state, e = kite_state(torus9)
        k_before = curvature(state.tri,
                             scale_metric(state.tri, state.base, state.u))
        out = step(state, FlowConfig(kind="yamabe", dt=1e-12))
        assert len(out.flips) == 1
        assert out.flips[0].edge == e
        assert out.flips[0].old_length == pytest.approx(1.9)
        k_after = curvature(out.tri, scale_metric(out.tri, out.base, out.u))
        assert np.max(np.abs(k_after - k_before)) < 1e-9
        assert geometry.is_delaunay_all(
            out.tri, scale_metric(out.tri, out.base, out.u)) == []

    def test_rejection_halves_dt_and_resets_streak(self, tetra):
        u0 = np.array([0.3, -0.2, 0.1, 0.0])
        state = make_state(tetra, unit_lengths(tetra), u0, -1.0)
        cfg = FlowConfig(kind="yamabe", dt=64.0)
        out = step(state, cfg)
        assert out.last_dt < 64.0
        assert out.accept_streak == 0

    def test_dt_recovers_toward_cap_after_accepts(self, tetra):
        u0 = np.array([0.3, -0.2, 0.1, 0.0])
        state = make_state(tetra, unit_lengths(tetra), u0, -1.0)
        cfg = FlowConfig(kind="yamabe", dt=16.0)
        state = step(state, cfg)
        shrunk = state.dt
        assert shrunk < 16.0
        for _ in range(12):
            state = step(state, cfg)
            assert state.dt <= 16.0
        assert state.dt > shrunk

    def test_renormalization_pins_conserved_sum(self, tetra):
        rng = np.random.default_rng(3)
        u0 = rng.uniform(-0.2, 0.2, 4)
        state = make_state(tetra, unit_lengths(tetra), u0, -1.0)
        target = state.conserved_target
        cfg = FlowConfig(kind="yamabe", dt=0.1)
        for _ in range(30):
            state = step(state, cfg)
            assert abs(conserved_sum(state.u, -1.0) - target) < 1e-12


class TestRunFlow:
    def test_flat_torus_converges_at_step_zero(self, torus9):
        state, hist = run_flow(torus9, unit_lengths(torus9), np.zeros(9), 2.0,
                               FlowConfig(kind="yamabe"))
        assert hist.status == "converged"
        assert state.step_count == 0
        assert len(hist.rows) == 1
        assert hist.rows[0].max_dev < 1e-12

    def test_torus_yamabe_matches_newton(self, torus9):
        base = unit_lengths(torus9)
        rng = np.random.default_rng(12)
        u0 = rng.uniform(-0.3, 0.3, 9)
        cfg = FlowConfig(kind="yamabe", dt=0.2, tol=1e-10, max_steps=20000)
        state, hist = run_flow(torus9, base, u0, 1.0, cfg)
        assert hist.status == "converged"
        assert state_report(state).max_dev < 1e-10
        res = newton_solve(torus9, base, u0, 1.0, Target.constant())
        flow_u = state.u - state.u.mean()
        newton_u = res.u - res.u.mean()
        assert np.max(np.abs(flow_u - newton_u)) < 1e-6
        start = hist.rows[0].conserved
        for row in hist.rows:
            assert abs(row.conserved - start) < 1e-9

    def test_tetra_calabi_matches_newton(self, tetra):
        base = unit_lengths(tetra)
        rng = np.random.default_rng(5)
        u0 = rng.uniform(-0.2, 0.2, 4)
        cfg = FlowConfig(kind="calabi", dt=0.1, tol=1e-10, max_steps=20000)
        state, hist = run_flow(tetra, base, u0, -1.0, cfg)
        assert hist.status == "converged"
        rep = state_report(state)
        assert rep.max_dev < 1e-10
        res = newton_solve(tetra, base, u0, -1.0, Target.constant())
        assert np.max(np.abs(state.u - res.u)) < 1e-6

    def test_energy_never_increases_across_rows(self, torus9):
        rng = np.random.default_rng(4)
        u0 = rng.uniform(-0.3, 0.3, 9)
        cfg = FlowConfig(kind="yamabe", dt=0.2, tol=1e-10, max_steps=20000)
        _, hist = run_flow(torus9, unit_lengths(torus9), u0, 1.0, cfg)
        for prev, row in zip(hist.rows, hist.rows[1:]):
            slack = 1e-9 * max(1.0, abs(prev.energy))
            assert row.energy <= prev.energy + slack

    def test_unsupported_regime_flagged_but_runs(self, tetra):
        rng = np.random.default_rng(6)
        u0 = rng.uniform(-0.1, 0.1, 4)
        cfg = FlowConfig(kind="yamabe", dt=0.05, max_steps=5)
        state, hist = run_flow(tetra, unit_lengths(tetra), u0, 1.0, cfg)
        assert hist.unsupported_regime
        assert state.step_count <= 5

    def test_max_steps_status(self, torus9):
        rng = np.random.default_rng(7)
        u0 = rng.uniform(-0.3, 0.3, 9)
        cfg = FlowConfig(kind="yamabe", dt=0.05, tol=1e-10, max_steps=3)
        state, hist = run_flow(torus9, unit_lengths(torus9), u0, 1.0, cfg)
        assert hist.status == "max_steps"
        assert state.step_count == 3
        assert len(hist.rows) == 4

    def test_surgery_off_keeps_triangulation(self, torus9):
        rng = np.random.default_rng(8)
        u0 = rng.uniform(-0.1, 0.1, 9)
        cfg = FlowConfig(kind="yamabe", dt=0.1, tol=1e-8, max_steps=5000,
                         surgery=False)
        state, hist = run_flow(torus9, unit_lengths(torus9), u0, 1.0, cfg)
        assert state.flips == []
        assert state.tri.face_count == torus9.face_count

    def test_history_csv_round_trip(self, torus9):
        rng = np.random.default_rng(9)
        u0 = rng.uniform(-0.2, 0.2, 9)
        cfg = FlowConfig(kind="yamabe", dt=0.1, tol=1e-8, max_steps=50)
        _, hist = run_flow(torus9, unit_lengths(torus9), u0, 1.0, cfg)
        text = hist.to_csv()
        lines = text.strip().split("\n")
        assert lines[0] == "t,max_dev,conserved,energy,flips,dt"
        assert len(lines) == len(hist.rows) + 1
        cells = lines[1].split(",")
        assert float(cells[0]) == hist.rows[0].t
        assert float(cells[3]) == hist.rows[0].energy

    def test_rk4_matches_euler_limit(self, tetra):
        base = unit_lengths(tetra)
        u0 = np.array([0.1, -0.1, 0.05, 0.0])
        cfg = FlowConfig(kind="yamabe", dt=0.1, tol=1e-10, integrator="rk4",
                         max_steps=20000)
        state, hist = run_flow(tetra, base, u0, -1.0, cfg)
        assert hist.status == "converged"
        res = newton_solve(tetra, base, u0, -1.0, Target.constant())
        assert np.max(np.abs(state.u - res.u)) < 1e-6


class TestDescentIdentities:
    """Measured energy rate against the closed-form dissipation."""

    def oracle_state(self, tri, alpha, seed):
        base = unit_lengths(tri)
        rng = np.random.default_rng(seed)
        u0 = rng.uniform(-0.2, 0.2, tri.vertex_count)
        tri2, base2, _ = geometry.delaunay_surgery(tri, base, u0)
        return make_state(tri2, base2, u0, alpha)

    def test_yamabe_rate_identity(self, torus9):
        state = self.oracle_state(torus9, 1.0, 13)
        rep = state_report(state)
        predicted = -float(np.sum(
            (rep.R_av - rep.R_alpha) ** 2 * np.exp(state.alpha * state.u)))
        cfg = FlowConfig(kind="yamabe", dt=1e-4, surgery=False,
                         renormalize=False)
        out = step(state, cfg)
        measured = (out.w_value - state.w_value) / out.last_dt
        assert measured == pytest.approx(predicted, rel=1e-2)

    def test_calabi_rate_identity(self, torus9):
        state = self.oracle_state(torus9, 1.0, 14)
        rep = state_report(state)
        scaled = scale_metric(state.tri, state.base, state.u)
        L = geometry.curvature_jacobian(state.tri, scaled).toarray()
        dev = rep.R_alpha - rep.R_av
        predicted = -float(dev @ L @ dev)
        cfg = FlowConfig(kind="calabi", dt=1e-4, surgery=False,
                         renormalize=False)
        out = step(state, cfg)
        measured = (out.w_value - state.w_value) / out.last_dt
        assert measured == pytest.approx(predicted, rel=1e-2)


class TestEvolutionResidual:
    def test_stationary_is_zero(self, torus9):
        state = make_state(torus9, unit_lengths(torus9), np.zeros(9), 1.0)
        res = curvature_evolution_residual(state, FlowConfig(dt=1e-6))
        assert np.max(np.abs(res)) < 1e-12

    @pytest.mark.parametrize("kind", ["yamabe", "calabi"])
    def test_torus_alpha0_residual(self, torus9, kind):
        rng = np.random.default_rng(15)
        u0 = rng.uniform(-0.2, 0.2, 9)
        tri2, base2, _ = geometry.delaunay_surgery(
            torus9, unit_lengths(torus9), u0)
        state = make_state(tri2, base2, u0, 0.0)
        res = curvature_evolution_residual(state, FlowConfig(kind=kind, dt=1e-6))
        assert np.max(np.abs(res)) < 1e-4

    @pytest.mark.parametrize("kind", ["yamabe", "calabi"])
    def test_tetra_residual(self, tetra, kind):
        rng = np.random.default_rng(16)
        u0 = rng.uniform(-0.15, 0.15, 4)
        state = make_state(tetra, unit_lengths(tetra), u0, -1.0)
        res = curvature_evolution_residual(state, FlowConfig(kind=kind, dt=1e-6))
        assert np.max(np.abs(res)) < 1e-4


class TestRateProbe:
    def synthetic(self, rate=-2.0, upto=12.0, dt=0.05):
        hist = FlowHistory()
        t = 0.0
        while t <= upto:
            hist.rows.append(HistoryRow(t=t, max_dev=math.exp(rate * t),
                                        conserved=0.0, energy=0.0, flips=0,
                                        dt=dt))
            t += dt
        return hist

    def test_synthetic_exponential_slope(self):
        slope = exponential_rate_probe(self.synthetic(), -2.0, 2.0)
        assert slope == pytest.approx(-2.0, abs=1e-6)

    def test_insufficient_tail_raises(self):
        hist = FlowHistory()
        hist.rows.append(HistoryRow(0.0, 0.3, 0.0, 0.0, 0, 0.1))
        with pytest.raises(InsufficientTail):
            exponential_rate_probe(hist, -1.0, 1.0)

    def test_tetra_decay_beats_predicted_fraction(self, tetra):
        base = unit_lengths(tetra)
        rng = np.random.default_rng(9)
        u0 = rng.uniform(-0.1, 0.1, 4)
        rep0 = alpha_curvature(
            curvature(tetra, scale_metric(tetra, base, u0)), u0, -1.0, chi=2)
        assert np.all(-1.0 * rep0.R_alpha < 0.0)  # qualifying start
        cfg = FlowConfig(kind="yamabe", dt=0.02, tol=1e-11, max_steps=40000)
        _, hist = run_flow(tetra, base, u0, -1.0, cfg)
        slope = exponential_rate_probe(hist, -1.0, rep0.R_av)
        assert slope <= 0.8 * -1.0 * rep0.R_av
