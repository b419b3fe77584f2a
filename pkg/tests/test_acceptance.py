"""End-to-end acceptance checks; each test logs one pass/fail line."""

import json
import math
import time
import warnings
from importlib import resources

import numpy as np
import pytest

from zzfree.chain import ChainSpec, CrosstalkWarning, joint_zero, residual_couplings
from zzfree.circuit import diagonalize_and_label
from zzfree.cli import main
from zzfree.config import build_chain, build_model, load_preset
from zzfree.dynamics import (
    COMPUTATIONAL, FrameSpec, KerrSystem, NoiseSpec, QubitTone, ResonatorDrive, SimConfig,
    controlled_phase, exact_zz, lindblad_propagate, propagate_state, solve_exact_cancellation,
    solve_time_domain_cancellation,
)
from zzfree.effective import (
    DriveParams, ezp, sizzle_crosscheck, solve_cancellation, zz_dynamic_leading, zz_total,
)
from zzfree.gates import (
    minimum_cz_duration, measurement_dephasing, optimize_cr_gate, optimize_cz_duration,
    simulate_cr_gate,
)
from zzfree.pulses import AdiabaticPoly, TruncatedGaussian, drag_pair

DET = 0.1


@pytest.fixture(scope="module")
def fig2():
    return build_model(load_preset("fig2"))


@pytest.fixture(scope="module")
def fig3():
    return build_model(load_preset("fig3"))


@pytest.fixture(scope="module")
def fig4():
    return build_model(load_preset("fig4"))


@pytest.fixture(scope="module")
def chain():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CrosstalkWarning)
        return build_chain(load_preset("appendix-a")["chain"])


@pytest.fixture(scope="module")
def exact_d0(fig2):
    return solve_exact_cancellation(fig2, DET)


class TestCancellation:
    def test_c1_cancellation_point(self, fig2, record_criterion):
        start = time.perf_counter()
        point = solve_cancellation(fig2, DET)
        elapsed = time.perf_counter() - start
        ok = 0.26 <= point.amplitude <= 0.28 and elapsed < 1.0
        assert record_criterion("1", ok, f"D0 = {point.amplitude:.6f} GHz in [0.26, 0.28], "
                                         f"{elapsed * 1e3:.1f} ms")

    def test_c2_flat_controlled_phase(self, fig2, exact_d0, record_criterion):
        start = time.perf_counter()
        sim = SimConfig(dt=0.05, qubit_levels=2, res_dim=6)
        phases = {tau: controlled_phase(fig2, DriveParams(exact_d0, DET), FrameSpec("displaced"),
                                        sim, tau) for tau in (100.0, 200.0, 300.0)}
        elapsed = time.perf_counter() - start
        ok = all(abs(p) < 0.02 for p in phases.values()) and elapsed < 300
        detail = ", ".join(f"|phi({t:g} ns)| = {abs(p):.2e}" for t, p in phases.items())
        assert record_criterion("2", ok, f"{detail} rad at D0 = {exact_d0:.6f} GHz, "
                                         f"{elapsed:.1f} s")

    def test_c3_hierarchy(self, fig2, record_criterion):
        exact = solve_time_domain_cancellation(fig2, DET)
        point = solve_cancellation(fig2, DET)
        err_ezp = abs(point.amplitude - exact)
        err_lead = abs(point.leading_order - exact)
        ok = err_ezp < err_lead
        assert record_criterion("3", ok, f"time-domain root {exact:.6f} GHz; E_zp off by "
                                         f"{err_ezp:.2e}, leading order off by {err_lead:.2e}")


class TestGates:
    @pytest.mark.parametrize("flavor", ["zero", "one"])
    def test_c4_cross_resonance(self, fig3, flavor, record_criterion):
        start = time.perf_counter()
        spec, result = optimize_cr_gate(fig3, 40.0, flavor, seed=0)
        t_opt = time.perf_counter() - start
        totals = {}
        t_eval = 0.0
        for t in (500.0, 100.0):
            start = time.perf_counter()
            totals[t] = simulate_cr_gate(fig3, spec, noise=NoiseSpec.uniform(t, t)).total_error
            t_eval = max(t_eval, time.perf_counter() - start)
        ok = (result.coherent_error <= 1e-4 and totals[500.0] <= 1.5e-4
              and 3e-4 <= totals[100.0] <= 8e-4 and t_opt <= 7200 and t_eval <= 600)
        assert record_criterion(
            f"4 ({flavor}-CNOT)", ok,
            f"coherent {result.coherent_error:.2e} <= 1e-4, total {totals[500.0]:.2e} at 500 us "
            f"<= 1.5e-4, {totals[100.0]:.2e} at 100 us in [3e-4, 8e-4]; optimization "
            f"{t_opt:.0f} s, evaluation {t_eval:.0f} s")

    def test_c5_adiabatic_cz(self, fig4, record_criterion):
        t_min = minimum_cz_duration(fig4)
        out = {n: optimize_cz_duration(fig4, n) for n in (2, 32)}
        (t2, r2), (t32, r32) = out[2], out[32]
        ok = (abs(t2 / 160 - 1) <= 0.15 and abs(t32 / 110 - 1) <= 0.15
              and r2.diabatic_error < 1e-4 and 1e-4 <= r32.diabatic_error <= 1e-3
              and min(t2, t32) >= t_min)
        assert record_criterion(
            "5", ok, f"n=2: T_g = {t2:.1f} ns, diabatic {r2.diabatic_error:.2e}; n=32: "
                     f"T_g = {t32:.1f} ns, diabatic {r32.diabatic_error:.2e}; bound "
                     f"{t_min:.1f} ns")

    def test_c6_dephasing_limit(self, record_criterion):
        gamma = measurement_dephasing(0.006, 0.1, 1.0 / 100.0, 10.0)
        limit_ms = 1.0 / gamma / 1e3
        ok = abs(limit_ms / 5.0 - 1) <= 0.2
        assert record_criterion("6", ok, f"coherence limit {limit_ms:.3f} ms vs 5 ms +- 20%")


class TestChain:
    def test_c7_chain_residuals(self, chain, record_criterion):
        zero = joint_zero(chain)
        r = residual_couplings(chain, zero)
        zz12, zz23 = abs(r.zz(1, 2)) * 1e6, abs(r.zz(2, 3)) * 1e6
        zz31, zzz = abs(r.zz(1, 3)) * 1e6, abs(r.zzz(1, 2, 3)) * 1e6
        ok = (zz12 < 0.1 and zz23 < 0.1 and 5.1 / 3 <= zz31 <= 5.1 * 3
              and 2.1 / 3 <= zzz <= 2.1 * 3)
        assert record_criterion(
            "7", ok, f"|zz12| = {zz12:.1e}, |zz23| = {zz23:.1e} kHz; |zz31| = {zz31:.2f} kHz "
                     f"(5.1), |zzz123| = {zzz:.2f} kHz (2.1)")


class TestProperties:
    def test_c8_hermiticity(self, fig3, record_criterion):
        steady = [ResonatorDrive.constant(DriveParams(0.1, DET)),
                  QubitTone("n_L", TruncatedGaussian(0.2, 10.0, 40.0), 5.1)]
        ramp = [ResonatorDrive(AdiabaticPoly(0.27, 4, 40.0), DET)]
        worst = 0.0
        for kind, res_dim, drives in (("displaced", 4, steady), ("displaced", 4, ramp),
                                      ("rotating", 14, steady), ("lab", 14, steady)):
            h = KerrSystem(fig3, drives, FrameSpec(kind), SimConfig(res_dim=res_dim)).hamiltonian(
                np.linspace(0, 40, 9))
            worst = max(worst, np.abs(h - np.conj(np.swapaxes(h, 1, 2))).max())
        assert record_criterion("8a hermiticity", worst < 1e-12, f"max |H - H^+| = {worst:.1e}")

    def test_c8_norm_and_trace(self, fig2, record_criterion):
        tones = [QubitTone("n_R", TruncatedGaussian(0.05, 2.5, 10.0), 5.17)]
        drive = ResonatorDrive.constant(DriveParams(0.2, DET))
        sim = SimConfig(dt=0.1, res_dim=4)
        res = propagate_state(fig2, [drive] + tones, FrameSpec("displaced"), sim,
                              COMPUTATIONAL, 10.0)
        rho = lindblad_propagate(fig2, [drive] + tones, FrameSpec("displaced"),
                                 SimConfig(dt=0.1, res_dim=3), NoiseSpec.uniform(5.0, 5.0, kappa=0.1),
                                 10.0, initial=list(COMPUTATIONAL))
        ok = res.norm_drift < 1e-10 and rho.trace_error < 1e-8
        assert record_criterion("8b norm/trace", ok, f"norm drift {res.norm_drift:.1e}, "
                                                     f"trace error {rho.trace_error:.1e}")

    def test_c8_integrator_order(self, fig2, record_criterion):
        tones = [QubitTone("n_R", TruncatedGaussian(0.05, 2.5, 10.0), 5.17),
                 QubitTone("n_L", TruncatedGaussian(0.05, 2.5, 10.0), 5.16)]

        def final(dt):
            sim = SimConfig(dt=dt, qubit_levels=3, res_dim=2)
            return propagate_state(fig2, tones, FrameSpec("rotating"), sim, COMPUTATIONAL,
                                   10.0).states

        ref = final(0.005)
        errs = [np.abs(final(dt) - ref).max() for dt in (0.4, 0.2, 0.1)]
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        ok = all(r > 12 for r in ratios)
        assert record_criterion("8c integrator order", ok,
                                "Magnus-4 error ratios under dt halving "
                                + ", ".join(f"{r:.1f}" for r in ratios) + " (16 expected)")

    def test_c8_ezp_quadratic(self, fig2, record_criterion):
        amps = np.array([0.05, 0.1, 0.2, 0.3])
        dyn = np.array([zz_total(DriveParams(a, DET), fig2) - fig2.zz_static for a in amps])
        curv = dyn / amps**2
        spread = np.ptp(curv) / abs(curv.mean())
        e = ezp(DriveParams(0.2, DET), fig2.chi_left, fig2.chi_right, 1, 1)
        ok = spread < 1e-12 and e == pytest.approx(0.04 / (DET - fig2.chi_left - fig2.chi_right))
        assert record_criterion("8d E_zp scaling", ok, f"relative spread of zz/D^2 {spread:.1e}")

    def test_c8_sizzle(self, fig2, record_criterion):
        worst = max(abs(sizzle_crosscheck(fig2, DriveParams(a, d))
                        / zz_dynamic_leading(DriveParams(a, d), fig2.chi_left, fig2.chi_right) - 1)
                    for a in (0.1, 0.27) for d in (0.05, 0.1, 0.3))
        assert record_criterion("8e sizzle identity", worst < 1e-12,
                                f"max relative deviation {worst:.1e}")

    def test_c8_adiabatic_endpoints(self, record_criterion):
        worst = max(abs(float(f(t))) for n in range(2, 33, 2)
                    for p in [AdiabaticPoly(0.27, n, 100.0)] for f in (p.deriv, p.deriv2)
                    for t in (0.0, 100.0))
        assert record_criterion("8f ramp endpoints", worst < 1e-8,
                                f"max endpoint derivative {worst:.1e}")

    def test_c8_drag(self, fig2, record_criterion):
        duration = 8.0
        eps = 1.0 / (4.0 * TruncatedGaussian(1.0, duration / 4, duration).area())
        env = TruncatedGaussian(eps, duration / 4, duration)
        sim = SimConfig(dt=0.01, qubit_levels=4, res_dim=2)
        pops = []
        for quad in (None, drag_pair(env, fig2.eta_right).quadrature):
            res = propagate_state(fig2, [QubitTone("n_R", env, 5.16, 0.0, quad)],
                                  FrameSpec("rotating"), sim, [(0, 0)], duration)
            pops.append(res.populations[-1, 0, 2])
        assert record_criterion("8g DRAG", pops[1] < pops[0],
                                f"|2> population {pops[0]:.2e} plain, {pops[1]:.2e} with DRAG")

    def test_c8_labeling(self, record_criterion):
        rng = np.random.default_rng(0)
        ok = True
        for _ in range(50):
            h = np.diag(np.sort(rng.uniform(0, 10, 12)))
            noise = rng.normal(size=(12, 12))
            labels = diagonalize_and_label(h + 0.3 * (noise + noise.T),
                                           [(i, 0, 0) for i in range(12)]).labels
            ok &= len(set(labels)) == len(labels)
        assert record_criterion("8h labeling injective", ok, "50 random 12-level spectra")

    def test_c8_two_qubit_chain(self, fig2, record_criterion):
        spec = ChainSpec([[4.5, -0.32], [5.16, -0.32]], [fig2.omega_res],
                         [[fig2.chi_left, fig2.chi_right]], {(0, 1): fig2.zz_static}, [DET],
                         resonator_kerr=[fig2.eta_res])
        worst = max(abs(residual_couplings(spec, [a]).zz(1, 2)
                        - exact_zz(fig2, DriveParams(a, DET))) for a in (0.0, 0.15, 0.27))
        assert record_criterion("8i N=2 chain", worst < 1e-10, f"max deviation {worst:.1e} GHz")

    def test_c8_reruns(self, tmp_path, record_criterion):
        argv = ["chain", "--preset", "appendix-a", "--grid-points", "4", "--seed", "3"]
        for name in ("a", "b"):
            assert main(argv + ["--out", str(tmp_path / name)]) == 0
        same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                   for f in ("chain.json", "chain_grid.csv"))
        assert record_criterion("8j byte-identical reruns", same, "chain preset, seed 3")


class TestPresets:
    @pytest.mark.parametrize("argv,artifact", [
        (["cancel", "--preset", "fig2"], "cancel.json"),
        (["zz-scan", "--preset", "fig2"], "zz_scan.csv"),
        (["dressed", "--preset", "fig3"], "dressed.json"),
        (["cr-gate", "--preset", "fig3"], "cr_gate_zero.json"),
        (["cz-gate", "--preset", "fig4"], "cz_gate.json"),
        (["chain", "--preset", "appendix-a"], "chain.json"),
        (["error-budget", "--preset", "fig3"], "error_budget.json"),
    ])
    def test_preset_runs(self, tmp_path, argv, artifact, record_criterion):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CrosstalkWarning)
            code = main(argv + ["--out", str(tmp_path)])
        ok = code == 0 and (tmp_path / artifact).exists()
        if ok and artifact.endswith(".json"):
            json.loads((tmp_path / artifact).read_text("utf-8"))
        assert record_criterion(f"preset {argv[0]} --preset {argv[2]}", ok, f"exit {code}")
