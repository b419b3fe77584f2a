"""Command-line entry point: ``zzfree <subcommand> [--preset NAME | --config PATH] ...``.

Exit codes: 0 on success, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from numpy.linalg import LinAlgError

from .config import PRESETS, ScenarioConfig, resolve
from .errors import ConfigError, ZZFreeError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path: Path, data) -> None:
    text = json.dumps(_plain(data), sort_keys=True, indent=2, ensure_ascii=False,
                      allow_nan=False)
    _atomic_write(path, text + "\n")


def format_number(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    return format(x, ".12g") if math.isfinite(x) else "nan"


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(format_number(v) for v in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def _detuning(cfg: ScenarioConfig, args) -> float:
    value = getattr(args, "detuning", None)
    if value is None:
        value = cfg.section("drive").get("detuning", 0.1)
    return float(value)


def run_dressed(cfg: ScenarioConfig, args):
    from .circuit import calibrate_bare_to_dressed, extract_dressed_params
    from .config import build_circuit, build_model

    out = {}
    if args.calibrate:
        targets = cfg.section("targets", required=True)
        initial = build_circuit(cfg.data["circuit"]) if "circuit" in cfg.data else None
        circuit = calibrate_bare_to_dressed(targets, initial)
        out["circuit"] = circuit.to_dict()
        model = extract_dressed_params(circuit)
    else:
        model = build_model(cfg.data)
        if "circuit" in cfg.data and "model" not in cfg.data:
            out["circuit"] = build_circuit(cfg.data["circuit"]).to_dict()
    out["dressed"] = model.to_dict()
    write_json(cfg.out_dir / "dressed.json", out)
    return (f"dressed: chi_left={model.chi_left * 1e3:.4f} MHz chi_right="
            f"{model.chi_right * 1e3:.4f} MHz zz_static={model.zz_static * 1e3:.4f} MHz")


def run_cancel(cfg: ScenarioConfig, args):
    import warnings

    from .config import build_model
    from .dynamics import exact_stark_shifts, solve_exact_cancellation
    from .effective import (
        DriveParams, FourWaveWarning, four_wave_coefficient, solve_cancellation, stark_shifts,
        zz_total,
    )

    model = build_model(cfg.data)
    det = _detuning(cfg, args)
    point = solve_cancellation(model, det)
    drive = DriveParams(point.amplitude, det)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FourWaveWarning)
        fw = four_wave_coefficient(model, drive)
    out = {
        "D0_GHz": point.amplitude,
        "D0_leading_order_GHz": point.leading_order,
        "detuning_GHz": det,
        "residual_zz_GHz": zz_total(drive, model),
        "stark_shift_left_GHz": stark_shifts(drive, model)[0],
        "stark_shift_right_GHz": stark_shifts(drive, model)[1],
        "photons": drive.photons,
        "four_wave_left": fw[0],
        "four_wave_right": fw[1],
        "four_wave_warning": bool(caught),
    }
    if not args.no_exact:
        d_exact = solve_exact_cancellation(model, det)
        shifts = exact_stark_shifts(model, DriveParams(d_exact, det))
        out.update(D0_exact_GHz=d_exact, stark_shift_left_exact_GHz=shifts[0],
                   stark_shift_right_exact_GHz=shifts[1])
    write_json(cfg.out_dir / "cancel.json", out)
    print(json.dumps(_plain(out), sort_keys=True))
    return f"cancel: D0={point.amplitude:.6f} GHz at detuning {det:g} GHz"


def run_zz_scan(cfg: ScenarioConfig, args):
    import numpy as np

    from .config import build_model
    from .dynamics import exact_zz
    from .effective import DriveParams, zz_total, zz_total_leading

    model = build_model(cfg.data)
    det = _detuning(cfg, args)
    scan = cfg.section("scan")
    dmax = float(args.dmax if args.dmax is not None else scan.get("dmax", 0.4))
    points = int(args.points if args.points is not None else scan.get("points", 81))
    exact = bool(scan.get("exact", False)) or args.exact
    if points < 2 or dmax <= 0:
        raise ConfigError("need points >= 2 and dmax > 0", "scan")
    header = ["D_GHz", "zz_total_GHz", "leading_order_GHz"] + (["exact_GHz"] if exact else [])
    rows = []
    for d in np.linspace(0.0, dmax, points):
        drive = DriveParams(float(d), det)
        row = [d, zz_total(drive, model),
               zz_total_leading(drive, model)]
        if exact:
            row.append(exact_zz(model, drive))
        rows.append(row)
    write_csv(cfg.out_dir / "zz_scan.csv", header, rows)
    signs = np.sign([r[1] for r in rows])
    crossing = bool(np.any(signs[:-1] * signs[1:] < 0))
    return f"zz-scan: {points} points up to {dmax:g} GHz, sign change: {crossing}"


def _population_rows(result):
    from .dynamics import COMPUTATIONAL

    pops = result.populations
    rows = []
    for i, t in enumerate(result.times):
        row = [t]
        for k in range(len(COMPUTATIONAL)):
            row.extend(pops[i, k, :].tolist())
        rows.append(row)
    nq = int(round(math.sqrt(pops.shape[2])))
    header = ["t_ns"] + [f"P{a}{b}_from_{jl}{jr}" for jl, jr in COMPUTATIONAL
                         for a in range(nq) for b in range(nq)]
    return header, rows


def run_cr_gate(cfg: ScenarioConfig, args):
    from .config import build_model, build_noise, build_sim
    from .effective import DriveParams
    from .gates import CR_SIM, CRGateSpec, cancellation_amplitude, optimize_cr_gate, \
        simulate_cr_gate

    model = build_model(cfg.data)
    cr = cfg.section("cr")
    det = _detuning(cfg, args)
    duration = float(args.duration if args.duration is not None else cr.get("duration", 40.0))
    flavor = args.flavor or cr.get("flavor", "zero")
    flavor = {"0": "zero", "1": "one"}.get(flavor, flavor)
    sim = build_sim(cfg.section("sim"), dt=CR_SIM.dt, qubit_levels=CR_SIM.qubit_levels,
                    res_dim=CR_SIM.res_dim)
    noise = build_noise(cfg.section("noise") if args.noise is None else {}, args.noise)
    drag = bool(cr.get("drag", True))
    if args.optimize or flavor not in cr:
        spec, _ = optimize_cr_gate(model, duration, flavor, sim, detuning=det, seed=cfg.seed,
                                   drag_enabled=drag)
    else:
        p = cr[flavor]
        missing = {"drive_freq", "cr_peak", "cancel_peak", "cancel_phase"} - set(p)
        if missing:
            raise ConfigError(f"missing keys {sorted(missing)}", f"cr.{flavor}")
        rip = DriveParams(cancellation_amplitude(model, det), det)
        spec = CRGateSpec(flavor, p["drive_freq"], p["cr_peak"], p["cancel_peak"],
                          p["cancel_phase"], duration, rip, drag_enabled=drag,
                          drag_on=cr.get("drag_on", "cancel"))
    result = simulate_cr_gate(model, spec, sim, noise)
    out = {"spec": spec.to_dict(), "result": result.to_dict()}
    write_json(cfg.out_dir / f"cr_gate_{flavor}.json", out)
    header, rows = _population_rows(result)
    write_csv(cfg.out_dir / f"cr_populations_{flavor}.csv", header, rows)
    extra = f" total_error={result.total_error:.3e}" if result.total_error is not None else ""
    return (f"cr-gate: {flavor}-controlled {duration:g} ns coherent_error="
            f"{result.coherent_error:.3e}{extra}")


def run_cz_gate(cfg: ScenarioConfig, args):
    from .config import build_model, build_noise, build_sim
    from .effective import DriveParams
    from .gates import CZ_SIM, CZGateSpec, cancellation_amplitude, minimum_cz_duration, \
        optimize_cz_duration, simulate_cz_gate

    model = build_model(cfg.data)
    cz = cfg.section("cz")
    det = _detuning(cfg, args)
    exponents = [args.n] if args.n is not None else list(cz.get("exponents", [2]))
    sim = build_sim(cfg.section("sim"), dt=CZ_SIM.dt, qubit_levels=CZ_SIM.qubit_levels,
                    res_dim=CZ_SIM.res_dim)
    noise = build_noise(cfg.section("noise") if args.noise is None else {}, args.noise)
    optimize = args.optimize or (args.duration is None and cz.get("optimize", True)
                                 and "duration" not in cz)
    amp = cancellation_amplitude(model, det)
    summary, out = [], {"T_min_ns": minimum_cz_duration(model), "gates": {}}
    for n in exponents:
        if optimize:
            t_g, _ = optimize_cz_duration(model, int(n), sim, detuning=det)
        else:
            t_g = float(args.duration if args.duration is not None else cz["duration"])
        spec = CZGateSpec(int(n), t_g, DriveParams(amp, det))
        result = simulate_cz_gate(model, spec, sim, noise)
        out["gates"][str(n)] = {"duration_ns": t_g, "result": result.to_dict()}
        header, rows = _population_rows(result)
        write_csv(cfg.out_dir / f"cz_populations_n{n}.csv", header, rows)
        summary.append(f"n={n} T_g={t_g:.2f} ns diabatic={result.diabatic_error:.2e}")
    write_json(cfg.out_dir / "cz_gate.json", out)
    return "cz-gate: " + "; ".join(summary)


def _pair_column(key: str) -> str:
    """Column name for a chain coupling; pairs wrap around the chain (``zz13`` -> ``zz31``)."""
    digits = key.lstrip("z")
    if len(digits) == 2 and int(digits[1]) - int(digits[0]) > 1:
        return "zz" + digits[::-1]
    return key


def run_chain(cfg: ScenarioConfig, args):
    import numpy as np

    from .chain import joint_zero, residual_couplings, solve_chain_cancellation, \
        sweep_drive_map
    from .config import build_chain

    spec = build_chain(cfg.section("chain", required=True))
    sweep = cfg.section("sweep")
    independent = solve_chain_cancellation(spec)
    zero = joint_zero(spec, independent)
    out = {
        "independent_cancellation_GHz": independent,
        "joint_zero_GHz": zero,
        "residuals_at_joint_zero_GHz": residual_couplings(spec, zero, args.method).to_dict(),
        "method": args.method,
    }
    write_json(cfg.out_dir / "chain.json", out)
    if spec.n_resonators >= 2 and not args.no_grid:
        n_pts = args.grid_points

        def axis(key, center):
            lo, hi, n = sweep.get(key, [0.8 * center, 1.2 * center, 25])
            return np.linspace(float(lo), float(hi), int(n_pts or n))

        grid = sweep_drive_map(spec.with_amplitudes(zero), axis("d1", zero[0]),
                               axis("d2", zero[1]), find_zero=False)
        keys = sorted(grid.couplings, key=lambda k: (len(k), _pair_column(k) != k, k))
        names = {k: _pair_column(k) for k in keys}
        rows = ([grid.d1[a], grid.d2[b]] + [grid.couplings[k][a, b] for k in keys]
                for a in range(len(grid.d1)) for b in range(len(grid.d2)))
        write_csv(cfg.out_dir / "chain_grid.csv", ["D1", "D2"] + [names[k] for k in keys], rows)
    two = out["residuals_at_joint_zero_GHz"]["two_body"]
    return "chain: joint zero " + ", ".join(f"{d:.6f}" for d in zero) + " GHz; " + ", ".join(
        f"{_pair_column('zz' + k)}={v * 1e6:.3f} kHz" for k, v in sorted(two.items()))


def run_error_budget(cfg: ScenarioConfig, args):
    from .config import build_circuit, build_model, build_noise
    from .effective import DriveParams
    from .gates import CRGateSpec, cancellation_amplitude, error_budget, measurement_dephasing, \
        measurement_dephasing_limit

    noise_sec = dict(cfg.section("noise"))
    if args.kappa is not None:
        noise_sec["kappa"] = args.kappa
    if args.photons is not None:
        noise_sec["photons"] = args.photons
    noise = build_noise(noise_sec, args.noise)
    if noise is None:
        raise ConfigError("error-budget needs [noise] or --noise", "noise")
    budget = cfg.section("budget")
    out = {}
    if "model" in cfg.data or "circuit" in cfg.data:
        model = build_model(cfg.data)
        det = _detuning(cfg, args)
        spec = None
        cr = cfg.section("cr")
        flavor = cr.get("flavor", "zero")
        if flavor in cr:
            p = cr[flavor]
            rip = DriveParams(cancellation_amplitude(model, det), det)
            spec = CRGateSpec(flavor, p["drive_freq"], p["cr_peak"], p["cancel_peak"],
                              p["cancel_phase"], float(cr.get("duration", 40.0)), rip)
        circuit = build_circuit(cfg.data["circuit"]) if "circuit" in cfg.data else None
        out.update(error_budget(model, spec, noise, det, circuit))
    chi = args.chi if args.chi is not None else budget.get("chi")
    if chi is not None:
        det = float(args.detuning if args.detuning is not None else budget.get("detuning", 0.1))
        gm = measurement_dephasing(chi, det, noise.kappa, noise.photons)
        out["gamma_m_per_us"] = gm
        out["gamma_m_limit_per_us"] = measurement_dephasing_limit(chi, det, noise.kappa,
                                                                  noise.photons)
        out["coherence_limit_us"] = 1.0 / gm if gm > 0 else math.inf
    write_json(cfg.out_dir / "error_budget.json", out)
    print(json.dumps(_plain(out), sort_keys=True))
    if "coherence_limit_us" in out:
        return f"error-budget: coherence limit {out['coherence_limit_us'] / 1e3:.3f} ms"
    return f"error-budget: {len(out)} estimates"


RUNNERS = {
    "dressed": run_dressed,
    "zz-scan": run_zz_scan,
    "cancel": run_cancel,
    "cr-gate": run_cr_gate,
    "cz-gate": run_cz_gate,
    "chain": run_chain,
    "error-budget": run_error_budget,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="scenario TOML file")
    p.add_argument("--preset", choices=PRESETS, help="built-in scenario preset")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="optimizer seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS threads (falls back to ZZFREE_THREADS)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="zzfree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dressed", parents=[common], help="dressed Kerr parameters")
    p.add_argument("--calibrate", action="store_true",
                   help="fit bare parameters to the [targets] section first")

    p = sub.add_parser("zz-scan", parents=[common], help="residual ZZ versus drive amplitude")
    p.add_argument("--dmax", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--detuning", type=float)
    p.add_argument("--exact", action="store_true", help="add the exact-spectrum column")

    p = sub.add_parser("cancel", parents=[common], help="ZZ-free drive amplitude")
    p.add_argument("--detuning", type=float)
    p.add_argument("--no-exact", action="store_true", help="skip the self-Kerr-inclusive root")

    for name in ("cr-gate", "cz-gate"):
        p = sub.add_parser(name, parents=[common], help=f"simulate a {name.split('-')[0]} gate")
        p.add_argument("--duration", type=float)
        p.add_argument("--optimize", action="store_true")
        p.add_argument("--noise", help="'t1,t2' in μs for an open-system run")
        p.add_argument("--detuning", type=float)
        if name == "cr-gate":
            p.add_argument("--flavor", choices=["zero", "one", "0", "1"])
        else:
            p.add_argument("--n", type=int, help="exponent of the adiabatic ramp")

    p = sub.add_parser("chain", parents=[common], help="chain cancellation and residuals")
    p.add_argument("--method", choices=["spectral", "time-domain"], default="spectral")
    p.add_argument("--grid-points", type=int)
    p.add_argument("--no-grid", action="store_true")

    p = sub.add_parser("error-budget", parents=[common], help="closed-form error estimates")
    p.add_argument("--noise", help="'t1,t2' in μs")
    p.add_argument("--kappa", type=float, help="resonator loss rate in 1/μs")
    p.add_argument("--photons", type=float, help="resonator photon number")
    p.add_argument("--chi", type=float, help="dispersive shift in GHz for the dephasing rate")
    p.add_argument("--detuning", type=float)
    return parser


def _thread_limit(args):
    threads = args.threads
    if threads is None and os.environ.get("ZZFREE_THREADS"):
        try:
            threads = int(os.environ["ZZFREE_THREADS"])
        except ValueError:
            raise ConfigError("ZZFREE_THREADS must be an integer", "environment") from None
    if threads is None:
        return contextlib.nullcontext()
    if threads < 1:
        raise ConfigError("threads must be >= 1", "--threads")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INVALID
    try:
        data, source = resolve(args.config, args.preset)
        seed = args.seed if args.seed is not None else int(data.get("seed", 0))
        cfg = ScenarioConfig(data, args.out, seed, source)
        with _thread_limit(args):
            summary = RUNNERS[args.command](cfg, args)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"zzfree: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ZZFreeError, ArithmeticError, LinAlgError) as exc:
        print(f"zzfree: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
