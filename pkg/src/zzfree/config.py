"""Scenario configuration: TOML loading, schema validation, presets and model assembly."""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

SCENARIOS = ("dressed", "zz-scan", "cancel", "cr-gate", "cz-gate", "chain", "error-budget")
PRESETS = ("fig2", "fig3", "fig4", "appendix-a")

NUM = (int, float)
_TRANSMON = {"ec": NUM, "ej": NUM, "charge_cutoff": int, "kept_levels": int}
_CR_PARAMS = {"drive_freq": NUM, "cr_peak": NUM, "cancel_peak": NUM, "cancel_phase": NUM}

SCHEMA = {
    "scenario": str,
    "seed": int,
    "model": {
        "omega_left": NUM, "omega_right": NUM, "omega_res": NUM,
        "eta_left": NUM, "eta_right": NUM, "eta_res": NUM,
        "chi_left": NUM, "chi_right": NUM, "zz_static": NUM, "j_eff": NUM,
        "gtilde_left": NUM, "gtilde_right": NUM, "drive_coeffs": dict,
    },
    "circuit": {
        "left": _TRANSMON, "right": _TRANSMON,
        "resonator": {"bare_freq": NUM, "fock_dim": int},
        "coupling": {"g_left": NUM, "g_right": NUM},
    },
    "targets": {k: NUM for k in ("omega_left", "omega_right", "omega_res", "eta_left",
                                 "eta_right", "chi_left", "chi_right", "zz_static")},
    "drive": {"detuning": NUM, "amplitude": NUM},
    "scan": {"dmax": NUM, "points": int, "exact": bool},
    "phase": {"taus": list},
    "sim": {"dt": NUM, "integrator": str, "qubit_levels": int, "res_dim": int},
    "noise": {"t1": NUM, "t2": NUM, "t1_left": NUM, "t1_right": NUM, "t2_left": NUM,
              "t2_right": NUM, "kappa": NUM, "photons": NUM},
    "cr": {"duration": NUM, "flavor": str, "drag": bool, "drag_on": str,
           "zero": _CR_PARAMS, "one": _CR_PARAMS},
    "cz": {"exponents": list, "duration": NUM, "optimize": bool},
    "chain": {"qubits": list, "resonators": list, "chi": list, "zz_static": list,
              "detunings": list, "amplitudes": list, "resonator_kerr": list},
    "sweep": {"d1": list, "d2": list},
    "budget": {"chi": NUM, "detuning": NUM},
}


def _type_name(t):
    if isinstance(t, tuple):
        return "number"
    return {str: "string", int: "integer", bool: "boolean", list: "array",
            dict: "table"}.get(t, t.__name__)


def validate(data: dict, schema: dict = SCHEMA, path: str = "") -> None:
    """Check keys and value types; errors name the offending dotted key."""
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(schema))})", where)
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a table", where)
            validate(value, expected, where)
            continue
        ok = isinstance(value, expected) and not (
            isinstance(value, bool) and expected in (int, NUM))
        if not ok:
            raise ConfigError(f"expected {_type_name(expected)}, got {type(value).__name__}",
                              where)
    if "scenario" in data and not path and data["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {data['scenario']!r}", "scenario")


def parse_toml(text: str, source: str = "<string>") -> dict:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = re.search(r"line (\d+), column (\d+)", str(exc))
        loc = f"{source}:{match.group(1)}:{match.group(2)}" if match else source
        raise ConfigError(str(exc), loc) from None
    try:
        validate(data)
    except ConfigError as exc:
        raise ConfigError(str(exc), source) from None
    return data


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("configuration file not found", str(path))
    return parse_toml(path.read_text(encoding="utf-8"), str(path))


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", "--preset")
    text = resources.files("zzfree").joinpath("presets", f"{name}.toml").read_text("utf-8")
    return parse_toml(text, f"preset:{name}")


def merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class ScenarioConfig:
    """Merged scenario data plus output location and optimizer seed."""

    data: dict
    out_dir: Path = Path(".")
    seed: int = 0
    source: str = "<none>"
    extras: dict = field(default_factory=dict)

    def section(self, name: str, required: bool = False) -> dict:
        if name not in self.data:
            if required:
                raise ConfigError(f"missing [{name}] section", self.source)
            return {}
        return self.data[name]


def resolve(config_path=None, preset=None) -> tuple[dict, str]:
    data, source = {}, []
    if preset:
        data = load_preset(preset)
        source.append(f"preset:{preset}")
    if config_path:
        data = merge(data, load_config(config_path))
        source.append(str(config_path))
    if not source:
        raise ConfigError("no configuration: pass --config or --preset", "arguments")
    return data, "+".join(source)


# ---------------------------------------------------------------------------
# object assembly
# ---------------------------------------------------------------------------


def build_circuit(section: dict):
    from .circuit import CircuitSpec, CouplingSpec, ResonatorSpec, TransmonSpec

    try:
        return CircuitSpec(TransmonSpec(**section["left"]), TransmonSpec(**section["right"]),
                           ResonatorSpec(**section["resonator"]),
                           CouplingSpec(**section["coupling"]))
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}", "circuit") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "circuit") from None


def build_model(data: dict):
    """Dressed model from ``[model]`` or, failing that, extracted from ``[circuit]``."""
    from .circuit import DressedModel, extract_dressed_params

    if "model" in data:
        missing = {"omega_left", "omega_right", "omega_res", "eta_left", "eta_right",
                   "eta_res", "chi_left", "chi_right", "zz_static"} - set(data["model"])
        if missing:
            raise ConfigError(f"missing keys {sorted(missing)}", "model")
        return DressedModel.from_dict(data["model"])
    if "circuit" in data:
        return extract_dressed_params(build_circuit(data["circuit"]))
    raise ConfigError("need a [model] or [circuit] section", "model")


def build_sim(section: dict, **defaults):
    from .dynamics import SimConfig

    kw = dict(defaults)
    kw.update(section)
    try:
        return SimConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "sim") from None


def build_noise(section: dict, override: str | None = None):
    """Noise from ``[noise]``; ``override`` is a ``t1,t2`` string in μs."""
    from .dynamics import NoiseSpec

    kw = {}
    sec = dict(section)
    if override:
        try:
            t1, t2 = (float(x) for x in override.split(","))
        except ValueError:
            raise ConfigError("expected 't1,t2' in μs", "--noise") from None
        sec.update(t1=t1, t2=t2)
    if not sec:
        return None
    for side in ("left", "right"):
        kw[f"t1_{side}"] = sec.get(f"t1_{side}", sec.get("t1", float("inf")))
        kw[f"t2_{side}"] = sec.get(f"t2_{side}", sec.get("t2", float("inf")))
    kw["kappa"] = sec.get("kappa", 0.0)
    kw["photons"] = sec.get("photons", 0.0)
    try:
        return NoiseSpec(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), "noise") from None


def build_chain(section: dict):
    from .chain import ChainSpec

    try:
        return ChainSpec.from_dict(section)
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}", "chain") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "chain") from None
