"""Scenario configuration files.

Flat INI files with sections ``[run]``, ``[model]``, ``[integration]`` and
``[spectra]``.  Every key not listed for the chosen scenario is an error;
anything left out takes the scenario default.  ``resolved()`` renders the
fully defaulted configuration, which is what run manifests record.

Example::

    [run]
    scenario = travelling-direct
    output = out/direct

    [model]
    kappa = 1e-3
    alpha0 = 100

    [integration]
    n_traj = 100000
    seed = 7
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import INTRACAVITY, TRAVELLING, CascadeParams, DirectParams
from .sde import SCHEMES, IntegrationConfig

DIRECT, CASCADE = "direct", "cascade"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    system: str
    variant: str
    stochastic: bool
    spectral: bool
    defaults: dict


_DIRECT_CAVITY = {"kappa": 1e-3, "gamma_a": 1.0, "gamma_b": 2.0}
_CASCADE_COUPLING = {"kappa1": 1e-2, "kappa2": 1.5e-2}
_CASCADE_CAVITY = {**_CASCADE_COUPLING, "gamma0": 1.0, "gamma1": 0.75, "gamma2": 1.25}
_OMEGA = {"omega_min": -20.0, "omega_max": 20.0, "omega_points": 2001, "refine": True}
_INTEGRATION = {"sample_stride": 0, "seed": 0, "midpoint_iterations": 5, "n_bins": 100,
                "divergence_radius": "auto", "scheme": "midpoint"}

SCENARIOS = {s.name: s for s in (
    Scenario("travelling-direct", DIRECT, TRAVELLING, True, False, {
        "model": {"kappa": 1e-3, "alpha0": 100.0, "beta0": 0.0},
        "integration": {**_INTEGRATION, "dt": 1e-3, "t_max": 1.5, "n_traj": 100000}}),
    Scenario("travelling-cascade", CASCADE, TRAVELLING, True, False, {
        "model": {**_CASCADE_COUPLING, "alpha0": 100.0, "alpha1": 0.0, "alpha2": 0.0},
        "integration": {**_INTEGRATION, "dt": 5e-3, "t_max": 6.0, "n_traj": 100000}}),
    Scenario("selfpulse-direct", DIRECT, INTRACAVITY, True, False, {
        "model": {**_DIRECT_CAVITY, "epsilon": 200.0, "alpha0": 1 + 1j, "beta0": 0.0},
        "integration": {**_INTEGRATION, "dt": 1e-3, "t_max": 50.0, "n_traj": 1000}}),
    Scenario("spectra-direct", DIRECT, INTRACAVITY, False, True, {
        "model": dict(_DIRECT_CAVITY),
        "spectra": {"pump_min": 10.0, "pump_max": 135.0, "pump_points": 10, **_OMEGA}}),
    Scenario("spectra-cascade", CASCADE, INTRACAVITY, False, True, {
        "model": dict(_CASCADE_CAVITY),
        "spectra": {"pump_min": 10.0, "pump_max": 200.0, "pump_points": 20, **_OMEGA}}),
)}

RUN_DEFAULTS = {"output": "out", "workers": 1}

_POSITIVE = {"kappa", "kappa1", "kappa2", "dt", "t_max", "n_traj", "n_bins", "midpoint_iterations",
             "pump_points", "omega_points", "workers"}
_NONNEG = {"gamma_a", "gamma_b", "gamma0", "gamma1", "gamma2", "sample_stride", "seed"}
_INTS = {"n_traj", "n_bins", "midpoint_iterations", "pump_points", "omega_points", "workers",
         "sample_stride", "seed"}
_COMPLEX = {"alpha0", "alpha1", "alpha2", "beta0", "epsilon"}


@dataclass
class ScenarioConfig:
    scenario: Scenario
    params: object
    output: Path
    workers: int
    initial: np.ndarray | None = None
    integration: IntegrationConfig | None = None
    pump_grid: np.ndarray | None = None
    omega_grid: np.ndarray | None = None
    refine: bool = True
    values: dict = field(default_factory=dict)

    def resolved(self) -> str:
        """Deterministic INI rendering of every resolved value."""
        lines = []
        for sec in ("run", "model", "integration", "spectra"):
            if sec not in self.values:
                continue
            lines.append(f"[{sec}]")
            for key in sorted(self.values[sec]):
                lines.append(f"{key} = {_render(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {sec: {k: _render(v) for k, v in sorted(kv.items())} for sec, kv in self.values.items()}


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, complex):
        if v.imag == 0:
            return repr(v.real)
        return f"{v.real!r}{v.imag:+.17g}j"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` for diagnostics."""
    out, sec = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            sec = line[1:-1].strip()
        elif line and line[0] not in "#;" and ("=" in line or ":" in line):
            key = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            out.setdefault((sec, key), n)
    return out


def _where(path, lines, sec, key) -> str:
    n = lines.get((sec, key))
    return f"{path}:{n}: " if n else f"{path}: "


def _convert(key, raw, default):
    text = raw.strip()
    if key == "divergence_radius":
        if text.lower() == "auto":
            return "auto"
        return float(text)
    if key == "scheme":
        if text not in SCHEMES:
            raise ValueError(f"must be one of {', '.join(SCHEMES)}")
        return text
    if key in ("output",):
        return text
    if key == "refine":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("must be true or false")
    if key in _INTS:
        try:
            return int(text, 0)
        except ValueError:
            x = float(text)  # allow 1e5
            if x != int(x):
                raise ValueError("must be an integer") from None
            return int(x)
    if key in _COMPLEX:
        return complex(text.replace(" ", ""))
    if isinstance(default, float):
        return float(text)
    return text


def _check_value(key, v, scenario):
    if isinstance(v, (int, float)) and not isinstance(v, bool) and not math.isfinite(v):
        raise ValueError("must be finite")
    if isinstance(v, complex) and not (math.isfinite(v.real) and math.isfinite(v.imag)):
        raise ValueError("must be finite")
    if key in _POSITIVE and not v > 0:
        raise ValueError("must be > 0")
    if key in _NONNEG and not v >= 0:
        raise ValueError("must be >= 0")
    if key.startswith("gamma") and scenario.variant == INTRACAVITY and not v > 0:
        raise ValueError("cavity loss rates must be > 0")
    if key == "seed" and v >= 2**64:
        raise ValueError("must fit in 64 bits")
    if key == "divergence_radius" and v != "auto" and not v > 0:
        raise ValueError("must be > 0 or 'auto'")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    return parse_config(text, str(path))


def parse_config(text: str, path: str = "<config>") -> ScenarioConfig:
    cp = configparser.ConfigParser(strict=True, interpolation=None,
                                   inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(" ".join(str(exc).split())) from exc
    lines = _key_lines(text)

    if not cp.has_section("run") or not cp.has_option("run", "scenario"):
        raise ConfigError(f"{path}: missing required key 'scenario' in [run]")
    name = cp.get("run", "scenario").strip()
    if name not in SCENARIOS:
        raise ConfigError(f"{_where(path, lines, 'run', 'scenario')}[run] scenario: unknown scenario "
                          f"{name!r} (choose from {', '.join(SCENARIOS)})")
    sc = SCENARIOS[name]

    allowed = {"run": {"scenario": name, **RUN_DEFAULTS}, **sc.defaults}
    for sec in cp.sections():
        if sec not in allowed:
            n = next((k for (s, _), k in lines.items() if s == sec), None)
            raise ConfigError(f"{path}:{n or '?'}: section [{sec}] is not used by scenario {name}")
        for key in cp.options(sec):
            if key not in allowed[sec]:
                raise ConfigError(f"{_where(path, lines, sec, key)}[{sec}] {key}: unknown key for "
                                  f"scenario {name}")

    values = {}
    for sec, defaults in allowed.items():
        values[sec] = {}
        for key, default in defaults.items():
            if cp.has_option(sec, key) and not (sec == "run" and key == "scenario"):
                raw = cp.get(sec, key)
                try:
                    v = _convert(key, raw, default)
                    _check_value(key, v, sc)
                except ValueError as exc:
                    msg = str(exc)
                    if "could not convert" in msg or "invalid literal" in msg or "malformed" in msg:
                        msg = f"cannot parse {raw.strip()!r}"
                    raise ConfigError(f"{_where(path, lines, sec, key)}[{sec}] {key}: {msg}") from None
            else:
                v = default
            values[sec][key] = v
    return _build(sc, values, path, lines)


def _build(sc: Scenario, values: dict, path: str, lines: dict) -> ScenarioConfig:
    m = values["model"]

    def fail(sec, key, msg):
        raise ConfigError(f"{_where(path, lines, sec, key)}[{sec}] {key}: {msg}")

    eps = complex(m.get("epsilon", 0.0))
    if sc.system == DIRECT:
        kw = {"kappa": m["kappa"]}
        if sc.variant == INTRACAVITY:
            kw.update(gamma_a=m["gamma_a"], gamma_b=m["gamma_b"], epsilon=eps)
        params = DirectParams(variant=sc.variant, **kw)
        init = [m.get("alpha0"), m.get("beta0")]
    else:
        kw = {"kappa1": m["kappa1"], "kappa2": m["kappa2"]}
        if sc.variant == INTRACAVITY:
            kw.update(gamma0=m["gamma0"], gamma1=m["gamma1"], gamma2=m["gamma2"], epsilon=eps)
        params = CascadeParams(variant=sc.variant, **kw)
        init = [m.get("alpha0"), m.get("alpha1"), m.get("alpha2")]

    cfg = ScenarioConfig(sc, params, Path(values["run"]["output"]), values["run"]["workers"],
                         values=values)
    if sc.stochastic:
        amps = np.array(init, dtype=complex)
        cfg.initial = np.empty(2 * amps.size, dtype=complex)
        cfg.initial[0::2], cfg.initial[1::2] = amps, amps.conj()
        it = values["integration"]
        if it["t_max"] < it["dt"]:
            fail("integration", "t_max", "must be at least one step (>= dt)")
        if it["divergence_radius"] == "auto":
            n0 = float(np.max(np.abs(amps) ** 2))
            pump = abs(eps) / float(np.min(params.loss_rates)) if sc.variant == INTRACAVITY else 0.0
            it["divergence_radius"] = 1e3 * math.sqrt(max(n0, pump ** 2, 1.0))
        cfg.integration = IntegrationConfig(
            dt=it["dt"], t_max=it["t_max"], sample_stride=it["sample_stride"], n_traj=it["n_traj"],
            seed=it["seed"], divergence_radius=it["divergence_radius"], scheme=it["scheme"],
            midpoint_iterations=it["midpoint_iterations"], n_bins=it["n_bins"])
    if sc.spectral:
        s = values["spectra"]
        if s["pump_max"] < s["pump_min"]:
            fail("spectra", "pump_max", "must be >= pump_min")
        if s["pump_min"] < 0:
            fail("spectra", "pump_min", "pump amplitudes must be >= 0")
        if s["omega_max"] <= s["omega_min"]:
            fail("spectra", "omega_max", "must be > omega_min")
        cfg.pump_grid = np.linspace(s["pump_min"], s["pump_max"], s["pump_points"])
        cfg.omega_grid = np.linspace(s["omega_min"], s["omega_max"], s["omega_points"])
        cfg.refine = s["refine"]
    return cfg


def with_overrides(cfg: ScenarioConfig, workers=None, seed=None, output=None) -> ScenarioConfig:
    """Apply command-line overrides (recorded in the resolved values)."""
    from dataclasses import replace

    values = {k: dict(v) for k, v in cfg.values.items()}
    new = replace(cfg, values=values)
    if workers is not None:
        if workers < 1:
            raise ConfigError("--workers: must be >= 1")
        new.workers = values["run"]["workers"] = workers
    if output is not None:
        new.output = Path(output)
        values["run"]["output"] = str(output)
    if seed is not None:
        if "integration" not in values:
            raise ConfigError(f"--seed: scenario {cfg.scenario.name} is deterministic")
        if not 0 <= seed < 2**64:
            raise ConfigError("--seed: must be a 64-bit unsigned integer")
        values["integration"]["seed"] = seed
        new.integration = replace(cfg.integration, seed=seed)
    return new
