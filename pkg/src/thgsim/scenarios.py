"""Scenario runners: stochastic sweeps, self-pulsing comparison and pump sweeps.

Each runner returns a ``Table`` (ordered columns) plus run metadata; the CLI
writes the table as delimited text next to a JSON manifest.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import subprocess
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__, criteria
from .config import DIRECT, ScenarioConfig
from .models import charge_weights, integrate_classical, model_for
from .phase_space import InsufficientSamplesError
from .sde import run_ensemble
from .spectra import SteadyStateError, UnstableError, pump_sweep

log = logging.getLogger(__name__)

DS_NOTE = "DS columns are raw sums (coherent-state value 4); divide by 4 to compare with EPR products"


class NumericalFailure(RuntimeError):
    pass


@dataclass
class Table:
    columns: dict = field(default_factory=dict)
    comments: list = field(default_factory=list)

    def add(self, name, values):
        self.columns[name] = np.asarray(values)

    def to_text(self) -> str:
        buf = io.StringIO()
        for c in self.comments:
            buf.write(f"# {c}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        cols = list(self.columns.values())
        n = len(cols[0]) if cols else 0
        for r in range(n):
            w.writerow([_fmt(c[r]) for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return "%.17g" % float(v)


@dataclass
class RunOutcome:
    table: Table
    meta: dict

    @property
    def unreliable(self) -> bool:
        return bool(self.meta.get("unreliable", False))


def _xi_scale(cfg: ScenarioConfig) -> float:
    p = cfg.params
    k = p.kappa if cfg.scenario.system == DIRECT else p.kappa1
    return k * abs(cfg.initial[0])


def run_travelling(cfg: ScenarioConfig) -> RunOutcome:
    system = cfg.scenario.system
    model = model_for(cfg.params)
    res = run_ensemble(model, cfg.initial, cfg.integration, workers=cfg.workers)
    if res.moments.count < 2:
        raise NumericalFailure(f"only {res.moments.count} of {res.n_traj} trajectories survived")
    t = Table(comments=[f"scenario {cfg.scenario.name}; xi = kappa |alpha(0)| t", DS_NOTE])
    t.add("xi", res.times * _xi_scale(cfg))
    t.add("t", res.times)
    n = model.n_modes
    N, N_se = res.estimate(lambda m: m.mean_intensity())
    for i in range(n):
        t.add(f"N{i}", N[:, i])
        t.add(f"N{i}_se", N_se[:, i])
    w = charge_weights(system)
    q, q_se = res.estimate(lambda m: m.mean_intensity() @ w)
    t.add("charge", q)
    t.add("charge_se", q_se)
    V, V_se = res.estimate(lambda m: np.diagonal(m.covariance(), axis1=1, axis2=2))
    for i in range(n):
        for off, lab in ((0, "X"), (1, "Y")):
            t.add(f"V{lab}{i}", V[:, 2 * i + off])
            t.add(f"V{lab}{i}_se", V_se[:, 2 * i + off])
    for i, j in combinations(range(n), 2):
        for name, col in criteria.bipartite_report(res, i, j).columns().items():
            t.add(name, col)
    if n == 3:
        rep = criteria.vlf_from_ensemble(res)
        for c, (i, j, k) in enumerate(rep.combinations):
            t.add(f"vLF_{i}{j}{k}", rep.values[:, c])
            t.add(f"vLF_{i}{j}{k}_se", rep.stderr[:, c])
        t.add("vLF_violated", rep.violated())
    meta = {"n_traj": res.n_traj, "n_diverged": res.n_diverged,
            "first_divergence_time": None if not np.isfinite(res.first_divergence_time)
            else res.first_divergence_time, "unreliable": res.unreliable}
    return RunOutcome(t, meta)


def run_selfpulse(cfg: ScenarioConfig) -> RunOutcome:
    """Classical mean fields against the truncated positive-P ensemble mean."""
    model = model_for(cfg.params)
    res = run_ensemble(model, cfg.initial, cfg.integration, workers=cfg.workers)
    if res.moments.count < 2:
        raise NumericalFailure(f"only {res.moments.count} of {res.n_traj} trajectories survived")
    amps0 = cfg.initial[0::2]
    cl = integrate_classical(cfg.params, amps0, res.times)
    t = Table(comments=[f"scenario {cfg.scenario.name}; classical vs stochastic mean fields"])
    t.add("t", res.times)
    t.add("classical_re_alpha", cl[:, 0].real)
    t.add("classical_im_alpha", cl[:, 0].imag)
    t.add("classical_Na", np.abs(cl[:, 0]) ** 2)
    t.add("classical_Nb", np.abs(cl[:, 1]) ** 2)
    mq, mq_se = res.estimate(lambda m: m.means())
    t.add("tppa_re_alpha", mq[:, 0] / 2)
    t.add("tppa_re_alpha_se", mq_se[:, 0] / 2)
    t.add("tppa_im_alpha", mq[:, 1] / 2)
    t.add("tppa_im_alpha_se", mq_se[:, 1] / 2)
    N, N_se = res.estimate(lambda m: m.mean_intensity())
    t.add("tppa_Na", N[:, 0])
    t.add("tppa_Na_se", N_se[:, 0])
    t.add("tppa_Nb", N[:, 1])
    t.add("tppa_Nb_se", N_se[:, 1])
    meta = {"n_traj": res.n_traj, "n_diverged": res.n_diverged,
            "first_divergence_time": None if not np.isfinite(res.first_divergence_time)
            else res.first_divergence_time, "unreliable": res.unreliable}
    return RunOutcome(t, meta)


def run_spectra(cfg: ScenarioConfig) -> RunOutcome:
    sw = pump_sweep(cfg.params, cfg.pump_grid, cfg.omega_grid, refine=cfg.refine)
    if not sw.columns:
        raise NumericalFailure("no stable pump value in the sweep")
    t = Table(comments=[f"scenario {cfg.scenario.name}; minima over omega of output spectra",
                        DS_NOTE])
    for key, vals in sw.columns.items():
        t.add(key, vals)
    meta = {"skipped_pumps": sw.skipped, "unreliable": False}
    return RunOutcome(t, meta)


RUNNERS = {
    "travelling-direct": run_travelling,
    "travelling-cascade": run_travelling,
    "selfpulse-direct": run_selfpulse,
    "spectra-direct": run_spectra,
    "spectra-cascade": run_spectra,
}


def run_scenario(cfg: ScenarioConfig) -> RunOutcome:
    try:
        return RUNNERS[cfg.scenario.name](cfg)
    except (SteadyStateError, UnstableError, InsufficientSamplesError, FloatingPointError) as exc:
        raise NumericalFailure(str(exc)) from exc


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_outputs(cfg: ScenarioConfig, outcome: RunOutcome) -> tuple[Path, Path]:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / f"{cfg.scenario.name}.csv"
    text = outcome.table.to_text()
    data_path.write_text(text)
    manifest = {
        "scenario": cfg.scenario.name,
        "config": cfg.as_dict(),
        "seed": cfg.integration.seed if cfg.integration else None,
        "version": version_string(),
        "data_file": data_path.name,
        "data_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "columns": list(outcome.table.columns),
        **outcome.meta,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    man_path = out / f"{cfg.scenario.name}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return data_path, man_path


def read_table(path) -> dict:
    """Load a data file written by ``write_outputs`` into ``{column: array}``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    out = {}
    for k, name in enumerate(header):
        col = [r[k] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col, dtype=object)
    return out
