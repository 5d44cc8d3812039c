"""Scenario configuration and the explicit coupling loop."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import darcy, fem, heat, io, reaction, transport
from .linalg import DEFAULT_TOL, SolverError
from .mesh import GeometrySpec, Mesh, MeshError, PipeNetwork, generate_alveolus, layout_pipes, read_msh

SCENARIOS = ("CARBON_ONLY", "HEAT_GIVEN_CARBON", "COUPLED_CARBON_HEAT", "FULL")
NODAL_FIELDS = ("corg", "b", "T", "M", "Cdx", "O", "N", "h", "w")
CSV_COLUMNS = ("t_days", "corg_total", "b_total", "T_mean_K", "T_max_K", "M_total", "Cdx_total",
               "h_total", "w_total", "corg_min", "T_min_K", "M_min", "Cdx_min", "h_min", "w_min",
               "cg_iters_total")
DAYS_PER_YEAR = 365.0

# flat parameter name -> parameter group
PARAM_GROUPS = {
    "reaction": reaction.ReactionParams,
    "heat": heat.HeatParams,
    "darcy": darcy.DarcyParams,
    "gas": transport.GasParams,
    "water": transport.WaterParams,
    "phase": transport.PhaseParams,
}
PARAM_INDEX = {}
for _group, _cls in PARAM_GROUPS.items():
    for _f in dataclasses.fields(_cls):
        PARAM_INDEX.setdefault(_f.name, _group)


class ConfigError(ValueError):
    """Schema or validation failure; messages carry the JSON path."""


class RunError(SolverError):
    """A module failure inside the time loop, tagged with the step index."""

    def __init__(self, step: int, message: str, diagnostics: dict):
        self.step = step
        self.diagnostics = diagnostics
        diag = ", ".join(f"{k}={v:.6g}" for k, v in diagnostics.items())
        super().__init__(f"step {step}: {message} [{diag}]")


@dataclass(frozen=True)
class Parameters:
    reaction: reaction.ReactionParams = field(default_factory=reaction.ReactionParams)
    heat: heat.HeatParams = field(default_factory=heat.HeatParams)
    darcy: darcy.DarcyParams = field(default_factory=darcy.DarcyParams)
    gas: transport.GasParams = field(default_factory=transport.GasParams)
    water: transport.WaterParams = field(default_factory=transport.WaterParams)
    phase: transport.PhaseParams = field(default_factory=transport.PhaseParams)

    @classmethod
    def from_overrides(cls, overrides: dict, path: str = "params") -> "Parameters":
        groups = {g: {} for g in PARAM_GROUPS}
        for name, value in overrides.items():
            if name not in PARAM_INDEX:
                raise ConfigError(f"{path}.{name}: unknown parameter")
            if value is not None and not isinstance(value, (int, float, bool)):
                raise ConfigError(f"{path}.{name}: expected a number, got {type(value).__name__}")
            groups[PARAM_INDEX[name]][name] = value
        # porosity is shared by the carbon and transport equations through ReactionParams
        try:
            return cls(**{g: PARAM_GROUPS[g](**kw) for g, kw in groups.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class OutputConfig:
    csv: str | None = None
    vtk_dir: str | None = None
    snapshot_years: tuple = (1, 10, 20, 40)


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs.

    ``alpha_mode`` selects the decay rate of the prescribed carbon profile:
    ``matched`` fits a per-day rate to the semi-implicit carbon end value,
    ``per_day`` and ``per_year`` read ``alpha`` in those units.
    ``frozen_w_T`` holds w = w_max/2 and T = T_opt in every scenario.
    ``condensation`` is ``implicit`` (sink on the new vapor level) or
    ``explicit`` (level-n rates in both the vapor and the water step).
    """

    tol: float = DEFAULT_TOL
    bootstrap: bool = True
    consistent_carbon: bool = False
    enable_ON: bool = False
    alpha: float = 1e-3
    alpha_mode: str = "matched"
    p_ref_mode: str = "physical"
    condensation: str = "implicit"
    frozen_w_T: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "COUPLED_CARBON_HEAT"
    dt_days: float = 365.0
    final_days: float = 14600.0
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    mesh_path: str | None = None
    params: Parameters = field(default_factory=Parameters)
    output: OutputConfig = field(default_factory=OutputConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: unknown scenario {self.scenario!r} (one of {', '.join(SCENARIOS)})")
        if not self.dt_days > 0:
            raise ConfigError(f"dt_days: time step must be positive, got {self.dt_days}")
        if not self.final_days >= self.dt_days:
            raise ConfigError(f"final_days: must be at least dt_days ({self.final_days} < {self.dt_days})")
        for y in self.output.snapshot_years:
            if not 0 <= y * DAYS_PER_YEAR <= self.final_days:
                raise ConfigError(f"output.snapshot_years: {y} lies outside [0, final_days]")
        if self.solver.alpha_mode not in ("matched", "per_day", "per_year"):
            raise ConfigError(f"solver.alpha_mode: unknown mode {self.solver.alpha_mode!r}")
        if self.solver.p_ref_mode not in ("physical", "darcy"):
            raise ConfigError(f"solver.p_ref_mode: unknown mode {self.solver.p_ref_mode!r}")
        if self.solver.condensation not in ("implicit", "explicit"):
            raise ConfigError(f"solver.condensation: unknown mode {self.solver.condensation!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.final_days / self.dt_days))

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def _section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("$: expected a JSON object")
    top = {"scenario", "dt_days", "final_days", "geometry", "mesh_path", "params", "output", "solver"}
    for key in data:
        if key not in top:
            raise ConfigError(f"$.{key}: unknown key")
    kw = {}
    for key in ("scenario", "mesh_path"):
        if key in data:
            if data[key] is not None and not isinstance(data[key], str):
                raise ConfigError(f"$.{key}: expected a string")
            kw[key] = data[key]
    for key in ("dt_days", "final_days"):
        if key in data:
            if isinstance(data[key], bool) or not isinstance(data[key], (int, float)):
                raise ConfigError(f"$.{key}: expected a number")
            kw[key] = float(data[key])
    if "geometry" in data:
        kw["geometry"] = _section(GeometrySpec, data["geometry"], "$.geometry")
    if "params" in data:
        if not isinstance(data["params"], dict):
            raise ConfigError("$.params: expected an object")
        kw["params"] = Parameters.from_overrides(data["params"], "$.params")
    if "output" in data:
        kw["output"] = _section(OutputConfig, data["output"], "$.output")
    if "solver" in data:
        kw["solver"] = _section(SolverConfig, data["solver"], "$.solver")
    try:
        return ScenarioConfig(**kw)
    except ConfigError as exc:
        raise ConfigError(f"$.{exc}") from exc


def load_config(text: str) -> ScenarioConfig:
    """Parse a JSON configuration; every parameter is optional."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return config_from_dict(data)


# ------------------------------------------------------------------ the loop


@dataclass
class Snapshot:
    step: int
    t: float
    fields: dict
    p: np.ndarray | None = None
    u_nodal: np.ndarray | None = None


@dataclass
class RunResult:
    records: list
    snapshots: list
    state: dict
    mesh: Mesh

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])


def carbon_recurrence(params: reaction.ReactionParams, dt: float, n_steps: int, w: float, T: float,
                      bootstrap: bool = True) -> np.ndarray:
    """Uniform-field carbon trajectory of the semi-implicit scheme."""
    c = np.empty(n_steps + 1)
    c[0] = params.corg0
    for n in range(n_steps):
        x = np.array([c[n]])
        if n == 0 and bootstrap:
            c[1] = reaction.bootstrap_carbon(x, w, T, dt, params)[0]
        else:
            c[n + 1] = reaction.step_carbon(x, w, T, dt, params)[0]
    return c


def carbon_profile_rate(config: ScenarioConfig) -> float:
    """Per-day decay rate of the prescribed carbon profile."""
    s = config.solver
    if s.alpha_mode == "per_day":
        return s.alpha
    if s.alpha_mode == "per_year":
        return s.alpha / DAYS_PER_YEAR
    rp = config.params.reaction
    c = carbon_recurrence(rp, config.dt_days, config.n_steps, rp.w_max / 2, rp.T_opt, s.bootstrap)
    return -math.log(c[-1] / rp.corg0) / (config.n_steps * config.dt_days)


def build_geometry(config: ScenarioConfig) -> tuple[Mesh, PipeNetwork]:
    if config.mesh_path is None:
        return generate_alveolus(config.geometry)
    with open(config.mesh_path) as fh:
        mesh = read_msh(fh)
    return mesh, layout_pipes(config.geometry)


def initial_state(space: fem.P1Space, config: ScenarioConfig) -> dict:
    prm = config.params
    n = space.ndofs
    frozen = config.solver.frozen_w_T or config.scenario == "CARBON_ONLY"
    w0 = prm.reaction.w_max / 2 if frozen else prm.water.w0
    if frozen:
        T0 = prm.reaction.T_opt
    else:
        T0 = prm.heat.T0
    g = prm.gas
    state = {
        "corg": np.full(n, prm.reaction.corg0),
        "T": np.full(n, float(T0)),
        "M": np.full(n, g.M0), "Cdx": np.full(n, g.Cdx0),
        "O": np.full(n, g.O0), "N": np.full(n, g.N0),
        "h": np.full(n, g.h0), "w": np.full(n, float(w0)),
    }
    if not frozen and config.scenario in ("COUPLED_CARBON_HEAT", "FULL", "HEAT_GIVEN_CARBON"):
        # the initial temperature has to agree with the Dirichlet data
        dofs, values = heat.dirichlet_data(space, prm.heat)
        state["T"][dofs] = values
    state["b"] = reaction.bacteria_of(state["corg"], prm.reaction)
    return state


def record(space: fem.P1Space, t: float, state: dict, iters: int) -> dict:
    vol = space.mesh.total_volume
    tot = {k: fem.integrate_field(space, state[k]) for k in ("corg", "b", "T", "M", "Cdx", "h", "w")}
    return {
        "t_days": float(t), "corg_total": tot["corg"], "b_total": tot["b"],
        "T_mean_K": tot["T"] / vol, "T_max_K": float(state["T"].max()),
        "M_total": tot["M"], "Cdx_total": tot["Cdx"], "h_total": tot["h"], "w_total": tot["w"],
        "corg_min": float(state["corg"].min()), "T_min_K": float(state["T"].min()),
        "M_min": float(state["M"].min()), "Cdx_min": float(state["Cdx"].min()),
        "h_min": float(state["h"].min()), "w_min": float(state["w"].min()),
        "cg_iters_total": int(iters),
    }


def _nodal_from_cells(mesh: Mesh, values) -> np.ndarray:
    w = np.repeat(mesh.volumes, 4)
    num = np.bincount(mesh.tets.ravel(), weights=np.repeat(values, 4) * w, minlength=mesh.n_vertices)
    den = np.bincount(mesh.tets.ravel(), weights=w, minlength=mesh.n_vertices)
    return num / den


class Simulation:
    """State and cached operators of one scenario run."""

    def __init__(self, config: ScenarioConfig, mesh: Mesh | None = None, pipes: PipeNetwork | None = None):
        self.config = config
        if mesh is None:
            mesh, pipes = build_geometry(config)
        self.mesh = mesh
        self.pipes = pipes if pipes is not None else PipeNetwork(())
        self.p1 = fem.P1Space(mesh)
        self.state = initial_state(self.p1, config)
        self.step_index = 0
        self.records = [record(self.p1, 0.0, self.state, 0)]
        self.snapshots = []
        self.pressure = None
        self.velocity = None
        sc = config.scenario
        self.frozen = config.solver.frozen_w_T or sc == "CARBON_ONLY"
        self.evolve_heat = sc in ("HEAT_GIVEN_CARBON", "COUPLED_CARBON_HEAT", "FULL") and not self.frozen
        self.evolve_flow = sc == "FULL"
        self.evolve_water = sc == "FULL" and not self.frozen
        prm = config.params
        dt = config.dt_days
        self.heat = heat.HeatStepper(self.p1, dt, prm.heat, config.solver.tol) if self.evolve_heat else None
        self.alpha = carbon_profile_rate(config) if sc == "HEAT_GIVEN_CARBON" else None
        self._rt = None
        self._water = None
        self._inj = None
        radius = prm.darcy.mollify_radius
        self.radius = 2 * config.geometry.target_mesh_size if radius is None else radius
        if self.evolve_flow:
            self._rt = fem.RT0P0Space(mesh)
        if self.evolve_water:
            self._water = transport.water_operators(self.p1, dt, prm.water, prm.reaction.phi, config.solver.tol)
            self._inj = transport.injector_load(
                self.p1, self.pipes.injectors, prm.water.J_in, self.radius,
                streamline=(self._water.tau, prm.water.velocity))
        self._maybe_snapshot()

    @property
    def t(self) -> float:
        return self.step_index * self.config.dt_days

    def _diagnostics(self) -> dict:
        return {f"min_{k}": float(self.state[k].min()) for k in ("corg", "T", "M", "Cdx", "h", "w")} | \
               {f"max_{k}": float(self.state[k].max()) for k in ("corg", "T")}

    def step(self) -> dict:
        try:
            rec = self._advance()
        except (SolverError, ValueError, MeshError) as exc:
            raise RunError(self.step_index + 1, str(exc), self._diagnostics()) from exc
        self.records.append(rec)
        self._maybe_snapshot()
        return rec

    def _advance(self) -> dict:
        cfg, prm, st = self.config, self.config.params, self.state
        dt, n = cfg.dt_days, self.step_index
        tol = cfg.solver.tol
        iters = 0
        corg_n = st["corg"]
        # (1) carbon, from (w_n, T_n)
        if cfg.scenario == "HEAT_GIVEN_CARBON":
            corg = np.full_like(corg_n, prm.reaction.corg0 * math.exp(-self.alpha * (n + 1) * dt))
        else:
            kw = {"space": self.p1, "consistent": cfg.solver.consistent_carbon}
            if n == 0 and cfg.solver.bootstrap:
                corg = reaction.bootstrap_carbon(corg_n, st["w"], st["T"], dt, prm.reaction, **kw)
            else:
                corg = reaction.step_carbon(corg_n, st["w"], st["T"], dt, prm.reaction, **kw)
        d_corg = corg - corg_n
        new = {"corg": corg, "b": reaction.bacteria_of(corg, prm.reaction)}
        # (2) heat, from (Corg_{n+1}, Corg_n)
        if self.evolve_heat:
            new["T"] = self.heat.step(st["T"], corg, corg_n)
            iters += self.heat.last_report.iterations
        if self.evolve_flow:
            # (3) gas velocity from the level-n gas state
            c_tot = transport.total_concentration(st)
            dprm = prm.darcy if prm.darcy.mollify_radius is not None else \
                dataclasses.replace(prm.darcy, mollify_radius=self.radius)
            vp, _ = darcy.solve_velocity(self._rt, self.p1, c_tot, self.pipes.extractors, dprm, tol)
            iters += vp.report.iterations
            self.pressure, self.velocity = vp.p, vp
            ops = transport.AdvectionOperators(self.p1, vp, dt, prm.reaction.phi, tol=tol)
            # phase change from level-n vapor
            if cfg.solver.p_ref_mode == "darcy":
                p_ref = _nodal_from_cells(self.mesh, prm.darcy.physical_pressure(vp.p, prm.reaction.phi))
            else:
                p_ref = prm.phase.p_ref
            thr = transport.saturation_threshold(c_tot, st["T"], p_ref, prm.phase)
            evap = transport.evaporation_rate(st["h"], thr, st["w"], prm.phase.c_wh)
            # (4) gases
            g = prm.gas
            new["M"] = transport.step_gas(ops, st["M"], transport.GasSource.carbon(g.c_M, d_corg))
            new["Cdx"] = transport.step_gas(ops, st["Cdx"], transport.GasSource.carbon(g.c_C, d_corg))
            if cfg.solver.condensation == "implicit":
                new["h"], f_cond = transport.step_vapor_implicit(
                    ops, st["h"], g.c_h, d_corg, thr, prm.phase.c_hw, evap)
                f_net = f_cond - evap
            else:
                f_net = transport.condensation_rate(st["h"], thr, prm.phase.c_hw) - evap
                new["h"] = transport.step_gas(ops, st["h"], transport.GasSource.vapor(g.c_h, d_corg, f_net))
            if cfg.solver.enable_ON:
                new["O"] = transport.step_gas(ops, st["O"])
                new["N"] = transport.step_gas(ops, st["N"])
            iters += sum(r.iterations for r in ops.reports)
            # (5) water
            if self.evolve_water:
                start = len(self._water.reports)
                new["w"] = transport.step_water(self._water, st["w"], f_net, self._inj)
                iters += sum(r.iterations for r in self._water.reports[start:])
        st.update(new)
        self.step_index += 1
        return record(self.p1, self.t, st, iters)

    def _maybe_snapshot(self):
        dt = self.config.dt_days
        steps = {int(round(y * DAYS_PER_YEAR / dt)) for y in self.config.output.snapshot_years}
        if self.step_index not in steps:
            return
        u_nodal = self.velocity.nodal() if self.velocity is not None else None
        snap = Snapshot(self.step_index, self.t, {k: v.copy() for k, v in self.state.items()},
                        None if self.pressure is None else self.pressure.copy(), u_nodal)
        self.snapshots.append(snap)
        out = self.config.output.vtk_dir
        if out is not None:
            Path(out).mkdir(parents=True, exist_ok=True)
            years = self.t / DAYS_PER_YEAR
            write_fields(Path(out) / f"fields_year{years:g}.vtk", self.mesh, snap)

    # ------------------------------------------------------------ checkpoint

    def checkpoint(self, path) -> None:
        """VTK snapshot of every field plus a JSON sidecar with the scalars."""
        path = Path(path)
        snap = Snapshot(self.step_index, self.t, self.state,
                        self.pressure, self.velocity.nodal() if self.velocity is not None else None)
        write_fields(path, self.mesh, snap)
        side = {"step": self.step_index, "t_days": self.t, "scenario": self.config.scenario,
                "dt_days": self.config.dt_days, "records": self.records}
        path.with_suffix(".json").write_text(json.dumps(side, indent=1))

    def restore(self, path) -> None:
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        if side["scenario"] != self.config.scenario or side["dt_days"] != self.config.dt_days:
            raise ConfigError(f"{path}: checkpoint was written by a different scenario or time step")
        data = io.read_vtk(path)
        if len(data["vertices"]) != self.mesh.n_vertices:
            raise ConfigError(f"{path}: checkpoint mesh does not match")
        for k in NODAL_FIELDS:
            self.state[k] = data["point_data"][k]
        self.step_index = int(side["step"])
        self.records = side["records"]
        self.snapshots = []

    def run(self, n_steps: int | None = None) -> RunResult:
        total = self.config.n_steps
        target = total if n_steps is None else min(total, self.step_index + n_steps)
        try:
            while self.step_index < target:
                self.step()
        finally:
            if self.config.output.csv is not None:
                io.write_csv(self.records, CSV_COLUMNS, self.config.output.csv)
        return RunResult(self.records, self.snapshots, self.state, self.mesh)


def write_fields(path, mesh: Mesh, snap: Snapshot) -> None:
    vectors = {"u": snap.u_nodal} if snap.u_nodal is not None else {}
    cells = {"p": snap.p} if snap.p is not None else {}
    io.write_vtk(path, mesh, {k: snap.fields[k] for k in NODAL_FIELDS}, cells, vectors,
                 title=f"alveolus step {snap.step} t = {snap.t!r} days")


def run(config: ScenarioConfig, mesh: Mesh | None = None, pipes: PipeNetwork | None = None,
        n_steps: int | None = None) -> RunResult:
    """Run a scenario; returns records (t = 0 included), snapshots and the final state."""
    return Simulation(config, mesh, pipes).run(n_steps)


def write_csv(result: RunResult, path) -> None:
    io.write_csv(result.records, CSV_COLUMNS, path)
