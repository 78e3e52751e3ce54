"""Discrete-step datacenter simulation: arrivals, placement, monitoring, migration, accounting."""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import aco as aco_mod
from .baselines import bfd_place, ffd_place
from .domain import (Datacenter, Placement, PlacementFailure, VirtualMachine, build_datacenter,
                     merge_placements, validate)
from .energy import DEFAULT_SITES, SiteProfile, step_energy_arrays
from .pso import PsoParams, detect_triggers, fitness_arrays, run_pso

logger = logging.getLogger(__name__)

ALGORITHMS = ("hapso", "aco_only", "ffd", "bfd")
SLA_MODES = ("unserved_cpu",)
STEP_COLUMNS = ("t", "site", "energy_kwh", "carbon_kg", "cost_usd", "active_hosts", "migrations", "sla_pct")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    algorithm: str = "hapso"
    sites: tuple = DEFAULT_SITES
    hosts_per_site: int = 126
    step_s: float = 600.0
    pso: PsoParams = PsoParams()
    aco: aco_mod.AcoParams = aco_mod.AcoParams()
    seed: int = 0
    sla_mode: str = "unserved_cpu"
    renewable: bool = False
    green_peak_kw: float = 50.0
    demand_low: float = 0.4
    demand_high: float = 1.0
    max_steps: Optional[int] = None
    host_bw_mbps: int = 10_000
    check_invariants: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.step_s <= 0:
            raise ConfigError("step_s must be positive")
        if self.hosts_per_site < 6 or self.hosts_per_site % 6:
            raise ConfigError("hosts_per_site must be a positive multiple of 6")
        if self.sla_mode not in SLA_MODES:
            raise ConfigError(f"unknown sla_mode {self.sla_mode!r}")
        if not 0 < self.demand_low <= self.demand_high:
            raise ConfigError("need 0 < demand_low <= demand_high")
        if not self.sites:
            raise ConfigError("at least one site is required")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive")

    def effective_sites(self) -> tuple:
        if not self.renewable:
            return tuple(replace(s, green_peak_kw=0.0) for s in self.sites)
        return tuple(s if s.green_peak_kw > 0 else replace(s, green_peak_kw=self.green_peak_kw)
                     for s in self.sites)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["sites"] = [s.to_dict() for s in self.sites]
        d["pso"] = self.pso.to_dict()
        d["aco"] = self.aco.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "sites" in d:
                d["sites"] = tuple(SiteProfile.from_dict(s) for s in d["sites"])
            if "pso" in d:
                d["pso"] = PsoParams(**d["pso"])
            if "aco" in d:
                d["aco"] = aco_mod.AcoParams(**d["aco"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **overrides) -> SimConfig:
        d = self.to_dict()
        for key, value in overrides.items():
            if key in ("pso", "aco") and isinstance(value, dict):
                d[key] = {**d[key], **value}
            else:
                d[key] = value
        return SimConfig.from_dict(d)


def load_config(path) -> SimConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return SimConfig.from_dict(doc)


@dataclass(frozen=True)
class MigrationEvent:
    t: float
    vm: int
    src: int
    dst: int
    duration_s: float
    site: str = ""


@dataclass
class SiteLedger:
    name: str
    energy_kwh: float = 0.0
    green_kwh: float = 0.0
    grid_kwh: float = 0.0
    carbon_kg: float = 0.0
    cost_usd: float = 0.0
    migrations: int = 0
    unserved_core_s: float = 0.0
    requested_core_s: float = 0.0
    active_host_timeseries: list = field(default_factory=list)

    @property
    def sla_violation_pct(self) -> float:
        return 100.0 * self.unserved_core_s / self.requested_core_s if self.requested_core_s else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sla_violation_pct"] = self.sla_violation_pct
        return d


ADDITIVE = ("energy_kwh", "green_kwh", "grid_kwh", "carbon_kg", "cost_usd", "migrations",
            "unserved_core_s", "requested_core_s")


@dataclass
class MetricsLedger:
    sites: list
    steps: list = field(default_factory=list)
    migration_events: list = field(default_factory=list)
    gbest_histories: list = field(default_factory=list)
    rejected: int = 0
    placed: int = 0
    stale_moves: int = 0
    config: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        agg = {k: sum(getattr(s, k) for s in self.sites) for k in ADDITIVE}
        agg["sla_violation_pct"] = (100.0 * agg["unserved_core_s"] / agg["requested_core_s"]
                                    if agg["requested_core_s"] else 0.0)
        series = [s.active_host_timeseries for s in self.sites]
        agg["active_host_timeseries"] = [sum(v) for v in zip(*series)] if series else []
        return agg

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate(),
            "sites": [s.to_dict() for s in self.sites],
            "rejected": self.rejected,
            "placed": self.placed,
            "stale_moves": self.stale_moves,
            "migration_events": [asdict(e) for e in self.migration_events],
            "gbest_histories": self.gbest_histories,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(STEP_COLUMNS)
            for row in self.steps:
                writer.writerow([row[c] for c in STEP_COLUMNS])


def compute_sla(host_demand, capacity, dt_s: float) -> tuple[float, float]:
    """(unserved, requested) CPU core-seconds for one step."""
    host_demand = np.asarray(host_demand, dtype=np.float64)
    capacity = np.asarray(capacity, dtype=np.float64)
    unserved = float(np.maximum(0.0, host_demand - capacity).sum()) * dt_s
    requested = float(host_demand.sum()) * dt_s
    return unserved, requested


def migration_duration(vm: VirtualMachine, src, dst) -> float:
    """Seconds to copy the VM's RAM over the slower of the two host links."""
    return vm.demand.ram_gb * 8000.0 / min(src.capacity.bw_mbps, dst.capacity.bw_mbps)


def sub_seed(*parts) -> list:
    return [int(p) for p in parts]


class SimState:
    """Everything the step loop owns. Mutated in place by :func:`advance_step`."""

    def __init__(self, config: SimConfig, workload):
        self.config = config
        self.sites = config.effective_sites()
        per_type = config.hosts_per_site // 6
        self.dcs = [build_datacenter(site, per_type, first_id=k * config.hosts_per_site,
                                     bw_mbps=config.host_bw_mbps)
                    for k, site in enumerate(self.sites)]
        self.placements = [Placement.empty(dc) for dc in self.dcs]
        self.pheromones = [aco_mod.PheromoneMatrix.initial(dc.host_ids, config.aco.tau0) for dc in self.dcs]
        self.vm_site: dict[int, int] = {}
        self.util_history: list[dict] = [dict() for _ in self.dcs]
        self.ledger = MetricsLedger([SiteLedger(s.name) for s in self.sites], config=config.to_dict())

        self.vms: list[VirtualMachine] = []
        self.arrivals: dict[int, list] = {}
        for idx, cloudlet in enumerate(workload):
            k = int(math.floor(cloudlet.job.submit_time_s / config.step_s))
            start = k * config.step_s
            vm = VirtualMachine.of_type(idx, cloudlet.vm_type, start_s=start,
                                        end_s=start + cloudlet.job.run_time_s)
            self.vms.append(vm)
            self.arrivals.setdefault(k, []).append(vm)
        self.first_step = min(self.arrivals) if self.arrivals else 0
        self.last_arrival = max(self.arrivals) if self.arrivals else -1
        self.live: dict[int, VirtualMachine] = {}
        self.demand_factor = np.zeros(len(self.vms))
        self.step_index = self.first_step
        self.step_migrations = [0] * len(self.dcs)

    @property
    def finished(self) -> bool:
        return self.step_index > self.last_arrival and not self.live

    def sample_demand(self, k: int) -> None:
        cfg = self.config
        rng = np.random.default_rng(sub_seed(cfg.seed, 0xDE, k))
        self.demand_factor = rng.uniform(cfg.demand_low, cfg.demand_high, len(self.vms))

    def current_demand(self, vm_id: int) -> float:
        return self.demand_factor[vm_id] * self.vms[vm_id].demand.cpu_cores

    def host_demand(self, s: int) -> np.ndarray:
        dc = self.dcs[s]
        offset = dc.hosts[0].id
        out = np.zeros(len(dc.hosts))
        for vm_id, pm_id in self.placements[s].assignment.items():
            out[pm_id - offset] += self.current_demand(vm_id)
        return out


# ---------------------------------------------------------------------------
# Step phases
# ---------------------------------------------------------------------------

def retire(state: SimState, t: float) -> None:
    for vm_id in sorted(state.live):
        if state.live[vm_id].end_s <= t:
            s = state.vm_site.pop(vm_id)
            state.placements[s] = state.placements[s].remove(vm_id)
            del state.live[vm_id]


def _stage_one(state: SimState, s: int, batch, k: int):
    """Run the configured placement algorithm for ``batch`` on site ``s``.

    Returns (placement, pheromone) or raises PlacementFailure.
    """
    cfg = state.config
    dc, current = state.dcs[s], state.placements[s]
    if cfg.algorithm in ("hapso", "aco_only"):
        seed = sub_seed(cfg.seed, 0xAC, k, s, batch[0].id)
        result = aco_mod.run_aco(batch, dc, current, cfg.aco, seed, state.pheromones[s], cfg.pso)
        return result.placement, result.pheromone
    place = ffd_place if cfg.algorithm == "ffd" else bfd_place
    return place(batch, dc, current), None


def site_fitness(state: SimState, s: int, placement: Placement) -> float:
    dc = state.dcs[s]
    return fitness_arrays(placement.load_array(dc.host_ids), placement.count_array(dc.host_ids),
                          dc.arrays().capacity, state.config.pso)


def broker_place(state: SimState, batch, k: int) -> bool:
    """Place ``batch`` on the site whose objective grows least; False if no site can take it."""
    best = None
    for s in range(len(state.dcs)):
        try:
            placement, pheromone = _stage_one(state, s, batch, k)
        except PlacementFailure:
            continue
        marginal = site_fitness(state, s, placement) - site_fitness(state, s, state.placements[s])
        key = (round(marginal, 9), state.sites[s].energy_price_cents_per_kwh, s)
        if best is None or key < best[0]:
            best = (key, s, placement, pheromone)
    if best is None:
        return False
    _, s, placement, pheromone = best
    state.placements[s] = placement
    if pheromone is not None:
        state.pheromones[s] = pheromone
    for vm in batch:
        state.vm_site[vm.id] = s
        state.live[vm.id] = vm
    state.ledger.placed += len(batch)
    return True


def dispatch(state: SimState, batch, k: int) -> None:
    if not batch:
        return
    if broker_place(state, batch, k):
        return
    # whole batch fits nowhere: fall back to one VM at a time
    for vm in sorted(batch, key=lambda v: (-v.demand.cpu_cores, -v.demand.ram_gb, v.id)):
        if not broker_place(state, [vm], k):
            state.ledger.rejected += 1
            logger.info("rejected VM %d at step %d", vm.id, k)


def smoothed_utilization(state: SimState, s: int, host_demand: np.ndarray) -> dict:
    window = state.config.pso.smoothing_window
    dc = state.dcs[s]
    history = state.util_history[s]
    active = set(state.placements[s].assignment.values())
    out = {}
    for i, pm in enumerate(dc.hosts):
        if pm.id not in active:
            history.pop(pm.id, None)
            continue
        buf = history.setdefault(pm.id, deque(maxlen=window))
        buf.append(host_demand[i] / pm.capacity.cpu_cores)
        out[pm.id] = sum(buf) / len(buf)
    return out


def execute_migrations(state: SimState, s: int, plan, t: float) -> list:
    """Apply a plan move by move; moves that no longer fit are retried, then dropped."""
    dc = state.dcs[s]
    placement = state.placements[s]
    pending = list(plan.moves)
    events = []
    progress = True
    while pending and progress:
        progress = False
        remaining = []
        for vm_id, src, dst in pending:
            assert src in dc and dst in dc, "migration must stay inside one datacenter"
            if placement.assignment.get(vm_id) != src:
                continue
            vm = placement.vms[vm_id]
            if not vm.demand.fits_in(placement.residual(dst)):
                remaining.append((vm_id, src, dst))
                continue
            placement = placement.place(vm, dst)
            events.append(MigrationEvent(t, vm_id, src, dst,
                                         migration_duration(vm, dc.host(src), dc.host(dst)),
                                         dc.site.name))
            progress = True
        pending = remaining
    if pending:
        state.ledger.stale_moves += len(pending)
        logger.warning("dropped %d stale migrations at t=%s", len(pending), t)
    state.placements[s] = placement
    state.ledger.migration_events.extend(events)
    state.ledger.sites[s].migrations += len(events)
    state.step_migrations[s] += len(events)
    return events


def consolidate(state: SimState, t: float, k: int) -> None:
    cfg = state.config
    for s, dc in enumerate(state.dcs):
        placement = state.placements[s]
        if cfg.algorithm != "hapso" or not placement.assignment:
            continue
        util = smoothed_utilization(state, s, state.host_demand(s))
        triggers = detect_triggers(placement, cfg.pso.th_over, cfg.pso.th_under, util)
        if not triggers:
            continue
        plan = run_pso(placement, triggers.candidates, dc, cfg.pso, seed=sub_seed(cfg.seed, 0x50, k, s))
        state.ledger.gbest_histories.append({"t": t, "site": dc.site.name,
                                             "history": list(plan.swarm_gbest_history)})
        if plan.moves:
            execute_migrations(state, s, plan, t)


def accrue(state: SimState, t: float) -> None:
    cfg = state.config
    for s, dc in enumerate(state.dcs):
        arr = dc.arrays()
        demand = state.host_demand(s)
        counts = state.placements[s].count_array(dc.host_ids)
        active = counts > 0
        cpu_cap = arr.capacity[:, 0].astype(np.float64)
        sample = step_energy_arrays(dc.site, cpu_cap, arr.idle, arr.peak, demand, active, cfg.step_s, t)
        unserved, requested = compute_sla(demand[active], cpu_cap[active], cfg.step_s)
        ledger = state.ledger.sites[s]
        ledger.energy_kwh += sample.total_kwh
        ledger.green_kwh += sample.green_kwh
        ledger.grid_kwh += sample.grid_kwh
        ledger.carbon_kg += sample.carbon_kg
        ledger.cost_usd += sample.cost_usd
        ledger.unserved_core_s += unserved
        ledger.requested_core_s += requested
        n_active = int(active.sum())
        ledger.active_host_timeseries.append(n_active)
        migrations = state.step_migrations[s]
        state.ledger.steps.append({
            "t": t, "site": dc.site.name, "energy_kwh": sample.total_kwh,
            "carbon_kg": sample.carbon_kg, "cost_usd": sample.cost_usd,
            "active_hosts": n_active, "migrations": migrations,
            "sla_pct": 100.0 * unserved / requested if requested else 0.0,
        })


def check_invariants(state: SimState) -> None:
    merged = merge_placements(state.placements)
    report = validate(merged, [state.vms[v] for v in state.live])
    assert report.ok, report


def advance_step(state: SimState, t: float | None = None) -> SimState:
    """One monitoring period: retire, place arrivals, consolidate, then account."""
    k = state.step_index
    if t is None:
        t = k * state.config.step_s
    state.step_migrations = [0] * len(state.dcs)
    retire(state, t)
    state.sample_demand(k)
    dispatch(state, state.arrivals.get(k, []), k)
    consolidate(state, t, k)
    if state.config.check_invariants:
        check_invariants(state)
    accrue(state, t)
    state.step_index = k + 1
    return state


@dataclass
class SimResult:
    ledger: MetricsLedger
    placements: list
    state: SimState

    @property
    def placement(self) -> Placement:
        return merge_placements(self.placements)


def run_simulation(config: SimConfig, workload) -> SimResult:
    """Step until every cloudlet has finished (or ``max_steps`` is hit)."""
    state = SimState(config, workload)
    steps = 0
    while not state.finished:
        if config.max_steps is not None and steps >= config.max_steps:
            break
        advance_step(state)
        steps += 1
    return SimResult(state.ledger, state.placements, state)
