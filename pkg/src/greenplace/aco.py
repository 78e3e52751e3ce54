"""Ant-colony initial placement of a VM batch.

Pheromone lives on (host, VM type) cells so that what a site learns about
where small or large VMs fit well carries over from one arrival batch to the
next. The heuristic desirability of a host is the inverse of the carbon
weighted marginal power of placing the VM there, so switching on an idle host
is charged its idle draw.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .domain import Datacenter, Placement, PlacementFailure, ResourceVector, VmType, can_host
from .energy import host_power
from .pso import PsoParams, demand_order

EPS = 1e-6
N_VM_TYPES = len(VmType)


@dataclass(frozen=True)
class AcoParams:
    n_ants: int = 10
    n_iterations: int = 50
    alpha_pher: float = 1.0
    beta_heur: float = 2.0
    rho: float = 0.1
    q0: float = 0.9
    tau0: float = 1.0
    tau_min: float = 0.01
    carbon_weight: float = 1.0

    def __post_init__(self):
        if self.n_ants < 1 or self.n_iterations < 1:
            raise ValueError("n_ants and n_iterations must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        if not 0 <= self.q0 <= 1:
            raise ValueError("q0 must be in [0, 1]")
        if self.tau_min <= 0 or self.tau0 <= 0:
            raise ValueError("tau0 and tau_min must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PheromoneMatrix:
    host_ids: tuple
    tau: np.ndarray  # (M, number of VM types)
    tau0: float = 1.0

    @classmethod
    def initial(cls, host_ids, tau0: float = 1.0) -> PheromoneMatrix:
        return cls(tuple(host_ids), np.full((len(host_ids), N_VM_TYPES), float(tau0)), tau0)

    def row(self, vm_type: VmType) -> dict:
        col = int(vm_type) - 1
        return {pm: float(self.tau[i, col]) for i, pm in enumerate(self.host_ids)}


@dataclass(frozen=True)
class CandidateScore:
    pm: int
    delta_power_w: float
    eta: float
    prob: float = 0.0


def carbon_factor(site, params: AcoParams = AcoParams()) -> float:
    intensity = getattr(site, "carbon_intensity_t_per_mwh", 0.0)
    return 1.0 + params.carbon_weight * intensity


def delta_power(vm, pm, residual: ResourceVector, active: bool) -> float:
    """Power after placing ``vm`` minus power before, counting the idle draw of a sleeping host."""
    cap = pm.capacity.cpu_cores
    used = cap - residual.cpu_cores
    before = host_power(pm, used / cap, active)
    after = host_power(pm, (used + vm.demand.cpu_cores) / cap, True)
    return after - before


def heuristic_score(vm, pm, residual: ResourceVector, active: bool, site,
                    params: AcoParams = AcoParams()) -> float:
    if not can_host(residual, vm.demand):
        return 0.0
    return 1.0 / (EPS + delta_power(vm, pm, residual, active) * carbon_factor(site, params))


def select_host(candidates, tau_row, params: AcoParams = AcoParams(), rng=None,
                uniforms=None) -> int:
    """Pick a host: exploit the best tau^a * eta^b with probability q0, else sample proportionally."""
    candidates = [c for c in candidates if c.eta > 0]
    if not candidates:
        raise PlacementFailure(None, "no feasible host among candidates")
    if uniforms is None:
        uniforms = rng.random(2)
    order = sorted(candidates, key=lambda c: c.pm)
    weights = np.array([tau_row[c.pm] ** params.alpha_pher * c.eta ** params.beta_heur for c in order])
    pick = _kernels.choose(weights, float(uniforms[0]), float(uniforms[1]), params.q0)
    return order[pick].pm


def update_pheromone(tau: PheromoneMatrix, used_cells, best_fitness: float,
                     params: AcoParams = AcoParams()) -> PheromoneMatrix:
    """Global update: evaporate everywhere, deposit 1/(1 + fitness) on the cells used by the best ant.

    ``used_cells`` is an iterable of (PM id, VM type) pairs.
    """
    index = {pm: i for i, pm in enumerate(tau.host_ids)}
    new = (1.0 - params.rho) * tau.tau
    deposit = params.rho / (1.0 + best_fitness)
    for pm, vm_type in set(used_cells):
        new[index[pm], int(vm_type) - 1] += deposit
    np.maximum(new, params.tau_min, out=new)
    return PheromoneMatrix(tau.host_ids, new, tau.tau0)


@dataclass(frozen=True)
class AcoResult:
    placement: Placement
    fitness: float
    history: tuple
    pheromone: PheromoneMatrix


def ant_uniforms(seed, n_iterations: int, n_ants: int, n_vms: int) -> np.ndarray:
    """Random draws for every (iteration, ant, VM) slot.

    Each (iteration, ant) slice is fixed by the seed alone, so results do not
    depend on the order in which ants are evaluated.
    """
    rng = np.random.default_rng([int(s) for s in np.atleast_1d(seed)] + [0xAC0])
    return rng.random((n_iterations, n_ants, n_vms, 2))


def run_aco(vms, dc: Datacenter, placement: Placement | None = None, params: AcoParams = AcoParams(),
            seed=0, pheromone: PheromoneMatrix | None = None,
            objective: PsoParams = PsoParams()) -> AcoResult:
    """Place ``vms`` on top of ``placement``, keeping the best ant by the consolidation objective."""
    vms = demand_order(vms)
    if not vms:
        raise ValueError("empty batch")
    placement = placement if placement is not None else Placement.empty(dc)
    host_ids = dc.host_ids
    arrays = dc.arrays()
    if pheromone is None:
        pheromone = PheromoneMatrix.initial(host_ids, params.tau0)

    demand = np.array([vm.demand.as_tuple() for vm in vms], dtype=np.int64)
    vm_type = np.array([int(vm.vm_type) - 1 for vm in vms], dtype=np.int64)
    base_load = placement.load_array(host_ids)
    base_count = placement.count_array(host_ids)
    free = arrays.capacity - base_load
    active = base_count > 0
    factor = carbon_factor(dc.site, params)
    dynamic = arrays.peak - arrays.idle
    cpu_cap = arrays.capacity[:, 0].astype(np.float64)

    uniforms = ant_uniforms(seed, params.n_iterations, params.n_ants, len(vms))
    tau = pheromone
    best_assign, best_fit = None, np.inf
    history = []
    stuck_on = None
    for it in range(params.n_iterations):
        assign, stuck = _kernels.construct(demand, vm_type, free, active, cpu_cap, arrays.idle,
                                           dynamic, factor, tau.tau ** params.alpha_pher,
                                           params.beta_heur, params.q0, EPS, uniforms[it])
        done = stuck < 0
        if done.any():
            fits = _kernels.objective_of_assignments(
                assign[done], base_load, base_count, demand, arrays.capacity,
                objective.alpha, objective.beta, objective.normalized_wastage)
            k = int(np.argmin(fits))
            it_assign, it_fit = assign[done][k], float(fits[k])
            if it_fit < best_fit:
                best_assign, best_fit = it_assign.copy(), it_fit
            cells = [(host_ids[it_assign[j]], vms[j].vm_type) for j in range(len(vms))]
            tau = update_pheromone(tau, cells, it_fit, params)
        else:
            stuck_on = vms[int(stuck.max())].id
        history.append(best_fit)

    if best_assign is None:
        raise PlacementFailure(stuck_on)
    out = placement
    for j, vm in enumerate(vms):
        out = out.place(vm, host_ids[best_assign[j]])
    return AcoResult(out, best_fit, tuple(history), tau)
