"""Threshold-triggered discrete PSO for VM migration.

A particle holds a binary host x VM matrix for the candidate VMs (those on
over- or under-utilised hosts). Velocities follow the standard update with a
linearly decreasing inertia weight; positions are turned back into feasible
assignments by a column-wise argmax that walks down each VM's score ranking
until a host with enough residual capacity is found.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .domain import Datacenter, Placement, VirtualMachine, validate


@dataclass(frozen=True)
class PsoParams:
    c1: float = 2.0
    c2: float = 2.0
    omega_max: float = 0.9
    omega_min: float = 0.4
    swarm_size: int = 20
    t_max: int = 100
    alpha: float = 0.6
    beta: float = 0.4
    th_over: float = 0.90
    th_under: float = 0.30
    p_perturb: float = 0.2
    stagnation: int = 20
    v_max: float = 4.0
    per_element_r: bool = False
    normalized_wastage: bool = True
    smoothing_window: int = 1

    def __post_init__(self):
        if not math.isclose(self.alpha + self.beta, 1.0, abs_tol=1e-12):
            raise ValueError(f"alpha + beta must be 1, got {self.alpha} + {self.beta}")
        if not 0 < self.th_under < self.th_over < 1:
            raise ValueError("need 0 < th_under < th_over < 1")
        if not 0 <= self.omega_min <= self.omega_max:
            raise ValueError("need 0 <= omega_min <= omega_max")
        if self.swarm_size < 1 or self.t_max < 1:
            raise ValueError("swarm_size and t_max must be positive")
        if not 0 <= self.p_perturb <= 1:
            raise ValueError("p_perturb must be in [0, 1]")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def inertia_at(t: int, params: PsoParams = PsoParams()) -> float:
    return params.omega_max - ((params.omega_max - params.omega_min) / params.t_max) * t


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def fitness_arrays(load, count, capacity, params: PsoParams = PsoParams()) -> float:
    return float(_kernels.objective(np.asarray(load, dtype=np.int64),
                                    np.asarray(count, dtype=np.int64),
                                    np.asarray(capacity, dtype=np.int64),
                                    params.alpha, params.beta, params.normalized_wastage))


def fitness(placement: Placement, dc: Datacenter | None = None, params: PsoParams = PsoParams()) -> float:
    """Weighted active-host count plus residual wastage of the active hosts."""
    report = validate(placement, placement.vms.values(), dc)
    assert report.ok, f"fitness of an infeasible placement: {report}"
    host_ids = dc.host_ids if dc is not None else sorted(placement.hosts)
    capacity = np.array([placement.hosts[h].capacity.as_tuple() for h in host_ids],
                        dtype=np.int64).reshape(-1, 4)
    return fitness_arrays(placement.load_array(host_ids), placement.count_array(host_ids),
                          capacity, params)


# ---------------------------------------------------------------------------
# Triggers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Triggers:
    over: tuple = ()
    under: tuple = ()
    candidates: tuple = ()

    @property
    def flagged(self) -> tuple:
        return tuple(sorted(self.over + self.under))

    def __bool__(self) -> bool:
        return bool(self.candidates)


def detect_triggers(placement: Placement, th_over: float = 0.9, th_under: float = 0.3,
                    utilization=None) -> Triggers:
    """Flag hosts above ``th_over`` or (non-empty and) below ``th_under``.

    ``utilization`` optionally maps PM id to an already smoothed utilisation;
    otherwise the current CPU demand of the hosted VMs is used.
    """
    if not 0 < th_under < th_over < 1:
        raise ValueError("need 0 < th_under < th_over < 1")
    demand: dict[int, float] = {}
    hosted: dict[int, list] = {}
    for vm_id, pm_id in placement.assignment.items():
        demand[pm_id] = demand.get(pm_id, 0.0) + placement.vms[vm_id].current_cpu_demand
        hosted.setdefault(pm_id, []).append(vm_id)
    over, under = [], []
    for pm_id in sorted(hosted):
        if utilization is not None and pm_id in utilization:
            u = utilization[pm_id]
        else:
            u = demand[pm_id] / placement.hosts[pm_id].capacity.cpu_cores
        if u > th_over:
            over.append(pm_id)
        elif u < th_under:
            under.append(pm_id)
    candidates = sorted(v for pm in over + under for v in hosted[pm])
    return Triggers(tuple(over), tuple(under), tuple(candidates))


# ---------------------------------------------------------------------------
# Swarm
# ---------------------------------------------------------------------------

def demand_order(vms) -> list:
    """Decreasing CPU, then RAM, then increasing id."""
    return sorted(vms, key=lambda vm: (-vm.demand.cpu_cores, -vm.demand.ram_gb, vm.id))


@dataclass
class Problem:
    """Array form of one migration problem: candidate columns over site hosts."""

    host_ids: list
    vm_ids: list
    capacity: np.ndarray
    demand: np.ndarray
    current: np.ndarray  # host index per candidate
    base_load: np.ndarray  # load of the non-candidate VMs
    base_count: np.ndarray
    params: PsoParams

    @classmethod
    def build(cls, placement: Placement, candidates, dc: Datacenter, params: PsoParams) -> Problem:
        host_ids = dc.host_ids
        index = {pm: i for i, pm in enumerate(host_ids)}
        vms = demand_order(placement.vms[v] for v in candidates)
        vm_ids = [vm.id for vm in vms]
        demand = np.array([vm.demand.as_tuple() for vm in vms], dtype=np.int64).reshape(-1, 4)
        current = np.array([index[placement.assignment[v]] for v in vm_ids], dtype=np.int64)
        base_load = placement.load_array(host_ids)
        base_count = placement.count_array(host_ids)
        for j, i in enumerate(current):
            base_load[i] -= demand[j]
            base_count[i] -= 1
        capacity = dc.arrays().capacity
        return cls(host_ids, vm_ids, capacity, demand, current, base_load, base_count, params)

    @property
    def free(self) -> np.ndarray:
        return self.capacity - self.base_load

    def score(self, assign: np.ndarray) -> np.ndarray:
        assign = np.atleast_2d(assign)
        p = self.params
        return _kernels.objective_of_assignments(assign, self.base_load, self.base_count,
                                                 self.demand, self.capacity, p.alpha, p.beta,
                                                 p.normalized_wastage)

    def onehot(self, assign: np.ndarray) -> np.ndarray:
        assign = np.atleast_2d(assign)
        s, n = assign.shape
        x = np.zeros((s, len(self.host_ids), n))
        x[np.arange(s)[:, None], assign, np.arange(n)[None, :]] = 1.0
        return x

    def to_placement(self, placement: Placement, assign: np.ndarray) -> Placement:
        out = placement
        for j in range(len(self.vm_ids)):
            out = out.remove(self.vm_ids[j])
        for j in range(len(self.vm_ids)):
            out = out.place(placement.vms[self.vm_ids[j]], self.host_ids[assign[j]])
        return out


@dataclass
class Particle:
    id: int
    position: np.ndarray  # raw real scores, M x N
    decoded: np.ndarray  # host index per candidate VM
    velocity: np.ndarray
    fitness: float
    pbest: np.ndarray
    pbest_fitness: float

    @property
    def x(self) -> np.ndarray:
        m, n = self.velocity.shape
        x = np.zeros((m, n))
        x[self.decoded, np.arange(n)] = 1.0
        return x


@dataclass
class Swarm:
    problem: Problem
    particles: list
    streams: list
    gbest: np.ndarray
    gbest_fitness: float
    history: list = field(default_factory=list)


def particle_streams(seed, size: int) -> list:
    base = [int(s) for s in np.atleast_1d(seed)]
    return [np.random.default_rng(base + [0x50534F, p]) for p in range(size)]


def init_swarm(placement: Placement, candidates, dc: Datacenter, params: PsoParams = PsoParams(),
               seed: int = 0) -> Swarm:
    """Particle 0 is the live mapping; the rest are light feasible perturbations of it."""
    if not candidates:
        raise ValueError("no candidate VMs")
    problem = Problem.build(placement, candidates, dc, params)
    streams = particle_streams(seed, params.swarm_size)
    n = len(problem.vm_ids)
    uniforms = np.stack([rng.random((n, 2)) for rng in streams])
    assign = _kernels.perturb(problem.current, problem.free, problem.demand,
                              params.p_perturb, uniforms)
    scores = problem.score(assign)
    m = len(problem.host_ids)
    particles = []
    for p in range(params.swarm_size):
        x = problem.onehot(assign[p])[0]
        particles.append(Particle(p, x, assign[p].copy(), np.zeros((m, n)), float(scores[p]),
                                  assign[p].copy(), float(scores[p])))
    best = int(np.argmin(scores))
    return Swarm(problem, particles, streams, assign[best].copy(), float(scores[best]))


def update_velocity(p: Particle, gbest_x: np.ndarray, omega: float, params: PsoParams = PsoParams(),
                    rng=None, r=None) -> np.ndarray:
    """v' = w v + c1 r1 (pbest - x) + c2 r2 (gbest - x), clamped to +/- v_max.

    ``r`` overrides the random pair (scalars or arrays shaped like v).
    """
    if r is None:
        shape = (2,) + p.velocity.shape if params.per_element_r else (2,)
        r = rng.random(shape)
    r1, r2 = r
    x = p.x
    pbest_x = np.zeros_like(x)
    pbest_x[p.pbest, np.arange(x.shape[1])] = 1.0
    v = omega * p.velocity + params.c1 * r1 * (pbest_x - x) + params.c2 * r2 * (gbest_x - x)
    return np.clip(v, -params.v_max, params.v_max)


def step_position(p: Particle, velocity: np.ndarray, problem: Problem) -> Particle:
    """x' = x + v', discretised feasibly; pbest kept when it is still better."""
    raw = p.x + velocity
    decoded = _kernels.decode(raw[None], p.decoded[None], problem.free, problem.demand)[0]
    fit = float(problem.score(decoded)[0])
    if fit < p.pbest_fitness:
        pbest, pbest_fit = decoded.copy(), fit
    else:
        pbest, pbest_fit = p.pbest, p.pbest_fitness
    return Particle(p.id, raw, decoded, velocity, fit, pbest, pbest_fit)


@dataclass(frozen=True)
class MigrationPlan:
    moves: tuple  # (vm id, src PM, dst PM)
    expected_fitness: float
    initial_fitness: float
    swarm_gbest_history: tuple = ()
    placement: Placement | None = None


def run_swarm(swarm: Swarm, params: PsoParams) -> Swarm:
    """Iterate the whole swarm synchronously (gbest is refreshed once per iteration)."""
    problem = swarm.problem
    s_count = len(swarm.particles)
    n = len(problem.vm_ids)
    arange_n = np.arange(n)
    x = problem.onehot(np.stack([p.decoded for p in swarm.particles]))
    v = np.stack([p.velocity for p in swarm.particles])
    assign = np.stack([p.decoded for p in swarm.particles])
    pbest = np.stack([p.pbest for p in swarm.particles])
    pbest_fit = np.array([p.pbest_fitness for p in swarm.particles])
    pbest_x = problem.onehot(pbest)
    gbest, gbest_fit = swarm.gbest.copy(), swarm.gbest_fitness
    gbest_x = problem.onehot(gbest)[0]
    history = list(swarm.history)
    stale = 0
    rows = np.arange(s_count)[:, None]
    for t in range(params.t_max):
        omega = inertia_at(t, params)
        if params.per_element_r:
            r = np.stack([rng.random((2,) + x.shape[1:]) for rng in swarm.streams])
            r1, r2 = r[:, 0], r[:, 1]
        else:
            r = np.stack([rng.random(2) for rng in swarm.streams])
            r1, r2 = r[:, 0, None, None], r[:, 1, None, None]
        v = omega * v + params.c1 * r1 * (pbest_x - x) + params.c2 * r2 * (gbest_x - x)
        np.clip(v, -params.v_max, params.v_max, out=v)
        raw = x + v
        assign = _kernels.decode(raw, assign, problem.free, problem.demand)
        x = np.zeros_like(x)
        x[rows, assign, arange_n[None, :]] = 1.0
        fit = problem.score(assign)
        better = fit < pbest_fit
        if better.any():
            pbest[better] = assign[better]
            pbest_fit[better] = fit[better]
            pbest_x[better] = x[better]
        best = int(np.argmin(pbest_fit))
        if pbest_fit[best] < gbest_fit:
            gbest, gbest_fit = pbest[best].copy(), float(pbest_fit[best])
            gbest_x = pbest_x[best].copy()
            stale = 0
        else:
            stale += 1
        history.append(gbest_fit)
        if params.stagnation and stale >= params.stagnation:
            break
    particles = [Particle(p, raw[p], assign[p], v[p], float(fit[p]), pbest[p], float(pbest_fit[p]))
                 for p in range(s_count)]
    return Swarm(problem, particles, swarm.streams, gbest, gbest_fit, history)


def run_pso(placement: Placement, candidates, dc: Datacenter, params: PsoParams = PsoParams(),
            seed: int = 0) -> MigrationPlan:
    swarm = init_swarm(placement, candidates, dc, params, seed)
    problem = swarm.problem
    initial = float(problem.score(problem.current)[0])
    swarm = run_swarm(swarm, params)
    assert swarm.gbest_fitness <= initial
    moves = tuple(
        (vm_id, problem.host_ids[problem.current[j]], problem.host_ids[swarm.gbest[j]])
        for j, vm_id in enumerate(problem.vm_ids)
        if swarm.gbest[j] != problem.current[j]
    )
    moves = tuple(sorted(moves))
    new_placement = problem.to_placement(placement, swarm.gbest) if moves else placement
    return MigrationPlan(moves, swarm.gbest_fitness, initial, tuple(swarm.history), new_placement)
