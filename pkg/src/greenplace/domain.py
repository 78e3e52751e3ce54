"""Datacenter entities and the placement feasibility algebra.

Every resource quantity in this package is a :class:`ResourceVector` of four
integer-valued dimensions (CPU cores, RAM GB, bandwidth Mbps, storage GB).
Placements are immutable: every mutation returns a new :class:`Placement`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

DIMENSIONS = ("cpu_cores", "ram_gb", "bw_mbps", "storage_gb")


class CapacityError(ValueError):
    """A resource vector went negative, i.e. a host would be over capacity."""

    def __init__(self, dimension, amount, message=None):
        self.dimension = dimension
        self.amount = amount
        super().__init__(message or f"capacity exceeded in {dimension} by {amount}")


class UnknownIdError(KeyError):
    """A VM or PM id that the datacenter does not know about."""


class PlacementFailure(RuntimeError):
    """No feasible host exists for a VM."""

    def __init__(self, vm_id, message=None):
        self.vm_id = vm_id
        super().__init__(message or f"no feasible host for VM {vm_id}")


@dataclass(frozen=True)
class ResourceVector:
    cpu_cores: int = 0
    ram_gb: int = 0
    bw_mbps: int = 0
    storage_gb: int = 0

    def __post_init__(self):
        for name in DIMENSIONS:
            if getattr(self, name) < 0:
                raise ValueError(f"negative {name}: {getattr(self, name)}")

    def __add__(self, other: ResourceVector) -> ResourceVector:
        return ResourceVector(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def __sub__(self, other: ResourceVector) -> ResourceVector:
        diff = [a - b for a, b in zip(self.as_tuple(), other.as_tuple())]
        for name, d in zip(DIMENSIONS, diff):
            if d < 0:
                raise CapacityError(name, -d)
        return ResourceVector(*diff)

    def fits_in(self, other: ResourceVector) -> bool:
        return all(a <= b for a, b in zip(self.as_tuple(), other.as_tuple()))

    def overflow(self, capacity: ResourceVector) -> dict[str, int]:
        """Dimensions where ``self`` exceeds ``capacity``, with the excess."""
        return {
            name: a - b
            for name, a, b in zip(DIMENSIONS, self.as_tuple(), capacity.as_tuple())
            if a > b
        }

    def as_tuple(self) -> tuple:
        return (self.cpu_cores, self.ram_gb, self.bw_mbps, self.storage_gb)

    @classmethod
    def zero(cls) -> ResourceVector:
        return cls()


ZERO = ResourceVector()


def can_host(pm_residual: ResourceVector, vm_demand: ResourceVector) -> bool:
    return vm_demand.fits_in(pm_residual)


# ---------------------------------------------------------------------------
# Hardware catalogues
# ---------------------------------------------------------------------------

class ServerType(IntEnum):
    TYPE_1 = 1
    TYPE_2 = 2
    TYPE_3 = 3
    TYPE_4 = 4
    TYPE_5 = 5
    TYPE_6 = 6


class VmType(IntEnum):
    TYPE_1 = 1
    TYPE_2 = 2
    TYPE_3 = 3
    TYPE_4 = 4
    TYPE_5 = 5


DEFAULT_HOST_BW_MBPS = 10_000

# cores, RAM GB, storage GB
SERVER_TABLE = {
    ServerType.TYPE_1: (2, 16, 2000),
    ServerType.TYPE_2: (4, 32, 6000),
    ServerType.TYPE_3: (8, 32, 7000),
    ServerType.TYPE_4: (8, 64, 7000),
    ServerType.TYPE_5: (16, 128, 9000),
    ServerType.TYPE_6: (32, 128, 12000),
}

# (idle W, peak W)
SERVER_POWER = {
    ServerType.TYPE_1: (60.0, 120.0),
    ServerType.TYPE_2: (85.0, 170.0),
    ServerType.TYPE_3: (110.0, 220.0),
    ServerType.TYPE_4: (120.0, 240.0),
    ServerType.TYPE_5: (160.0, 320.0),
    ServerType.TYPE_6: (210.0, 420.0),
}

# PEs, RAM GB, storage GB, bandwidth Mbps
VM_TABLE = {
    VmType.TYPE_1: (1, 1, 100, 100),
    VmType.TYPE_2: (2, 2, 200, 200),
    VmType.TYPE_3: (4, 4, 500, 400),
    VmType.TYPE_4: (8, 8, 1000, 800),
    VmType.TYPE_5: (16, 64, 2000, 1600),
}

VM_TYPE_NAMES = {
    VmType.TYPE_1: "A1_Medium",
    VmType.TYPE_2: "m5.large",
    VmType.TYPE_3: "m5.xlarge",
    VmType.TYPE_4: "m5.2xlarge",
    VmType.TYPE_5: "m5.4xlarge",
}


def server_capacity(server_type: ServerType, bw_mbps: int = DEFAULT_HOST_BW_MBPS) -> ResourceVector:
    cores, ram, storage = SERVER_TABLE[ServerType(server_type)]
    return ResourceVector(cores, ram, bw_mbps, storage)


def vm_demand(vm_type: VmType) -> ResourceVector:
    pes, ram, storage, bw = VM_TABLE[VmType(vm_type)]
    return ResourceVector(pes, ram, bw, storage)


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhysicalMachine:
    id: int
    server_type: ServerType
    capacity: ResourceVector
    idle_power_w: float
    peak_power_w: float
    site_id: str = ""

    def __post_init__(self):
        if not 0 < self.idle_power_w < self.peak_power_w:
            raise ValueError(
                f"PM {self.id}: need 0 < idle ({self.idle_power_w}) < peak ({self.peak_power_w})"
            )

    @classmethod
    def of_type(cls, pm_id: int, server_type: ServerType, site_id: str = "",
                bw_mbps: int = DEFAULT_HOST_BW_MBPS, power=None) -> PhysicalMachine:
        idle, peak = power or SERVER_POWER[ServerType(server_type)]
        return cls(pm_id, ServerType(server_type), server_capacity(server_type, bw_mbps),
                   idle, peak, site_id)


@dataclass(frozen=True)
class VirtualMachine:
    id: int
    vm_type: VmType
    demand: ResourceVector
    current_cpu_demand: float = 0.0
    start_s: float = 0.0
    end_s: float = float("inf")

    def __post_init__(self):
        if not 0 <= self.current_cpu_demand <= self.demand.cpu_cores:
            raise ValueError(
                f"VM {self.id}: current CPU demand {self.current_cpu_demand} "
                f"outside [0, {self.demand.cpu_cores}]"
            )

    @classmethod
    def of_type(cls, vm_id: int, vm_type: VmType, **kwargs) -> VirtualMachine:
        return cls(vm_id, VmType(vm_type), vm_demand(vm_type), **kwargs)

    def with_demand(self, current_cpu: float) -> VirtualMachine:
        return VirtualMachine(self.id, self.vm_type, self.demand, current_cpu,
                              self.start_s, self.end_s)


@dataclass(frozen=True)
class Datacenter:
    site: object  # energy.SiteProfile; kept untyped to avoid an import cycle
    hosts: tuple

    def __post_init__(self):
        ids = [h.id for h in self.hosts]
        if len(set(ids)) != len(ids):
            raise ValueError("host ids must be unique within a datacenter")
        object.__setattr__(self, "_index", {h.id: i for i, h in enumerate(self.hosts)})

    def host(self, pm_id: int) -> PhysicalMachine:
        try:
            return self.hosts[self._index[pm_id]]
        except KeyError:
            raise UnknownIdError(f"unknown PM {pm_id}") from None

    def index_of(self, pm_id: int) -> int:
        return self._index[pm_id]

    def __contains__(self, pm_id) -> bool:
        return pm_id in self._index

    @property
    def host_ids(self) -> list[int]:
        return [h.id for h in self.hosts]

    def arrays(self) -> HostArrays:
        cached = self.__dict__.get("_arrays")
        if cached is None:
            cached = HostArrays.from_hosts(self.hosts)
            object.__setattr__(self, "_arrays", cached)
        return cached


def build_datacenter(site, hosts_per_type: int = 21, first_id: int = 0,
                     bw_mbps: int = DEFAULT_HOST_BW_MBPS, power=None) -> Datacenter:
    """Hosts grouped by server type in catalogue order, ids consecutive from ``first_id``."""
    hosts = []
    pm_id = first_id
    for server_type in ServerType:
        for _ in range(hosts_per_type):
            type_power = (power or {}).get(server_type)
            hosts.append(PhysicalMachine.of_type(pm_id, server_type, getattr(site, "name", ""),
                                                 bw_mbps, type_power))
            pm_id += 1
    return Datacenter(site, tuple(hosts))


@dataclass(frozen=True)
class HostArrays:
    """Column view of a host list for the vectorised solvers."""

    ids: np.ndarray
    capacity: np.ndarray  # (M, 4) int64
    idle: np.ndarray
    peak: np.ndarray

    @classmethod
    def from_hosts(cls, hosts: Sequence[PhysicalMachine]) -> HostArrays:
        return cls(
            np.array([h.id for h in hosts], dtype=np.int64),
            np.array([h.capacity.as_tuple() for h in hosts], dtype=np.int64).reshape(-1, 4),
            np.array([h.idle_power_w for h in hosts], dtype=np.float64),
            np.array([h.peak_power_w for h in hosts], dtype=np.float64),
        )


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """VM id -> PM id assignment over a fixed host set.

    ``load`` caches the summed demand per host. It is a cache, not a second
    source of truth: :meth:`check` recomputes it from ``assignment``.
    ``extra`` holds surplus assignments for VMs that appeared more than once
    in a parsed document so that :func:`validate` can report them.
    """

    hosts: Mapping[int, PhysicalMachine]
    vms: Mapping[int, VirtualMachine] = field(default_factory=dict)
    assignment: Mapping[int, int] = field(default_factory=dict)
    load: Mapping[int, ResourceVector] = field(default_factory=dict)
    extra: Mapping[int, tuple] = field(default_factory=dict)

    @classmethod
    def empty(cls, hosts: Iterable[PhysicalMachine] | Datacenter) -> Placement:
        if isinstance(hosts, Datacenter):
            hosts = hosts.hosts
        return cls({h.id: h for h in hosts})

    @classmethod
    def from_mapping(cls, hosts, vms: Iterable[VirtualMachine], assignment: Mapping[int, int]) -> Placement:
        """Build without capacity checks, so infeasible inputs can be validated."""
        base = cls.empty(hosts)
        by_id = {vm.id: vm for vm in vms}
        load: dict[int, ResourceVector] = {}
        for vm_id, pm_id in assignment.items():
            if vm_id not in by_id:
                raise UnknownIdError(f"unknown VM {vm_id}")
            if pm_id not in base.hosts:
                raise UnknownIdError(f"unknown PM {pm_id}")
            load[pm_id] = load.get(pm_id, ZERO) + by_id[vm_id].demand
        placed = {vm_id: by_id[vm_id] for vm_id in assignment}
        return cls(base.hosts, placed, dict(assignment), load)

    def residual(self, pm_id: int) -> ResourceVector:
        return self.hosts[pm_id].capacity - self.load.get(pm_id, ZERO)

    def hosted(self, pm_id: int) -> list[int]:
        return sorted(v for v, p in self.assignment.items() if p == pm_id)

    def host_of(self, vm_id: int):
        return self.assignment.get(vm_id)

    @property
    def active_hosts(self) -> list[int]:
        return sorted(set(self.assignment.values()))

    def __len__(self) -> int:
        return len(self.assignment)

    def place(self, vm: VirtualMachine, pm_id: int) -> Placement:
        """Add (or move) ``vm`` onto ``pm_id``; raises CapacityError if it does not fit."""
        if pm_id not in self.hosts:
            raise UnknownIdError(f"unknown PM {pm_id}")
        src = self.assignment.get(vm.id)
        if src == pm_id:
            return self
        load = dict(self.load)
        new_dst = load.get(pm_id, ZERO) + vm.demand
        overflow = new_dst.overflow(self.hosts[pm_id].capacity)
        if overflow:
            dim, amount = next(iter(overflow.items()))
            raise CapacityError(dim, amount, f"VM {vm.id} does not fit on PM {pm_id}: {overflow}")
        if src is not None:
            remaining = load[src] - self.vms[vm.id].demand
            if remaining == ZERO:
                del load[src]
            else:
                load[src] = remaining
        load[pm_id] = new_dst
        assignment = dict(self.assignment)
        assignment[vm.id] = pm_id
        vms = dict(self.vms)
        vms[vm.id] = vm
        return Placement(self.hosts, vms, assignment, load, self.extra)

    def remove(self, vm_id: int) -> Placement:
        if vm_id not in self.assignment:
            raise UnknownIdError(f"VM {vm_id} is not placed")
        pm_id = self.assignment[vm_id]
        load = dict(self.load)
        remaining = load[pm_id] - self.vms[vm_id].demand
        if remaining == ZERO:
            del load[pm_id]
        else:
            load[pm_id] = remaining
        assignment = {k: v for k, v in self.assignment.items() if k != vm_id}
        vms = {k: v for k, v in self.vms.items() if k != vm_id}
        return Placement(self.hosts, vms, assignment, load, self.extra)

    def with_vms(self, vms: Iterable[VirtualMachine]) -> Placement:
        """Refresh VM records (e.g. current CPU demand) without changing the mapping."""
        updated = dict(self.vms)
        for vm in vms:
            if vm.id in updated:
                updated[vm.id] = vm
        return Placement(self.hosts, updated, self.assignment, self.load, self.extra)

    def check(self) -> None:
        """Assert that the cached load matches the assignment."""
        expected: dict[int, ResourceVector] = {}
        for vm_id, pm_id in self.assignment.items():
            expected[pm_id] = expected.get(pm_id, ZERO) + self.vms[vm_id].demand
        assert expected == dict(self.load), "stale load cache"

    # -- array views -------------------------------------------------------

    def load_array(self, host_ids: Sequence[int]) -> np.ndarray:
        out = np.zeros((len(host_ids), 4), dtype=np.int64)
        for i, pm_id in enumerate(host_ids):
            vec = self.load.get(pm_id)
            if vec is not None:
                out[i] = vec.as_tuple()
        return out

    def count_array(self, host_ids: Sequence[int]) -> np.ndarray:
        index = {pm_id: i for i, pm_id in enumerate(host_ids)}
        out = np.zeros(len(host_ids), dtype=np.int64)
        for pm_id in self.assignment.values():
            out[index[pm_id]] += 1
        return out

    def matrix(self, vm_ids: Sequence[int], host_ids: Sequence[int]) -> np.ndarray:
        """Dense binary X with rows = hosts and columns = VMs."""
        index = {pm_id: i for i, pm_id in enumerate(host_ids)}
        x = np.zeros((len(host_ids), len(vm_ids)), dtype=np.int8)
        for j, vm_id in enumerate(vm_ids):
            pm_id = self.assignment.get(vm_id)
            if pm_id is not None:
                x[index[pm_id], j] = 1
        return x

    # -- serialisation -----------------------------------------------------

    def to_json(self) -> str:
        rows = [{"vm": str(v), "pm": str(self.assignment[v])} for v in sorted(self.assignment)]
        return json.dumps({"assignments": rows}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, hosts, vms: Iterable[VirtualMachine]) -> Placement:
        doc = json.loads(text)
        by_id = {vm.id: vm for vm in vms}
        assignment: dict[int, int] = {}
        extra: dict[int, list] = {}
        for row in doc["assignments"]:
            vm_id, pm_id = int(row["vm"]), int(row["pm"])
            if vm_id in assignment:
                extra.setdefault(vm_id, []).append(pm_id)
            else:
                assignment[vm_id] = pm_id
        base = cls.from_mapping(hosts, by_id.values(), assignment)
        for vm_id, pms in extra.items():
            for pm_id in pms:
                if pm_id not in base.hosts:
                    raise UnknownIdError(f"unknown PM {pm_id}")
        return cls(base.hosts, base.vms, base.assignment, base.load,
                   {k: tuple(v) for k, v in extra.items()})


def merge_placements(parts: Iterable[Placement]) -> Placement:
    hosts, vms, assignment, load = {}, {}, {}, {}
    for p in parts:
        hosts.update(p.hosts)
        vms.update(p.vms)
        assignment.update(p.assignment)
        load.update(p.load)
    return Placement(hosts, vms, assignment, load)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssignmentViolation:
    vm_id: int
    kind: str  # "unplaced" | "duplicated"
    hosts: tuple = ()


@dataclass(frozen=True)
class CapacityViolation:
    pm_id: int
    dimension: str
    overflow: int


@dataclass(frozen=True)
class ValidationReport:
    assignment: tuple = ()
    capacity: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.assignment and not self.capacity

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return not self.ok

    def __len__(self) -> int:
        return len(self.assignment) + len(self.capacity)


def validate(placement: Placement, vms: Iterable[VirtualMachine], dc=None) -> ValidationReport:
    """Report every exclusivity and capacity violation; empty iff feasible.

    ``dc`` may be a Datacenter (or host iterable) restricting which hosts are
    legal targets. Ids the datacenter does not know raise UnknownIdError.
    """
    hosts = placement.hosts
    if dc is not None:
        known = dc.hosts if isinstance(dc, Datacenter) else dc
        hosts = {h.id: h for h in known}
    vms = list(vms)
    expected = {vm.id: vm for vm in vms}

    for vm_id, pm_id in placement.assignment.items():
        if vm_id not in expected and vm_id not in placement.vms:
            raise UnknownIdError(f"unknown VM {vm_id}")
        if pm_id not in hosts:
            raise UnknownIdError(f"unknown PM {pm_id}")

    assignment_issues = []
    for vm_id in sorted(expected):
        if vm_id not in placement.assignment:
            assignment_issues.append(AssignmentViolation(vm_id, "unplaced"))
        elif vm_id in placement.extra:
            assignment_issues.append(AssignmentViolation(
                vm_id, "duplicated", (placement.assignment[vm_id],) + tuple(placement.extra[vm_id])))

    load: dict[int, list] = {}
    for vm_id, pm_id in placement.assignment.items():
        vm = expected.get(vm_id) or placement.vms[vm_id]
        acc = load.setdefault(pm_id, [0, 0, 0, 0])
        for k, amount in enumerate(vm.demand.as_tuple()):
            acc[k] += amount
    capacity_issues = []
    for pm_id in sorted(load):
        cap = hosts[pm_id].capacity.as_tuple()
        for name, used, limit in zip(DIMENSIONS, load[pm_id], cap):
            if used > limit:
                capacity_issues.append(CapacityViolation(pm_id, name, used - limit))
    return ValidationReport(tuple(assignment_issues), tuple(capacity_issues))


def apply_move(placement: Placement, vm: VirtualMachine | int, dst: int) -> Placement:
    """Return a placement with ``vm`` on ``dst``; the input is left untouched."""
    if not isinstance(vm, VirtualMachine):
        try:
            vm = placement.vms[vm]
        except KeyError:
            raise UnknownIdError(f"unknown VM {vm}") from None
    return placement.place(vm, dst)


def host_utilization(pm_id: int, placement: Placement, vms: Mapping[int, VirtualMachine] | None = None) -> float:
    """Current CPU demand of the hosted VMs over the host's core count (may exceed 1)."""
    lookup = vms if vms is not None else placement.vms
    demand = sum(lookup[v].current_cpu_demand for v in placement.hosted(pm_id))
    return demand / placement.hosts[pm_id].capacity.cpu_cores
