"""First Fit Decreasing and Best Fit Decreasing placement."""

from __future__ import annotations

import numpy as np

from .domain import Datacenter, Placement, PlacementFailure
from .pso import demand_order


def _prepare(vms, dc: Datacenter, placement: Placement | None):
    vms = demand_order(vms)
    if not vms:
        raise ValueError("empty batch")
    placement = placement if placement is not None else Placement.empty(dc)
    host_ids = dc.host_ids
    capacity = dc.arrays().capacity
    free = capacity - placement.load_array(host_ids)
    return vms, placement, host_ids, capacity, free


def ffd_place(vms, dc: Datacenter, placement: Placement | None = None) -> Placement:
    """Each VM, largest CPU demand first, goes to the first host (in datacenter order) it fits on."""
    vms, placement, host_ids, _, free = _prepare(vms, dc, placement)
    for vm in vms:
        d = np.array(vm.demand.as_tuple())
        fit = np.flatnonzero((free >= d).all(axis=1))
        if fit.size == 0:
            raise PlacementFailure(vm.id)
        i = int(fit[0])
        free[i] -= d
        placement = placement.place(vm, host_ids[i])
    return placement


def bfd_place(vms, dc: Datacenter, placement: Placement | None = None) -> Placement:
    """Each VM goes to the feasible host left with the smallest normalised residual (CPU, RAM, BW)."""
    vms, placement, host_ids, capacity, free = _prepare(vms, dc, placement)
    cap = capacity[:, :3].astype(np.float64)
    for vm in vms:
        d = np.array(vm.demand.as_tuple())
        feasible = (free >= d).all(axis=1)
        if not feasible.any():
            raise PlacementFailure(vm.id)
        slack = ((free[:, :3] - d[:3]) / cap).sum(axis=1)
        slack[~feasible] = np.inf
        i = int(np.argmin(slack))
        free[i] -= d
        placement = placement.place(vm, host_ids[i])
    return placement
