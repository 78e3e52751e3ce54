import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greenplace.baselines import bfd_place, ffd_place
from greenplace.domain import (Datacenter, PhysicalMachine, Placement, PlacementFailure, ResourceVector,
                               ServerType, VirtualMachine, VmType, validate)
from greenplace.energy import DEFAULT_SITES
from oracles import optimum
from greenplace.pso import PsoParams


def dc_of(n, cores=8):
    hosts = tuple(PhysicalMachine(i, ServerType.TYPE_4, ResourceVector(cores, 64, 10_000, 7000), 120.0, 240.0)
                  for i in range(n))
    return Datacenter(DEFAULT_SITES[0], hosts)


def vm(i, cpu):
    return VirtualMachine(i, VmType.TYPE_1, ResourceVector(cpu, 1, 100, 100))


def groups(p):
    return sorted(sorted(p.vms[v].demand.cpu_cores for v in p.hosted(h)) for h in p.active_hosts)


@pytest.mark.parametrize("place", [ffd_place, bfd_place])
def test_hand_trace_uses_three_hosts(place):
    vms = [vm(i, c) for i, c in enumerate([8, 4, 4, 2, 1])]
    p = place(vms, dc_of(5))
    assert len(p.active_hosts) == 3
    if place is ffd_place:
        assert groups(p) == [[1, 2], [4, 4], [8]]


def test_ffd_single_vm_first_host():
    assert ffd_place([vm(0, 3)], dc_of(3)).host_of(0) == 0


@pytest.mark.parametrize("place", [ffd_place, bfd_place])
def test_oversized_vm_fails(place):
    with pytest.raises(PlacementFailure):
        place([vm(0, 9)], dc_of(3))


def test_bfd_prefers_tighter_fit():
    dc = dc_of(2)
    base = Placement.empty(dc).place(vm(10, 3), 1)  # residuals 8 and 5
    p = bfd_place([vm(0, 4)], dc, base)
    assert p.host_of(0) == 1


def test_bfd_empty_datacenter_tie_goes_to_lowest_id():
    assert bfd_place([vm(0, 1)], dc_of(4)).host_of(0) == 0


def test_ffd_order_is_by_decreasing_demand():
    # a small VM listed first must not take the room of the large one
    vms = [vm(0, 1), vm(1, 8)]
    p = ffd_place(vms, dc_of(2))
    assert p.host_of(1) == 0 and p.host_of(0) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=5))
def test_baselines_feasible_and_bounded_by_oracle(cpus):
    dc = Datacenter(DEFAULT_SITES[0], tuple(PhysicalMachine.of_type(i, ServerType(2 + i)) for i in range(3)))
    vms = [VirtualMachine.of_type(i, VmType(c)) for i, c in enumerate(cpus)]
    best = optimum(vms, dc, params=PsoParams(alpha=1.0, beta=0.0))
    for place in (ffd_place, bfd_place):
        try:
            p = place(vms, dc)
        except PlacementFailure:
            continue
        assert validate(p, vms, dc).ok
        assert len(p.active_hosts) >= best
