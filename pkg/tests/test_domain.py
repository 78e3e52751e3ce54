import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greenplace.domain import (CapacityError, Datacenter, PhysicalMachine, Placement, ResourceVector,
                               ServerType, UnknownIdError, VirtualMachine, VmType, apply_move,
                               build_datacenter, can_host, host_utilization, merge_placements,
                               server_capacity, validate, vm_demand)
from greenplace.energy import DEFAULT_SITES


def rv(*a):
    return ResourceVector(*a)


def eight_core_hosts(n):
    cap = rv(8, 64, 10_000, 7000)
    return [PhysicalMachine(i, ServerType.TYPE_4, cap, 120.0, 240.0) for i in range(n)]


def vm(i, cpu, ram=1, bw=100, storage=100, current=0.0):
    return VirtualMachine(i, VmType.TYPE_1, rv(cpu, ram, bw, storage), current)


# -- ResourceVector ------------------------------------------------------

def test_can_host_exact_fit():
    assert can_host(rv(4, 16, 500, 1000), rv(4, 16, 500, 1000))


def test_can_host_single_dimension_overflow():
    assert not can_host(rv(4, 16, 500, 1000), rv(4, 16, 501, 1000))


def test_can_host_zero():
    assert can_host(rv(0, 0, 0, 0), rv(0, 0, 0, 0))


def test_negative_component_rejected():
    with pytest.raises(ValueError):
        rv(-1, 0, 0, 0)


def test_subtraction_below_zero_raises_capacity_error():
    with pytest.raises(CapacityError) as err:
        rv(2, 2, 2, 2) - rv(3, 0, 0, 0)
    assert err.value.dimension == "cpu_cores"


small = st.integers(0, 50)
vectors = st.builds(ResourceVector, small, small, small, small)


@given(vectors, vectors)
def test_add_then_subtract_roundtrip(a, b):
    assert (a + b) - b == a
    assert b.fits_in(a + b)


# -- catalogues ----------------------------------------------------------

def test_server_capacity_uses_shared_bandwidth():
    assert server_capacity(ServerType.TYPE_6) == rv(32, 128, 10_000, 12000)


def test_vm_demand_orders_bandwidth_before_storage():
    assert vm_demand(VmType.TYPE_5) == rv(16, 64, 1600, 2000)


def test_build_datacenter_groups_types():
    dc = build_datacenter(DEFAULT_SITES[0], hosts_per_type=21, first_id=126)
    assert len(dc.hosts) == 126
    assert dc.hosts[0].id == 126 and dc.hosts[-1].id == 251
    assert [h.server_type for h in dc.hosts[::21]] == list(ServerType)
    assert dc.arrays().capacity.shape == (126, 4)


def test_datacenter_rejects_duplicate_ids():
    hosts = eight_core_hosts(2)
    with pytest.raises(ValueError):
        Datacenter(DEFAULT_SITES[0], (hosts[0], hosts[0]))


def test_vm_current_demand_bounded_by_reservation():
    with pytest.raises(ValueError):
        vm(0, 2, current=3.0)


# -- validate --------------------------------------------------------------

def test_validate_feasible_is_empty():
    hosts = eight_core_hosts(2)
    vms = [vm(0, 4), vm(1, 4)]
    p = Placement.from_mapping(hosts, vms, {0: 0, 1: 1})
    report = validate(p, vms)
    assert report.ok and len(report) == 0


def test_validate_reports_unplaced_vm():
    hosts = eight_core_hosts(1)
    vms = [vm(0, 1), vm(1, 1)]
    p = Placement.from_mapping(hosts, vms[:1], {0: 0})
    report = validate(p, vms)
    assert [(v.vm_id, v.kind) for v in report.assignment] == [(1, "unplaced")]
    assert not report.capacity


def test_validate_reports_cpu_overflow():
    hosts = eight_core_hosts(1)
    vms = [vm(i, 4) for i in range(3)]
    p = Placement.from_mapping(hosts, vms, {0: 0, 1: 0, 2: 0})
    report = validate(p, vms)
    assert len(report.capacity) == 1
    v = report.capacity[0]
    assert (v.pm_id, v.dimension, v.overflow) == (0, "cpu_cores", 4)


def test_validate_reports_duplicate_from_json():
    hosts = eight_core_hosts(2)
    vms = [vm(0, 1)]
    doc = json.dumps({"assignments": [{"vm": "0", "pm": "0"}, {"vm": "0", "pm": "1"}]})
    p = Placement.from_json(doc, hosts, vms)
    report = validate(p, vms)
    assert report.assignment[0].kind == "duplicated"
    assert set(report.assignment[0].hosts) == {0, 1}


def test_validate_unknown_pm_raises():
    hosts = eight_core_hosts(1)
    vms = [vm(0, 1)]
    p = Placement.from_mapping(hosts, vms, {0: 0})
    with pytest.raises(UnknownIdError):
        validate(p, vms, dc=eight_core_hosts(0))


def test_json_roundtrip():
    hosts = eight_core_hosts(3)
    vms = [vm(i, 2) for i in range(5)]
    p = Placement.from_mapping(hosts, vms, {0: 0, 1: 2, 2: 2, 3: 1, 4: 0})
    back = Placement.from_json(p.to_json(), hosts, vms)
    assert back.assignment == p.assignment
    assert back.load == p.load


# -- moves -----------------------------------------------------------------

def test_move_conserves_residuals():
    hosts = eight_core_hosts(2)
    v = vm(0, 3, ram=4)
    p = Placement.empty(hosts).place(v, 0)
    before0, before1 = p.residual(0), p.residual(1)
    q = apply_move(p, 0, 1)
    assert q.residual(0) == before0 + v.demand
    assert q.residual(1) == before1 - v.demand
    assert p.host_of(0) == 0  # input untouched


def test_move_to_full_host_raises_and_leaves_placement():
    hosts = eight_core_hosts(2)
    p = Placement.empty(hosts).place(vm(0, 8), 0).place(vm(1, 2), 1)
    with pytest.raises(CapacityError):
        apply_move(p, 1, 0)
    assert p.host_of(1) == 1
    p.check()


def test_move_to_same_host_is_identity():
    hosts = eight_core_hosts(2)
    p = Placement.empty(hosts).place(vm(0, 2), 1)
    assert apply_move(p, 0, 1) is p


def test_remove_restores_empty():
    hosts = eight_core_hosts(1)
    p = Placement.empty(hosts).place(vm(0, 2), 0).remove(0)
    assert p.assignment == {} and p.load == {}


def test_merge_placements_keeps_both_halves():
    a = Placement.empty(eight_core_hosts(1)).place(vm(0, 1), 0)
    hosts_b = [PhysicalMachine(5, ServerType.TYPE_4, rv(8, 64, 10_000, 7000), 120.0, 240.0)]
    b = Placement.empty(hosts_b).place(vm(1, 1), 5)
    merged = merge_placements([a, b])
    assert merged.assignment == {0: 0, 1: 5}


# -- utilisation -------------------------------------------------------------

def test_utilization_empty_host():
    p = Placement.empty(eight_core_hosts(1))
    assert host_utilization(0, p) == 0.0


def test_utilization_two_vms():
    p = Placement.empty(eight_core_hosts(1)).place(vm(0, 4, current=2.0), 0).place(vm(1, 4, current=2.0), 0)
    assert host_utilization(0, p) == 0.5


def test_utilization_can_exceed_one():
    p = Placement.from_mapping(eight_core_hosts(1), [vm(0, 5, current=5.0), vm(1, 5, current=5.0)],
                               {0: 0, 1: 0})
    assert host_utilization(0, p) == 1.25


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(1, 4), st.integers(0, 3)), max_size=40))
def test_random_move_sequences_stay_feasible(ops):
    """Arbitrary place/move attempts never produce an infeasible placement."""
    hosts = eight_core_hosts(4)
    vms = {i: vm(i, c) for i, c in enumerate([1, 2, 3, 4, 5, 6, 7, 8, 2, 1])}
    p = Placement.empty(hosts)
    for vm_id, _, dst in ops:
        try:
            p = p.place(vms[vm_id], dst)
        except CapacityError:
            pass
        assert validate(p, list(p.vms.values())).ok
    p.check()
    load = p.load_array([h.id for h in hosts])
    assert (load <= np.array([h.capacity.as_tuple() for h in hosts])).all()
