import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenplace.domain import PhysicalMachine, Placement, ResourceVector, ServerType, VirtualMachine, VmType
from greenplace.energy import (DEFAULT_SITES, SiteProfile, UndefinedPUE, carbon_for, cost_for, green_supply,
                               heat_index, host_power, load_sites, pue, step_energy, with_renewables)
from greenplace.domain import Datacenter

DALLAS, RICHMOND, SAN_JOSE, PORTLAND = DEFAULT_SITES
# Dallas is UTC-6: local midnight and noon in simulation seconds
DALLAS_MIDNIGHT = 6 * 3600.0
DALLAS_NOON = 18 * 3600.0


def pm(idle=100.0, peak=250.0, cores=8):
    return PhysicalMachine(0, ServerType.TYPE_3, ResourceVector(cores, 32, 10_000, 7000), idle, peak)


def test_host_power_midpoint():
    assert host_power(pm(), 0.5, True) == 175.0


def test_host_power_idle_and_off():
    assert host_power(pm(), 0.0, True) == 100.0
    assert host_power(pm(), 0.7, False) == 0.0


@given(st.floats(0, 1), st.floats(0, 1))
def test_host_power_monotone(u1, u2):
    lo, hi = sorted((u1, u2))
    assert host_power(pm(), lo) <= host_power(pm(), hi)


@pytest.mark.parametrize("u, h, expected", [(0.5, 0.0, 1.41), (1.0, 1.0, 1.22), (0.1, 0.0, 3.01)])
def test_pue_values(u, h, expected):
    assert pue(u, h) == pytest.approx(expected, abs=1e-9)


def test_pue_undefined_at_zero():
    with pytest.raises(UndefinedPUE):
        pue(0.0, 0.5)


@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_pue_at_least_one(u, h):
    assert pue(u, h) >= 1.0


def test_heat_index_day_cycle():
    assert heat_index(DALLAS, DALLAS_MIDNIGHT) == 0.0
    assert heat_index(DALLAS, DALLAS_NOON) == pytest.approx(1.0)


def test_green_supply_disabled_by_default():
    assert all(green_supply(s, DALLAS_NOON) == 0.0 for s in DEFAULT_SITES)


def test_green_supply_noon_and_midnight():
    site = with_renewables([DALLAS], 50.0)[0]
    assert green_supply(site, DALLAS_NOON) == pytest.approx(50.0)
    assert green_supply(site, DALLAS_MIDNIGHT) == 0.0


def test_carbon_examples():
    assert carbon_for(1000.0, DALLAS) == pytest.approx(335.0)
    assert carbon_for(0.0, DALLAS) == 0.0
    assert carbon_for(500.0, SAN_JOSE) == pytest.approx(99.5)


def test_cost_examples():
    assert cost_for(100.0, 19.9, SAN_JOSE) == pytest.approx(20.567941)
    assert cost_for(100.0, 33.5, DALLAS) == pytest.approx(7.184)
    assert cost_for(0.0, 0.0, DALLAS) == 0.0


def _one_host_dc(site):
    return Datacenter(site, (pm(),))


def test_step_energy_all_inactive():
    dc = _one_host_dc(DALLAS)
    sample = step_energy(dc, Placement.empty(dc), 600.0, DALLAS_MIDNIGHT)
    assert sample.total_kwh == sample.grid_kwh == sample.carbon_kg == sample.cost_usd == 0.0


def test_step_energy_single_host():
    dc = _one_host_dc(DALLAS)
    vm = VirtualMachine(0, VmType.TYPE_3, ResourceVector(4, 4, 400, 500), current_cpu_demand=4.0)
    p = Placement.empty(dc).place(vm, 0)
    sample = step_energy(dc, p, 600.0, DALLAS_MIDNIGHT)
    assert sample.pue == pytest.approx(1.41)
    assert sample.total_kwh == pytest.approx(175 * 1.41 * 600 / 3.6e6)
    assert sample.carbon_kg == pytest.approx(sample.grid_kwh * 0.335)


def test_full_renewable_coverage_zeroes_grid():
    site = with_renewables([DALLAS], 10_000.0)[0]
    dc = _one_host_dc(site)
    vm = VirtualMachine(0, VmType.TYPE_3, ResourceVector(4, 4, 400, 500), current_cpu_demand=4.0)
    sample = step_energy(dc, Placement.empty(dc).place(vm, 0), 600.0, DALLAS_NOON)
    assert sample.total_kwh > 0
    assert sample.grid_kwh == 0.0 and sample.carbon_kg == 0.0 and sample.cost_usd == 0.0


def test_site_profile_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        SiteProfile("x", -1.0, 1.0, 1.0)
    path = tmp_path / "sites.json"
    import json
    path.write_text(json.dumps({"sites": [s.to_dict() for s in DEFAULT_SITES]}))
    assert load_sites(path) == DEFAULT_SITES


def test_energy_price_units():
    # cents per kWh: 100 kWh at San Jose costs 19.8 USD before tax
    assert cost_for(100.0, 0.0, SAN_JOSE) == pytest.approx(19.8)
    assert math.isclose(RICHMOND.energy_price_cents_per_kwh, 8.62)
    assert np.isclose(PORTLAND.carbon_tax_usd_per_t, 25.75)
