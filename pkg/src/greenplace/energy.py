"""Power, PUE, renewable supply, carbon and cost accounting."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

SECONDS_PER_DAY = 86_400.0
J_PER_KWH = 3.6e6


class UndefinedPUE(ValueError):
    pass


@dataclass(frozen=True)
class SiteProfile:
    name: str
    carbon_intensity_t_per_mwh: float
    carbon_tax_usd_per_t: float
    energy_price_cents_per_kwh: float
    green_peak_kw: float = 0.0
    utc_offset_h: float = 0.0

    def __post_init__(self):
        for attr in ("carbon_intensity_t_per_mwh", "carbon_tax_usd_per_t",
                     "energy_price_cents_per_kwh", "green_peak_kw"):
            if getattr(self, attr) < 0:
                raise ValueError(f"{self.name}: {attr} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SiteProfile:
        return cls(**d)


DEFAULT_SITES = (
    SiteProfile("Dallas", 0.335, 24.0, 6.38, utc_offset_h=-6.0),
    SiteProfile("Richmond", 0.268, 17.6, 8.62, utc_offset_h=-5.0),
    SiteProfile("San Jose", 0.199, 38.59, 19.8, utc_offset_h=-8.0),
    SiteProfile("Portland", 0.287, 25.75, 7.7, utc_offset_h=-8.0),
)


def load_sites(path) -> tuple[SiteProfile, ...]:
    with open(path) as fh:
        doc = json.load(fh)
    rows = doc["sites"] if isinstance(doc, dict) else doc
    return tuple(SiteProfile.from_dict(r) for r in rows)


def with_renewables(sites, green_peak_kw: float) -> tuple[SiteProfile, ...]:
    return tuple(replace(s, green_peak_kw=green_peak_kw) for s in sites)


def host_power(pm, u: float, active: bool = True) -> float:
    """Linear idle-to-peak power in watts; utilisation above 1 draws peak."""
    if not active:
        return 0.0
    u = min(max(u, 0.0), 1.0)
    return pm.idle_power_w + (pm.peak_power_w - pm.idle_power_w) * u


def pue(u_dc: float, h: float) -> float:
    """PUE(U, H) = 1 + (0.2 + 0.01 U + 0.01 U H) / U with U a fraction in (0, 1]."""
    if u_dc <= 0:
        raise UndefinedPUE(f"PUE undefined at utilisation {u_dc}")
    return 1.0 + (0.2 + 0.01 * u_dc + 0.01 * u_dc * h) / u_dc


def _daylight(site: SiteProfile, t: float) -> float:
    local = (t + site.utc_offset_h * 3600.0) % SECONDS_PER_DAY
    return max(0.0, math.sin(math.pi * (local - 6 * 3600.0) / (12 * 3600.0)))


def heat_index(site: SiteProfile, t: float) -> float:
    """Normalised ambient heat in [0, 1]: a half sine peaking at local noon."""
    return _daylight(site, t)


def green_supply(site: SiteProfile, t: float) -> float:
    """Solar output in kW at simulation time ``t`` (seconds, UTC)."""
    if site.green_peak_kw == 0:
        return 0.0
    return site.green_peak_kw * _daylight(site, t)


def carbon_for(grid_kwh: float, site: SiteProfile) -> float:
    # t/MWh is numerically kg/kWh
    return grid_kwh / 1000.0 * site.carbon_intensity_t_per_mwh * 1000.0


def cost_for(grid_kwh: float, carbon_kg: float, site: SiteProfile) -> float:
    return grid_kwh * site.energy_price_cents_per_kwh / 100.0 + carbon_kg / 1000.0 * site.carbon_tax_usd_per_t


@dataclass(frozen=True)
class EnergySample:
    t: float
    it_power_kw: float = 0.0
    pue: float = 1.0
    total_kwh: float = 0.0
    green_kwh: float = 0.0
    grid_kwh: float = 0.0
    carbon_kg: float = 0.0
    cost_usd: float = 0.0


def step_energy_arrays(site: SiteProfile, cpu_capacity: np.ndarray, idle: np.ndarray,
                       peak: np.ndarray, cpu_demand: np.ndarray, active: np.ndarray,
                       dt_s: float, t: float) -> EnergySample:
    """Energy for one step from per-host arrays.

    ``cpu_demand`` is the current CPU demand per host in cores. The datacenter
    utilisation fed to the PUE model is aggregate demand over the capacity of
    the powered-on hosts.
    """
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    if not active.any():
        return EnergySample(t)
    u = np.minimum(cpu_demand[active] / cpu_capacity[active], 1.0)
    it_w = float(np.sum(idle[active] + (peak[active] - idle[active]) * u))
    u_dc = min(float(cpu_demand[active].sum()) / float(cpu_capacity[active].sum()), 1.0)
    assert u_dc > 0, "active hosts with zero demand"
    factor = pue(u_dc, heat_index(site, t))
    total = it_w * factor * dt_s / J_PER_KWH
    green = min(green_supply(site, t) * 1000.0 * dt_s / J_PER_KWH, total)
    grid = max(0.0, total - green)
    carbon = carbon_for(grid, site)
    return EnergySample(t, it_w / 1000.0, factor, total, green, grid, carbon,
                        cost_for(grid, carbon, site))


def step_energy(dc, placement, dt_s: float, t: float, vms=None) -> EnergySample:
    """Energy for one step of a datacenter under ``placement``.

    Current demands come from the VM records in ``vms`` (or those stored on
    the placement). Empty hosts are powered down.
    """
    lookup = vms if vms is not None else placement.vms
    ids = dc.host_ids
    index = {pm: i for i, pm in enumerate(ids)}
    demand = np.zeros(len(ids))
    active = np.zeros(len(ids), dtype=bool)
    for vm_id, pm_id in placement.assignment.items():
        if pm_id in index:
            demand[index[pm_id]] += lookup[vm_id].current_cpu_demand
            active[index[pm_id]] = True
    arr = dc.arrays()
    return step_energy_arrays(dc.site, arr.capacity[:, 0].astype(float), arr.idle, arr.peak,
                              demand, active, dt_s, t)
