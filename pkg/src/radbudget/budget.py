"""Radiation-budget arithmetic: combine component masses, assayed specific
activities, and hit/dose efficiency tables into per-component interaction
rates in the silicon substrates, plus linear what-if extrapolations.

The hit-efficiency table ships as versioned data (counts per gram of
silicon per second per Bq of a source at a given location); it can also be
regenerated, at reduced fidelity, from the in-package transport engine.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import transport
from ._data import load_json
from .nuclides import AssayCatalog, specific_activity

HIT_SOURCES = ("U-238", "Th-232", "K-40", "Co-60", "Cs-137", "Pb-210",
               "Act", "In-115")


class BudgetError(ValueError):
    pass


@dataclass
class HitEfficiencyTable:
    """(location, source) -> hit and dose conversion efficiencies.

    hit: counts per g(silicon) per s per Bq; dose: keV per g per s per Bq.
    A location may carry only one of the two halves (the other is
    unavailable, not zero)."""

    locations: dict = field(default_factory=dict)
    version: str = ""

    def __post_init__(self):
        for loc, entry in self.locations.items():
            for half in ("hit", "dose"):
                for source, value in entry.get(half, {}).items():
                    if source not in HIT_SOURCES:
                        raise BudgetError(
                            f"unknown source column {source!r} at {loc!r}; "
                            f"expected one of {HIT_SOURCES}")
                    if value < 0:
                        raise BudgetError(
                            f"negative {half} efficiency for {source!r} at {loc!r}")

    @classmethod
    def load(cls, name="hiteff.json"):
        raw = load_json(name)
        return cls(locations=raw["locations"], version=raw.get("version", ""))

    def _entry(self, location, half):
        if location not in self.locations:
            raise BudgetError(
                f"unknown location {location!r}; valid labels: "
                + ", ".join(sorted(self.locations)))
        return self.locations[location].get(half)

    def has_hit(self, location):
        return self._entry(location, "hit") is not None

    def has_dose(self, location):
        return self._entry(location, "dose") is not None

    def hit_eff(self, location, source):
        """counts/g/s/Bq; 0 for sources without a tabulated entry."""
        entry = self._entry(location, "hit")
        if entry is None:
            raise BudgetError(f"no hit efficiencies for location {location!r}")
        return entry.get(source, 0.0)

    def dose_eff(self, location, source):
        """keV/g/s/Bq; 0 for sources without a tabulated entry."""
        entry = self._entry(location, "dose")
        if entry is None:
            raise BudgetError(f"no dose efficiencies for location {location!r}")
        return entry.get(source, 0.0)


@dataclass
class Component:
    """One inventory line: a mass of some material at a table location."""

    name: str
    material: str
    mass_kg: float
    location: str
    count: int = 1
    estimate: bool = False

    def __post_init__(self):
        if self.mass_kg < 0:
            raise BudgetError(f"negative mass for component {self.name!r}")


def load_inventory(name="inventory_default.json"):
    # inventory files record the total mass across the stated count;
    # Component.mass_kg is per unit, so divide it back out here
    raw = load_json(name)
    return [
        Component(name=c["name"], material=c["material"],
                  mass_kg=c["mass_kg"] / c.get("count", 1),
                  location=c["location"],
                  count=c.get("count", 1), estimate=c.get("estimate", False))
        for c in raw["components"]
    ]


def component_rate(component, catalog, table):
    """(rate counts/s/g, dose keV/s/g) for one component.

    rate = mass_kg x count x sum over sources of
           specific activity (Bq/kg) x hit efficiency (counts/g/s/Bq);
    dose analogously. A half with no efficiencies at the component's
    location comes back as None (unavailable, not zero)."""
    mass = component.mass_kg * component.count
    has_hit = table.has_hit(component.location)
    has_dose = table.has_dose(component.location)
    rate = 0.0 if has_hit else None
    dose = 0.0 if has_dose else None
    for source in HIT_SOURCES:
        activity = specific_activity(component.material, source, catalog)
        if activity == 0.0:
            continue
        if has_hit:
            rate += mass * activity * table.hit_eff(component.location, source)
        if has_dose:
            dose += mass * activity * table.dose_eff(component.location, source)
    return rate, dose


@dataclass
class BudgetEntry:
    component: str
    material: str
    mass_kg: float
    location: str
    rate: float                    # counts/s/g, None if unavailable
    dose: float                    # keV/s/g, None if unavailable
    rate_over_1MeV: float = None   # populated only for transport-backed rows
    environmental: bool = False
    estimate: bool = False


@dataclass
class BudgetReport:
    entries: list

    def subtotal(self, environmental):
        rows = [e for e in self.entries if e.environmental == environmental]
        rate = sum(e.rate for e in rows if e.rate is not None)
        dose = sum(e.dose for e in rows if e.dose is not None)
        return rate, dose

    def total(self):
        """(rate, dose) over every row; exact sum of the subtotals."""
        comp = self.subtotal(environmental=False)
        env = self.subtotal(environmental=True)
        return comp[0] + env[0], comp[1] + env[1]

    def entry(self, component):
        for e in self.entries:
            if e.component == component:
                return e
        raise BudgetError(f"no budget row named {component!r}")

    def write(self, path):
        """Table-shaped CSV: one row per component plus environmental rows,
        sorted by rate descending, with a units header."""
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["component", "material", "mass_kg",
                        "rate_counts_per_s_per_g", "rate_gt_1MeV",
                        "dose_keV_per_s_per_g"])
            for e in self.entries:
                w.writerow([
                    e.component, e.material, f"{e.mass_kg:.6g}",
                    "" if e.rate is None else f"{e.rate:.6g}",
                    "" if e.rate_over_1MeV is None else f"{e.rate_over_1MeV:.6g}",
                    "" if e.dose is None else f"{e.dose:.6g}",
                ])
            rate, dose = self.total()
            w.writerow(["Total", "", "", f"{rate:.6g}", "", f"{dose:.6g}"])


def total_budget(inventory, catalog, table, environmental=()):
    """Full budget report over an inventory.

    environmental: iterable of transport-backed rows as dicts with keys
    name, rate, dose, and optionally rate_over_1MeV (cosmic muons, ambient
    gammas). The >1 MeV column exists only for these rows; the efficiency
    table records total rate and dose only."""
    if not inventory:
        raise BudgetError("empty inventory")
    entries = []
    for comp in inventory:
        rate, dose = component_rate(comp, catalog, table)
        entries.append(BudgetEntry(
            component=comp.name, material=comp.material,
            mass_kg=comp.mass_kg * comp.count, location=comp.location,
            rate=rate, dose=dose, estimate=comp.estimate))
    entries.sort(key=lambda e: -(e.rate if e.rate is not None else -1.0))
    for row in environmental:
        entries.append(BudgetEntry(
            component=row["name"], material="", mass_kg=0.0, location="",
            rate=row.get("rate"), dose=row.get("dose"),
            rate_over_1MeV=row.get("rate_over_1MeV"), environmental=True))
    return BudgetReport(entries=entries)


def generate_hiteff(scene, volume_id, source, n, seed, catalog=None,
                    threshold_keV=transport.DEFAULT_THRESHOLDS_KEV[0],
                    exclude=()):
    """Regenerate one efficiency-table entry by transporting decays.

    Distributes n decays of the source uniformly through the named volume
    and scores the chip tallies: hit efficiency = hits above threshold per
    decay per gram, dose efficiency = keV per decay per gram. Returns a
    dict with statistical errors attached. Lower fidelity than the bundled
    table; useful for new locations and relative studies."""
    if n <= 0:
        raise BudgetError("need at least one decay")
    if catalog is None:
        catalog = AssayCatalog.load()
    spec = transport.DecaySourceSpec(volume_id=volume_id, source=source,
                                     exclude=tuple(exclude))
    result = transport.run(scene, spec, n, seed=seed, catalog=catalog)
    mass = result.tally_mass_g.sum()
    hits, var = result.counts_above(threshold_keV)
    wE = result.weight * result.deposit_keV
    return {
        "hit": hits / (n * mass),
        "hit_err": math.sqrt(var) / (n * mass),
        "dose": float(wE.sum()) / (n * mass),
        "dose_err": float(np.sqrt((wE ** 2).sum())) / (n * mass),
        "n_decays": n,
    }


def extrapolate_rate(observable_rate, reference_rate, new_rate):
    """Scale an observable linearly with the radiation interaction rate."""
    if not reference_rate > 0:
        raise BudgetError("reference radiation rate must be > 0")
    if new_rate < 0:
        raise BudgetError("radiation rate must be >= 0")
    return observable_rate * new_rate / reference_rate
