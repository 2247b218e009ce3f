"""Radioactive emission catalog, secular-equilibrium decay chains, and
per-material specific-activity assays.

Every downstream rate calculation starts here: decay-line energies and
intensities come from a bundled versioned data file, and material
radiopurity levels from a companion assay file. Chains assume secular
equilibrium; a separately assayed chain member (notably Pb-210 in copper
and lead) overrides the equilibrium value for that member.
"""

import warnings
from dataclasses import dataclass, field

from ._data import load_json

MBQ_TO_BQ = 1e-3


class MissingAssayWarning(UserWarning):
    """A material has no measured activity for the requested source."""


class CatalogError(KeyError):
    """A name failed to resolve in the loaded catalog."""


@dataclass(frozen=True)
class Emission:
    """One decay emission: a gamma or alpha line, or a beta continuum.

    Energies in keV; intensity is emissions per decay of the parent the
    emission is attached to (per chain-parent decay after chain scaling).
    """

    kind: str  # "gamma" | "beta" | "alpha"
    intensity: float
    energy_keV: float = 0.0      # line energy (gamma/alpha)
    endpoint_keV: float = 0.0    # beta endpoint
    mean_keV: float = 0.0        # beta mean energy

    def __post_init__(self):
        if self.kind not in ("gamma", "beta", "alpha"):
            raise ValueError(f"unknown emission kind {self.kind!r}")
        if self.intensity < 0:
            raise ValueError("emission intensity must be >= 0")

    def scaled(self, factor):
        return Emission(self.kind, self.intensity * factor,
                        self.energy_keV, self.endpoint_keV, self.mean_keV)


@dataclass(frozen=True)
class Nuclide:
    name: str
    emissions: tuple


@dataclass(frozen=True)
class DecayChain:
    """Ordered chain members with branching fractions relative to the parent."""

    parent: str
    members: tuple  # of (nuclide name, branching fraction)

    def __post_init__(self):
        for name, frac in self.members:
            if not 0 < frac <= 1:
                raise ValueError(f"branching fraction for {name} outside (0, 1]")


@dataclass(frozen=True)
class MaterialAssay:
    """Specific activities in mBq/kg keyed by nuclide or chain name."""

    material: str
    activities_mBq_per_kg: dict
    source: str = ""

    def __post_init__(self):
        for name, value in self.activities_mBq_per_kg.items():
            if value < 0:
                raise ValueError(f"negative activity for {name} in {self.material}")


@dataclass
class AssayCatalog:
    """Loaded nuclide, chain, and assay data with resolution checks."""

    nuclides: dict = field(default_factory=dict)
    chains: dict = field(default_factory=dict)
    materials: dict = field(default_factory=dict)

    @classmethod
    def load(cls, nuclide_file="nuclides.json", assay_file="assays.json"):
        raw = load_json(nuclide_file)
        nuclides = {}
        for name, entry in raw["nuclides"].items():
            emissions = tuple(
                Emission(
                    kind=e["kind"],
                    intensity=e["intensity"],
                    energy_keV=e.get("energy_keV", 0.0),
                    endpoint_keV=e.get("endpoint_keV", 0.0),
                    mean_keV=e.get("mean_keV", 0.0),
                )
                for e in entry["emissions"]
            )
            nuclides[name] = Nuclide(name=name, emissions=emissions)
        chains = {
            name: DecayChain(parent=name, members=tuple((m, f) for m, f in entry["members"]))
            for name, entry in raw["chains"].items()
        }

        raw_assays = load_json(assay_file)
        materials = {
            name: MaterialAssay(
                material=name,
                activities_mBq_per_kg=dict(entry["activities_mBq_per_kg"]),
                source=entry.get("source", ""),
            )
            for name, entry in raw_assays["materials"].items()
        }

        catalog = cls(nuclides=nuclides, chains=chains, materials=materials)
        catalog.validate()
        return catalog

    def validate(self):
        """Check catalog closure: every reference resolves."""
        for chain in self.chains.values():
            for member, _ in chain.members:
                if member not in self.nuclides:
                    raise CatalogError(
                        f"chain {chain.parent!r} references unknown nuclide {member!r}")
        for assay in self.materials.values():
            for name in assay.activities_mBq_per_kg:
                if name not in self.nuclides and name not in self.chains:
                    raise CatalogError(
                        f"assay {assay.material!r} references unknown source {name!r}")

    def resolve_chain(self, source):
        """Return a DecayChain for a chain or bare-nuclide source name."""
        if source in self.chains:
            return self.chains[source]
        if source in self.nuclides:
            return DecayChain(parent=source, members=((source, 1.0),))
        raise CatalogError(f"unknown nuclide or chain {source!r}")


def chain_emissions(chain, catalog, exclude=()):
    """All emissions of a chain in secular equilibrium, per parent decay.

    Each member's emissions are scaled by its branching fraction and
    concatenated. ``exclude`` drops named members (used when a member such
    as Pb-210 is separately assayed and therefore out of equilibrium).
    """
    if isinstance(chain, str):
        chain = catalog.resolve_chain(chain)
    out = []
    for member, branching in chain.members:
        if member in exclude:
            continue
        nuclide = catalog.nuclides.get(member)
        if nuclide is None:
            raise CatalogError(f"chain {chain.parent!r} member {member!r} not in catalog")
        out.extend(e.scaled(branching) for e in nuclide.emissions)
    return out


def gamma_lines(source, catalog, exclude=()):
    """(energy_keV, intensity) pairs for the gamma emissions of a source."""
    return [
        (e.energy_keV, e.intensity)
        for e in chain_emissions(source, catalog, exclude=exclude)
        if e.kind == "gamma"
    ]


def specific_activity(material, source, catalog):
    """Specific activity of a source in a material, in Bq/kg.

    A material entry with no measurement for ``source`` yields 0 with a
    MissingAssayWarning (assay tables use dashes pervasively; absence means
    'not measured', never an error).
    """
    if material not in catalog.materials:
        raise CatalogError(f"unknown material {material!r}")
    activities = catalog.materials[material].activities_mBq_per_kg
    if source not in activities:
        warnings.warn(
            f"material {material!r} has no assay entry for {source!r}; using 0",
            MissingAssayWarning,
            stacklevel=2,
        )
        return 0.0
    return activities[source] * MBQ_TO_BQ


def component_activity(mass_kg, assay):
    """Total activity per source for a component: mass x specific activity (Bq)."""
    if mass_kg < 0:
        raise ValueError("mass must be >= 0")
    return {
        source: mass_kg * value * MBQ_TO_BQ
        for source, value in assay.activities_mBq_per_kg.items()
    }
