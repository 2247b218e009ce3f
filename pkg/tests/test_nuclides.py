import math

import pytest
from hypothesis import given, strategies as st

from radbudget.nuclides import (
    AssayCatalog,
    CatalogError,
    DecayChain,
    MissingAssayWarning,
    chain_emissions,
    component_activity,
    gamma_lines,
    specific_activity,
)


@pytest.fixture(scope="module")
def catalog():
    return AssayCatalog.load()


def test_catalog_closure(catalog):
    # load() already validates; re-validate explicitly for the record
    catalog.validate()


def test_co60_two_lines_near_unit_intensity(catalog):
    lines = gamma_lines("Co-60", catalog)
    assert len(lines) == 2
    energies = sorted(e for e, _ in lines)
    assert energies[0] == pytest.approx(1173.23, abs=0.5)
    assert energies[1] == pytest.approx(1332.49, abs=0.5)
    for _, intensity in lines:
        assert intensity == pytest.approx(1.0, abs=0.01)


def test_u238_chain_includes_pb214_bi214_lines(catalog):
    lines = gamma_lines("U-238", catalog)
    energies = [e for e, _ in lines]
    assert any(abs(e - 351.93) < 0.5 for e in energies)   # Pb-214
    assert any(abs(e - 609.31) < 0.5 for e in energies)   # Bi-214
    assert any(abs(e - 1764.49) < 0.5 for e in energies)  # Bi-214


def test_th232_chain_tl208_branching(catalog):
    # Tl-208's 2614.5 keV line is scaled by the 0.3594 branch
    lines = gamma_lines("Th-232", catalog)
    line = next((e, i) for e, i in lines if abs(e - 2614.51) < 0.5)
    standalone = next(
        i for e, i in gamma_lines("Tl-208", catalog) if abs(e - 2614.51) < 0.5)
    assert line[1] == pytest.approx(0.3594 * standalone, rel=1e-12)


def test_chain_equilibrium_scaling_every_line(catalog):
    for chain_name, chain in catalog.chains.items():
        combined = chain_emissions(chain, catalog)
        offset = 0
        for member, branching in chain.members:
            for e in catalog.nuclides[member].emissions:
                got = combined[offset]
                assert got.intensity == pytest.approx(branching * e.intensity, rel=1e-12)
                offset += 1
        assert offset == len(combined)


def test_chain_exclusion_drops_member(catalog):
    full = gamma_lines("U-238", catalog)
    trimmed = gamma_lines("U-238", catalog, exclude={"Pb-210", "Bi-210", "Po-210"})
    assert len(trimmed) < len(full)
    assert not any(abs(e - 46.54) < 0.1 for e, _ in trimmed)


def test_single_nuclide_chain_resolution(catalog):
    chain = catalog.resolve_chain("Cs-137")
    assert chain.members == (("Cs-137", 1.0),)


def test_specific_activity_alumina_u238(catalog):
    assert specific_activity("alumina", "U-238", catalog) == pytest.approx(5.0)


def test_specific_activity_sma_th232(catalog):
    assert specific_activity("SMA connector", "Th-232", catalog) == pytest.approx(1.8)


def test_specific_activity_missing_is_zero_with_warning(catalog):
    with pytest.warns(MissingAssayWarning):
        value = specific_activity("copper", "Cs-137", catalog)
    assert value == 0.0


def test_specific_activity_unknown_material(catalog):
    with pytest.raises(CatalogError):
        specific_activity("unobtainium", "U-238", catalog)


def test_component_activity_zero_mass(catalog):
    acts = component_activity(0.0, catalog.materials["copper"])
    assert all(v == 0.0 for v in acts.values())


def test_component_activity_copper_1kg(catalog):
    acts = component_activity(1.0, catalog.materials["copper"])
    assert acts["Pb-210"] == pytest.approx(0.040)
    assert acts["U-238"] == pytest.approx(7.0e-5)


def test_component_activity_negative_mass(catalog):
    with pytest.raises(ValueError):
        component_activity(-1.0, catalog.materials["copper"])


@given(mass=st.floats(min_value=0, max_value=1e4, allow_nan=False))
def test_component_activity_homogeneous_in_mass(mass):
    catalog = AssayCatalog.load()
    assay = catalog.materials["steel"]
    doubled = component_activity(2 * mass, assay)
    single = component_activity(mass, assay)
    for key in single:
        assert doubled[key] == pytest.approx(2 * single[key], rel=1e-12, abs=1e-300)


def test_unit_round_trip():
    # mBq/kg <-> Bq/kg is an exact power-of-ten scale
    for value in (0.07, 40.0, 250000.0):
        assert (value * 1e-3) * 1e3 == pytest.approx(value, rel=1e-15)


def test_branching_fraction_validation():
    with pytest.raises(ValueError):
        DecayChain(parent="X", members=(("Y", 1.5),))


def test_unresolved_chain_member_raises(catalog):
    bad = DecayChain(parent="U-238", members=(("Nope-999", 1.0),))
    with pytest.raises(CatalogError):
        chain_emissions(bad, catalog)
