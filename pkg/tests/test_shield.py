import dataclasses
import math

import numpy as np
import pytest

from radbudget import geometry, transport
from radbudget.nuclides import AssayCatalog
from radbudget.shield import (BRICK_IN, INCH_CM, MUON_REFERENCE_RATE,
                              ShieldError, ShieldSpec, add_shield,
                              ambient_gamma_source, gap_sensitivity,
                              shield_self_activity, sweep)
from radbudget.shield import _net_mass_g


@pytest.fixture(scope="module")
def catalog():
    return AssayCatalog.load()


@pytest.fixture(scope="module")
def scene():
    return geometry.build_site("surface", geometry.build_fridge())


@pytest.fixture(scope="module")
def shielded(scene):
    return add_shield(scene, ShieldSpec(thickness_in=4.0))


@pytest.fixture(scope="module")
def ambient(catalog):
    return ambient_gamma_source(catalog, radius_cm=160, center=(0, 0, 180))


RADIAL_CUT = ((0, 1.3, 173), 30)


class TestShieldSpec:
    def test_thickness_conversion(self):
        assert ShieldSpec(thickness_in=4.0).thickness_cm == pytest.approx(10.16)
        assert ShieldSpec(thickness_in=0.0).thickness_cm == 0.0

    def test_thickness_must_be_whole_bricks(self):
        with pytest.raises(ShieldError):
            ShieldSpec(thickness_in=3.0)
        with pytest.raises(ShieldError):
            ShieldSpec(thickness_in=-2.0)

    def test_negative_gap_rejected(self):
        with pytest.raises(ShieldError):
            ShieldSpec(thickness_in=4.0, gap_mm=-1.0)

    def test_unknown_geometry_and_pattern_rejected(self):
        with pytest.raises(ShieldError):
            ShieldSpec(thickness_in=4.0, geometry="dome")
        with pytest.raises(ShieldError):
            ShieldSpec(thickness_in=4.0, gap_pattern="staggered")

    def test_open_area_fraction(self):
        spec = ShieldSpec(thickness_in=4.0, gap_mm=3.0, gap_pattern="aligned")
        pitch = BRICK_IN[1] * INCH_CM + 0.3
        assert spec.open_area_fraction() == pytest.approx(0.3 / pitch)
        assert ShieldSpec(thickness_in=4.0).open_area_fraction() == 0.0
        # a configured gap width is inert without a pattern
        inert = ShieldSpec(thickness_in=4.0, gap_mm=3.0, gap_pattern="none")
        assert inert.open_area_fraction() == 0.0


class TestAddShield:
    def test_zero_thickness_is_identity(self, scene):
        assert add_shield(scene, ShieldSpec(thickness_in=0.0)) is scene

    def test_wall_thickness_uniform(self, shielded):
        wall = shielded.volume_by_id("shield wall").shape
        support = shielded.volume_by_id("shield support").shape
        interior = shielded.volume_by_id("shield interior").shape
        for axis in range(3):
            assert wall.half[axis] - support.half[axis] == pytest.approx(10.16)
            assert support.half[axis] - interior.half[axis] == pytest.approx(0.5)

    def test_original_volumes_preserved(self, scene, shielded):
        ids = {v.id for v in shielded.volumes}
        for v in scene.volumes:
            assert v.id in ids
        assert len(ids) == len(shielded.volumes)

    def test_wall_and_support_mass(self, shielded):
        wall = shielded.volume_by_id("shield wall").shape
        support = shielded.volume_by_id("shield support").shape
        interior = shielded.volume_by_id("shield interior").shape
        box_vol = lambda s: 8 * s.half[0] * s.half[1] * s.half[2]
        lead = (box_vol(wall) - box_vol(support)) * 11.35
        assert _net_mass_g(shielded, "shield wall") == pytest.approx(lead, rel=1e-9)
        alum = (box_vol(support) - box_vol(interior)) * 2.70
        assert _net_mass_g(shielded, "shield support") == pytest.approx(alum, rel=1e-9)

    def test_aligned_gaps_make_seams(self, scene):
        spec = ShieldSpec(thickness_in=4.0, gap_mm=3.0, gap_pattern="aligned")
        sh = add_shield(scene, spec)
        seams = [v for v in sh.volumes if v.id.startswith("shield seam")]
        support = sh.volume_by_id("shield support").shape
        per_wall = int(2 * support.half[0] // spec.seam_pitch_cm())
        assert len(seams) == 4 * per_wall
        assert all(v.material == "air" for v in seams)

    def test_no_gap_means_no_seams(self, shielded):
        assert not [v for v in shielded.volumes if v.id.startswith("shield seam")]

    def test_split_geometry_opens_bands(self, scene):
        sh = add_shield(scene, ShieldSpec(thickness_in=4.0, geometry="split"))
        bands = [v for v in sh.volumes if v.id.startswith("shield opening")]
        assert len(bands) == 4
        assert all(v.material == "air" for v in bands)

    def test_payload_additions_grow_the_shield(self, scene, shielded):
        extra = geometry.Volume(
            id="conduit", role="structure", material="aluminum",
            shape=geometry.Box(half=(5, 5, 5), center=(40, 0, 170)))
        grown = add_shield(scene.with_volumes([extra]),
                           ShieldSpec(thickness_in=4.0))
        assert (grown.volume_by_id("shield wall").shape.half[0]
                > shielded.volume_by_id("shield wall").shape.half[0])

    def test_cramped_room_rejected(self):
        # the lab cavity is not payload, so the shield cannot grow around
        # it; walls that would cut through it are an error
        cavity = geometry.Volume(
            id="lab cavity", role="structure", material="air",
            shape=geometry.Box(half=(15, 15, 15), center=(0, 0, 170)))
        chip = geometry.Volume(
            id="probe", role="tally", material="silicon",
            shape=geometry.Box(half=(0.5, 0.05, 0.5), center=(0, 0, 170)))
        cramped = geometry.Scene(
            [cavity, chip],
            world=geometry.Box(half=(200, 200, 200), center=(0, 0, 170)))
        with pytest.raises(ShieldError, match="lab cavity"):
            add_shield(cramped, ShieldSpec(thickness_in=4.0))


class TestAmbientSource:
    def test_flux_normalization(self, catalog):
        src = ambient_gamma_source(catalog)
        assert sum(i for _, i in src.lines) == pytest.approx(7.0, rel=1e-9)

    def test_lines_above_floor_and_sorted(self, catalog):
        src = ambient_gamma_source(catalog)
        energies = [e for e, _ in src.lines]
        assert min(energies) >= 30.0
        assert energies == sorted(energies)
        assert len(energies) > 30


class TestSweep:
    def test_rates_fall_with_thickness(self, scene, ambient):
        res = sweep(scene, [0.0, 2.0], ambient, n=500_000, seed=11,
                    radial_cut=RADIAL_CUT)
        r0, r2 = res.rows[0], res.rows[1]
        assert r0.rate > r2.rate > 0
        assert r0.rate / r2.rate > 5
        assert r0.ratio_unshielded == pytest.approx(1.0)
        assert r2.ratio_unshielded == pytest.approx(r2.rate / r0.rate)

    def test_pass_flag_uses_muon_floor(self, scene, ambient):
        res = sweep(scene, [0.0], ambient, n=200_000, seed=11,
                    radial_cut=RADIAL_CUT)
        row = res.rows[0]
        assert row.passes == (row.rate <= 0.02 * MUON_REFERENCE_RATE)
        assert not row.passes

    def test_zero_hits_report_upper_limit(self, scene, catalog):
        # a single soft line cannot cross 6 inches of lead at tiny statistics
        soft = transport.GammaSphereSpec(lines=((100.0, 7.0),),
                                         radius_cm=160, center=(0, 0, 180))
        res = sweep(scene, [6.0], soft, n=2000, seed=1, radial_cut=RADIAL_CUT)
        row = res.rows[0]
        assert row.rate > 0
        assert row.rate_err == 0.0

    def test_empty_thickness_list_rejected(self, scene, ambient):
        with pytest.raises(ShieldError):
            sweep(scene, [], ambient, n=100, seed=0)

    def test_csv_columns(self, scene, ambient, tmp_path):
        res = sweep(scene, [0.0], ambient, n=100_000, seed=11,
                    radial_cut=RADIAL_CUT)
        out = tmp_path / "sweep.csv"
        res.write(out)
        header = out.read_text().splitlines()[0]
        assert header == ("thickness_in,rate,rate_err,dose,"
                          "ratio_unshielded,ratio_muon,pass")


class TestGapSensitivity:
    def test_small_gap_negligible_full_gap_not(self, scene, ambient):
        spec = ShieldSpec(thickness_in=2.0)
        rows = gap_sensitivity(scene, spec, [0.0, 3.0, 101.6], n=2_000_000,
                               seed=11, radial_cut=RADIAL_CUT, source=ambient)
        assert rows[0].rate > 0
        assert rows[0].negligible          # baseline vs itself
        assert rows[1].negligible          # 3 mm: below 2 sigma or 30%
        assert not rows[2].negligible      # open lattice
        assert rows[2].rate > 3 * rows[0].rate

    def test_negative_gap_rejected(self, scene):
        with pytest.raises(ShieldError):
            gap_sensitivity(scene, ShieldSpec(thickness_in=2.0), [-1.0],
                            n=100, seed=0)


class TestSelfActivity:
    def test_lead_wall_rate_scale(self, scene, catalog):
        rate, dose = shield_self_activity(
            scene, ShieldSpec(thickness_in=4.0), catalog=catalog,
            n=100_000, seed=3)
        assert 1.7e-3 / 5 < rate < 1.7e-3 * 5
        assert dose > 0

    def test_support_rate_scale(self, scene, catalog):
        rate, _ = shield_self_activity(
            scene, ShieldSpec(thickness_in=4.0), catalog=catalog,
            n=100_000, seed=3, volume_id="shield support")
        assert 0.41e-3 / 5 < rate < 0.41e-3 * 5

    def test_zero_activity_gives_zero(self, scene, catalog):
        quiet = dataclasses.replace(
            catalog.materials["lead"],
            activities_mBq_per_kg={"U-238": 0.0, "Pb-210": 0.0})
        cat = dataclasses.replace(
            catalog, materials={**catalog.materials, "lead": quiet})
        rate, dose = shield_self_activity(
            scene, ShieldSpec(thickness_in=4.0), catalog=cat, n=100, seed=0)
        assert rate == 0.0
        assert dose == 0.0
