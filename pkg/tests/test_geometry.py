import numpy as np
import pytest

from radbudget.geometry import (
    Box,
    CylShell,
    Disc,
    GeometryError,
    Ray,
    Scene,
    Slab,
    Sphere,
    Volume,
    build_fridge,
    build_nai,
    build_site,
    solid_chord_stats,
)


def make_scene(volumes, half=500.0):
    world = Box(half=(half, half, half), center=(0, 0, 0))
    return Scene(volumes, world=world, world_material="air")


def total_length(segments, material=None):
    return sum(s.length for s in segments if material is None or s.material == material)


def test_axial_ray_through_disc():
    disc = Disc(radius=26.1, thickness=1.2, center=(0, 0, 0))
    scene = make_scene([Volume(id="d", shape=disc, material="steel")])
    ray = Ray(origin=(0, 0, -100), direction=(0, 0, 1))
    assert total_length(scene.trace(ray), "steel") == pytest.approx(1.2, abs=1e-9)


def test_diameter_ray_through_sphere():
    sph = Sphere(radius=145.0)
    scene = make_scene([Volume(id="s", shape=sph, material="lead")])
    ray = Ray(origin=(-400, 0, 0), direction=(1, 0, 0))
    assert total_length(scene.trace(ray), "lead") == pytest.approx(290.0, abs=1e-9)


def test_cylshell_chord_radial():
    shell = CylShell(inner_radius=10.0, thickness=2.0, height=50.0)
    scene = make_scene([Volume(id="c", shape=shell, material="copper")])
    ray = Ray(origin=(-100, 0, 0), direction=(1, 0, 0))
    # radial ray crosses both walls
    assert total_length(scene.trace(ray), "copper") == pytest.approx(4.0, abs=1e-9)


def test_slab_oblique_chord():
    slab = Slab(z_lo=0.0, z_hi=10.0)
    scene = make_scene([Volume(id="s", shape=slab, material="concrete")])
    c = np.cos(np.radians(60))
    ray = Ray(origin=(0, 0, -50), direction=(np.sin(np.radians(60)), 0, c))
    assert total_length(scene.trace(ray), "concrete") == pytest.approx(10 / c, rel=1e-9)


def test_trace_contiguous_and_covers_world():
    scene = make_scene([
        Volume(id="outer", shape=Sphere(radius=50), material="aluminum"),
        Volume(id="inner", shape=Sphere(radius=20), material="copper"),
    ])
    ray = Ray(origin=(-499, 1, 2), direction=(1, 0, 0))
    segs = scene.trace(ray)
    for a, b in zip(segs[:-1], segs[1:]):
        assert b.t_enter == pytest.approx(a.t_exit, abs=1e-9)
    world_chord = segs[-1].t_exit - segs[0].t_enter
    assert total_length(segs) == pytest.approx(world_chord, rel=1e-12)
    assert all(s.length >= 0 for s in segs)


def test_nested_material_resolution():
    scene = make_scene([
        Volume(id="outer", shape=Sphere(radius=50), material="aluminum"),
        Volume(id="inner", shape=Sphere(radius=20), material="copper"),
    ])
    assert scene.material_at((0, 0, 0)) == "copper"
    assert scene.material_at((0, 0, 30)) == "aluminum"
    assert scene.material_at((0, 0, 90)) == "air"
    assert scene.parent_material("inner") == "aluminum"
    assert scene.parent_material("outer") == "air"


def test_trace_reversal_consistency():
    rng = np.random.default_rng(5)
    scene = make_scene([
        Volume(id="a", shape=Disc(radius=30, thickness=12), material="steel"),
        Volume(id="b", shape=CylShell(inner_radius=5, thickness=3, height=40,
                                      center=(0, 0, -30)), material="copper"),
        Volume(id="c", shape=Box(half=(8, 8, 8), center=(20, 0, 20)), material="lead"),
    ])
    for _ in range(50):
        o = rng.uniform(-400, 400, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        # launch from outside the world in both directions so each ray covers
        # the full world chord
        fwd = scene.chord_by_material(Ray(origin=o - 3000 * d, direction=d))
        bwd = scene.chord_by_material(Ray(origin=o + 3000 * d, direction=-d))
        for mat, length in fwd.items():
            assert bwd.get(mat, 0.0) == pytest.approx(length, abs=1e-7)


def test_trace_vs_marching_oracle():
    scene = make_scene([
        Volume(id="a", shape=Disc(radius=30, thickness=12), material="steel"),
        Volume(id="b", shape=CylShell(inner_radius=5, thickness=3, height=40,
                                      center=(0, 0, -30)), material="copper"),
        Volume(id="c", shape=Sphere(radius=10, center=(15, 15, 15)), material="lead"),
    ])
    rng = np.random.default_rng(11)
    n_steps = 10_000
    for _ in range(20):
        o = rng.uniform(-100, 100, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        ray = Ray(origin=o, direction=d)
        length = 400.0
        ts = (np.arange(n_steps) + 0.5) * (length / n_steps)
        pts = o + ts[:, None] * d
        mats = scene.material_at(pts)
        analytic = scene.chord_by_material(ray)
        for mat in ("steel", "copper", "lead"):
            marched = (mats == mat).sum() * (length / n_steps)
            expected = analytic.get(mat, 0.0)
            assert marched == pytest.approx(expected, abs=2 * length / n_steps + 0.001 * expected)


def test_degenerate_direction_rejected():
    with pytest.raises(ValueError):
        Ray(origin=(0, 0, 0), direction=(0, 0, 0))


def test_bad_dimensions_rejected():
    with pytest.raises(ValueError):
        Disc(radius=-1, thickness=1)
    with pytest.raises(ValueError):
        Slab(z_lo=5, z_hi=5)


def test_cauchy_mean_chord_cube():
    scene = make_scene([Volume(id="cube", shape=Box(half=(1, 1, 1)), material="silicon",
                               role="tally")])
    stats = solid_chord_stats(scene, "cube", n_rays=1_000_000, seed=42)
    v = 8.0
    s = 24.0
    assert stats["mean_chord"] == pytest.approx(4 * v / s, rel=0.01)


def test_chord_stats_deterministic():
    scene = make_scene([Volume(id="cube", shape=Box(half=(1, 1, 1)), material="silicon",
                               role="tally")])
    a = solid_chord_stats(scene, "cube", n_rays=10_000, seed=3)
    b = solid_chord_stats(scene, "cube", n_rays=10_000, seed=3)
    assert np.array_equal(a["chords"], b["chords"])


def test_vertical_beam_thin_chip_chord_is_thickness():
    chip = Box(half=(0.125, 0.25, 0.019))
    scene = make_scene([Volume(id="chip", shape=chip, material="silicon", role="tally")])
    stats = solid_chord_stats(scene, "chip", n_rays=20_000, seed=7, directions=(0, 0, -1))
    assert stats["mean_chord"] == pytest.approx(0.038, rel=1e-9)


def test_vertical_beam_projected_area_ratio():
    # horizontal chip face (5 x 2.5 mm) vs vertical chip edge (5 x 0.38 mm)
    horiz = Box(half=(0.125, 0.25, 0.019))
    vert = Box(half=(0.125, 0.019, 0.25))
    ratio_expect = (0.25 * 0.5) / (0.25 * 0.038)
    hits = []
    for shape in (horiz, vert):
        scene = make_scene([Volume(id="chip", shape=shape, material="silicon", role="tally")])
        stats = solid_chord_stats(scene, "chip", n_rays=400_000, seed=9,
                                  directions=(0, 0, -1))
        hits.append(stats["hit_fraction"] * stats["disc_area"])
    assert hits[0] / hits[1] == pytest.approx(ratio_expect, rel=0.05)


# --- fridge / site builders ---

@pytest.fixture(scope="module")
def fridge_scene():
    return build_site("surface", extra_volumes=build_fridge("vertical"))


def test_fridge_vacuum_flange_dimensions(fridge_scene):
    v = fridge_scene.volume_by_id("Vacuum Flange")
    assert v.material == "steel"
    assert v.shape.radius == pytest.approx(26.1)
    assert v.shape.thickness == pytest.approx(1.2)


def test_fridge_chip_count_and_mass(fridge_scene):
    chips = fridge_scene.tallies()
    assert len(chips) == 144
    for chip in chips:
        mass = fridge_scene.tally_mass_g(chip.id)
        assert mass == pytest.approx(0.25 * 0.5 * 0.038 * 2.33, rel=1e-12)


def test_fridge_orientation_mass_invariant():
    scene_v = build_site("surface", extra_volumes=build_fridge("vertical"))
    scene_h = build_site("surface", extra_volumes=build_fridge("horizontal"))
    assert len(scene_v.tallies()) == len(scene_h.tallies())
    assert scene_v.tally_mass_g() == pytest.approx(scene_h.tally_mass_g(), rel=1e-12)


def test_fridge_nesting_no_overlap_at_shell_midpoints(fridge_scene):
    # every volume's interior witness point resolves to the volume itself or
    # to a volume nested inside it (listed later); resolving to an earlier
    # volume would mean an illegal overlap
    order = {v.id: i for i, v in enumerate(fridge_scene.volumes)}
    for i, v in enumerate(fridge_scene.volumes):
        if v.id in ("lab cavity",):
            continue
        p = v.shape.point_inside()
        owner = "world"
        for cand in reversed(fridge_scene.volumes):
            if cand.shape.contains(p[None, :])[0]:
                owner = cand.id
                break
        assert owner != "world", v.id
        assert order[owner] >= i, (v.id, owner)


def test_fridge_axial_ray_crosses_stages(fridge_scene):
    ray = Ray(origin=(0, 0, 700), direction=(0, 0, -1))
    by_vol = fridge_scene.chord_by_volume(ray)
    # axial chords equal plate thicknesses
    assert by_vol["Vacuum Flange"] == pytest.approx(1.2, abs=1e-9)
    assert by_vol["Mixing Chamber Stage"] == pytest.approx(0.8, abs=1e-9)
    assert by_vol["4K Stage"] == pytest.approx(1.0, abs=1e-9)


def test_sul_site_overburden(fridge_scene):
    scene = build_site("SUL")
    ob = scene.volume_by_id("overburden")
    thickness = ob.shape.z_hi - ob.shape.z_lo
    areal = thickness * scene.densities["CaCO3"]
    assert areal == pytest.approx(1900 * 2.8)
    wall = scene.volume_by_id("concrete shell")
    assert scene.densities[wall.material] == pytest.approx(2.3)


def test_surface_site_has_no_overburden():
    scene = build_site("surface")
    assert all(v.role != "overburden" for v in scene.volumes)


def test_unknown_site_rejected():
    with pytest.raises(GeometryError):
        build_site("orbit")


def test_nai_detector_geometry():
    scene = build_site("surface", extra_volumes=build_nai())
    crystal = scene.volume_by_id("NaI crystal")
    assert crystal.shape.radius == pytest.approx(7.62 / 2)
    assert crystal.shape.thickness == pytest.approx(7.62)
    ray = Ray(origin=(0, 0, 690), direction=(0, 0, -1))
    chords = scene.chord_by_material(ray)
    assert chords["NaI"] == pytest.approx(7.62, abs=1e-9)


def test_scene_dump_rows(fridge_scene):
    rows = fridge_scene.dump_rows()
    ids = {r["id"] for r in rows}
    assert "Vacuum Flange" in ids and "chip 000" in ids
    chip_row = next(r for r in rows if r["id"] == "chip 000")
    assert chip_row["mass_g"] == pytest.approx(0.01107, rel=0.001)
