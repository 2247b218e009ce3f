"""Constructive geometry with exact ray tracing.

Axis-aligned shapes (cylinders along z) with rigid translations, assembled
into nested Scenes: laboratory, overburden, dilution refrigerator, shield,
detectors, and the silicon chip array. Rays are traced analytically against
quadric/planar surfaces, producing ordered per-material path segments whose
lengths satisfy chord invariants to 1e-9 relative.

Scenes are strictly nested: every volume lies entirely inside the material
region of the volumes listed before it. Material at a point is the material
of the innermost (last listed) volume containing it. Each volume records the
material of its immediate surroundings ("parent material"), which lets
transport express optical depth along a ray as a sum of per-volume chord
contributions without assembling ragged segment lists.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ._data import load_json

_EPS = 1e-12
_BIG = 1e9


def _as_points(p):
    p = np.asarray(p, dtype=float)
    return p.reshape(-1, 3), p.ndim == 1


def _slab_interval(lo, hi, o, d):
    """Entry/exit parameter of an axis slab lo <= coord <= hi."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - o) / d
        t1 = (hi - o) / d
    enter = np.where(d != 0, np.minimum(t0, t1), np.where((o >= lo) & (o <= hi), -_BIG, _BIG))
    exit_ = np.where(d != 0, np.maximum(t0, t1), np.where((o >= lo) & (o <= hi), _BIG, -_BIG))
    return enter, exit_


def _circle_interval(ox, oy, dx, dy, r):
    """Entry/exit parameter of an infinite cylinder x²+y² <= r² along z."""
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - r * r
    disc = b * b - a * c
    inside_parallel = (a < _EPS) & (c <= 0)
    miss = (disc < 0) | ((a < _EPS) & (c > 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / a
        t1 = (-b + sq) / a
    enter = np.where(inside_parallel, -_BIG, np.where(miss, _BIG, t0))
    exit_ = np.where(inside_parallel, _BIG, np.where(miss, -_BIG, t1))
    return enter, exit_


class Shape:
    """Base for axis-aligned solids. Subclasses provide containment tests,
    ray/solid intersection intervals, volume, surface area, and a point
    guaranteed to lie inside the solid (used for nesting resolution)."""

    def intervals(self, origin, direction):
        """Ray-solid intersection as (starts, ends), arrays (N, k).

        Empty intersections have start >= end. k is 1 for convex solids,
        2 for the hollow cylindrical shell.
        """
        raise NotImplementedError

    def contains(self, points):
        raise NotImplementedError

    def volume(self):
        raise NotImplementedError

    def point_inside(self):
        raise NotImplementedError

    def bounding_radius(self):
        """Radius of a sphere about point_inside-independent centroid that
        encloses the solid; used for acceptance cuts and chord sampling."""
        raise NotImplementedError


@dataclass(frozen=True)
class Disc(Shape):
    """Solid cylinder along z: radius, thickness, centered at `center`."""

    radius: float
    thickness: float
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.radius <= 0 or self.thickness <= 0:
            raise ValueError("Disc dimensions must be > 0")

    @property
    def z_range(self):
        cz = self.center[2]
        return cz - self.thickness / 2, cz - self.thickness / 2 + self.thickness

    def intervals(self, o, d):
        zlo, zhi = self.z_range
        e1, x1 = _slab_interval(zlo, zhi, o[:, 2], d[:, 2])
        e2, x2 = _circle_interval(o[:, 0] - self.center[0], o[:, 1] - self.center[1],
                                  d[:, 0], d[:, 1], self.radius)
        return np.maximum(e1, e2)[:, None], np.minimum(x1, x2)[:, None]

    def contains(self, p):
        zlo, zhi = self.z_range
        r2 = (p[..., 0] - self.center[0]) ** 2 + (p[..., 1] - self.center[1]) ** 2
        return (r2 <= self.radius ** 2) & (p[..., 2] >= zlo) & (p[..., 2] <= zhi)

    def volume(self):
        return np.pi * self.radius ** 2 * self.thickness

    def surface_area(self):
        return 2 * np.pi * self.radius ** 2 + 2 * np.pi * self.radius * self.thickness

    def point_inside(self):
        return np.array(self.center, dtype=float)

    def bounding_radius(self):
        return np.hypot(self.radius, self.thickness / 2)


@dataclass(frozen=True)
class CylShell(Shape):
    """Hollow cylinder wall: inner radius, radial thickness, height."""

    inner_radius: float
    thickness: float
    height: float
    center: tuple = (0.0, 0.0, 0.0)   # geometric center of the shell

    def __post_init__(self):
        if min(self.inner_radius, self.thickness, self.height) <= 0:
            raise ValueError("CylShell dimensions must be > 0")

    @property
    def outer_radius(self):
        return self.inner_radius + self.thickness

    @property
    def z_range(self):
        cz = self.center[2]
        return cz - self.height / 2, cz + self.height / 2

    def intervals(self, o, d):
        zlo, zhi = self.z_range
        se, sx = _slab_interval(zlo, zhi, o[:, 2], d[:, 2])
        ox, oy = o[:, 0] - self.center[0], o[:, 1] - self.center[1]
        oe, oxit = _circle_interval(ox, oy, d[:, 0], d[:, 1], self.outer_radius)
        ie, ixit = _circle_interval(ox, oy, d[:, 0], d[:, 1], self.inner_radius)
        # solid-outer interval clipped to the z slab
        a0, a1 = np.maximum(oe, se), np.minimum(oxit, sx)
        # subtract the inner bore: up to two residual intervals
        s1, e1 = a0, np.minimum(a1, ie)
        s2, e2 = np.maximum(a0, ixit), a1
        return np.stack([s1, s2], axis=1), np.stack([e1, e2], axis=1)

    def contains(self, p):
        zlo, zhi = self.z_range
        r2 = (p[..., 0] - self.center[0]) ** 2 + (p[..., 1] - self.center[1]) ** 2
        return ((r2 >= self.inner_radius ** 2) & (r2 <= self.outer_radius ** 2)
                & (p[..., 2] >= zlo) & (p[..., 2] <= zhi))

    def volume(self):
        return np.pi * (self.outer_radius ** 2 - self.inner_radius ** 2) * self.height

    def point_inside(self):
        r = 0.5 * (self.inner_radius + self.outer_radius)
        return np.array([self.center[0] + r, self.center[1], self.center[2]])

    def bounding_radius(self):
        return np.hypot(self.outer_radius, self.height / 2)


@dataclass(frozen=True)
class Box(Shape):
    """Axis-aligned box given by half-extents about `center`."""

    half: tuple
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.half) <= 0:
            raise ValueError("Box half-extents must be > 0")

    def intervals(self, o, d):
        enter = np.full(o.shape[0], -_BIG)
        exit_ = np.full(o.shape[0], _BIG)
        for ax in range(3):
            lo = self.center[ax] - self.half[ax]
            hi = self.center[ax] + self.half[ax]
            e, x = _slab_interval(lo, hi, o[:, ax], d[:, ax])
            enter = np.maximum(enter, e)
            exit_ = np.minimum(exit_, x)
        return enter[:, None], exit_[:, None]

    def contains(self, p):
        ok = np.ones(p.shape[:-1], dtype=bool)
        for ax in range(3):
            ok &= np.abs(p[..., ax] - self.center[ax]) <= self.half[ax]
        return ok

    def volume(self):
        return 8 * self.half[0] * self.half[1] * self.half[2]

    def surface_area(self):
        a, b, c = self.half
        return 8 * (a * b + b * c + c * a)

    def point_inside(self):
        return np.array(self.center, dtype=float)

    def bounding_radius(self):
        return float(np.linalg.norm(self.half))


@dataclass(frozen=True)
class Slab(Shape):
    """Horizontal slab bounded only in z (laterally unbounded)."""

    z_lo: float
    z_hi: float

    def __post_init__(self):
        if self.z_hi <= self.z_lo:
            raise ValueError("Slab z-range must be increasing")

    def intervals(self, o, d):
        e, x = _slab_interval(self.z_lo, self.z_hi, o[:, 2], d[:, 2])
        return e[:, None], x[:, None]

    def contains(self, p):
        return (p[..., 2] >= self.z_lo) & (p[..., 2] <= self.z_hi)

    def volume(self):
        return np.inf

    def point_inside(self):
        return np.array([0.0, 0.0, 0.5 * (self.z_lo + self.z_hi)])

    def bounding_radius(self):
        return np.inf


@dataclass(frozen=True)
class Sphere(Shape):
    radius: float
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("Sphere radius must be > 0")

    def intervals(self, o, d):
        rel = o - np.asarray(self.center)
        b = np.einsum("ij,ij->i", rel, d)
        c = np.einsum("ij,ij->i", rel, rel) - self.radius ** 2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        enter = np.where(disc >= 0, -b - sq, _BIG)
        exit_ = np.where(disc >= 0, -b + sq, -_BIG)
        return enter[:, None], exit_[:, None]

    def contains(self, p):
        rel = p - np.asarray(self.center)
        return np.einsum("...i,...i->...", rel, rel) <= self.radius ** 2

    def volume(self):
        return 4 / 3 * np.pi * self.radius ** 3

    def surface_area(self):
        return 4 * np.pi * self.radius ** 2

    def point_inside(self):
        return np.array(self.center, dtype=float)

    def bounding_radius(self):
        return self.radius


@dataclass(frozen=True)
class Volume:
    id: str
    shape: Shape
    material: str
    role: str = "structure"  # structure | tally | source-region | shield | overburden

    def __post_init__(self):
        valid = {"structure", "tally", "source-region", "shield", "overburden"}
        if self.role not in valid:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n < _EPS:
            raise ValueError("degenerate ray direction")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", d / n)


@dataclass(frozen=True)
class PathSegment:
    volume_id: str
    material: str
    t_enter: float
    t_exit: float

    @property
    def length(self):
        return self.t_exit - self.t_enter


class GeometryError(ValueError):
    pass


def _load_materials():
    raw = load_json("materials.json")
    densities = {name: m["density"] for name, m in raw["materials"].items()}
    compositions = {name: m["composition"] for name, m in raw["materials"].items()}
    elements = raw["elements"]
    return densities, compositions, elements


class Scene:
    """Ordered, nested volume list over a world box of a single fill material.

    Volumes must be listed parents-first; the innermost volume containing a
    point decides the material there.
    """

    def __init__(self, volumes, world, world_material="air", densities=None):
        self.volumes = list(volumes)
        self.world = world
        self.world_material = world_material
        if densities is None:
            densities, _, _ = _load_materials()
        self.densities = densities
        for v in self.volumes:
            if v.material not in self.densities:
                raise GeometryError(f"volume {v.id!r}: unknown material {v.material!r}")
        self._parent_idx = self._resolve_parents()
        self._parents = [
            self.volumes[j].material if j >= 0 else self.world_material
            for j in self._parent_idx]

    def _own_material_point(self, i):
        """A point inside volume i's shape but outside every nested later
        volume, i.e. in the volume's own material. For hollow volumes (a
        shield wall around an air interior, say) the shape's canonical
        interior point can sit inside a child, so probe by rejection."""
        v = self.volumes[i]
        point = v.shape.point_inside()
        holes = [w.shape for w in self.volumes[i + 1:]
                 if v.shape.contains(w.shape.point_inside()[None, :])[0]]
        if not any(h.contains(point[None, :])[0] for h in holes):
            return point
        rng = np.random.default_rng(len(self.volumes) * 1000 + i)
        center = np.asarray(getattr(v.shape, "center", point), dtype=float)
        R = v.shape.bounding_radius()
        for _ in range(200):
            cand = center + rng.uniform(-R, R, (256, 3))
            keep = v.shape.contains(cand)
            for h in holes:
                keep &= ~h.contains(cand)
            good = cand[keep]
            if good.shape[0]:
                return good[0]
        raise GeometryError(
            f"volume {v.id!r} has no samplable material of its own")

    def _resolve_parents(self):
        """Index of the volume immediately surrounding each volume: the
        innermost prior volume containing a point of its own material
        (-1 when that is the world fill)."""
        parents = []
        for i in range(len(self.volumes)):
            point = self._own_material_point(i)
            parent = -1
            for j in range(i - 1, -1, -1):
                if self.volumes[j].shape.contains(point[None, :])[0]:
                    parent = j
                    break
            parents.append(parent)
        return parents

    def parent_material(self, volume_id):
        for v, p in zip(self.volumes, self._parents):
            if v.id == volume_id:
                return p
        raise GeometryError(f"no volume {volume_id!r}")

    def with_volumes(self, extra, prepend=False):
        volumes = (list(extra) + self.volumes) if prepend else (self.volumes + list(extra))
        return Scene(volumes, self.world, self.world_material, self.densities)

    def volume_by_id(self, volume_id):
        for v in self.volumes:
            if v.id == volume_id:
                return v
        raise GeometryError(f"no volume {volume_id!r}")

    def tallies(self):
        return [v for v in self.volumes if v.role == "tally"]

    def tally_mass_g(self, volume_id=None):
        """Mass of one tally (or all tallies) in grams: volume x density."""
        if volume_id is not None:
            v = self.volume_by_id(volume_id)
            return v.shape.volume() * self.densities[v.material]
        return sum(v.shape.volume() * self.densities[v.material] for v in self.tallies())

    def material_at(self, points):
        p, single = _as_points(points)
        out = np.zeros(p.shape[0], dtype=int)  # index into material list, 0=world
        mats = [self.world_material] + [v.material for v in self.volumes]
        for i, v in enumerate(self.volumes):
            inside = v.shape.contains(p)
            out[inside] = i + 1
        names = np.array(mats, dtype=object)[out]
        return names[0] if single else names

    def trace(self, ray):
        """Ordered path segments through the world-bounds chord of a ray."""
        o = ray.origin[None, :]
        d = ray.direction[None, :]
        we, wx = self.world.intervals(o, d)
        t_lo = max(float(we[0, 0]), 0.0)
        t_hi = float(wx[0, 0])
        if t_hi <= t_lo:
            return []
        ts = {t_lo, t_hi}
        for v in self.volumes:
            starts, ends = v.shape.intervals(o, d)
            for s, e in zip(starts[0], ends[0]):
                if e > s:
                    for t in (s, e):
                        if t_lo < t < t_hi:
                            ts.add(float(t))
        ts = sorted(ts)
        segments = []
        for a, b in zip(ts[:-1], ts[1:]):
            if b - a <= 0:
                continue
            mid = ray.origin + 0.5 * (a + b) * ray.direction
            vol_id, mat = "world", self.world_material
            for v in reversed(self.volumes):
                if v.shape.contains(mid[None, :])[0]:
                    vol_id, mat = v.id, v.material
                    break
            segments.append(PathSegment(vol_id, mat, a, b))
        return segments

    def chord_by_material(self, ray):
        totals = {}
        for seg in self.trace(ray):
            totals[seg.material] = totals.get(seg.material, 0.0) + seg.length
        return totals

    def chord_by_volume(self, ray):
        totals = {}
        for seg in self.trace(ray):
            totals[seg.volume_id] = totals.get(seg.volume_id, 0.0) + seg.length
        return totals

    def dump_rows(self):
        """Resolved volume list as rows (id, shape, dims, material, mass_g)."""
        rows = []
        for v in self.volumes:
            shape = v.shape
            dims = {k: val for k, val in shape.__dict__.items()}
            vol = shape.volume()
            mass = vol * self.densities[v.material] if np.isfinite(vol) else float("nan")
            rows.append({
                "id": v.id,
                "shape": type(shape).__name__,
                "dims": json.dumps(dims),
                "material": v.material,
                "role": v.role,
                "mass_g": mass,
            })
        return rows


def solid_chord_stats(scene, tally_id, n_rays, seed, directions=None):
    """Chord-length sample for a tally under an isotropic uniform ray flux.

    Rays are launched from a bounding sphere with cosine-law inward
    directions (uniform isotropic interior flux); chords through the tally
    are returned along with the hit fraction. With `directions` given
    (fixed unit vector), rays arrive as a parallel uniform beam instead.
    Mean chord under the isotropic flux satisfies Cauchy's 4V/S.
    """
    v = scene.volume_by_id(tally_id)
    rng = np.random.default_rng(seed)
    center = v.shape.point_inside()
    R = v.shape.bounding_radius() * 1.5
    if directions is None:
        # uniform points on sphere, cosine-law inward directions
        u = rng.normal(size=(n_rays, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        origins = center + R * u
        # cosine law about inward normal -n = -u
        normal = -u
        t1 = np.cross(normal, np.where(np.abs(normal[:, 2:3]) < 0.9, [0, 0, 1.0], [1.0, 0, 0]))
        t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
        t2 = np.cross(normal, t1)
        phi = rng.uniform(0, 2 * np.pi, n_rays)
        mu = np.sqrt(rng.uniform(0, 1, n_rays))  # cos theta ~ sqrt(U)
        s = np.sqrt(1 - mu ** 2)
        dirs = (mu[:, None] * normal
                + (s * np.cos(phi))[:, None] * t1 + (s * np.sin(phi))[:, None] * t2)
    else:
        d = np.asarray(directions, dtype=float)
        d = d / np.linalg.norm(d)
        # uniform disc of impact parameters perpendicular to the beam
        t1 = np.cross(d, [0, 0, 1.0] if abs(d[2]) < 0.9 else [1.0, 0, 0])
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(d, t1)
        r = R * np.sqrt(rng.uniform(0, 1, n_rays))
        phi = rng.uniform(0, 2 * np.pi, n_rays)
        offsets = r[:, None] * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
        origins = center + offsets - 2 * R * d
        dirs = np.broadcast_to(d, (n_rays, 3)).copy()
    starts, ends = v.shape.intervals(origins, dirs)
    chords = np.clip(ends - starts, 0, None).sum(axis=1)
    hit = chords > 0
    return {
        "chords": chords[hit],
        "hit_fraction": hit.mean(),
        "mean_chord": chords[hit].mean() if hit.any() else 0.0,
        "disc_area": np.pi * R ** 2,
    }


# ---------------------------------------------------------------------------
# Scene builders

#: Stage discs: vertical offset of the disc top below the flange top, radius,
#: thickness, material (mm).
FRIDGE_STAGES = [
    ("Vacuum Flange", 0.0, 261.0, 12.0, "steel"),
    ("50K Stage", 191.0, 223.5, 12.0, "aluminum"),
    ("4K Stage", 480.0, 176.0, 10.0, "copper"),
    ("Still Stage", 730.0, 153.0, 9.0, "copper"),
    ("Cold Plate Stage", 829.0, 140.0, 6.0, "copper"),
    ("Mixing Chamber Stage", 997.0, 142.3, 8.0, "copper"),
]

#: Cans: vertical offset of the can top, radius, height, wall thickness,
#: material (mm). Each can gets a side wall and a bottom plate.
FRIDGE_CANS = [
    ("Upper Vacuum Can", 12.0, 230.0, 486.0, 3.2, "aluminum"),
    ("Lower Vacuum Can", 498.0, 207.65, 840.0, 3.2, "aluminum"),
    ("Upper 50K Can", 203.0, 204.0, 286.5, 1.0, "aluminum"),
    ("Lower 50K Can", 489.5, 182.0, 793.0, 1.0, "aluminum"),
    ("4K Can", 490.0, 160.0, 774.0, 1.5, "aluminum"),
    ("Still Can", 739.0, 151.5, 500.0, 0.5, "copper"),
]

CHIP_DIMS_CM = (0.25, 0.5, 0.038)    # face width, face height, thickness
SILICON_DENSITY = 2.33

#: Default flange-top height above the laboratory floor (cm).
FRIDGE_TOP_CM = 250.0

LAB_HALF_XY = 400.0   # 8 m square lab
LAB_HEIGHT = 400.0    # 4 m tall
CONCRETE_T = 120.0
OVERBURDEN_T = 1900.0


def _chip_half(orientation):
    w, h, t = (d / 2 for d in CHIP_DIMS_CM)
    if orientation == "vertical":    # face normal along the horizon (y)
        return (w, t, h)
    if orientation == "horizontal":  # face normal toward zenith (z)
        return (w, h, t)
    raise GeometryError(f"unknown chip orientation {orientation!r}")


def build_fridge(orientation="vertical", top_cm=FRIDGE_TOP_CM):
    """Dilution-refrigerator volume list (no world), flange top at `top_cm`.

    Contains the stage discs and cans, interior vacuum regions, the
    experiment cylinder, cold-finger plate, and 16 packages x 9 chips = 144
    silicon tally volumes of 2.5 x 5 x 0.38 mm3.
    """
    mm = 0.1  # -> cm
    volumes = []

    # interior vacuum: fills inside each vacuum can section (parents first)
    for name, off, r, h, t, _m in FRIDGE_CANS:
        if "Vacuum" not in name:
            continue
        z_top = top_cm - off * mm
        volumes.append(Volume(
            id=f"{name} interior", role="structure", material="vacuum",
            shape=Disc(radius=(r - t) * mm, thickness=h * mm,
                       center=(0, 0, z_top - h * mm / 2)),
        ))

    for name, off, r, h, t, mat in FRIDGE_CANS:
        z_top = top_cm - off * mm
        volumes.append(Volume(
            id=name, role="structure", material=mat,
            shape=CylShell(inner_radius=(r - t) * mm, thickness=t * mm,
                           height=h * mm, center=(0, 0, z_top - h * mm / 2)),
        ))
        if not name.startswith("Upper"):
            # upper can sections are closed below by the next stage disc
            volumes.append(Volume(
                id=f"{name} bottom", role="structure", material=mat,
                shape=Disc(radius=(r - t) * mm, thickness=t * mm,
                           center=(0, 0, z_top - h * mm + t * mm / 2)),
            ))

    for name, off, r, t, mat in FRIDGE_STAGES:
        z_top = top_cm - off * mm
        volumes.append(Volume(
            id=name, role="structure", material=mat,
            shape=Disc(radius=r * mm, thickness=t * mm,
                       center=(0, 0, z_top - t * mm / 2)),
        ))

    # cold-finger plate: 6.35 mm copper, 18 cm per side, hanging vertically
    # below the MXC stage
    mxc_bottom = top_cm - 997.0 * mm - 8.0 * mm
    plate_top = mxc_bottom - 0.5
    plate_center_z = plate_top - 9.0
    volumes.append(Volume(
        id="Experiment shield", role="structure", material="aluminum",
        shape=CylShell(inner_radius=18.01 / 2, thickness=1.59, height=19.0,
                       center=(0, 0, plate_top - 9.5)),
    ))
    volumes.append(Volume(
        id="Experiment stage", role="structure", material="copper",
        shape=Box(half=(9.0, 0.3175, 9.0), center=(0, 0, plate_center_z)),
    ))

    # 16 packages (4x4 on the plate face), each 3x3x2 cm copper with 0.5 cm
    # walls holding a 0.5 mm polyimide interposer and 9 chips
    chip_half = _chip_half("vertical")
    pkg_y = 0.3175 + 1.0  # flush against the plate face
    ids = 0
    for gx in range(4):
        for gz in range(4):
            px = -6.75 + gx * 4.5
            pz = plate_center_z - 6.75 + gz * 4.5
            pid = f"Package {gx}{gz}"
            volumes.append(Volume(
                id=pid, role="structure", material="copper",
                shape=Box(half=(1.5, 1.0, 1.5), center=(px, pkg_y, pz)),
            ))
            volumes.append(Volume(
                id=f"{pid} cavity", role="structure", material="vacuum",
                shape=Box(half=(1.0, 0.5, 1.0), center=(px, pkg_y, pz)),
            ))
            # interposer board directly behind the bump-bonded chips
            # (0.1 mm standoff)
            volumes.append(Volume(
                id=f"{pid} interposer", role="structure", material="polyimide",
                shape=Box(half=(1.0, 0.025, 1.0),
                          center=(px, pkg_y + 0.054, pz)),
            ))
            for cx in range(3):
                for cz in range(3):
                    ccx = px - 0.6 + cx * 0.6
                    ccz = pz - 0.6 + cz * 0.6
                    if orientation == "vertical":
                        half = _chip_half("vertical")
                        center = (ccx, pkg_y, ccz)
                    else:
                        half = _chip_half("horizontal")
                        center = (ccx, pkg_y, ccz)
                    volumes.append(Volume(
                        id=f"chip {ids:03d}", role="tally", material="silicon",
                        shape=Box(half=half, center=center),
                    ))
                    ids += 1
    assert ids == 144
    return volumes


def build_nai(center=(0.0, 0.0, 150.0)):
    """3-inch NaI(Tl) detector: crystal + alumina reflector + aluminum case."""
    d = 7.62
    cx, cy, cz = center
    volumes = [
        Volume(id="NaI case", role="structure", material="aluminum",
               shape=Disc(radius=d / 2 + 0.05 + 0.08, thickness=d + 2 * 0.13,
                          center=(cx, cy, cz))),
        Volume(id="NaI reflector", role="structure", material="alumina",
               shape=Disc(radius=d / 2 + 0.05, thickness=d + 2 * 0.05,
                          center=(cx, cy, cz))),
        Volume(id="NaI crystal", role="tally", material="NaI",
               shape=Disc(radius=d / 2, thickness=d, center=(cx, cy, cz))),
    ]
    return volumes


def build_site(site, extra_volumes=(), world_material="air"):
    """Laboratory scene: surface (open lab box) or SUL (concrete + overburden).

    `extra_volumes` (e.g. from build_fridge or build_nai) are appended after
    the site volumes, preserving nesting order.
    """
    if site == "surface":
        world = Box(half=(LAB_HALF_XY + 600, LAB_HALF_XY + 600, 400.0),
                    center=(0, 0, 300.0))
        volumes = []
    elif site == "SUL":
        half = OVERBURDEN_T  # 38 m plane covers the overburden footprint
        world = Box(half=(half, half, (LAB_HEIGHT + CONCRETE_T * 2 + OVERBURDEN_T) / 2 + 1),
                    center=(0, 0, (LAB_HEIGHT + CONCRETE_T * 2 + OVERBURDEN_T) / 2
                            - CONCRETE_T - 0.5))
        shell = Box(half=(LAB_HALF_XY + CONCRETE_T, LAB_HALF_XY + CONCRETE_T,
                          LAB_HEIGHT / 2 + CONCRETE_T),
                    center=(0, 0, LAB_HEIGHT / 2))
        cavity = Box(half=(LAB_HALF_XY, LAB_HALF_XY, LAB_HEIGHT / 2),
                     center=(0, 0, LAB_HEIGHT / 2))
        volumes = [
            Volume(id="overburden", role="overburden", material="CaCO3",
                   shape=Slab(z_lo=LAB_HEIGHT + CONCRETE_T,
                              z_hi=LAB_HEIGHT + CONCRETE_T + OVERBURDEN_T)),
            Volume(id="concrete shell", role="structure", material="concrete",
                   shape=shell),
            Volume(id="lab cavity", role="structure", material="air", shape=cavity),
        ]
    else:
        raise GeometryError(f"unknown site {site!r} (expected 'surface' or 'SUL')")
    return Scene(volumes + list(extra_volumes), world=world,
                 world_material=world_material)
