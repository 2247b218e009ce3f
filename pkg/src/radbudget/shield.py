"""Lead-shield evaluation: build brick shields around a scene, sweep wall
thickness against the residual ambient-gamma rate, probe sensitivity to
brick gaps, and score the shield's own radioactivity via the budget path.

The design criterion: a shield is thick enough once the residual gamma
rate falls below a few percent of the cosmic-muon rate in the chips, which
no amount of lead removes.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import transport
from .budget import generate_hiteff
from .geometry import Box, GeometryError, Scene, Volume
from .nuclides import AssayCatalog, specific_activity

INCH_CM = 2.54
BRICK_IN = (2.0, 4.0, 8.0)            # standard brick, thickness edge first
MUON_REFERENCE_RATE = 22e-3           # counts/s/g, vertical chips, sea level
CRITERION_FRACTION = 0.02
ZERO_HIT_LIMIT = 2.3                  # 90% Poisson upper limit on 0 observed


class ShieldError(GeometryError):
    pass


@dataclass(frozen=True)
class ShieldSpec:
    """A brick shield: wall thickness in inches (whole 2-inch brick
    layers), enclosing-box or split roof/skirt geometry, and seam gaps."""

    thickness_in: float = 4.0
    geometry: str = "box"             # "box" | "split"
    gap_mm: float = 0.0
    gap_pattern: str = "none"         # "none" | "aligned"
    material: str = "lead"
    support_cm: float = 0.5           # aluminum support layer thickness
    opening_band_cm: float = 8.0      # split geometry: open band height
    clearance_cm: float = 10.0        # interior margin around the payload

    def __post_init__(self):
        if self.thickness_in < 0:
            raise ShieldError("thickness must be >= 0")
        if self.thickness_in % BRICK_IN[0]:
            raise ShieldError(
                f"thickness must be whole {BRICK_IN[0]:g}-inch brick layers")
        if self.gap_mm < 0:
            raise ShieldError("gap width must be >= 0")
        if self.geometry not in ("box", "split"):
            raise ShieldError(f"unknown geometry {self.geometry!r}")
        if self.gap_pattern not in ("none", "aligned"):
            raise ShieldError(f"unknown gap pattern {self.gap_pattern!r}")

    @property
    def thickness_cm(self):
        return self.thickness_in * INCH_CM

    def seam_pitch_cm(self):
        """Spacing of aligned through-seams: one per brick width."""
        return BRICK_IN[1] * INCH_CM + self.gap_mm / 10.0

    def open_area_fraction(self):
        """Open fraction of each wall from aligned through-seams."""
        if self.gap_pattern == "none" or self.gap_mm == 0:
            return 0.0
        return (self.gap_mm / 10.0) / self.seam_pitch_cm()


def _bbox(volume):
    """Axis-aligned bounds of a shape (tight for boxes and cylinders)."""
    shape = volume.shape
    c = np.asarray(getattr(shape, "center", shape.point_inside()),
                   dtype=float)
    if isinstance(shape, Box):
        half = np.asarray(shape.half, dtype=float)
    elif hasattr(shape, "thickness") and hasattr(shape, "radius"):  # disc
        half = np.array([shape.radius, shape.radius, shape.thickness / 2])
    elif hasattr(shape, "height"):                                  # shell
        r = shape.outer_radius
        half = np.array([r, r, shape.height / 2])
    else:
        r = shape.bounding_radius()
        if not np.isfinite(r):
            raise ShieldError(f"volume {volume.id!r} is unbounded")
        half = np.full(3, r)
    return c - half, c + half

_EXCLUDED_IDS = ("overburden", "concrete shell", "lab cavity")


def _payload_bounds(scene):
    los, his = [], []
    for v in scene.volumes:
        if v.id in _EXCLUDED_IDS:
            continue
        lo, hi = _bbox(v)
        los.append(lo)
        his.append(hi)
    if not los:
        raise ShieldError("scene has no volumes to shield")
    return np.min(los, axis=0), np.max(his, axis=0)


def add_shield(scene, spec):
    """Return a new scene with the shield around the existing payload.

    The shield is an outer box of the shield material with an air interior
    (walls of uniform thickness on all six sides) over an aluminum support
    layer. Aligned gaps become vertical through-seams on every wall at the
    brick pitch; the split geometry opens a horizontal band of full wall
    height at the payload's vertical midplane."""
    if spec.thickness_in == 0:
        return scene
    lo, hi = _payload_bounds(scene)
    center = (lo + hi) / 2
    inner_half = (hi - lo) / 2 + spec.clearance_cm
    support_half = inner_half + spec.support_cm
    outer_half = support_half + spec.thickness_cm

    volumes = [
        Volume(id="shield wall", role="structure", material=spec.material,
               shape=Box(half=tuple(outer_half), center=tuple(center))),
        Volume(id="shield support", role="structure", material="aluminum",
               shape=Box(half=tuple(support_half), center=tuple(center))),
        Volume(id="shield interior", role="structure", material="air",
               shape=Box(half=tuple(inner_half), center=tuple(center))),
    ]
    volumes += _seam_volumes(spec, center, support_half, outer_half)
    volumes += _band_volumes(spec, center, support_half, outer_half)

    for v in scene.volumes:
        if not _compatible(v, center, inner_half, outer_half):
            raise ShieldError(
                f"shield walls would intersect volume {v.id!r}")

    # parents-first: shield volumes go after the site volumes and before
    # the payload they enclose
    insert = next((i for i, v in enumerate(scene.volumes)
                   if v.id not in _EXCLUDED_IDS), len(scene.volumes))
    merged = list(scene.volumes[:insert]) + volumes + list(scene.volumes[insert:])
    return Scene(merged, world=scene.world,
                 world_material=scene.world_material)


def _compatible(volume, center, inner_half, outer_half):
    """Existing volumes must sit inside the interior, fully outside the
    shield, or fully contain it."""
    lo, hi = _bbox(volume)
    c = np.asarray(center)
    if np.all(lo >= c - inner_half) and np.all(hi <= c + inner_half):
        return True
    if np.any(hi <= c - outer_half) or np.any(lo >= c + outer_half):
        return True
    corners = c + outer_half * np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return bool(np.all(volume.shape.contains(corners)))


def _seam_volumes(spec, center, support_half, outer_half):
    """Vertical air through-seams across each side wall at the brick pitch."""
    if spec.open_area_fraction() == 0.0:
        return []
    g = spec.gap_mm / 10.0
    pitch = spec.seam_pitch_cm()
    wall_mid = (support_half + outer_half) / 2
    wall_half = (outer_half - support_half) / 2
    out = []
    k = 0
    for axis, normal in ((0, 1), (1, 0)):      # seams on +-y and +-x walls
        n_seams = int(2 * support_half[axis] // pitch)
        offsets = (np.arange(n_seams) - (n_seams - 1) / 2) * pitch
        for sign in (-1, 1):
            for off in offsets:
                c = np.array(center, dtype=float)
                c[axis] += off
                c[normal] += sign * wall_mid[normal]
                half = np.empty(3)
                half[axis] = g / 2
                half[normal] = wall_half[normal]
                half[2] = support_half[2]
                out.append(Volume(
                    id=f"shield seam {k:03d}", role="structure",
                    material="air",
                    shape=Box(half=tuple(half), center=tuple(c))))
                k += 1
    return out


def _band_volumes(spec, center, support_half, outer_half):
    """Split geometry: open horizontal band through all four side walls."""
    if spec.geometry != "split":
        return []
    h = spec.opening_band_cm / 2
    wall_mid = (support_half + outer_half) / 2
    wall_half = (outer_half - support_half) / 2
    out = []
    for i, (axis, normal) in enumerate(((0, 1), (1, 0))):
        for j, sign in enumerate((-1, 1)):
            c = np.array(center, dtype=float)
            c[normal] += sign * wall_mid[normal]
            half = np.empty(3)
            half[axis] = support_half[axis]
            half[normal] = wall_half[normal]
            half[2] = h
            out.append(Volume(
                id=f"shield opening {2 * i + j}", role="structure",
                material="air",
                shape=Box(half=tuple(half), center=tuple(c))))
    return out


@dataclass
class SweepRow:
    thickness_in: float
    rate: float                      # counts/s/g (upper limit if is_limit)
    rate_err: float
    dose: float                      # keV/s/g
    ratio_unshielded: float
    ratio_muon: float
    passes: bool
    is_limit: bool = False


@dataclass
class SweepResult:
    rows: list
    muon_rate: float

    def row(self, thickness_in):
        for r in self.rows:
            if r.thickness_in == thickness_in:
                return r
        raise ShieldError(f"no sweep point at {thickness_in} in")

    def write(self, path):
        with open(Path(path), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["thickness_in", "rate", "rate_err", "dose",
                        "ratio_unshielded", "ratio_muon", "pass"])
            for r in self.rows:
                w.writerow([f"{r.thickness_in:g}", f"{r.rate:.6g}",
                            f"{r.rate_err:.6g}", f"{r.dose:.6g}",
                            f"{r.ratio_unshielded:.6g}",
                            f"{r.ratio_muon:.6g}", int(r.passes)])


def _net_mass_g(scene, volume_id):
    """Mass of a volume's own material: shape volume minus its immediate
    children (each child's full shape covers any deeper nesting)."""
    idx = next(i for i, v in enumerate(scene.volumes) if v.id == volume_id)
    vol = scene.volumes[idx]
    carved = vol.shape.volume()
    for j, parent in enumerate(scene._parent_idx):
        if parent == idx:
            carved -= scene.volumes[j].shape.volume()
    return carved * scene.densities[vol.material]


def sweep(scene, thicknesses_in, source, n, seed, spec=None,
          muon_rate=MUON_REFERENCE_RATE, radial_cut=None,
          threshold_keV=transport.DEFAULT_THRESHOLDS_KEV[0]):
    """Residual chip gamma rate vs shield thickness.

    Each thickness gets an independent transport run of the same source at
    the same statistics; zero scored weight reports the 90% Poisson upper
    limit instead of zero. The pass flag applies the design criterion
    rate <= 2% x muon_rate."""
    if not len(thicknesses_in):
        raise ShieldError("empty thickness list")
    if spec is None:
        spec = ShieldSpec()
    rows = []
    base_rate = None
    for t in sorted(thicknesses_in):
        shielded = add_shield(scene, replace(spec, thickness_in=t))
        result = transport.run(shielded, source, n, seed=seed,
                               radial_cut=radial_cut)
        rate, err = result.rate_per_g(threshold_keV)
        dose, _ = result.dose_per_g()
        is_limit = rate == 0.0
        if is_limit:
            mass = result.tally_mass_g.sum()
            rate = ZERO_HIT_LIMIT / (result.live_time_s * mass)
            err = 0.0
        if base_rate is None:
            base_rate = rate
        rows.append(SweepRow(
            thickness_in=t, rate=rate, rate_err=err, dose=dose,
            ratio_unshielded=rate / base_rate,
            ratio_muon=rate / muon_rate,
            passes=rate <= CRITERION_FRACTION * muon_rate,
            is_limit=is_limit))
    return SweepResult(rows=rows, muon_rate=muon_rate)


@dataclass
class GapRow:
    gap_mm: float
    rate: float
    rate_err: float
    increase_sigma: float            # (rate - baseline) / combined sigma
    increase_fraction: float         # (rate - baseline) / baseline
    negligible: bool


def gap_sensitivity(scene, spec, gaps_mm, n, seed, radial_cut=None,
                    source=None,
                    threshold_keV=transport.DEFAULT_THRESHOLDS_KEV[0]):
    """Rate vs brick-gap width at fixed thickness.

    An increase is negligible when it is below 2 combined sigma or below
    30% of the no-gap rate."""
    if any(g < 0 for g in gaps_mm):
        raise ShieldError("gap widths must be >= 0")
    if source is None:
        source = ambient_gamma_source()
    baseline = None
    rows = []
    for g in gaps_mm:
        pattern = "aligned" if g > 0 else "none"
        shielded = add_shield(scene, replace(spec, gap_mm=g,
                                             gap_pattern=pattern))
        result = transport.run(shielded, source, n, seed=seed,
                               radial_cut=radial_cut)
        rate, err = result.rate_per_g(threshold_keV)
        if baseline is None:
            baseline = (rate, err)
        delta = rate - baseline[0]
        sigma = math.hypot(err, baseline[1])
        n_sigma = delta / sigma if sigma > 0 else 0.0
        frac = delta / baseline[0] if baseline[0] > 0 else 0.0
        rows.append(GapRow(gap_mm=g, rate=rate, rate_err=err,
                           increase_sigma=n_sigma, increase_fraction=frac,
                           negligible=(n_sigma < 2.0 or frac < 0.30)))
    return rows


def ambient_gamma_source(catalog=None, radius_cm=145.0,
                         center=(0.0, 0.0, 140.0)):
    """Isotropic sphere source carrying the bundled ambient gamma flux,
    apportioned to each isotope's lines by emission intensity."""
    from ._data import load_json
    from .nuclides import gamma_lines
    if catalog is None:
        catalog = AssayCatalog.load()
    raw = load_json("ambient_flux.json")
    total = raw["total_flux_per_cm2_s"]
    min_keV = raw.get("min_line_keV", 0.0)
    lines = []
    for iso, share in raw["isotope_shares"].items():
        iso_lines = [(e, i) for e, i in gamma_lines(iso, catalog)
                     if e >= min_keV]
        weight = sum(i for _, i in iso_lines)
        for e, i in iso_lines:
            lines.append((e, total * share * i / weight))
    lines.sort()
    return transport.GammaSphereSpec(lines=tuple(lines), radius_cm=radius_cm,
                                     center=center)


def shield_self_activity(scene, spec, catalog=None, sources=None,
                         volume_id="shield wall", n=100_000, seed=0,
                         threshold_keV=transport.DEFAULT_THRESHOLDS_KEV[0]):
    """Chip rate from the shield's own radioactivity, via the budget path.

    Generates a hit/dose efficiency for decays in the innermost brick
    layer of the named shield volume and multiplies by that layer's mass
    and the assayed specific activities. Emissions from deeper bricks are
    self-shielded to irrelevance, so the innermost layer carries the whole
    contribution. Returns (rate counts/s/g, dose keV/s/g)."""
    if catalog is None:
        catalog = AssayCatalog.load()
    shielded = add_shield(scene, spec)
    vol = shielded.volume_by_id(volume_id)
    material = vol.material
    if sources is None:
        sources = tuple(catalog.materials[material].activities_mBq_per_kg)
    sample_id = volume_id
    if volume_id == "shield wall" and spec.thickness_in > BRICK_IN[0]:
        # carve the innermost one-brick lead layer out of the full wall
        support = shielded.volume_by_id("shield support")
        layer_half = np.asarray(support.shape.half) + BRICK_IN[0] * INCH_CM
        layer = Volume(id="shield inner layer", role="structure",
                       material=material,
                       shape=Box(half=tuple(layer_half),
                                 center=support.shape.center))
        idx = shielded.volumes.index(support)
        volumes = list(shielded.volumes)
        volumes.insert(idx, layer)
        shielded = Scene(volumes, world=shielded.world,
                         world_material=shielded.world_material)
        sample_id = "shield inner layer"
    mass_kg = _net_mass_g(shielded, sample_id) / 1000.0
    rate = dose = 0.0
    for i, source in enumerate(sources):
        activity = specific_activity(material, source, catalog)
        if activity == 0.0:
            continue
        entry = generate_hiteff(shielded, sample_id, source, n, seed + i,
                                catalog=catalog, threshold_keV=threshold_keV)
        rate += mass_kg * activity * entry["hit"]
        dose += mass_kg * activity * entry["dose"]
    return rate, dose
