"""Command-line front end for the toolkit.

Subcommands cover scene inspection, transport runs, spectrum fits,
radioactivity budgets, shield sweeps, hit-efficiency generation, and assay
lookups. Every run that writes an output file also writes a JSON run
manifest (``<output>.manifest.json``) recording the command, seed, input
hashes, and output hashes, so artifacts can be traced and reruns audited.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
"""

import argparse
import csv
import datetime
import hashlib
import io
import json
import sys
import warnings
from pathlib import Path

from . import __version__, budget, geometry, shield, transport
from .nuclides import AssayCatalog, MissingAssayWarning
from .response import ResponseParams, Spectrum
from .specfit import FitProblem, fit


class CliError(Exception):
    """Input validation failure (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(args, inputs, outputs):
    """RunManifest JSON next to the first output file."""
    if not outputs:
        return
    manifest = {
        "command": args._argv,
        "subcommand": args.command,
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    path = Path(str(outputs[0]) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _load_config(args):
    if getattr(args, "config", None) is None:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    return json.loads(path.read_text())


def _build_scene(args):
    extra = geometry.build_fridge(orientation=args.orientation)
    scene = geometry.build_site(args.site, extra)
    if getattr(args, "shield_in", 0.0):
        scene = shield.add_shield(
            scene, shield.ShieldSpec(thickness_in=args.shield_in))
    return scene


def _parse_radial_cut(text):
    if text is None:
        return None
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise CliError("radial cut must be x,y,z,radius_cm")
    return (tuple(parts[:3]), parts[3])


def _emit(rows, header, args, default_name):
    """Write dict rows as CSV or JSON to --out (or stdout); returns outputs."""
    fmt = getattr(args, "format", "csv")
    if fmt == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    if args.out is None:
        sys.stdout.write(text)
        return []
    out = Path(args.out)
    out.write_text(text)
    return [out]


def _fmt(value):
    return f"{value:.10g}" if isinstance(value, float) else value


# ---------------------------------------------------------------------------
# subcommand handlers: return (input paths, output paths)

def _cmd_scene(args):
    scene = _build_scene(args)
    rows = [
        {"id": v.id, "role": v.role, "material": v.material,
         "volume_cm3": _fmt(float(v.shape.volume())),
         "mass_g": _fmt(float(v.shape.volume() * scene.densities[v.material]))}
        for v in scene.volumes]
    header = ["id", "role", "material", "volume_cm3", "mass_g"]
    return [], _emit(rows, header, args, "scene.csv")


def _cmd_assay(args):
    catalog = AssayCatalog.load()
    if args.action == "list":
        rows = [{"material": m} for m in sorted(catalog.materials)]
        return [], _emit(rows, ["material"], args, "assays.csv")
    if args.material is None:
        raise CliError("assay show requires a material name")
    if args.material not in catalog.materials:
        known = ", ".join(sorted(catalog.materials))
        raise CliError(f"no assay for material {args.material!r} "
                       f"(known: {known})")
    assay = catalog.materials[args.material]
    rows = [
        {"material": args.material, "source": src,
         "activity_mBq_per_kg": _fmt(float(act))}
        for src, act in sorted(assay.activities_mBq_per_kg.items())]
    return [], _emit(rows, ["material", "source", "activity_mBq_per_kg"],
                     args, "assay.csv")


def _cmd_budget(args):
    catalog = AssayCatalog.load()
    table = budget.HitEfficiencyTable.load()
    inputs = []
    if args.inventory is None:
        inventory = budget.load_inventory()
    else:
        path = Path(args.inventory)
        if not path.exists():
            raise CliError(f"inventory file not found: {path}")
        inventory = budget.load_inventory(path)
        inputs.append(path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MissingAssayWarning)
        report = budget.total_budget(inventory, catalog, table)
    if args.out is None:
        raise CliError("budget requires --out for the CSV report")
    report.write(args.out)
    return inputs, [Path(args.out)]


def _cmd_transport(args):
    scene = _build_scene(args)
    if args.source == "muons":
        source = (transport.surface_muon_source() if args.site == "surface"
                  else transport.sul_muon_source())
    else:
        source = shield.ambient_gamma_source()
    result = transport.run(scene, source, args.primaries, seed=args.seed,
                           radial_cut=_parse_radial_cut(args.radial_cut))
    rows = []
    for thr in result.thresholds_keV:
        rate, err = result.rate_per_g(thr)
        dose, derr = result.dose_per_g()
        rows.append({"threshold_keV": _fmt(float(thr)),
                     "rate_per_g": _fmt(rate), "rate_err": _fmt(err),
                     "dose_per_g": _fmt(dose), "dose_err": _fmt(derr),
                     "n_primaries": result.n_primaries,
                     "n_transported": result.n_transported})
    header = ["threshold_keV", "rate_per_g", "rate_err", "dose_per_g",
              "dose_err", "n_primaries", "n_transported"]
    return [], _emit(rows, header, args, "transport.csv")


def _cmd_hiteff(args):
    scene = _build_scene(args)
    catalog = AssayCatalog.load()
    try:
        entry = budget.generate_hiteff(scene, args.volume, args.source,
                                       args.primaries, args.seed,
                                       catalog=catalog)
    except geometry.GeometryError as exc:
        raise CliError(str(exc))
    rows = [{"volume": args.volume, "source": args.source,
             "n_decays": entry["n_decays"],
             "hit": _fmt(entry["hit"]), "hit_err": _fmt(entry["hit_err"]),
             "dose": _fmt(entry["dose"]), "dose_err": _fmt(entry["dose_err"])}]
    header = ["volume", "source", "n_decays", "hit", "hit_err", "dose",
              "dose_err"]
    return [], _emit(rows, header, args, "hiteff.csv")


def _cmd_sweep(args):
    scene = _build_scene(args)
    thicknesses = [float(t) for t in args.thicknesses.split(",")]
    spec = shield.ShieldSpec(
        thickness_in=thicknesses[0] if thicknesses else 0.0,
        geometry=args.geometry, gap_mm=args.gap_mm,
        gap_pattern="aligned" if args.gap_mm > 0 else "none")
    result = shield.sweep(scene, thicknesses, shield.ambient_gamma_source(),
                          n=args.primaries, seed=args.seed, spec=spec,
                          radial_cut=_parse_radial_cut(args.radial_cut))
    if args.out is None:
        raise CliError("sweep requires --out for the CSV report")
    result.write(args.out)
    return [], [Path(args.out)]


def _cmd_fit(args):
    tdir = Path(args.templates)
    if not tdir.is_dir():
        raise CliError(f"templates directory not found: {tdir}")
    data_path = Path(args.data)
    if not data_path.exists():
        raise CliError(f"data spectrum not found: {data_path}")
    config = _load_config(args)
    templates = {}
    for path in sorted(tdir.glob("*.csv")):
        templates[path.stem] = Spectrum.read(path)
    if not templates:
        raise CliError(f"no template spectra (*.csv) in {tdir}")
    data = Spectrum.read(data_path)
    window = None
    if args.window:
        lo, hi = (int(x) for x in args.window.split(","))
        window = (lo, hi)
    fixed = ResponseParams(**config.get("fixed", {}))
    problem = FitProblem(data=data, templates=templates, window=window,
                         model=args.model, fixed=fixed)
    init_cfg = config.get("initial", {})
    adc_span = data.edges[-1] - data.edges[0]
    spans = [t.edges[-1] - t.edges[0] for t in templates.values()]
    initial_params = ResponseParams(
        pedestal=init_cfg.get("pedestal", 0.0),
        gain=init_cfg.get("gain", adc_span / max(spans)),
        sigma0=init_cfg.get("sigma0", 5.0),
        sigma1=init_cfg.get("sigma1", 1.0))
    # counts are conserved by the detector-response fold, so an even split
    # of the observed counts across templates is a serviceable starting
    # amplitude even before calibration is known
    total = float(data.contents.sum())
    scale = sum(float(t.contents.sum()) for t in templates.values())
    amp0 = total / scale if scale > 0 else 1.0
    amplitudes = {name: init_cfg.get("amplitudes", {}).get(name, amp0)
                  for name in templates}
    result = fit(problem, (initial_params, amplitudes),
                 restarts=args.restarts, seed=args.seed)
    rows = [
        {"quantity": "pedestal", "value": _fmt(result.params.pedestal), "error": ""},
        {"quantity": "gain", "value": _fmt(result.params.gain), "error": ""},
        {"quantity": "sigma0", "value": _fmt(result.params.sigma0), "error": ""},
        {"quantity": "sigma1", "value": _fmt(result.params.sigma1), "error": ""},
    ]
    for name in sorted(result.amplitudes):
        rows.append({"quantity": f"amplitude:{name}",
                     "value": _fmt(result.amplitudes[name]),
                     "error": _fmt(result.amplitude_errors[name])})
    rows.append({"quantity": "chi2", "value": _fmt(result.chi2), "error": ""})
    rows.append({"quantity": "dof", "value": result.dof, "error": ""})
    rows.append({"quantity": "chi2_per_dof", "value": _fmt(result.chi2_per_dof()),
                 "error": ""})
    rows.append({"quantity": "converged", "value": int(result.converged),
                 "error": ""})
    inputs = [data_path] + sorted(tdir.glob("*.csv"))
    return inputs, _emit(rows, ["quantity", "value", "error"], args, "fit.csv")


# ---------------------------------------------------------------------------

def _add_common(p, seed=True):
    p.add_argument("--out", help="output file path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--workers", type=int, default=1,
                   help="worker count (the engine is vectorized "
                        "single-process; values > 1 are accepted and noted)")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _add_scene_flags(p):
    p.add_argument("--site", choices=("surface", "SUL"), default="surface")
    p.add_argument("--orientation", choices=("vertical", "horizontal"),
                   default="vertical")
    p.add_argument("--shield-in", type=float, default=0.0,
                   help="add a lead shield of this thickness (inches)")


def build_parser():
    parser = _Parser(prog="radbudget", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("scene", help="dump the volume list of a model scene")
    _add_scene_flags(p)
    _add_common(p, seed=False)
    p.set_defaults(func=_cmd_scene)

    p = sub.add_parser("transport", help="run a transport simulation")
    _add_scene_flags(p)
    p.add_argument("--source", choices=("muons", "ambient"), default="muons")
    p.add_argument("--primaries", type=int, default=100_000)
    p.add_argument("--radial-cut", help="x,y,z,radius_cm acceptance cut")
    _add_common(p)
    p.set_defaults(func=_cmd_transport)

    p = sub.add_parser("fit", help="fit isotope templates to a spectrum")
    p.add_argument("--data", required=True, help="measured spectrum CSV")
    p.add_argument("--templates", required=True,
                   help="directory of per-isotope template spectra")
    p.add_argument("--model", choices=("full11", "align2"), default="full11")
    p.add_argument("--window", help="lo,hi fit window (bin indices)")
    p.add_argument("--restarts", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("budget", help="hit-efficiency radioactivity budget")
    p.add_argument("--inventory", help="inventory JSON (default: bundled)")
    _add_common(p, seed=False)
    p.set_defaults(func=_cmd_budget)

    p = sub.add_parser("sweep", help="shield thickness sweep")
    _add_scene_flags(p)
    p.add_argument("--thicknesses", default="0,2,4,6",
                   help="comma-separated thicknesses in inches")
    p.add_argument("--primaries", type=int, default=1_000_000)
    p.add_argument("--gap-mm", type=float, default=0.0)
    p.add_argument("--geometry", choices=("box", "split"), default="box")
    p.add_argument("--radial-cut", help="x,y,z,radius_cm acceptance cut")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("hiteff", help="hit efficiency for an in-volume source")
    _add_scene_flags(p)
    p.add_argument("--volume", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--primaries", type=int, default=100_000)
    _add_common(p)
    p.set_defaults(func=_cmd_hiteff)

    p = sub.add_parser("assay", help="radiopurity assay lookups")
    p.add_argument("action", choices=("show", "list"))
    p.add_argument("material", nargs="?")
    _add_common(p, seed=False)
    p.set_defaults(func=_cmd_assay)

    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    args._argv = ["radbudget"] + argv
    if getattr(args, "workers", 1) > 1:
        sys.stderr.write("note: transport is vectorized single-process; "
                         "--workers > 1 has no effect\n")
    try:
        inputs, outputs = args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # runtime failure
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2
    _write_manifest(args, inputs, outputs)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
