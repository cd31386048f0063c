"""renovor command line: phantom generation, vessel segmentation stages, and
the end-to-end dominant-region pipeline.

Subcommands: phantom, vesselness, tensorcut, tree, voronoi, metrics,
pipeline.  Every run writes its outputs under --out-dir with fixed file
names plus a ``run-manifest.json`` recording parameters and content hashes.
Exit codes: 0 success, 1 usage error, 2 data error.  Parameters may come
from a JSON config file (--config); explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from renovor import __version__, report
from renovor.metrics import (
    centerline_overlap,
    confusion,
    dice,
    hausdorff,
    sensitivity,
    top_components,
)
from renovor.phantom import PhantomSpec, generate
from renovor.spd import hessian_to_spd_field
from renovor.tensorcut import MrfEnergyParams, estimate_seeds, tensor_cut_segment
from renovor.vesselness import (
    VesselnessParams,
    best_scale_hessian,
    multiscale_vesselness,
)
from renovor.vesseltree import (
    build_tree,
    cluster_branches,
    detect_entries,
    skeletonize,
    tree_from_json,
    tree_to_json,
)
from renovor.volume import (
    LabelVolume,
    ScalarVolume,
    bounding_box,
    crop,
    drop_small_components,
    load_metaimage,
    save_metaimage,
)
from renovor.voronoi import partition, region_stats, stats_to_csv, stats_to_json

__all__ = ["main"]

# fixed output names (documented in the README)
F_CT = "ct.mhd"
F_KIDNEY = "kidney.mhd"
F_VESSEL_GT = "vessel.mhd"
F_TREE = "tree.json"
F_PARTITION = "partition.mhd"
F_VESSELNESS = "vesselness.mhd"
F_VESSELNESS_FIG = "vesselness-mip.png"
F_VESSEL_LABEL = "vessel-label.mhd"
F_TENSORCUT_FIG = "tensorcut-slices.png"
F_TREE_FIG = "tree-projection.png"
F_STATS_JSON = "partition-stats.json"
F_STATS_CSV = "partition-stats.csv"
F_PARTITION_FIG = "partition-slices.png"
F_METRICS_JSON = "metrics.json"
F_METRICS_CSV = "metrics.csv"
F_METRICS_FIG = "metrics-overlay.png"
F_MANIFEST = "run-manifest.json"


class UsageError(Exception):
    """Bad flags or config values; maps to exit code 1."""


class DataError(Exception):
    """Missing or inconsistent input data; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default would sys.exit(2)
        raise UsageError(message)


@dataclass(frozen=True)
class _Opt:
    key: str
    kind: str  # float | int | str | path | flag | floats | pair | triple | itriple
    default: object = None
    help: str = ""
    required: bool = False
    is_input: bool = False  # an input file: existence-checked and hashed

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


def _coerce(opt: _Opt, value):
    kind = opt.kind
    try:
        if kind == "float":
            return float(value)
        if kind == "int":
            if isinstance(value, bool):
                raise ValueError
            return int(value)
        if kind in ("str", "path"):
            if not isinstance(value, (str, os.PathLike)):
                raise ValueError
            return str(value)
        if kind == "flag":
            if isinstance(value, bool):
                return value
            raise ValueError
        items = value.split(",") if isinstance(value, str) else list(value)
        if kind == "itriple":
            out = tuple(int(t) for t in items)
        else:
            out = tuple(float(t) for t in items)
        if kind == "floats" and out:
            return out
        if kind == "pair" and len(out) == 2:
            return out
        if kind in ("triple", "itriple") and len(out) == 3:
            return out
        raise ValueError
    except (TypeError, ValueError):
        raise UsageError(f"invalid value {value!r} for {opt.flag}") from None


# ---------------------------------------------------------------------------
# per-command options

_PHANTOM_OPTS = [
    _Opt("dims", "itriple", (64, 64, 64), "volume size nx,ny,nz"),
    _Opt("spacing", "triple", (1.0, 1.0, 1.0), "voxel spacing mm sx,sy,sz"),
    _Opt("kidney_center", "triple", None, "kidney center mm (default: volume center)"),
    _Opt("kidney_axes", "triple", (17.0, 14.0, 19.0), "kidney semi-axes mm"),
    _Opt("depth", "int", 3, "tree generations"),
    _Opt("branch_angle", "pair", (25.0, 50.0), "child tilt range deg lo,hi"),
    _Opt("root_radius", "float", 2.0, "root vessel radius mm"),
    _Opt("radius_decay", "float", 0.79, "radius decay per generation"),
    _Opt("segment_length", "pair", (9.0, 12.0), "segment length range mm lo,hi"),
    _Opt("root_mm", "triple", None, "tree root position mm"),
    _Opt("root_direction", "triple", None, "initial growth direction"),
    _Opt("background_hu", "float", -30.0, "background intensity"),
    _Opt("kidney_hu", "float", 30.0, "kidney intensity"),
    _Opt("vessel_hu", "float", 150.0, "vessel intensity"),
    _Opt("noise_sigma", "float", 0.0, "additive Gaussian noise sigma"),
    _Opt("blur_sigma", "float", 0.0, "PSF blur sigma mm (0 = off)"),
    _Opt("seed", "int", 0, "RNG seed"),
]

_VESSELNESS_KNOBS = [
    _Opt("scales", "floats", (0.5, 1.0, 1.5, 2.0), "Hessian sigmas mm, comma list"),
    _Opt("gamma12", "float", 1.0, "lambda1/lambda2 sharpness exponent"),
    _Opt("gamma23", "float", 1.0, "lambda2/lambda3 sharpness exponent"),
]

_VESSELNESS_OPTS = [
    _Opt("ct", "path", None, "input CT volume (.mhd)", required=True, is_input=True),
    *_VESSELNESS_KNOBS,
]

_TENSORCUT_KNOBS = [
    *_VESSELNESS_KNOBS,
    _Opt("lambda_i", "float", 1.0, "intensity boundary weight"),
    _Opt("lambda_t", "float", 1.0, "tensor boundary weight"),
    _Opt("omega", "float", 0.5, "tensor term weight (0 = intensity-only)"),
    _Opt("neighborhood", "int", 6, "MRF neighborhood, 6 or 26"),
    _Opt("voi_margin_mm", "float", 8.0, "margin around the kidney box"),
    _Opt("fg_percentile", "float", 99.5, "vesselness percentile for FG seeds"),
    _Opt("fg_intensity_percentile", "float", 99.5, "brightness gate for FG seeds"),
    _Opt("bg_percentile", "float", 90.0, "intensity percentile for BG seeds"),
    _Opt("vessel_region_percentile", "float", 99.0, "plausible-vessel percentile"),
    _Opt("exclusion_dilate_mm", "float", 2.0, "BG exclusion dilation mm"),
    _Opt("min_component_mm3", "float", 10.0, "drop predicted islands smaller than this"),
    _Opt("gmm_components", "int", 2, "GMM components per class"),
    _Opt("max_tensor_seeds", "int", 200, "tensor samples per seed class"),
    _Opt("seed", "int", 0, "RNG seed for GMM init"),
]

_TENSORCUT_OPTS = [
    _Opt("ct", "path", None, "input CT volume (.mhd)", required=True, is_input=True),
    _Opt("kidney", "path", None, "kidney mask (.mhd)", required=True, is_input=True),
    *_TENSORCUT_KNOBS,
]

_TREE_OPTS = [
    _Opt("vessel", "path", None, "binary vessel mask (.mhd)", required=True, is_input=True),
    _Opt("kidney", "path", None, "kidney mask for entry detection", is_input=True),
    _Opt("root_mm", "triple", None, "root hint mm (default: most -x vessel voxel)"),
]

_VORONOI_OPTS = [
    _Opt("kidney", "path", None, "kidney mask (.mhd)", required=True, is_input=True),
    _Opt("tree", "path", None, "vessel tree JSON with entries", required=True, is_input=True),
    _Opt("tumor", "path", None, "tumor mask for contact areas", is_input=True),
    _Opt("level_offset", "int", 0, "clustering level relative to the entries"),
    _Opt("margin_mm", "float", 5.0, "tumor margin for contact areas"),
]

_METRICS_OPTS = [
    _Opt("gt", "path", None, "reference mask (.mhd)", required=True, is_input=True),
    _Opt("pred", "path", None, "output mask to score (.mhd)", required=True, is_input=True),
    _Opt("paper_protocol", "flag", False, "keep top components before Hausdorff"),
    _Opt("top_k", "int", 2, "components kept by --paper-protocol"),
]

_PIPELINE_OPTS = [
    _Opt("ct", "path", None, "input CT volume (.mhd)", required=True, is_input=True),
    _Opt("kidney", "path", None, "kidney mask (.mhd)", required=True, is_input=True),
    _Opt("tumor", "path", None, "tumor mask for contact areas", is_input=True),
    _Opt("gt_vessel", "path", None, "reference vessel mask to score against", is_input=True),
    *_TENSORCUT_KNOBS,
    _Opt("root_mm", "triple", None, "root hint mm (default: most -x vessel voxel)"),
    _Opt("level_offset", "int", 0, "clustering level relative to the entries"),
    _Opt("margin_mm", "float", 5.0, "tumor margin for contact areas"),
    _Opt("paper_protocol", "flag", False, "keep top components before Hausdorff"),
    _Opt("top_k", "int", 2, "components kept by --paper-protocol"),
]

_COMMAND_OPTS = {
    "phantom": _PHANTOM_OPTS,
    "vesselness": _VESSELNESS_OPTS,
    "tensorcut": _TENSORCUT_OPTS,
    "tree": _TREE_OPTS,
    "voronoi": _VORONOI_OPTS,
    "metrics": _METRICS_OPTS,
    "pipeline": _PIPELINE_OPTS,
}

_ALL_KEYS = {o.key for opts in _COMMAND_OPTS.values() for o in opts}


# ---------------------------------------------------------------------------
# plumbing

def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config JSON must be an object of flag values")
    unknown = sorted(set(cfg) - _ALL_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def _effective(opts, ns, config) -> dict:
    vals = {}
    for o in opts:
        raw = getattr(ns, o.key)
        if raw is None and o.key in config:
            raw = config[o.key]
        vals[o.key] = o.default if raw is None else _coerce(o, raw)
        if o.required and vals[o.key] is None:
            raise UsageError(f"missing required {o.flag}")
    return vals


def _sha256(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _write_manifest(out_dir: Path, command: str, params: dict, inputs: dict, files) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": {k: _jsonable(v) for k, v in sorted(params.items())},
        "inputs": {
            k: {"path": str(p), "sha256": _sha256(p)} for k, p in sorted(inputs.items())
        },
        "outputs": {p.name: _sha256(p) for p in sorted(files, key=lambda p: p.name)},
    }
    path = out_dir / F_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_scalar(path) -> ScalarVolume:
    vol = load_metaimage(path)
    if not isinstance(vol, ScalarVolume):
        raise DataError(f"{path} does not hold a scalar volume")
    return vol


def _load_mask(path) -> LabelVolume:
    vol = load_metaimage(path)
    if not isinstance(vol, LabelVolume):
        raise DataError(f"{path} does not hold a label volume")
    return vol


def _same_geometry(name_a, vol_a, name_b, vol_b):
    if vol_a.geometry != vol_b.geometry:
        raise DataError(f"{name_a} and {name_b} disagree on volume geometry")


def _save_volume(vol, path: Path) -> list[Path]:
    save_metaimage(vol, path)
    return [path, path.with_suffix(".raw")]


def _write_json(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# stage runners (shared by the individual subcommands and `pipeline`)

def _run_phantom(p: dict, out: Path) -> list[Path]:
    try:
        spec = PhantomSpec(
            dims=p["dims"],
            spacing=p["spacing"],
            kidney_center_mm=p["kidney_center"],
            kidney_axes_mm=p["kidney_axes"],
            tree_depth=p["depth"],
            branch_angle_deg=p["branch_angle"],
            root_radius_mm=p["root_radius"],
            radius_decay=p["radius_decay"],
            segment_length_mm=p["segment_length"],
            root_mm=p["root_mm"],
            root_direction=p["root_direction"],
            background_hu=p["background_hu"],
            kidney_hu=p["kidney_hu"],
            vessel_hu=p["vessel_hu"],
            noise_sigma=p["noise_sigma"],
            blur_sigma_mm=p["blur_sigma"],
            seed=p["seed"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ct, kidney, vessel, tree, part = generate(spec)
    files = _save_volume(ct, out / F_CT)
    files += _save_volume(kidney, out / F_KIDNEY)
    files += _save_volume(vessel, out / F_VESSEL_GT)
    files.append(_write_json(tree_to_json(tree), out / F_TREE))
    files += _save_volume(part.labels, out / F_PARTITION)
    return files


def _vesselness_params(p: dict) -> VesselnessParams:
    try:
        return VesselnessParams(
            gamma12=p["gamma12"], gamma23=p["gamma23"], scales_mm=p["scales"]
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _run_vesselness(p: dict, out: Path) -> list[Path]:
    ct = _load_scalar(p["ct"])
    response = multiscale_vesselness(ct, _vesselness_params(p))
    files = _save_volume(response, out / F_VESSELNESS)
    fig = out / F_VESSELNESS_FIG
    report.save_mip_panel(fig, response, "multi-scale vesselness")
    files.append(fig)
    return files


def _voi_box(ct, kidney, margin_mm):
    (i0, j0, k0), (i1, j1, k1) = bounding_box(kidney)
    mx, my, mz = (int(np.ceil(margin_mm / s)) for s in ct.geometry.spacing)
    nx, ny, nz = ct.geometry.dims
    lo = (max(0, i0 - mx), max(0, j0 - my), max(0, k0 - mz))
    hi = (min(nx - 1, i1 + mx), min(ny - 1, j1 + my), min(nz - 1, k1 + mz))
    return lo, hi


def _segment_vessels(ct, kidney, p: dict) -> LabelVolume:
    """Tensor-cut segmentation inside the kidney VOI, embedded full-size."""
    lo, hi = _voi_box(ct, kidney, p["voi_margin_mm"])
    ct_voi = crop(ct, (lo, hi))
    field, vness = best_scale_hessian(ct_voi, _vesselness_params(p))
    try:
        mrf = MrfEnergyParams(
            lambda_i=p["lambda_i"],
            lambda_t=p["lambda_t"],
            omega=p["omega"],
            neighborhood=p["neighborhood"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seeds = estimate_seeds(
        ct_voi,
        vness,
        fg_vesselness_percentile=p["fg_percentile"],
        bg_intensity_percentile=p["bg_percentile"],
        vessel_region_percentile=p["vessel_region_percentile"],
        exclusion_dilate_mm=p["exclusion_dilate_mm"],
        fg_intensity_percentile=p["fg_intensity_percentile"],
    )
    tensors = hessian_to_spd_field(field) if mrf.omega > 0 else None
    labels = tensor_cut_segment(
        ct_voi,
        tensors,
        seeds,
        mrf,
        n_gmm_components=p["gmm_components"],
        gmm_seed=p["seed"],
        max_tensor_seeds=p["max_tensor_seeds"],
    )
    full = np.zeros(ct.geometry.shape_zyx, np.uint16)
    full[lo[2] : hi[2] + 1, lo[1] : hi[1] + 1, lo[0] : hi[0] + 1] = labels.data
    return drop_small_components(LabelVolume(ct.geometry, full), p["min_component_mm3"])


def _run_tensorcut(p: dict, out: Path) -> list[Path]:
    ct = _load_scalar(p["ct"])
    kidney = _load_mask(p["kidney"])
    _same_geometry("ct", ct, "kidney mask", kidney)
    label = _segment_vessels(ct, kidney, p)
    files = _save_volume(label, out / F_VESSEL_LABEL)
    fig = out / F_TENSORCUT_FIG
    report.save_overlay_panel(
        fig,
        ct,
        [(kidney, (0.25, 0.75, 0.35), "kidney"), (label, (0.90, 0.25, 0.20), "vessel")],
        "tensor-cut segmentation",
    )
    files.append(fig)
    return files


def _default_root_hint(vessel: LabelVolume):
    """Most -x voxel of the largest 26-component (the aorta-facing end)."""
    main = top_components(vessel, k=1)
    zz, yy, xx = np.nonzero(main.data)
    first = np.lexsort((zz, yy, xx))[0]
    voxel = (int(xx[first]), int(yy[first]), int(zz[first]))
    return tuple(float(c) for c in vessel.geometry.index_to_world(voxel))


def _run_tree(p: dict, out: Path) -> list[Path]:
    vessel = _load_mask(p["vessel"])
    if not vessel.data.any():
        raise DataError("vessel mask is empty")
    kidney = None
    if p["kidney"]:
        kidney = _load_mask(p["kidney"])
        _same_geometry("vessel mask", vessel, "kidney mask", kidney)
    lines = skeletonize(vessel)
    hint = p["root_mm"] if p["root_mm"] is not None else _default_root_hint(vessel)
    tree = build_tree(lines, hint)
    if kidney is not None:
        tree = detect_entries(tree, kidney)
    files = [_write_json(tree_to_json(tree), out / F_TREE)]
    fig = out / F_TREE_FIG
    report.save_tree_panel(fig, tree, kidney)
    files.append(fig)
    return files


def _run_voronoi(p: dict, out: Path) -> list[Path]:
    kidney = _load_mask(p["kidney"])
    tree_path = Path(p["tree"])
    try:
        doc = json.loads(tree_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"tree file {tree_path} is not valid JSON: {exc}") from None
    tree = tree_from_json(doc, kidney.geometry)
    if not tree.entries:
        raise DataError(
            "tree has no kidney entries; run the tree stage with --kidney"
        )
    tumor = None
    if p["tumor"]:
        tumor = _load_mask(p["tumor"])
        _same_geometry("kidney mask", kidney, "tumor mask", tumor)
    clustering = cluster_branches(tree, tree.entries, p["level_offset"])
    part = partition(kidney, tree, clustering)
    stats = region_stats(part, tumor, p["margin_mm"])
    files = _save_volume(part.labels, out / F_PARTITION)
    files.append(_write_json(stats_to_json(stats), out / F_STATS_JSON))
    csv_path = out / F_STATS_CSV
    csv_path.write_text(stats_to_csv(stats))
    files.append(csv_path)
    fig = out / F_PARTITION_FIG
    report.save_partition_panel(fig, part, tumor)
    files.append(fig)
    return files


def _run_metrics(p: dict, out: Path) -> list[Path]:
    gt = _load_mask(p["gt"])
    pred = _load_mask(p["pred"])
    _same_geometry("reference mask", gt, "output mask", pred)
    counts = confusion(gt, pred)
    gt_hd, pred_hd = gt, pred
    if p["paper_protocol"]:
        gt_hd = top_components(gt, k=p["top_k"])
        pred_hd = top_components(pred, k=p["top_k"])
    values = {
        "dice": dice(gt, pred),
        "sensitivity": sensitivity(gt, pred),
        "hausdorff_mm": hausdorff(gt_hd, pred_hd),
        "centerline_overlap": centerline_overlap(skeletonize(gt), skeletonize(pred)),
    }
    doc = dict(values)
    doc.update(
        tp=counts.tp,
        fp=counts.fp,
        fn=counts.fn,
        tn=counts.tn,
        paper_protocol=bool(p["paper_protocol"]),
        top_k=p["top_k"],
    )
    files = [_write_json(doc, out / F_METRICS_JSON)]
    csv_path = out / F_METRICS_CSV
    header = ",".join(values)
    row = ",".join(f"{values[k]:.6f}" for k in values)
    csv_path.write_text(f"{header}\n{row}\n")
    files.append(csv_path)
    fig = out / F_METRICS_FIG
    report.save_overlay_panel(
        fig,
        None,
        [(gt, (0.25, 0.75, 0.35), "reference"), (pred, (0.90, 0.25, 0.20), "output")],
        "mask agreement",
    )
    files.append(fig)
    return files


def _run_pipeline(p: dict, out: Path) -> list[Path]:
    files = _run_tensorcut(p, out)
    files += _run_tree(
        {
            "vessel": str(out / F_VESSEL_LABEL),
            "kidney": p["kidney"],
            "root_mm": p["root_mm"],
        },
        out,
    )
    files += _run_voronoi(
        {
            "kidney": p["kidney"],
            "tree": str(out / F_TREE),
            "tumor": p["tumor"],
            "level_offset": p["level_offset"],
            "margin_mm": p["margin_mm"],
        },
        out,
    )
    if p["gt_vessel"]:
        files += _run_metrics(
            {
                "gt": p["gt_vessel"],
                "pred": str(out / F_VESSEL_LABEL),
                "paper_protocol": p["paper_protocol"],
                "top_k": p["top_k"],
            },
            out,
        )
    return files


_RUNNERS = {
    "phantom": _run_phantom,
    "vesselness": _run_vesselness,
    "tensorcut": _run_tensorcut,
    "tree": _run_tree,
    "voronoi": _run_voronoi,
    "metrics": _run_metrics,
    "pipeline": _run_pipeline,
}


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def _build_parser() -> _Parser:
    parser = _Parser(prog="renovor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"renovor {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, opts in _COMMAND_OPTS.items():
        sp = sub.add_parser(name, help=f"run the {name} stage")
        sp.add_argument("--out-dir", required=True, help="output directory")
        sp.add_argument("--config", default=None, help="JSON file of flag values")
        sp.add_argument(
            "--threads",
            default=None,
            help="cap internal parallelism (default: RENOVOR_THREADS)",
        )
        for o in opts:
            if o.kind == "flag":
                sp.add_argument(
                    o.flag, dest=o.key, action="store_const", const=True,
                    default=None, help=o.help,
                )
            else:
                sp.add_argument(o.flag, dest=o.key, default=None, help=o.help)
    return parser


def _apply_threads(raw) -> None:
    if raw is None:
        raw = os.environ.get("RENOVOR_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except (TypeError, ValueError):
        raise UsageError(f"thread count must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _dispatch(command: str, ns) -> int:
    opts = _COMMAND_OPTS[command]
    config = _load_config(ns.config)
    vals = _effective(opts, ns, config)
    inputs = {o.key: vals[o.key] for o in opts if o.is_input and vals[o.key]}
    for key, path in inputs.items():
        if not Path(path).exists():
            raise DataError(f"input file not found: {path}")
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = _RUNNERS[command](vals, out)
    params = {o.key: vals[o.key] for o in opts if not o.is_input}
    _write_manifest(out, command, params, inputs, files)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a subcommand is required (see --help)")
        _apply_threads(ns.threads)
        return _dispatch(ns.command, ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
