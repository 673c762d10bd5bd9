"""Command-line front end.

    ppwarp stitch TARGET REFERENCE MATCHES [--out PNG] [--diagnostics] ...
    ppwarp eval SCENE_SPEC --out DIR
    ppwarp synth FIXTURE_OR_SPEC --out DIR

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .combine import export_weight_maps
from .errors import DataError, InvalidSpec, IoError, NumericalError, StitchError
from .matches import load_correspondences, load_labels, save_correspondences, save_labels
from .pipeline import MODES, StitchConfig, build_warp, stitch
from .raster import read_image, to_uint8, write_image
from .synthetic import FIXTURES, evaluate_warp, format_scene_spec, generate_scene, parse_scene_spec, render_scene

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class UsageError(Exception):
    """A parameter is outside its accepted range."""

# flag dest -> StitchConfig field
_CONFIG_FLAGS = {
    "sigma": "sigma",
    "eta": "eta",
    "ransac_thresh": "ransac_threshold",
    "min_inliers": "min_inliers",
    "max_iterations": "max_iterations",
    "seed": "rng_seed",
    "mode": "mode",
}


def _grid(text):
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected RxC, e.g. 40x40; got {text!r}") from None


def _add_config_flags(p):
    g = p.add_argument_group("warp parameters")
    g.add_argument("--sigma", type=float, help="moving-DLT Gaussian scale in pixels (default 8.5)")
    g.add_argument("--eta", type=float, help="moving-DLT weight floor (default 0.01)")
    g.add_argument("--grid", type=_grid, metavar="RxC", help="mesh rows x columns (default 40x40)")
    g.add_argument("--ransac-thresh", type=float, help="inlier threshold as a fraction of the image size (default 0.01)")
    g.add_argument("--min-inliers", type=int, help="smallest accepted inlier group (default 50)")
    g.add_argument("--max-iterations", type=int, help="RANSAC iteration cap (default 2000)")
    g.add_argument("--seed", type=int, help="RANSAC seed (default 0)")
    g.add_argument("--mode", choices=MODES, help="warp model (default proposed)")
    g.add_argument("--config", type=Path, help="key = value file; explicit flags override it")


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}", "cli") from e
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"{path} line {lineno}: expected key = value", "cli")
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "grid":
            try:
                r, c = _grid(v)
            except argparse.ArgumentTypeError as e:
                raise InvalidSpec(f"{path} line {lineno}: {e}", "cli") from None
            out["grid_rows"], out["grid_cols"] = str(r), str(c)
        else:
            out[k] = v
    return out


def config_from_args(args) -> StitchConfig:
    values = read_config_file(args.config) if args.config else {}
    for flag, field in _CONFIG_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[field] = str(v)
    if args.grid is not None:
        values["grid_rows"], values["grid_cols"] = str(args.grid[0]), str(args.grid[1])
    try:
        return StitchConfig.from_mapping(values)
    except ValueError as e:
        raise UsageError(str(e)) from None


def format_kv(d: dict) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in d.items())


def format_groups(result) -> str:
    lines = [f"groups = {len(result.groups)}", f"selected = {result.selected!r}"]
    for k, g in enumerate(result.groups):
        flag = "yes" if k == result.selected else "no"
        lines.append(f"group {k}: size={g.size} rotation={g.rotation_magnitude!r} selected={flag}")
    s = result.field.similarity
    lines.append(f"similarity = scale {s.scale!r} angle {s.angle!r} tx {s.tx!r} ty {s.ty!r}")
    return "\n".join(lines) + "\n"


def mesh_overlay(composite, field, color=(255, 0, 0)) -> Image.Image:
    rgb = to_uint8(composite.image)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[:, :, None], 3, axis=2)
    im = Image.fromarray(rgb)
    draw = ImageDraw.Draw(im)
    ox, oy = composite.canvas.offset
    corners = field.mesh.cell_corners()
    for m, quad in zip(field.target_matrices, corners):
        q = np.column_stack([quad, np.ones(4)]) @ m.T
        xy = q[:, :2] / q[:, 2:3] + [ox, oy]
        pts = [tuple(p) for p in xy.tolist()]
        draw.line(pts + [pts[0]], fill=color, width=1)
    return im


def _labels_for(cs, path):
    table = load_labels(path)
    try:
        return np.array([table[i] for i in cs.ids.tolist()])
    except KeyError as e:
        raise DataError(f"labels file has no entry for pair {e.args[0]}", "cli") from None


def cmd_stitch(args) -> int:
    config = config_from_args(args)
    cs = load_correspondences(args.matches)
    target = read_image(args.target)
    reference = read_image(args.reference)
    composite, result = stitch(target, reference, cs, config)
    out = Path(args.out)
    write_image(out, composite.image)
    print(f"wrote {out} ({composite.canvas.width}x{composite.canvas.height}, mode {config.mode})")
    if args.diagnostics:
        stem = out.with_suffix("")
        alpha, beta = export_weight_maps(result.field.weights, result.field.mesh)
        # weight maps are one pixel per cell
        Image.fromarray(alpha).save(f"{stem}_alpha.png")
        Image.fromarray(beta).save(f"{stem}_beta.png")
        mesh_overlay(composite, result.field).save(f"{stem}_mesh.png")
        _write(f"{stem}_groups.txt", format_groups(result))
        if args.labels:
            rep = evaluate_warp(result.field, cs, _labels_for(cs, args.labels), result.frame)
            _write(f"{stem}_eval.txt", format_kv(rep.as_dict()))
        print(f"wrote diagnostics with prefix {stem}_")
    return 0


def _write(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}", "cli") from e


def run_eval(spec, config: StitchConfig):
    """Evaluate every mode on the scene described by ``spec``; returns ``{mode: EvalReport}``."""
    scene = generate_scene(spec)
    reports = {}
    for mode in MODES:
        r = build_warp(scene.correspondences, config.with_mode(mode))
        reports[mode] = evaluate_warp(r.field, scene.correspondences, scene.labels, r.frame)
    return reports


def format_eval_text(reports) -> str:
    keys = list(next(iter(reports.values())).as_dict())
    width = max(len(k) for k in keys)
    head = " " * width + "".join(f"{m:>16}" for m in reports)
    rows = [head]
    for k in keys:
        rows.append(f"{k:<{width}}" + "".join(f"{r.as_dict()[k]:>16.6f}" for r in reports.values()))
    return "\n".join(rows) + "\n"


def cmd_eval(args) -> int:
    config = config_from_args(args)
    try:
        text = Path(args.spec).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {args.spec}: {e}", "cli") from e
    reports = run_eval(parse_scene_spec(text), config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = format_eval_text(reports)
    _write(out / "report.txt", table)
    flat = {f"{m}.{k}": v for m, r in reports.items() for k, v in r.as_dict().items()}
    _write(out / "report.kv", format_kv(flat))
    sys.stdout.write(table)
    return 0


def cmd_synth(args) -> int:
    if args.scene in FIXTURES:
        spec = FIXTURES[args.scene]()
    else:
        try:
            spec = parse_scene_spec(Path(args.scene).read_text(encoding="utf-8"))
        except OSError as e:
            raise IoError(f"{args.scene!r} is neither a fixture ({', '.join(FIXTURES)}) nor a readable file", "cli") from e
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(spec)
    target, reference = render_scene(spec)
    write_image(out / "target.png", target)
    write_image(out / "reference.png", reference)
    save_correspondences(scene.correspondences, out / "matches.txt")
    save_labels(scene.correspondences.ids, scene.labels, out / "labels.txt")
    _write(out / "scene.txt", format_scene_spec(spec))
    print(f"wrote scene to {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ppwarp", description="Perspective-preserving two-image stitching.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stitch", help="stitch a target image onto a reference image")
    s.add_argument("target", type=Path)
    s.add_argument("reference", type=Path)
    s.add_argument("matches", type=Path, help="correspondence file (SIZES header, then id tx ty rx ry)")
    s.add_argument("--out", type=Path, default=Path("stitched.png"))
    s.add_argument("--diagnostics", action="store_true", help="also write weight maps, mesh overlay and group report")
    s.add_argument("--labels", type=Path, help="ground-truth labels; adds an evaluation report to the diagnostics")
    _add_config_flags(s)
    s.set_defaults(func=cmd_stitch)

    e = sub.add_parser("eval", help="score all three modes on a synthetic scene spec")
    e.add_argument("spec", type=Path)
    e.add_argument("--out", type=Path, required=True)
    _add_config_flags(e)
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("synth", help="render a synthetic scene (images, matches, labels)")
    y.add_argument("scene", help=f"fixture name ({', '.join(FIXTURES)}) or scene spec file")
    y.add_argument("--out", type=Path, required=True)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error [cli]: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error [{e.module}]: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"error [{e.module}]: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StitchError as e:
        print(f"error [{e.module}]: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
