"""Command-line interface: synth, register, encode, decode, eval, render.

Every command reads an optional JSON config (``--config``) with one section
per command, accepts ``--set section.key=value`` overrides (values parsed as
JSON when possible), and writes ``run_manifest.json`` into its output
directory.

Sequence directory layout shared by the commands::

    model.obj, model.model.json     body model
    frames.json                     poses, translations, shape
    meshes/frame_0000.obj ...       registered (or ground-truth) clothed meshes
    targets/frame_0000.obj|.xyz     registration targets
    images/frame_0000_cam0.ppm ...  RGB captures
    cameras.json                    pinhole cameras
    anchors.json                    frame-0 anchors
"""
from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, archive as arc, imageio, pipeline, registration as reg, synth
from .errors import EigenAvatarError, ParameterError
from .evaluation import error_heatmap, vertex_errors
from .mesh import PoseParams
from .meshio import (atomic_write_text, load_mesh, load_model, load_shipped_model, save_mesh,
                     save_model, write_obj)
from .raster import Camera, rasterize, render_textured
from .texture import atlas_uvs, bake_atlas

FRAMES_SCHEMA = "eigenavatar.frames"


# ---- config handling -----------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path, overrides=()):
    cfg = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ParameterError(f"{path}: config must be a JSON object")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ParameterError(f"override {item!r} must look like section.key=value")
        section, name = key.split(".", 1)
        cfg.setdefault(section, {})[name] = _parse_value(value)
    return cfg


def write_manifest(out_dir, command, args, config, extra=None):
    doc = {
        "schema": "eigenavatar.run_manifest",
        "version": 1,
        "command": command,
        "argv": sys.argv[1:],
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                      if k != "func"},
        "config": config,
        "versions": {"eigenavatar": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    doc.update(extra or {})
    atomic_write_text(Path(out_dir) / "run_manifest.json", json.dumps(doc, indent=1))


# ---- sequence directory I/O -------------------------------------------------------

def frame_name(f):
    return f"frame_{f:04d}"


def save_frames(path, poses, translations, shape):
    doc = {"schema": FRAMES_SCHEMA, "version": 1,
           "poses": np.asarray(poses).tolist(), "translations": np.asarray(translations).tolist(),
           "shape": np.asarray(shape).tolist()}
    atomic_write_text(path, json.dumps(doc))


def load_frames(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != FRAMES_SCHEMA:
        raise ParameterError(f"{path}: not a frames file")
    return (np.array(doc["poses"], dtype=float), np.array(doc["translations"], dtype=float),
            np.array(doc["shape"], dtype=float))


def save_cameras(path, cameras):
    atomic_write_text(path, json.dumps({"schema": "eigenavatar.cameras", "version": 1,
                                        "cameras": [c.to_dict() for c in cameras]}, indent=1))


def load_cameras(path):
    with open(path, encoding="utf-8") as fh:
        return [Camera.from_dict(d) for d in json.load(fh)["cameras"]]


def write_xyz(path, points):
    atomic_write_text(path, "\n".join("%.17g %.17g %.17g" % tuple(p) for p in points) + "\n")


def read_target(path):
    path = Path(path)
    if path.suffix == ".xyz":
        return np.loadtxt(path, dtype=float, ndmin=2)
    return load_mesh(path)


def _model_for(seq_dir):
    p = Path(seq_dir) / "model.obj"
    return load_model(p) if p.exists() else load_shipped_model()


def load_sequence(reg_dir, capture_dir=None, model=None) -> pipeline.SequenceData:
    reg_dir = Path(reg_dir)
    capture_dir = Path(capture_dir) if capture_dir else reg_dir
    model = model or _model_for(reg_dir)
    poses, trans, shape = load_frames(reg_dir / "frames.json")
    meshes = np.stack([load_mesh(reg_dir / "meshes" / f"{frame_name(f)}.obj").vertices
                       for f in range(len(poses))])
    cams, images = [], None
    if (capture_dir / "cameras.json").exists():
        cams = load_cameras(capture_dir / "cameras.json")
        img_dir = capture_dir / "images"
        images = lambda f, c: imageio.read_ppm(img_dir / f"{frame_name(f)}_cam{c}.ppm")  # noqa: E731
    return pipeline.SequenceData(model, poses, trans, shape, meshes, cams, images)


# ---- commands ------------------------------------------------------------------------

def cmd_synth(args, cfg):
    section = dict(cfg.get("synth", {}))
    if args.seed is not None:
        section["seed"] = args.seed
    if args.frames is not None:
        section["n_frames"] = args.frames
    if args.noise is not None:
        section["target_noise"] = args.noise
    config = synth.SynthConfig.from_dict(section)
    out = Path(args.out)
    for sub in ("meshes", "targets", "images"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    seq = synth.generate(config)
    save_model(seq.model, out / "model.obj")
    save_frames(out / "frames.json", seq.poses, seq.translations, seq.shape)
    save_cameras(out / "cameras.json", seq.cameras)
    for f in range(seq.n_frames):
        save_mesh(seq.clothed_mesh(f), out / "meshes" / f"{frame_name(f)}.obj")
        if config.target_noise > 0:
            write_xyz(out / "targets" / f"{frame_name(f)}.xyz", seq.target_cloud(f))
        else:
            save_mesh(seq.target_mesh(f), out / "targets" / f"{frame_name(f)}.obj")
        if not args.no_images:
            for c in range(len(seq.cameras)):
                imageio.write_ppm(out / "images" / f"{frame_name(f)}_cam{c}.ppm", seq.image(f, c))
    reg.save_anchors(reg.sample_anchors(seq.model, seq.clothed_mesh(0), seed=config.seed),
                     out / "anchors.json")
    write_manifest(out, "synth", args, {"synth": config.to_dict()},
                   {"seeds": {"synth": config.seed}, "frames": seq.n_frames})
    print(f"wrote {seq.n_frames} frames to {out}")


def cmd_register(args, cfg):
    src = Path(args.sequence)
    out = Path(args.out)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    config = reg.RegistrationConfig.from_dict(cfg.get("registration", {}))
    model = _model_for(src)
    paths = sorted(list((src / "targets").glob("frame_*.obj")) +
                   list((src / "targets").glob("frame_*.xyz")))
    if args.frames is not None:
        paths = paths[:args.frames]
    if not paths:
        raise ParameterError(f"no targets found in {src / 'targets'}")
    anchors = reg.load_anchors(args.anchors or src / "anchors.json")
    t0 = time.perf_counter()
    result = reg.register_sequence(model, [read_target(p) for p in paths], anchors, config)
    elapsed = time.perf_counter() - t0
    save_model(model, out / "model.obj")
    save_frames(out / "frames.json", np.stack([p.rotations for p in result.poses]),
                np.stack([p.translation for p in result.poses]), result.shape.coefficients)
    for f, mesh in enumerate(result.meshes):
        save_mesh(mesh, out / "meshes" / f"{frame_name(f)}.obj")
    reg.save_report(result, out / "registration.json")
    write_manifest(out, "register", args, {"registration": config.to_dict()},
                   {"frames": len(paths), "seconds": elapsed})
    print(f"registered {len(paths)} frames in {elapsed:.1f} s; shape {result.shape.coefficients}")


def cmd_encode(args, cfg):
    section = dict(cfg.get("encode", {}))
    if args.L is not None:
        section["L"] = args.L
    if args.T is not None:
        section["T"] = args.T
    config = pipeline.EncodeConfig.from_dict(section)
    data = load_sequence(args.sequence, args.captures)
    synth_manifest = Path(args.captures or args.sequence) / "run_manifest.json"
    if synth_manifest.exists():
        with open(synth_manifest) as fh:
            data.seeds.update(json.load(fh).get("seeds", {}))
    ar = pipeline.encode(data, config, log=print)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    size = arc.save(ar, out)
    comp = pipeline.compression(ar, size)
    atomic_write_text(out.with_suffix(".compression.json"), json.dumps(comp.to_dict(), indent=1))
    write_manifest(out.parent, "encode", args, {"encode": config.to_dict()},
                   {"archive": out.name, "bytes": size, "seeds": data.seeds})
    print(f"archive {out}: {size} bytes, ratio {comp.ratio:.4f} "
          f"(deformation only {comp.deform_ratio:.4f}; reference 0.0252)")


def _query_pose(args, ar):
    if args.pose:
        with open(args.pose) as fh:
            d = json.load(fh)
        return PoseParams(np.array(d["rotations"], float),
                          np.array(d.get("translation", [0.0, 0.0, 0.0]), float))
    return None


def _decode(args, ar):
    pose = _query_pose(args, ar)
    frame = args.frame if args.frame is not None or pose is not None else 0
    return pipeline.decode(ar, frame, pose, args.mode)


def cmd_decode(args, cfg):
    ar = arc.load(args.archive)
    d = _decode(args, ar)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    T, n = ar.texture.T, ar.texture.n_triangles
    uv = atlas_uvs(n, T).reshape(-1, 2)
    write_obj(out / "mesh.obj", d.mesh.vertices, d.mesh.triangles, uv,
              np.arange(3 * n).reshape(n, 3), mtllib="mesh.mtl")
    atomic_write_text(out / "mesh.mtl", "newmtl atlas\nmap_Kd atlas.ppm\n")
    imageio.write_ppm(out / "atlas.ppm", bake_atlas(d.textures, T))
    write_manifest(out, "decode", args, {}, {"frame": args.frame, "mode": args.mode})
    print(f"decoded mesh and atlas to {out}")


def _frames_arg(text, n):
    if text is None:
        return np.arange(n)
    out = []
    for part in text.split(","):
        a, sep, b = part.partition("-")
        out.extend(range(int(a), int(b) + 1) if sep else [int(a)])
    return np.array(out, dtype=np.int64)


def cmd_eval(args, cfg):
    ar = arc.load(args.archive)
    truth_dir = Path(args.truth)
    frames = _frames_arg(args.frames, ar.n_frames)
    truth = np.zeros((ar.n_frames, ar.model.template.n_vertices, 3))
    for f in frames:
        p = truth_dir / "meshes" / f"{frame_name(int(f))}.obj"
        if not p.exists():
            raise ParameterError(f"ground truth for frame {int(f)} missing: {p}")
        truth[f] = load_mesh(p).vertices
    section = cfg.get("eval", {})
    rep = pipeline.evaluate(ar, truth, frames, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.txt", rep.to_text())
    atomic_write_text(out / "report.json", rep.to_json())
    diag = ar.model.template.bbox_diagonal()
    vmax = float(section.get("heatmap_max", 0.02 * diag))
    cams = load_cameras(truth_dir / "cameras.json") if (truth_dir / "cameras.json").exists() \
        else synth.default_cameras(synth.SynthConfig())
    n_maps = min(max(args.heatmaps, 0), len(frames))
    picks = frames[np.round(np.linspace(0, len(frames) - 1, n_maps)).astype(int)] if n_maps else []
    for f in picks:
        mesh = ar.model.template.with_vertices(truth[f])
        rec = pipeline.decode(ar, int(f), mode=args.mode, textures=False).mesh
        img = error_heatmap(rec, vertex_errors(rec, mesh), cams[0], (0.0, vmax))
        imageio.write_ppm(out / f"heatmap_{frame_name(int(f))}.ppm", img)
    write_manifest(out, "eval", args, {"eval": section})
    print(f"rmse {rep.rmse:.6g} over {len(frames)} frames; report in {out}")


def cmd_render(args, cfg):
    ar = arc.load(args.archive)
    d = _decode(args, ar)
    cams = load_cameras(args.cameras) if args.cameras else synth.default_cameras(synth.SynthConfig())
    cam = cams[args.camera]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    img = render_textured(d.mesh, cam, d.textures, ar.texture.T, background=1.0)
    imageio.write_ppm(out / "render.ppm", img)
    if args.maps:
        depth, ids = rasterize(d.mesh, cam)
        imageio.write_depth(out / "depth", depth)
        imageio.write_ids(out / "ids", ids)
    write_manifest(out, "render", args, {}, {"camera": args.camera})
    print(f"rendered to {out / 'render.ppm'}")


# ---- parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="eigenavatar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file with per-command sections")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value")
        return sp

    s = common(sub.add_parser("synth", help="generate a synthetic sequence"))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--noise", type=float, help="target noise, fraction of bbox diagonal")
    s.add_argument("--no-images", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = common(sub.add_parser("register", help="fit the body model to target frames"))
    s.add_argument("sequence", help="sequence directory with targets/ and anchors.json")
    s.add_argument("--out", required=True)
    s.add_argument("--anchors")
    s.add_argument("--frames", type=int, help="register only the first N frames")
    s.set_defaults(func=cmd_register)

    s = common(sub.add_parser("encode", help="fit subspaces and regressors, write an archive"))
    s.add_argument("sequence", help="directory with frames.json and meshes/")
    s.add_argument("--captures", help="directory with cameras.json and images/ (default: sequence)")
    s.add_argument("--out", required=True, help="archive path")
    s.add_argument("-L", type=int)
    s.add_argument("-T", type=int)
    s.set_defaults(func=cmd_encode)

    for name, fn, helptext in (("decode", cmd_decode, "reconstruct a mesh and texture atlas"),
                               ("render", cmd_render, "render a decoded frame")):
        s = common(sub.add_parser(name, help=helptext))
        s.add_argument("archive")
        s.add_argument("--out", required=True)
        s.add_argument("--frame", type=int)
        s.add_argument("--pose", help="JSON file with rotations (J x 3) and translation")
        s.add_argument("--mode", choices=pipeline.DECODE_MODES, default="stored")
        if name == "render":
            s.add_argument("--cameras")
            s.add_argument("--camera", type=int, default=0)
            s.add_argument("--maps", action="store_true", help="also dump depth and id maps")
        s.set_defaults(func=fn)

    s = common(sub.add_parser("eval", help="compare decoded meshes with ground truth"))
    s.add_argument("archive")
    s.add_argument("--truth", required=True, help="sequence directory with ground-truth meshes/")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", help="e.g. 0-99,220-320")
    s.add_argument("--mode", choices=pipeline.DECODE_MODES, default="stored")
    s.add_argument("--heatmaps", type=int, default=4, help="number of heatmap images")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        args.func(args, cfg)
    except (EigenAvatarError, OSError) as exc:
        print(f"eigenavatar {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
