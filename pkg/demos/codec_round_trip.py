"""Encode a synthetic sequence, write the archive, decode a few frames and
print how far each decoded mesh is from the ground truth.

    python3 demos/codec_round_trip.py --frames 60 --out /tmp/demo
"""
import argparse
from pathlib import Path

import numpy as np

from eigenavatar import archive, imageio, pipeline, synth
from eigenavatar.raster import render_textured
from eigenavatar.regress import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=60)
    ap.add_argument("--out", default="demo_output")
    ap.add_argument("-L", type=int, default=10)
    ap.add_argument("-T", type=int, default=8)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    seq = synth.generate(synth.SynthConfig(n_frames=args.frames, image_size=128))
    print(f"generated {seq.n_frames} frames, {seq.model.template.n_vertices} vertices")
    cfg = pipeline.EncodeConfig(L=args.L, T=args.T, deform_train=TrainConfig(iterations=500),
                                texture_train=TrainConfig(iterations=200))
    ar = pipeline.encode(pipeline.SequenceData.from_synth(seq), cfg, log=print)
    size = archive.save(ar, out / "sequence.eav")
    comp = pipeline.compression(ar, size)
    print(f"archive {size} bytes = {comp.ratio:.2%} of raw vertices and texels "
          f"(deformation part {comp.deform_ratio:.2%} of raw vertices)")

    ar = archive.load(out / "sequence.eav")
    diag = seq.model.template.bbox_diagonal()
    for f in np.linspace(0, seq.n_frames - 1, 4).astype(int):
        for mode in pipeline.DECODE_MODES:
            d = pipeline.decode(ar, int(f), mode=mode)
            err = np.linalg.norm(d.mesh.vertices - seq.clothed[f], axis=1)
            print(f"frame {f:4d} {mode:9s}: mean error {err.mean() / diag:.3%} of bbox diagonal")
        img = render_textured(d.mesh, seq.cameras[0], d.textures, ar.texture.T, background=1.0)
        imageio.write_ppm(out / f"frame_{f:04d}.ppm", img)
        imageio.write_ppm(out / f"frame_{f:04d}_capture.ppm", seq.image(int(f), 0))
    print(f"renders in {out}")


if __name__ == "__main__":
    main()
