"""Reconstruction error per body part as the number of deformation bases
grows, next to the cumulative contribution ratio of each part's spectrum.

    python3 demos/basis_count_study.py --frames 120
"""
import argparse
import dataclasses

import numpy as np

from eigenavatar import pipeline, synth
from eigenavatar.evaluation import part_rmse, vertex_errors
from eigenavatar.regress import TrainConfig
from eigenavatar.subspace import cumulative_contribution


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=120)
    ap.add_argument("--Ls", default="1,3,5,10")
    args = ap.parse_args()
    Ls = [int(x) for x in args.Ls.split(",")]

    seq = synth.generate(synth.SynthConfig(n_frames=args.frames, image_size=64))
    data = pipeline.SequenceData.from_synth(seq)
    cfg = pipeline.EncodeConfig(L=max(Ls), texture=False, deform_train=TrainConfig(iterations=0))
    ar = pipeline.encode(data, cfg)
    labels = seq.model.template.part_of_vertex
    frames = np.arange(seq.n_frames)

    print("part  " + "  ".join(f"rmse@L={L:<3d}" for L in Ls) + "  " +
          "  ".join(f"ratio@L={L:<3d}" for L in Ls))
    rows = []
    for L in Ls:
        rec = pipeline.reconstruct_vertices(ar if L == max(Ls) else _truncate(ar, L), frames)
        rows.append(part_rmse(vertex_errors(rec, seq.clothed), labels, ar.deform.n_parts))
    for l, sub in enumerate(ar.deform.subspaces):
        rmse = "  ".join(f"{rows[k][l] * 1000:8.3f}mm" for k in range(len(Ls)))
        ratio = "  ".join(f"{cumulative_contribution(sub.spectrum, L):9.4f}" for L in Ls)
        print(f"{l:4d}  {rmse}  {ratio}")


def _truncate(ar, L):
    """Same archive with every part's subspace cut to L modes."""
    short = ar.deform.truncated(L)
    coeffs = [c[:, :short.subspaces[l].n_components] for l, c in enumerate(ar.deform_coeffs)]
    return dataclasses.replace(ar, deform=short, deform_coeffs=coeffs)


if __name__ == "__main__":
    main()
