"""Hold out short gaps (interpolation) and a range of unseen poses
(extrapolation), train only on the remaining frames, and compare the error
of pose-regressed deformations with that of the stored coefficients.

    python3 demos/interpolation_extrapolation.py
"""
import argparse

import numpy as np

from eigenavatar import pipeline, synth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=500)
    args = ap.parse_args()

    config = synth.SynthConfig(n_frames=args.frames, image_size=64)
    seq = synth.generate(config)
    interp, extra = synth.holdout_frames(seq.n_frames, config.novel_range)
    held = np.union1d(interp, extra)
    train = np.setdiff1d(np.arange(seq.n_frames), held)
    print(f"training on {len(train)} frames; {len(interp)} interpolation and "
          f"{len(extra)} extrapolation frames held out")

    cfg = pipeline.EncodeConfig(texture=False, train_frames=tuple(int(f) for f in train))
    ar = pipeline.encode(pipeline.SequenceData.from_synth(seq), cfg, log=print)
    diag = seq.model.template.bbox_diagonal()
    for name, frames in (("interpolation", interp), ("extrapolation", extra)):
        if len(frames) == 0:
            continue
        reg = pipeline.evaluate(ar, seq.clothed, frames, mode="regressed").rmse
        direct = pipeline.evaluate(ar, seq.clothed, frames, mode="stored").rmse
        naked = np.sqrt(np.mean(np.sum((seq.naked[frames] - seq.clothed[frames]) ** 2, -1)))
        print(f"{name:14s} regressed {reg / diag:.3%}  stored {direct / diag:.3%}  "
              f"no deformation {naked / diag:.3%}  (of bbox diagonal)")


if __name__ == "__main__":
    main()
