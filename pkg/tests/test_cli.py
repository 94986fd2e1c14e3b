import json

import numpy as np
import pytest

from scipy.spatial import cKDTree

from eigenavatar import cli, imageio
from eigenavatar.errors import ParameterError
from eigenavatar.geometry import axis_angle_to_matrix, geodesic_angle
from eigenavatar.meshio import load_mesh
from eigenavatar.raster import texel_barycentrics


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    seq = root / "seq"
    assert cli.main(["synth", "--out", str(seq), "--frames", "4", "--seed", "1",
                     "--set", "synth.image_size=32"]) == 0
    return root, seq


def test_synth_writes_a_sequence_directory(work):
    _, seq = work
    for name in ("model.obj", "frames.json", "cameras.json", "anchors.json", "run_manifest.json",
                 "meshes/frame_0003.obj", "targets/frame_0000.obj", "images/frame_0001_cam0.ppm"):
        assert (seq / name).exists(), name
    man = json.loads((seq / "run_manifest.json").read_text())
    assert man["command"] == "synth" and man["config"]["synth"]["image_size"] == 32
    assert man["seeds"] == {"synth": 1}


def test_register_recovers_pose_of_an_unclothed_sequence(tmp_path):
    seq, out = tmp_path / "bare", tmp_path / "reg"
    assert cli.main(["synth", "--out", str(seq), "--frames", "2", "--no-images",
                     "--set", "synth.deform_amplitude=0"]) == 0
    assert cli.main(["register", str(seq), "--out", str(out)]) == 0
    poses, _, shape = cli.load_frames(out / "frames.json")
    truth, _, true_shape = cli.load_frames(seq / "frames.json")
    err = geodesic_angle(axis_angle_to_matrix(poses), axis_angle_to_matrix(truth))
    assert np.degrees(err.max()) < 1.0
    np.testing.assert_allclose(shape, true_shape, atol=1e-3)
    assert json.loads((out / "registration.json").read_text())["frames"]


def test_register_fits_the_surface_of_a_clothed_sequence(work):
    # a skin-tight model cannot match clothed targets pose for pose; the
    # free-form refinement must still bring the mesh onto the target surface
    root, seq = work
    out = root / "reg"
    assert cli.main(["register", str(seq), "--out", str(out), "--frames", "2"]) == 0
    for f in range(2):
        got = load_mesh(out / "meshes" / f"frame_{f:04d}.obj").vertices
        truth = load_mesh(seq / "meshes" / f"frame_{f:04d}.obj")
        pts = np.einsum("kc,ncd->nkd", texel_barycentrics(6),
                        truth.vertices[truth.triangles]).reshape(-1, 3)
        dist = cKDTree(np.vstack([truth.vertices, pts])).query(got)[0]
        assert dist.mean() < 0.01 * truth.bbox_diagonal()


def test_encode_decode_render_eval(work):
    root, seq = work
    ar = root / "enc" / "seq.eav"
    fast = ['--set', 'encode.deform_train={"iterations": 10}',
            '--set', 'encode.texture_train={"iterations": 5}']
    assert cli.main(["encode", str(seq), "--out", str(ar), "-L", "2", "-T", "3"] + fast) == 0
    comp = json.loads(ar.with_suffix(".compression.json").read_text())
    assert comp["archive_bytes"] == ar.stat().st_size

    dec = root / "dec"
    assert cli.main(["decode", str(ar), "--out", str(dec), "--frame", "2"]) == 0
    text = (dec / "mesh.obj").read_text()
    assert "mtllib mesh.mtl" in text and "vt " in text
    assert imageio.read_ppm(dec / "atlas.ppm").ndim == 3

    pose = root / "pose.json"
    pose.write_text(json.dumps({"rotations": np.zeros((16, 3)).tolist()}))
    ren = root / "ren"
    assert cli.main(["render", str(ar), "--out", str(ren), "--pose", str(pose), "--mode",
                     "regressed", "--cameras", str(seq / "cameras.json"), "--maps"]) == 0
    assert imageio.read_ppm(ren / "render.ppm").shape == (32, 32, 3)
    assert imageio.read_raw(ren / "ids.raw").shape == (32, 32)

    ev = root / "eval"
    assert cli.main(["eval", str(ar), "--truth", str(seq), "--out", str(ev), "--frames", "0-1,3",
                     "--heatmaps", "2"]) == 0
    rep = json.loads((ev / "report.json").read_text())
    assert rep["frames"] == [0, 1, 3] and rep["rmse"] < 0.05
    assert len(list(ev.glob("heatmap_*.ppm"))) == 2


def test_errors_exit_with_status_one(work, capsys):
    root, _ = work
    assert cli.main(["decode", str(root / "missing.eav"), "--out", str(root / "x")]) == 1
    assert "error" in capsys.readouterr().err
    bad = root / "bad.eav"
    bad.write_bytes(b"garbage")
    assert cli.main(["render", str(bad), "--out", str(root / "y")]) == 1


def test_config_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"encode": {"L": 4}}))
    cfg = cli.load_config(p, ["encode.T=8", "synth.name=abc", "encode.L=5"])
    assert cfg == {"encode": {"L": 5, "T": 8}, "synth": {"name": "abc"}}
    with pytest.raises(ParameterError):
        cli.load_config(None, ["novalue"])
    assert cli._frames_arg("2-4,7", 10).tolist() == [2, 3, 4, 7]
