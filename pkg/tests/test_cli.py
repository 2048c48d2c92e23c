"""Command-line pipeline on a miniature synthetic dataset."""
import csv
import io
from contextlib import redirect_stdout

import numpy as np
import pytest

from talkup.cli import STAGE_GRAPH, main, topo_order
from talkup.codec import decode_stream
from talkup.synthdata.io import load_clip

CONFIG = """\
desk: true
data: {n_train: 2, n_val: 1, n_test: 1, n_frames: 25}
train_backbone: {batch_size: 2, val_every: 2}
train_syncnet: {batch_size: 4}
train_interp: {batch_size: 1}
"""


def run(*argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.yaml").write_text(CONFIG)
    common = ["--config", root / "cfg.yaml", "--data", root / "data", "--run", root / "run"]
    assert run("gen-data", "--materialize", *common)[0] == 0
    for stage in ("train-backbone", "train-syncnet", "train-e2e", "train-interp"):
        code, out = run(stage, "--steps", 2, *common)
        assert code == 0, (stage, out)
    return root, common


def test_stage_order_respects_dependencies():
    order = topo_order()
    for stage, deps in STAGE_GRAPH.items():
        for d in deps:
            assert order.index(d) < order.index(stage)


def test_training_writes_artifacts(workspace):
    root, _ = workspace
    names = {p.name for p in (root / "run").iterdir()}
    for expected in ("backbone.ckpt", "syncnet.ckpt", "e2e_backbone.ckpt", "e2e_animator.ckpt", "interp.ckpt",
                     "mel_norm.json", "seed.txt", "e2e_losses.png"):
        assert expected in names


def test_encode_decode_upsample(workspace):
    root, common = workspace
    stream = root / "clip.tkv"
    assert run("encode", root / "data" / "clip0003.synth.yaml", stream, *common)[0] == 0
    lr, ident, header = decode_stream(stream.read_bytes())
    assert lr.shape == (25, 3, 8, 8) and header.hr_side == 64
    assert run("decode", stream, root / "dec", *common)[0] == 0
    assert len(list((root / "dec" / "lr").iterdir())) == 25
    out = root / "up.npz"
    code, _ = run("upsample", stream, out, "--audio", root / "data" / "media" / "clip0003.wav", *common)
    assert code == 0
    frames = load_clip(out).frames
    assert frames.shape == (25, 3, 64, 64) and np.isfinite(frames).all()


def test_interp_mode_round_trip(workspace):
    root, common = workspace
    stream = root / "clip5.tkv"
    assert run("encode", root / "data" / "clip0003.synth.yaml", stream, "--fps-mode", "5interp", *common)[0] == 0
    lr, _, _ = decode_stream(stream.read_bytes())
    assert len(lr) == 5
    code, _ = run("upsample", stream, root / "up5", "--audio", root / "data" / "media" / "clip0003.wav", *common)
    assert code == 0 and len(list((root / "up5").iterdir())) == 25


def test_eval_table(workspace):
    root, common = workspace
    code, out = run("eval", *common)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.split("figure:")[0])))
    assert rows[-1]["clip"] == "ALL"
    assert float(rows[-1]["psnr"]) > 0 and float(rows[-1]["lse_d"]) >= 0


def test_bpp_table_rows():
    code, out = run("bpp", "--method", "all", "--table")
    assert code == 0
    rows = {r["method"]: r for r in csv.DictReader(io.StringIO(out))}
    assert float(rows["ours"]["bpp"]) == pytest.approx(0.0234375)
    assert rows["fs-vid2vid"]["bpp"] == "n/a"


def test_dry_run_writes_nothing(tmp_path):
    code, _ = run("gen-data", "--desk", "--dry-run", "--data", tmp_path / "d", "--run", tmp_path / "r")
    assert code == 0 and not (tmp_path / "d").exists() and not (tmp_path / "r").exists()


def test_missing_prerequisite_exit_code(tmp_path):
    assert run("train-backbone", "--desk", "--data", tmp_path / "none", "--run", tmp_path / "r")[0] == 3
    assert run("upsample", tmp_path / "s.tkv", tmp_path / "o.npz", "--audio", tmp_path / "a.wav", "--desk",
               "--run", tmp_path / "r")[0] == 2


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("optim: {learning_rate: 1}\n")
    assert run("bpp", "--config", cfg)[0] == 2
