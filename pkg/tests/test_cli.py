import json
import math
import os

import numpy as np
import pytest

from kspacenet.cli import EXIT_CODES, main
from kspacenet.io import read_volume, sha256_file, write_volume
from kspacenet.metrics import ssos
from kspacenet.phantom import CoilImages



@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text("[phantom]\nnx = 32\nny = 32\nnum_frames = 5\nk_support = 3\n"
                 "[schedule]\na_half_width = [6, 6]\nacs_size = [12, 12]\n"
                 "[recon]\nframes = [0, 2]\n")
    return str(p)


def run(argv, capsys=None):
    code = main(argv)
    err = capsys.readouterr().err if capsys else ""
    return code, err


def test_pipeline_round_trip(tmp_path, small_config, capsys):
    ph, sa, rz, ev = (str(tmp_path / d) for d in ("ph", "sa", "rz", "ev"))
    assert main(["phantom", "--config", small_config, "--out", ph]) == 0
    assert main(["sample", "--config", small_config, "--input", ph, "--out", sa]) == 0
    assert main(["recon", "--config", small_config, "--engine", "zero", "--input", sa,
                 "--out", rz]) == 0
    assert main(["eval", "--config", small_config, "--input", rz, "--out", ev]) == 0
    files = sorted(os.listdir(sa))
    assert {"mask_t00.png", "mask_t00.ksv", "masked_t02.ksv", "truth_t02.ksv"} <= set(files)
    man = json.loads(open(os.path.join(rz, "manifest.json")).read())
    assert man["command"] == "recon"
    assert man["config"]["phantom"]["nx"] == 32
    assert {"numpy", "scipy", "python", "kspacenet"} <= set(man["versions"])
    assert man["inputs"][os.path.join(sa, "masked_t00.ksv")] == sha256_file(
        os.path.join(sa, "masked_t00.ksv"))
    assert man["outputs"]["report.csv"] == sha256_file(os.path.join(rz, "report.csv"))
    rep = open(os.path.join(rz, "report.csv")).read().splitlines()
    assert rep[0] == "engine,reference,frame,psnr_db,ssim,seconds"
    assert len(rep) == 3
    ev_rows = open(os.path.join(ev, "report.csv")).read().splitlines()
    assert [r.split(",")[3] for r in ev_rows[1:]] == [r.split(",")[3] for r in rep[1:]]


def test_rerun_from_manifest_is_bitwise(tmp_path, small_config):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["phantom", "--config", small_config, "--seed", "4", "--out", a]) == 0
    man = json.loads(open(os.path.join(a, "manifest.json")).read())
    argv = [x if x != a else b for x in man["argv"]]
    assert main(argv) == 0
    man_b = json.loads(open(os.path.join(b, "manifest.json")).read())
    assert man["outputs"] == man_b["outputs"]


def test_grappa_fully_sampled_gives_infinite_psnr(tmp_path, small_config):
    ph, full, rg = (str(tmp_path / d) for d in ("ph", "full", "rg"))
    assert main(["phantom", "--config", small_config, "--out", ph]) == 0
    os.makedirs(full)
    for t in (0, 2):
        ks = read_volume(os.path.join(ph, f"kspace_t{t:02d}.ksv"))
        write_volume(os.path.join(full, f"masked_t{t:02d}.ksv"), ks)
        from kspacenet.sampling import SamplingMask
        write_volume(os.path.join(full, f"mask_t{t:02d}.ksv"), SamplingMask(np.ones((32, 32), bool)))
        from kspacenet.phantom import ifft2c
        self_ref = ssos(ifft2c(ks.data))
        write_volume(os.path.join(full, f"truth_t{t:02d}.ksv"), CoilImages(self_ref[None] + 0j))
    assert main(["recon", "--config", small_config, "--engine", "grappa", "--input", full,
                 "--out", rg]) == 0
    rows = open(os.path.join(rg, "report.csv")).read().splitlines()[1:]
    assert all(r.split(",")[3] == "inf" for r in rows)
    man = json.loads(open(os.path.join(rg, "manifest.json")).read())
    assert math.isinf(man["mean_psnr_db"])


def test_error_categories(tmp_path, small_config, capsys):
    code, err = run(["recon", "--input", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")],
                    capsys)
    assert code == EXIT_CODES["missing-file"] == 3
    assert json.loads(err)["error"] == "missing-file"
    bad = tmp_path / "bad.toml"
    bad.write_text("[phantom]\nwidth = 3\n")
    code, err = run(["phantom", "--config", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and json.loads(err)["error"] == "schema-violation"
    code, err = run(["repro", "--preset", "nope", "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    # GRAPPA needs the full lattice; vs = 2 leaves gaps
    code, err = run(["recon", "--config", small_config, "--engine", "grappa",
                     "--out", str(tmp_path / "g")], capsys)
    assert code == 5 and json.loads(err)["error"] == "invalid-argument"
    code, err = run(["infer", "--config", small_config, "--out", str(tmp_path / "n")], capsys)
    assert code == 2


def test_env_prefix_override(tmp_path, small_config, monkeypatch):
    monkeypatch.setenv("KSDL_RECON__FRAMES", "[1]")
    out = str(tmp_path / "o")
    assert main(["recon", "--config", small_config, "--engine", "zero", "--out", out]) == 0
    rows = open(os.path.join(out, "report.csv")).read().splitlines()
    assert [r.split(",")[2] for r in rows[1:]] == ["1"]


def test_train_infer_smoke(tmp_path, small_config):
    cfg = tmp_path / "t.toml"
    cfg.write_text(open(small_config).read() + "[train]\nnum_slices = 1\nepochs = 1\n")
    tr, inf = str(tmp_path / "tr"), str(tmp_path / "inf")
    assert main(["train", "--config", str(cfg), "--out", tr]) == 0
    hist = open(os.path.join(tr, "history.csv")).read().splitlines()
    assert hist[0] == "epoch,train_loss,val_loss,lr" and len(hist) == 2
    assert main(["infer", "--config", str(cfg), "--checkpoint", os.path.join(tr, "network.ckpt"),
                 "--out", inf]) == 0
    assert os.path.exists(os.path.join(inf, "recon_t02.ksv"))
