import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from restoreformer.losses import RoiBoxes
from restoreformer.model import HQGenerator
from restoreformer.workbench import checkpoint as ck
from restoreformer.workbench import cli, imageio, synthetic, train
from restoreformer.workbench.config import StageConfig, desk_config


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bit_exact(tmp_path):
    m = HQGenerator(StageConfig().model_config(), seed=3)
    state = m.store.state_dict()
    state["counts"] = np.arange(5, dtype=np.int64)
    path = tmp_path / "m.pfck"
    ck.save(path, state, StageConfig().to_text())
    back, text = ck.load(path)
    assert set(back) == set(state)
    for n, v in state.items():
        assert back[n].dtype == v.dtype
        np.testing.assert_array_equal(back[n], v)
    assert StageConfig.from_text(text) == StageConfig()


def test_checkpoint_crc_and_version(tmp_path):
    blob = bytearray(ck.dumps({"w": np.linspace(0, 1, 10)}))
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0x01
    with pytest.raises(ck.CheckpointError, match="CRC"):
        ck.loads(bytes(flipped))
    body = bytearray(blob[:-4])
    body[4] = 99   # version field follows the magic; re-seal so only the version is wrong
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.loads(bytes(body) + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(ck.CheckpointError):
        ck.loads(b"NOPE" + bytes(blob[4:]))
    np.testing.assert_array_equal(ck.loads(bytes(blob))["w"], np.linspace(0, 1, 10))


# ---------------------------------------------------------------- config

def test_config_text_round_trip_and_unknown_key(tmp_path):
    cfg = StageConfig(seed=5, lr=3e-4, roi_mouth=(0.3, 0.6, 0.7, 0.8), train_dictionary=True)
    assert StageConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ValueError, match="unknown config key"):
        StageConfig.from_text("image_size = 32\nlearning_rate = 1e-3\n")
    p = tmp_path / "c.cfg"
    cfg.save(p)
    assert StageConfig.load(p, seed=9).seed == 9


@pytest.mark.parametrize("bad", [dict(image_size=48), dict(z_channels=30, n_heads=4), dict(codebook_size=1),
                                 dict(stage="restore")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        StageConfig(**bad)


def test_lr_schedule_shape():
    cfg = desk_config("full_stage1")
    assert cfg.lr_at(0) == 7e-5
    assert cfg.lr_at(599_999) == 7e-5
    assert cfg.lr_at(600_000) == pytest.approx(7e-6)


def test_shipped_desk_configs_load():
    for name in ("desk32_dict", "desk64_dict", "desk64_restore"):
        cfg = desk_config(name)
        assert cfg.image_size in (32, 64)


# ---------------------------------------------------------------- data

def test_gen_data_deterministic_with_manifest(tmp_path):
    a = synthetic.gen_data(tmp_path / "a", 8, 32, 0)
    synthetic.gen_data(tmp_path / "b", 8, 32, 0)
    assert len(a) == 8
    for name in a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = (tmp_path / "a" / "manifest.txt").read_text().splitlines()
    assert len([line for line in manifest if not line.startswith("#")]) == 8
    names, imgs = synthetic.load_dataset(tmp_path / "a")
    assert names == a and imgs.shape == (8, 32, 32, 3)
    other = synthetic.gen_data(tmp_path / "c", 8, 32, 1)
    assert (tmp_path / "a" / a[0]).read_bytes() != (tmp_path / "c" / other[0]).read_bytes()


@pytest.mark.parametrize("size", [32, 64])
def test_eye_centroids_inside_boxes(size):
    boxes = RoiBoxes()
    imgs, _ = synthetic.make_faces(8, size, 0, boxes)
    for img in imgs:
        cents = synthetic.dark_centroids(img)   # normalised (x, y), left then right half
        assert None not in cents
        for (x, y), box in zip(cents, (boxes.left_eye, boxes.right_eye)):
            assert box[0] <= x <= box[2] and box[1] <= y <= box[3]


def test_gen_data_rejects_bad_size(tmp_path):
    with pytest.raises(ValueError):
        synthetic.gen_data(tmp_path, 2, 40, 0)


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)) / 255.0
    imageio.write_ppm(tmp_path / "x.ppm", img)
    assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6\n")
    np.testing.assert_array_equal(imageio.read_ppm(tmp_path / "x.ppm"), img)


# ---------------------------------------------------------------- training plumbing

def test_loss_csv_header_names_terms(tmp_path):
    cfg = StageConfig(iterations=2, log_every=1)
    res = train.train_dict(cfg, out_dir=tmp_path)
    lines = res.csv.read_text().splitlines()
    header = [line for line in lines if not line.startswith("#")][0].split(",")
    assert header == list(train.DICT_COLUMNS)
    assert any("lambda_c=0.25" in line for line in lines if line.startswith("#"))


def test_divergence_names_term(monkeypatch):
    from restoreformer.tensor import NonFiniteError

    def blow_up(*a, **k):
        raise NonFiniteError("exp", 3)

    monkeypatch.setattr(train.L, "perceptual_loss", blow_up)
    with pytest.raises(train.TrainingDiverged, match="'per' at iteration 0") as info:
        train.train_dict(StageConfig(iterations=1))
    assert info.value.term == "per"


def test_restore_stage_loads_stage1_and_echoes_weights(tmp_path):
    s1 = train.train_dict(StageConfig(iterations=1), out_dir=tmp_path / "s1")
    cfg = StageConfig(stage="restore", iterations=1, stage1_checkpoint=str(s1.checkpoint), lr=7e-6)
    res = train.train_restorer(cfg, out_dir=tmp_path / "s2")
    text = res.csv.read_text()
    assert "lambda_per=1.0 lambda_p=0.25 lambda_disc=1.0 lambda_style=2000.0 lambda_adv=0.8 lambda_id=1.5" in text
    header = [line for line in text.splitlines() if not line.startswith("#")][0].split(",")
    assert header == list(train.RESTORE_COLUMNS)
    with pytest.raises(ValueError, match="dictionary"):
        train.train_restorer(cfg.replace(codebook_size=32), out_dir=None)


# ---------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["gen-data", "--out", str(root / "data"), "--n", "3", "--size", "64", "--seed", "1"]) == 0
    cfg = desk_config("desk64_dict").replace(iterations=2)
    cfg.save(root / "s1.cfg")
    assert cli.main(["train-dict", "--config", str(root / "s1.cfg"), "--data", str(root / "data"),
                     "--out", str(root / "s1")]) == 0
    cfg = desk_config("desk64_restore").replace(iterations=2)
    cfg.save(root / "s2.cfg")
    assert cli.main(["train-restore", "--config", str(root / "s2.cfg"), "--data", str(root / "data"),
                     "--stage1", str(root / "s1" / "stage1.pfck"), "--out", str(root / "s2")]) == 0
    assert cli.main(["degrade", str(root / "data"), "--out", str(root / "lq"), "--seed", "4"]) == 0
    assert cli.main(["restore", "--checkpoint", str(root / "s2" / "stage2.pfck"), str(root / "lq"),
                     "--out", str(root / "out"), "--dump-attention"]) == 0
    return root


def test_cli_restore_outputs(cli_run):
    outs = sorted(p.name for p in (cli_run / "out").glob("*_restored.ppm"))
    assert outs == [f"face_{i:04d}_restored.ppm" for i in range(3)]
    cfg = desk_config("desk64_restore")
    maps = list((cli_run / "out").glob("face_0000_attn_*.ppm"))
    assert len(maps) == cfg.n_heads * 2


def test_cli_eval_report(cli_run, capsys):
    report = cli_run / "report.csv"
    assert cli.main(["eval", "--restored", str(cli_run / "out"), "--reference", str(cli_run / "data"),
                     "--out", str(report)]) == 0
    rows = report.read_text().splitlines()
    assert rows[0] == "name,psnr,ssim,idd" and len(rows) == 4
    assert "n=3" in capsys.readouterr().out


def test_cli_restore_size_mismatch(cli_run, tmp_path):
    synthetic.gen_data(tmp_path / "small", 1, 32, 0)
    ckpt = str(cli_run / "s2" / "stage2.pfck")
    with pytest.raises(SystemExit, match="resize"):
        cli.main(["restore", "--checkpoint", ckpt, str(tmp_path / "small"), "--out", str(tmp_path / "o")])
    assert cli.main(["restore", "--checkpoint", ckpt, str(tmp_path / "small"), "--out", str(tmp_path / "o"),
                     "--resize"]) == 0
    assert Path(tmp_path / "o" / "face_0000_restored.ppm").exists()


def test_cli_degrade_fixed_spec(tmp_path):
    synthetic.gen_data(tmp_path / "d", 1, 32, 0)
    spec = "sigma=0,r=1,delta=0,q=100,seed=0"
    assert cli.main(["degrade", str(tmp_path / "d"), "--out", str(tmp_path / "lq"), "--spec", spec]) == 0
    a = imageio.read_ppm(tmp_path / "d" / "face_0000.ppm")
    b = imageio.read_ppm(tmp_path / "lq" / "face_0000.ppm")
    assert np.abs(a - b).max() <= 1 / 255 + 1e-12


def test_cli_config_accepts_shipped_name(tmp_path):
    assert cli.main(["train-dict", "--config", "desk32_dict", "--iterations", "1", "--out", str(tmp_path)]) == 0
    _, text = ck.load(tmp_path / "stage1.pfck")
    assert StageConfig.from_text(text) == desk_config("desk32_dict").replace(iterations=1)
