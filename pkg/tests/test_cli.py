import json
import shutil

import numpy as np
import pytest

from stlca import cli
from stlca import video_data as vd

# tiny but non-degenerate settings shared by the CLI runs
SIZE = "32x32"
FRAMES = "6"
SIDE = "6x10"


def run_cli(*argv) -> int:
    return cli.run(list(argv))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run_cli("synth", "--out", str(out), "--size", SIZE, "--frames", FRAMES,
                   "--shapes", "2", "--seed", "5", "--side-range", SIDE)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = run_cli("train", "--out", str(out), "--data", "synthetic",
                   "--size", SIZE, "--frames", FRAMES, "--shapes", "2",
                   "--steps", "8", "--seed", "3", "--side-range", SIDE)
    assert code == 0
    return out / "checkpoint_final.npz"


class TestSynth:
    def test_layout(self, synth_dir):
        frames = sorted((synth_dir / "frames").glob("*.png"))
        masks = sorted((synth_dir / "masks").glob("*.png"))
        flows = sorted((synth_dir / "flows").glob("*.flo"))
        assert len(frames) == 6 and len(masks) == 6
        assert len(flows) > 0
        meta = json.loads((synth_dir / "meta.json").read_text())
        assert meta["frames"] == 6 and meta["height"] == 32

    def test_deterministic(self, synth_dir, tmp_path):
        other = tmp_path / "again"
        assert run_cli("synth", "--out", str(other), "--size", SIZE,
                       "--frames", FRAMES, "--shapes", "2", "--seed", "5",
                       "--side-range", SIDE) == 0
        for a in sorted((synth_dir / "frames").glob("*.png")):
            b = other / "frames" / a.name
            assert a.read_bytes() == b.read_bytes()

    def test_masks_binary(self, synth_dir):
        seq = vd.load_frame_folder(synth_dir / "frames",
                                   mask_dir=synth_dir / "masks")
        for m in seq.masks:
            assert set(np.unique(m)) <= {0, 1}
        assert any((m == 0).any() for m in seq.masks)


class TestTrain:
    def test_outputs(self, checkpoint):
        out = checkpoint.parent
        assert checkpoint.exists()
        assert (out / "effective_config.txt").exists()
        lines = (out / "losses.jsonl").read_text().strip().splitlines()
        assert len(lines) == 8
        rec = json.loads(lines[0])
        assert {"step", "rec", "mre", "per", "style", "total"} <= set(rec)

    def test_deterministic_final_loss(self, tmp_path):
        finals = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert run_cli("train", "--out", str(out), "--data", "synthetic",
                           "--size", SIZE, "--frames", FRAMES, "--shapes", "2",
                           "--steps", "5", "--seed", "11", "--side-range", SIDE) == 0
            lines = (out / "losses.jsonl").read_text().strip().splitlines()
            finals.append(json.loads(lines[-1])["total"])
        assert abs(finals[0] - finals[1]) < 1e-6

    def test_trains_on_exported_folder(self, synth_dir, tmp_path):
        out = tmp_path / "train_folder"
        code = run_cli("train", "--out", str(out), "--data", str(synth_dir),
                       "--size", SIZE, "--frames", FRAMES, "--steps", "3",
                       "--seed", "0")
        assert code == 0
        assert (out / "checkpoint_final.npz").exists()


class TestInfer:
    def test_writes_frames_and_manifest(self, synth_dir, checkpoint, tmp_path):
        out = tmp_path / "infer"
        code = run_cli("infer", "--out", str(out), "--data", str(synth_dir),
                       "--checkpoint", str(checkpoint), "--size", SIZE,
                       "--seed", "0")
        assert code == 0
        frames = sorted((out / "frames").glob("*.png"))
        assert len(frames) == 6
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["frame_sha256"]) == 6
        assert manifest["timing"]["wall_seconds"] > 0

    def test_bit_identical_reruns_modulo_timing(self, synth_dir, checkpoint, tmp_path):
        manifests = []
        for sub in ("x", "y"):
            out = tmp_path / sub
            assert run_cli("infer", "--out", str(out), "--data", str(synth_dir),
                           "--checkpoint", str(checkpoint), "--size", SIZE,
                           "--seed", "0") == 0
            m = json.loads((out / "manifest.json").read_text())
            m.pop("timing")
            manifests.append(m)
        assert manifests[0] == manifests[1]
        for a in sorted((tmp_path / "x" / "frames").glob("*.png")):
            b = tmp_path / "y" / "frames" / a.name
            assert a.read_bytes() == b.read_bytes()

    def test_all_known_composite_identity(self, synth_dir, checkpoint, tmp_path):
        # with no masks directory every pixel is known, so compositing must
        # return the input frames byte for byte
        data = tmp_path / "clean"
        (data / "frames").mkdir(parents=True)
        for f in (synth_dir / "frames").glob("*.png"):
            shutil.copy(f, data / "frames" / f.name)
        out = tmp_path / "out"
        assert run_cli("infer", "--out", str(out), "--data", str(data),
                       "--checkpoint", str(checkpoint), "--size", SIZE,
                       "--seed", "0") == 0
        for a in sorted((data / "frames").glob("*.png")):
            b = out / "frames" / a.name
            assert a.read_bytes() == b.read_bytes()

    def test_missing_checkpoint_exit_code(self, synth_dir, tmp_path):
        code = run_cli("infer", "--out", str(tmp_path / "o"), "--data",
                       str(synth_dir), "--checkpoint",
                       str(tmp_path / "missing.npz"), "--size", SIZE)
        assert code == 4


class TestEval:
    def test_identical_folders_hit_caps(self, synth_dir, tmp_path):
        out = tmp_path / "eval"
        code = run_cli("eval", "--out", str(out), "--data", str(synth_dir),
                       "--restored", str(synth_dir / "frames"), "--size", SIZE)
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mean_psnr"] == 99.0
        assert summary["mean_ssim"] == 1.0
        assert summary["baseline_mean_fill_masked_psnr"] is not None
        rows = (out / "metrics.csv").read_text().strip().splitlines()
        assert len(rows) == 7  # header + one row per frame

    def test_length_mismatch_is_data_error(self, synth_dir, tmp_path):
        short = tmp_path / "short"
        short.mkdir()
        frames = sorted((synth_dir / "frames").glob("*.png"))
        for f in frames[:3]:
            shutil.copy(f, short / f.name)
        code = run_cli("eval", "--out", str(tmp_path / "o"), "--data",
                       str(synth_dir), "--restored", str(short), "--size", SIZE)
        assert code == 3


class TestAblate:
    def test_table_shape(self, tmp_path):
        out = tmp_path / "ablate"
        code = run_cli("ablate", "--out", str(out), "--size", SIZE,
                       "--frames", "5", "--shapes", "2", "--steps", "2",
                       "--seed", "0", "--num-seeds", "1", "--side-range", SIDE)
        assert code == 0
        rows = (out / "table.csv").read_text().strip().splitlines()
        assert rows[0] == "ablation,masked_psnr,ssim,perceptual"
        assert len(rows) == 6
        names = [r.split(",")[0] for r in rows[1:]]
        assert names == ["no_bsca", "bsca_18", "no_dlca", "dlca_fixed", "full"]
        for row in rows[1:]:
            cells = row.split(",")
            assert len(cells) == 4
            assert all(np.isfinite(float(c)) for c in cells[1:])
        payload = json.loads((out / "results.json").read_text())
        assert len(payload["runs"]) == 5


class TestConfigFile:
    def test_file_values_used_and_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nframes = 4\nshapes = 2\nseed = 9\n")
        out = tmp_path / "synth"
        code = run_cli("synth", "--config", str(cfg), "--out", str(out),
                       "--size", SIZE, "--seed", "5", "--side-range", SIDE)
        assert code == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["frames"] == 4  # from file
        assert meta["seed"] == 5  # flag beats file

    def test_bad_config_line(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not a pair\n")
        code = run_cli("synth", "--config", str(cfg), "--out",
                       str(tmp_path / "o"), "--size", SIZE)
        assert code == 2

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("train")  # missing required --out
        assert exc.value.code == 2


def test_echoes_effective_config(synth_dir, capsys):
    # the fixture already ran; check the echo file exists and parses
    text = (synth_dir / "effective_config.txt").read_text()
    assert "seed = 5" in text
    parsed = cli.parse_config_file(synth_dir / "effective_config.txt")
    assert parsed["seed"] == "5"
