import json
from pathlib import Path

import numpy as np
import pytest

from voxprompt.cli import main
from voxprompt.volume import decode_vvol, encode_vvol

from test_volume import make_npy


def write_vvol(path, arr):
    Path(path).write_bytes(encode_vvol(arr))
    return str(path)


def make_case_files(tmp_path, shape=(24, 24, 24), cube=(8, 18)):
    img = np.full(shape, 20, np.uint8)
    lo, hi = cube
    img[lo:hi, lo:hi, lo:hi] = 200
    gt = np.zeros(shape, np.uint8)
    gt[lo:hi, lo:hi, lo:hi] = 1
    img_p = write_vvol(tmp_path / "img.vvol", img)
    gt_p = write_vvol(tmp_path / "gt.vvol", gt)
    bbox = f"{lo},{lo},{lo},{hi},{hi},{hi}"
    return img_p, gt_p, bbox


class TestConvert:
    def test_npy_to_vvol_size(self, tmp_path):
        payload = bytes(range(6))
        npy = tmp_path / "a.npy"
        npy.write_bytes(make_npy("|u1", (1, 2, 3), payload))
        out = tmp_path / "a.vvol"
        assert main(["convert", str(npy), str(out), "--from", "npy"]) == 0
        data = out.read_bytes()
        assert len(data) == 8 + 12 + 6  # fixed header + 3 dims + payload
        assert (decode_vvol(data).ravel() == np.arange(6)).all()
        assert (tmp_path / "a.vvol.manifest.json").exists()

    def test_truncated_npy_exits_2(self, tmp_path):
        npy = tmp_path / "bad.npy"
        npy.write_bytes(make_npy("|u1", (1, 2, 3), bytes(4)))
        assert main(["convert", str(npy), str(tmp_path / "o.vvol")]) == 2

    def test_unwritable_output_exits_3(self, tmp_path):
        npy = tmp_path / "a.npy"
        npy.write_bytes(make_npy("|u1", (1, 1, 1), bytes(1)))
        assert main(["convert", str(npy), "/nonexistent/dir/o.vvol"]) == 3

    def test_missing_input_exits_3(self, tmp_path):
        assert main(["convert", str(tmp_path / "nope.npy"),
                     str(tmp_path / "o.vvol")]) == 3


class TestPreprocess:
    def test_ct_windowing(self, tmp_path):
        vol = np.full((2, 2, 2), 40, np.int16)
        inp = write_vvol(tmp_path / "hu.vvol", vol)
        out = tmp_path / "u8.vvol"
        assert main(["preprocess", inp, str(out), "--mode", "ct",
                     "--preset", "soft"]) == 0
        assert (decode_vvol(out.read_bytes()) == 128).all()

    def test_percentile(self, tmp_path):
        vol = np.arange(64, dtype=np.float32).reshape(4, 4, 4)
        inp = write_vvol(tmp_path / "f.vvol", vol)
        out = tmp_path / "u8.vvol"
        assert main(["preprocess", inp, str(out), "--mode", "percentile"]) == 0
        res = decode_vvol(out.read_bytes())
        assert res.dtype == np.uint8
        assert res.min() == 0 and res.max() == 255


class TestCrop:
    def test_clamp_branch_json(self, capsys):
        assert main(["crop", "--bbox", "0,0,0,64,64,64",
                     "--shape", "512,512,512", "--patch", "192"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["z"] == 1.0
        assert out["scaled_patch"] == [192, 192, 192]

    def test_bad_bbox_exits_2(self, capsys):
        assert main(["crop", "--bbox", "0,0,0,64,64",
                     "--shape", "128", "--patch", "64"]) == 2


class TestClickgen:
    def test_identical_pred_gt_null(self, tmp_path, capsys):
        gt = np.zeros((8, 8, 8), np.uint8)
        gt[2:6, 2:6, 2:6] = 1
        gt_p = write_vvol(tmp_path / "gt.vvol", gt)
        pred_p = write_vvol(tmp_path / "pred.vvol",
                            np.where(gt > 0, 0.9, 0.1).astype(np.float32))
        assert main(["clickgen", "--pred", pred_p, "--gt", gt_p]) == 0
        assert json.loads(capsys.readouterr().out) is None

    def test_proposal_json(self, tmp_path, capsys):
        gt = np.zeros((11, 11, 11), np.uint8)
        gt[3:8, 3:8, 3:8] = 1
        gt_p = write_vvol(tmp_path / "gt.vvol", gt)
        pred_p = write_vvol(tmp_path / "pred.vvol",
                            np.zeros((11, 11, 11), np.float32))
        assert main(["clickgen", "--pred", pred_p, "--gt", gt_p]) == 0
        out = json.loads(capsys.readouterr().out)
        assert (out["z"], out["y"], out["x"]) == (5, 5, 5)
        assert out["polarity"] == "positive"
        assert out["component_size"] == 125


class TestSimulate:
    def test_perfect_oracle_report(self, tmp_path):
        img_p, gt_p, bbox = make_case_files(tmp_path)
        out = tmp_path / "report.json"
        code = main(["simulate", "--image", img_p, "--gt", gt_p,
                     "--bbox", bbox, "--segmenter", "oracle",
                     "--patch", "24", "--out", str(out)])
        assert code == 0
        rep = json.loads(out.read_text())
        assert rep["dsc_final"] == 1.0
        assert rep["dsc_auc"] == 4.0
        assert not rep["budget_exceeded"]
        assert (tmp_path / "report.json.manifest.json").exists()

    def test_same_seed_byte_identical_modulo_wall_ms(self, tmp_path):
        img_p, gt_p, bbox = make_case_files(tmp_path)
        reports = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            code = main(["simulate", "--image", img_p, "--gt", gt_p,
                         "--bbox", bbox, "--segmenter", "oracle",
                         "--flip-rate", "0.3", "--decay", "0.5",
                         "--seed", "42", "--patch", "24", "--out", str(out)])
            assert code == 0
            rep = json.loads(out.read_text())
            for s in rep["scores"]:
                s["wall_ms"] = None
            reports.append(json.dumps(rep, sort_keys=True).encode())
        assert reports[0] == reports[1]

    def test_missing_exec_binary_exits_4(self, tmp_path):
        img_p, gt_p, bbox = make_case_files(tmp_path)
        code = main(["simulate", "--image", img_p, "--gt", gt_p,
                     "--bbox", bbox, "--segmenter", "exec:/nonexistent/model",
                     "--patch", "24", "--out", str(tmp_path / "r.json")])
        assert code == 4

    def test_requires_some_bbox_mode(self, tmp_path):
        img_p, gt_p, _ = make_case_files(tmp_path)
        code = main(["simulate", "--image", img_p, "--gt", gt_p,
                     "--patch", "24", "--out", str(tmp_path / "r.json")])
        assert code == 2

    def test_growth_segmenter(self, tmp_path):
        img_p, gt_p, bbox = make_case_files(tmp_path)
        out = tmp_path / "r.json"
        code = main(["simulate", "--image", img_p, "--gt", gt_p,
                     "--bbox", bbox, "--segmenter", "growth",
                     "--patch", "24", "--out", str(out)])
        assert code == 0
        rep = json.loads(out.read_text())
        assert rep["dsc_final"] > 0.9


class TestEvaluate:
    def test_report_means(self, tmp_path):
        cases = []
        for i, modality in enumerate(("CT", "CT", "MRI")):
            sub = tmp_path / f"case{i}"
            sub.mkdir()
            img_p, gt_p, bbox = make_case_files(sub)
            lo, hi = 8, 18
            cases.append({
                "name": f"case{i}",
                "modality": modality,
                "image": img_p,
                "classes": [{"gt": gt_p, "bbox": [lo, lo, lo, hi, hi, hi]}],
            })
        manifest = tmp_path / "cases.json"
        manifest.write_text(json.dumps(cases))
        out = tmp_path / "report.json"
        code = main(["evaluate", "--cases", str(manifest),
                     "--segmenter", "oracle", "--flip-rate", "0.2",
                     "--patch", "24", "--out", str(out)])
        assert code == 0
        rep = json.loads(out.read_text())
        assert set(rep["per_modality"]) == {"CT", "MRI"}
        finals = [c["classes"][0]["dsc_final"] for c in rep["cases"]]
        assert rep["overall"]["dsc_final"] == pytest.approx(
            sum(finals) / len(finals), abs=1e-12
        )
        ct = [c["classes"][0]["dsc_final"] for c in rep["cases"]
              if c["modality"] == "CT"]
        assert rep["per_modality"]["CT"]["dsc_final"] == pytest.approx(
            sum(ct) / len(ct), abs=1e-12
        )


class TestSeedEnv:
    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VOXPROMPT_SEED", "123")
        img_p, gt_p, bbox = make_case_files(tmp_path)
        out = tmp_path / "r.json"
        code = main(["simulate", "--image", img_p, "--gt", gt_p,
                     "--bbox", bbox, "--segmenter", "oracle",
                     "--patch", "24", "--out", str(out)])
        assert code == 0
        assert json.loads(out.read_text())["seed"] == 123
