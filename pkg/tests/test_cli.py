import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from patchbank import cli
from patchbank.tensorio import (
    DatasetManifest,
    ManifestEntry,
    read_tensor,
    write_manifest,
    write_tensor,
)

TINY_SYNTH = [
    "--n-train", "4", "--n-test-normal", "3", "--n-test-anomalous", "3",
    "--grid", "8", "--channels", "6,12", "--pixels-per-cell", "2",
    "--defect-cells", "3,3",
]

SMALL_PATCH = ["--level-dim", "16", "--output-dim", "16", "--projection-dim", "0"]


def run(*argv) -> int:
    return cli.main(list(argv))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def make_handmade_dataset(root, n_train=2, side=4, channels=8, offset_cell=None):
    """Single-level manifests with exactly known patch counts."""
    rng = np.random.default_rng(42)
    os.makedirs(os.path.join(root, "features"), exist_ok=True)
    train_entries = []
    feats = []
    for i in range(n_train):
        arr = rng.standard_normal((channels, side, side)).astype(np.float32)
        feats.append(arr)
        rel = f"features/train_{i}.tnsr"
        write_tensor(arr, os.path.join(root, rel))
        train_entries.append(
            ManifestEntry(f"hand/train_{i}", 0, (side * 4, side * 4), None, {2: rel})
        )
    train = DatasetManifest("train", os.path.abspath(root), tuple(train_entries))
    write_manifest(train, os.path.join(root, "train.tsv"))

    test_entries = []
    for i, arr in enumerate(feats):  # test features identical to train
        rel = f"features/test_{i}.tnsr"
        write_tensor(arr, os.path.join(root, rel))
        test_entries.append(
            ManifestEntry(f"hand/test_{i}", 0, (side * 4, side * 4), None, {2: rel})
        )
    if offset_cell is not None:
        arr = feats[0].copy()
        r, c = offset_cell
        arr[:, r, c] += 10.0
        rel = "features/test_hot.tnsr"
        write_tensor(arr, os.path.join(root, rel))
        mask = np.zeros((side * 4, side * 4), dtype=np.float32)
        mask[r * 4 : (r + 1) * 4, c * 4 : (c + 1) * 4] = 1.0
        mask_rel = "masks/test_hot.tnsr"
        os.makedirs(os.path.join(root, "masks"), exist_ok=True)
        write_tensor(mask, os.path.join(root, mask_rel))
        test_entries.append(
            ManifestEntry("hand/test_hot", 1, (side * 4, side * 4), mask_rel, {2: rel})
        )
    test = DatasetManifest("test", os.path.abspath(root), tuple(test_entries))
    write_manifest(test, os.path.join(root, "test.tsv"))
    return os.path.join(root, "train.tsv"), os.path.join(root, "test.tsv")


HAND_PATCH = ["--levels", "2", "--level-dim", "8", "--output-dim", "8", "--projection-dim", "0"]


# ------------------------------------------------------------------ build


def test_build_full_bank_counts_patches(tmp_path):
    train, _ = make_handmade_dataset(tmp_path / "d")
    out = tmp_path / "bank"
    assert run("build", "--train-manifest", train, "--out", str(out), "--fraction", "1.0", *HAND_PATCH) == 0
    feats = read_tensor(out / "bank_features.tnsr")
    assert feats.shape == (32, 8)  # 2 images x 4x4 grid
    report = json.loads((out / "build_report.json").read_text())
    assert report["bank_rows"] == 32
    assert report["subsampled_from"] is None


def test_build_fraction_rounds_down(tmp_path):
    train, _ = make_handmade_dataset(tmp_path / "d")
    out = tmp_path / "bank"
    assert run("build", "--train-manifest", train, "--out", str(out), "--fraction", "0.25", *HAND_PATCH) == 0
    feats = read_tensor(out / "bank_features.tnsr")
    assert feats.shape == (8, 8)
    report = json.loads((out / "build_report.json").read_text())
    assert report["subsampled_from"] == 32
    assert report["method"] == "greedy_coreset"


def test_build_rerun_is_byte_identical(tmp_path):
    train, _ = make_handmade_dataset(tmp_path / "d")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("build", "--train-manifest", train, "--out", str(out), "--fraction", "0.5", "--seed", "9", *HAND_PATCH) == 0
    assert (a / "bank_features.tnsr").read_bytes() == (b / "bank_features.tnsr").read_bytes()
    assert (a / "bank_provenance.tsv").read_bytes() == (b / "bank_provenance.tsv").read_bytes()


def test_build_count_flag_and_conflicts(tmp_path):
    train, _ = make_handmade_dataset(tmp_path / "d")
    out = tmp_path / "bank"
    assert run("build", "--train-manifest", train, "--out", str(out), "--count", "5", *HAND_PATCH) == 0
    assert read_tensor(out / "bank_features.tnsr").shape[0] == 5
    assert run("build", "--train-manifest", train, "--out", str(tmp_path / "x"),
               "--count", "5", "--fraction", "0.5", *HAND_PATCH) == 2


def test_build_missing_manifest_is_data_error(tmp_path):
    assert run("build", "--train-manifest", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "b")) == 3


def test_build_empty_manifest_is_data_error(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    assert run("build", "--train-manifest", str(path), "--out", str(tmp_path / "b")) == 3


# ------------------------------------------------------------------ score


def test_score_train_identical_test_scores_zero(tmp_path):
    train, test = make_handmade_dataset(tmp_path / "d")
    bank = tmp_path / "bank"
    out = tmp_path / "scores"
    assert run("build", "--train-manifest", train, "--out", str(bank), "--fraction", "1.0", *HAND_PATCH) == 0
    assert run("score", "--bank", str(bank), "--test-manifest", test, "--out", str(out)) == 0
    rows = read_csv(out / "results.csv")
    assert rows[0] == ["image_id", "image_score", "raw_star", "argmax_row", "argmax_col"]
    for row in rows[1:]:
        assert float(row[1]) == 0.0
        assert float(row[2]) == 0.0
    # map tensors exist at the declared image size
    amap = read_tensor(out / "maps" / "hand" / "test_0.tnsr")
    assert amap.shape == (16, 16)


def test_score_hot_patch_ranks_highest_and_localizes(tmp_path):
    train, test = make_handmade_dataset(tmp_path / "d", offset_cell=(1, 2))
    bank = tmp_path / "bank"
    out = tmp_path / "scores"
    # patch size 1: only the offset cell deviates, so the argmax is exact
    assert run("build", "--train-manifest", train, "--out", str(bank), "--fraction", "1.0",
               "--patch-size", "1", *HAND_PATCH) == 0
    assert run("score", "--bank", str(bank), "--test-manifest", test, "--out", str(out)) == 0
    rows = read_csv(out / "results.csv")
    scores = {row[0]: float(row[1]) for row in rows[1:]}
    hot = scores.pop("hand/test_hot")
    assert hot > max(scores.values())
    by_id = {row[0]: row for row in rows[1:]}
    assert (int(by_id["hand/test_hot"][3]), int(by_id["hand/test_hot"][4])) == (1, 2)
    # the anomaly map peaks inside the offset cell (4x4 pixel block)
    amap = read_tensor(out / "maps" / "hand" / "test_hot.tnsr")
    r, c = np.unravel_index(int(np.argmax(amap)), amap.shape)
    assert 4 <= r < 8 and 8 <= c < 12


def test_score_rerun_is_byte_identical(tmp_path):
    train, test = make_handmade_dataset(tmp_path / "d", offset_cell=(0, 0))
    bank = tmp_path / "bank"
    assert run("build", "--train-manifest", train, "--out", str(bank), "--fraction", "0.5", *HAND_PATCH) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("score", "--bank", str(bank), "--test-manifest", test, "--out", str(out), "--threads", "4") == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert (a / "maps" / "hand" / "test_hot.tnsr").read_bytes() == (b / "maps" / "hand" / "test_hot.tnsr").read_bytes()


def test_score_render_pgm(tmp_path):
    train, test = make_handmade_dataset(tmp_path / "d", offset_cell=(2, 2))
    bank = tmp_path / "bank"
    out = tmp_path / "scores"
    assert run("build", "--train-manifest", train, "--out", str(bank), "--fraction", "1.0", *HAND_PATCH) == 0
    assert run("score", "--bank", str(bank), "--test-manifest", test, "--out", str(out), "--render-pgm") == 0
    pgm = (out / "maps_pgm" / "hand" / "test_hot.pgm").read_bytes()
    assert pgm.startswith(b"P5\n16 16\n255\n")
    assert len(pgm) == len(b"P5\n16 16\n255\n") + 16 * 16


def test_score_neighbors_exceeding_bank_is_config_error(tmp_path):
    train, test = make_handmade_dataset(tmp_path / "d")
    bank = tmp_path / "bank"
    assert run("build", "--train-manifest", train, "--out", str(bank), "--count", "2", *HAND_PATCH) == 0
    assert run("score", "--bank", str(bank), "--test-manifest", test, "--out", str(tmp_path / "s"),
               "--neighbors", "3") == 2


# --------------------------------------------------------------- evaluate


def _full_pipeline(tmp_path, *, seed="0"):
    data = tmp_path / "data"
    bank = tmp_path / "bank"
    scores = tmp_path / "scores"
    assert run("synth", "--out", str(data), "--seed", seed, *TINY_SYNTH) == 0
    assert run("build", "--train-manifest", str(data / "train_manifest.tsv"), "--out", str(bank),
               "--fraction", "0.25", "--seed", seed, *SMALL_PATCH) == 0
    assert run("score", "--bank", str(bank), "--test-manifest", str(data / "test_manifest.tsv"),
               "--out", str(scores)) == 0
    return data, bank, scores


def test_evaluate_writes_metrics_and_curves(tmp_path):
    data, _, scores = _full_pipeline(tmp_path)
    out = tmp_path / "eval"
    assert run("evaluate", "--results", str(scores), "--test-manifest", str(data / "test_manifest.tsv"),
               "--out", str(out)) == 0
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["class", "image_auroc", "pixel_auroc", "pro", "f1_threshold", "fp", "fn"]
    classes = [row[0] for row in rows[1:]]
    assert classes == ["synth", "AVERAGE"]
    for row in rows[1:]:
        assert 0.0 <= float(row[1]) <= 1.0
        int(row[5]), int(row[6])
    assert (out / "curves" / "roc_synth.csv").is_file()
    assert (out / "curves" / "pr_synth.csv").is_file()
    report = json.loads((out / "evaluate_report.json").read_text())
    assert report["classes"] == ["synth"]
    assert report["image_auroc"] == float(rows[-1][1])


def test_evaluate_average_row_sums_counts(tmp_path):
    # two classes scored together: AVERAGE row averages rates, sums counts
    data, bank, _ = _full_pipeline(tmp_path)
    data2 = tmp_path / "data2"
    assert run("synth", "--out", str(data2), "--seed", "5", "--class-name", "other", *TINY_SYNTH) == 0
    combined = tmp_path / "combined"
    os.makedirs(combined)
    import patchbank.tensorio as tio

    m1 = tio.load_manifest(data / "test_manifest.tsv", "test")
    m2 = tio.load_manifest(data2 / "test_manifest.tsv", "test")

    def reroot(manifest, sub):
        entries = []
        for e in manifest.entries:
            feature_paths = {lvl: os.path.join(sub, p) for lvl, p in e.feature_paths.items()}
            mask = os.path.join(sub, e.mask_path) if e.mask_path else None
            entries.append(tio.ManifestEntry(e.image_id, e.label, e.original_size, mask, feature_paths))
        return entries

    os.symlink(data, combined / "a")
    os.symlink(data2, combined / "b")
    merged = tio.DatasetManifest("test", str(combined), tuple(reroot(m1, "a") + reroot(m2, "b")))
    tio.write_manifest(merged, combined / "test.tsv")

    scores = tmp_path / "scores2"
    out = tmp_path / "eval2"
    assert run("score", "--bank", str(bank), "--test-manifest", str(combined / "test.tsv"),
               "--out", str(scores)) == 0
    assert run("evaluate", "--results", str(scores), "--test-manifest", str(combined / "test.tsv"),
               "--out", str(out)) == 0
    rows = read_csv(out / "metrics.csv")
    named = {row[0]: row for row in rows[1:]}
    assert set(named) == {"synth", "other", "AVERAGE"}
    assert float(named["AVERAGE"][1]) == pytest.approx(
        (float(named["synth"][1]) + float(named["other"][1])) / 2.0
    )
    assert int(named["AVERAGE"][5]) == int(named["synth"][5]) + int(named["other"][5])
    assert int(named["AVERAGE"][6]) == int(named["synth"][6]) + int(named["other"][6])


def test_evaluate_without_positives_is_metric_error(tmp_path):
    train, test = make_handmade_dataset(tmp_path / "d")  # all test labels 0
    bank = tmp_path / "bank"
    scores = tmp_path / "scores"
    assert run("build", "--train-manifest", train, "--out", str(bank), "--fraction", "1.0", *HAND_PATCH) == 0
    assert run("score", "--bank", str(bank), "--test-manifest", test, "--out", str(scores)) == 0
    assert run("evaluate", "--results", str(scores), "--test-manifest", test, "--out", str(tmp_path / "e")) == 4


def test_evaluate_missing_map_is_data_error(tmp_path):
    data, _, scores = _full_pipeline(tmp_path)
    os.remove(scores / "maps" / "synth" / "test_good_000.tnsr")
    assert run("evaluate", "--results", str(scores), "--test-manifest", str(data / "test_manifest.tsv"),
               "--out", str(tmp_path / "e")) == 3


def test_evaluate_no_pixel_skips_maps(tmp_path):
    data, _, scores = _full_pipeline(tmp_path)
    import shutil

    shutil.rmtree(scores / "maps")
    out = tmp_path / "eval"
    assert run("evaluate", "--results", str(scores), "--test-manifest", str(data / "test_manifest.tsv"),
               "--out", str(out), "--no-pixel") == 0
    rows = read_csv(out / "metrics.csv")
    named = {row[0]: row for row in rows[1:]}
    assert named["synth"][2] == "" and named["synth"][3] == ""


# ---------------------------------------------------------------- lowshot


def test_lowshot_full_shot_matches_direct_run(tmp_path):
    data = tmp_path / "data"
    assert run("synth", "--out", str(data), "--seed", "1", *TINY_SYNTH) == 0
    out = tmp_path / "low"
    assert run("lowshot", "--train-manifest", str(data / "train_manifest.tsv"),
               "--test-manifest", str(data / "test_manifest.tsv"), "--out", str(out),
               "--shots", "2,4", "--trials", "3", "--fraction", "0.5", "--seed", "3", *SMALL_PATCH) == 0
    rows = read_csv(out / "lowshot.csv")
    assert rows[0] == ["shots", "trial", "image_auroc"]
    assert len(rows) == 1 + 2 * 3
    # at 4 shots every trial draws the whole 4-image train set, so all
    # trials of that row must coincide
    four = [float(r[2]) for r in rows[1:] if r[0] == "4"]
    assert len(set(four)) == 1
    summary = read_csv(out / "lowshot_summary.csv")
    assert summary[0] == ["shots", "trials", "mean_image_auroc", "std_image_auroc"]
    by_shot = {row[0]: row for row in summary[1:]}
    assert float(by_shot["4"][3]) == 0.0
    assert by_shot["2"][1] == "3"


def test_lowshot_shots_beyond_train_size_rejected(tmp_path):
    data = tmp_path / "data"
    assert run("synth", "--out", str(data), "--seed", "1", *TINY_SYNTH) == 0
    assert run("lowshot", "--train-manifest", str(data / "train_manifest.tsv"),
               "--test-manifest", str(data / "test_manifest.tsv"), "--out", str(tmp_path / "low"),
               "--shots", "2,9", "--trials", "2", *SMALL_PATCH) == 2


# ----------------------------------------------------------------- ablate


def test_ablate_sweeps_methods_and_geometry(tmp_path):
    data = tmp_path / "data"
    assert run("synth", "--out", str(data), "--seed", "2", *TINY_SYNTH) == 0
    out = tmp_path / "ab"
    assert run("ablate", "--train-manifest", str(data / "train_manifest.tsv"),
               "--test-manifest", str(data / "test_manifest.tsv"), "--out", str(out),
               "--fractions", "0.25,0.5", "--methods", "greedy_coreset,random",
               "--patch-sizes", "1,3", "--strides", "1,2", "--seed", "0", *SMALL_PATCH) == 0
    rows = read_csv(out / "ablate.csv")
    assert rows[0] == ["sweep", "method", "fraction", "patch_size", "stride",
                       "image_auroc", "pixel_auroc", "pro"]
    sub = [r for r in rows[1:] if r[0] == "subsampling"]
    geo = [r for r in rows[1:] if r[0] == "patch_geometry"]
    assert len(sub) == 4  # 2 methods x 2 fractions
    assert len(geo) == 4  # 2 patch sizes x 2 strides
    for r in rows[1:]:
        assert 0.0 <= float(r[5]) <= 1.0


# ---------------------------------------------------------- config file


def test_config_file_supplies_defaults_and_flags_override(tmp_path):
    train, _ = make_handmade_dataset(tmp_path / "d")
    cfg = tmp_path / "opts.cfg"
    cfg.write_text("fraction = 0.25\nseed = 9\nlevels = 2\nlevel_dim = 8\noutput_dim = 8\nprojection_dim = 0\n")
    out_a = tmp_path / "a"
    assert run("build", "--train-manifest", train, "--out", str(out_a), "--config", str(cfg)) == 0
    assert read_tensor(out_a / "bank_features.tnsr").shape[0] == 8  # 32 * 0.25
    out_b = tmp_path / "b"
    assert run("build", "--train-manifest", train, "--out", str(out_b), "--config", str(cfg),
               "--fraction", "0.5") == 0
    assert read_tensor(out_b / "bank_features.tnsr").shape[0] == 16  # flag wins


def test_config_file_flag_only_key(tmp_path):
    train, test = make_handmade_dataset(tmp_path / "d")
    bank = tmp_path / "bank"
    assert run("build", "--train-manifest", train, "--out", str(bank), "--fraction", "1.0", *HAND_PATCH) == 0
    cfg = tmp_path / "opts.cfg"
    cfg.write_text("no_reweight = true\n")
    out = tmp_path / "s"
    assert run("score", "--bank", str(bank), "--test-manifest", test, "--out", str(out),
               "--config", str(cfg)) == 0
    rows = read_csv(out / "results.csv")
    for row in rows[1:]:
        assert float(row[1]) == float(row[2])  # raw scores pass through


def test_config_file_missing_is_config_error(tmp_path):
    assert run("build", "--train-manifest", "x", "--out", "y", "--config", str(tmp_path / "nope")) == 2


def test_unknown_subcommand_exits_two():
    assert run("frobnicate") == 2


def test_console_script_wiring(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "patchbank.cli", "synth", "--out", str(tmp_path / "o"),
         "--n-train", "1", "--n-test-normal", "1", "--n-test-anomalous", "1",
         "--grid", "4", "--channels", "3,6", "--pixels-per-cell", "2", "--defect-cells", "2,2"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "train_manifest.tsv").is_file()
