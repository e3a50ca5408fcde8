"""End-to-end walkthrough of the command-line pipeline on synthetic data.

Generates a dataset, builds a reduced memory bank, scores the test split,
evaluates detection metrics, and runs the two study harnesses. Everything
lands under a temporary directory that is printed at the end.

Run: python3 demos/05_full_pipeline.py
"""

import csv
import json
import tempfile
from pathlib import Path

from patchbank.cli import main

root = Path(tempfile.mkdtemp(prefix="patchbank-demo-"))
data = root / "data"
bank = root / "bank"
scores = root / "scores"
report = root / "report"

steps = [
    ["synth", "--out", str(data), "--seed", "7"],
    ["build", "--train-manifest", str(data / "train_manifest.tsv"),
     "--out", str(bank), "--fraction", "0.1", "--seed", "7"],
    ["score", "--bank", str(bank),
     "--test-manifest", str(data / "test_manifest.tsv"), "--out", str(scores)],
    ["evaluate", "--results", str(scores),
     "--test-manifest", str(data / "test_manifest.tsv"), "--out", str(report)],
]
for argv in steps:
    shown = " ".join(a.replace(str(root), "$WORK") for a in argv)
    print(f"$ patchbank {shown}")
    rc = main(argv)
    assert rc == 0, f"step {argv[0]} exited {rc}"

build_report = json.loads((bank / "build_report.json").read_text())
print(f"\nbank: {build_report['bank_rows']} of {build_report['subsampled_from']} patches "
      f"kept via {build_report['method']}")

with open(report / "metrics.csv", newline="") as fh:
    for row in csv.DictReader(fh):
        print(f"{row['class']:>8}: image AUROC {row['image_auroc']}, "
              f"pixel AUROC {row['pixel_auroc']}, PRO {row['pro']}")

# The harnesses rebuild banks from the same manifests, so they need no
# extra inputs beyond the dataset directory.
rc = main(["lowshot", "--train-manifest", str(data / "train_manifest.tsv"),
           "--test-manifest", str(data / "test_manifest.tsv"),
           "--out", str(root / "lowshot"), "--shots", "2,8", "--trials", "2"])
assert rc == 0
print("\nlow-shot means (image AUROC by training-image budget):")
with open(root / "lowshot" / "lowshot_summary.csv", newline="") as fh:
    for r in csv.DictReader(fh):
        print(f"  {r['shots']:>2} shots: {r['mean_image_auroc']} "
              f"+- {r['std_image_auroc']} over {r['trials']} trials")

rc = main(["ablate", "--train-manifest", str(data / "train_manifest.tsv"),
           "--test-manifest", str(data / "test_manifest.tsv"),
           "--out", str(root / "ablate"), "--fractions", "0.02,0.25"])
assert rc == 0
print()
with open(root / "ablate" / "ablate.csv", newline="") as fh:
    for r in csv.DictReader(fh):
        if r["sweep"] == "subsampling":
            setting = f"{r['method']} @ {r['fraction']}"
        else:
            setting = f"patch {r['patch_size']} stride {r['stride']}"
        print(f"ablate [{r['sweep']}] {setting}: image AUROC {r['image_auroc']}")

print(f"\nartifacts under {root}")
