"""Command line entry point.

Subcommands cover the pipeline stages and the experiment harnesses:

    patchbank synth     write a self-contained synthetic dataset
    patchbank build     train manifest -> serialized memory bank
    patchbank score     bank + test manifest -> results.csv + map tensors
    patchbank evaluate  results + manifest -> metrics.csv + curve CSVs
    patchbank lowshot   rebuild banks from few train images, AUROC vs shots
    patchbank ablate    sweep subsampling methods/fractions and patch geometry

Stages hand artifacts to each other through files, so evaluate can be
re-run without re-scoring. Options can come from a config file of
`key = value` lines (same names as the long flags, underscores instead
of dashes); explicit flags win over file values.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 metric
undefined for the given inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import metrics, synth, tensorio
from .coreset import CoresetConfig, ProxyTrainConfig, derive_seed, subsample_memory_bank
from .errors import ConfigError, DataError, PatchBankError, UndefinedMetricError
from .patchify import (
    MemoryBank,
    PatchConfig,
    build_memory_bank,
    image_patch_grid,
    load_memory_bank,
    save_memory_bank,
)
from .scoring import ScoringConfig, score_map

BANK_CONFIG_FILE = "bank_config.json"
_FLAG_ONLY_KEYS = {"no_reweight", "render_pgm", "global_threshold", "no_pixel"}


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_size(text: str) -> tuple[int, int] | None:
    if text.lower() in ("auto", "none"):
        return None
    try:
        h, w = text.lower().split("x")
        return (int(h), int(w))
    except ValueError:
        raise ConfigError(f"expected HxW or 'auto', got {text!r}") from None


def _config_file_tokens(path: str) -> list[str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path} line {lineno}: expected key = value")
            key, value = key.strip(), value.strip()
            if not key:
                raise ConfigError(f"{path} line {lineno}: empty key")
            flag = "--" + key.replace("_", "-")
            if key in _FLAG_ONLY_KEYS:
                if value.lower() in ("true", "1", "yes"):
                    tokens.append(flag)
                elif value.lower() not in ("false", "0", "no"):
                    raise ConfigError(f"{path} line {lineno}: {key} must be true or false")
            else:
                tokens.extend([flag, value])
    return tokens


def _build_parser() -> argparse.ArgumentParser:
    patch = argparse.ArgumentParser(add_help=False)
    patch.add_argument("--patch-size", type=int, default=None, help="neighborhood width p (odd), default 3")
    patch.add_argument("--stride", type=int, default=None, help="patch grid stride, default 1")
    patch.add_argument("--level-dim", type=int, default=None, help="per-level pooled channels, default 1024")
    patch.add_argument("--output-dim", type=int, default=None, help="merged feature channels, default 1024")
    patch.add_argument("--levels", type=str, default=None, help="hierarchy levels, e.g. 2,3")

    coreset = argparse.ArgumentParser(add_help=False)
    coreset.add_argument(
        "--method", choices=("greedy_coreset", "random", "learned_proxy"), default="greedy_coreset"
    )
    coreset.add_argument("--fraction", type=float, default=None, help="kept fraction of the bank")
    coreset.add_argument("--count", type=int, default=None, help="kept row count (alternative to --fraction)")
    coreset.add_argument(
        "--projection-dim", type=int, default=128, help="random projection dim for selection, 0 disables"
    )
    coreset.add_argument("--proxy-epochs", type=int, default=200)
    coreset.add_argument("--proxy-lr", type=float, default=0.01)
    coreset.add_argument("--proxy-weighting", choices=("softmin", "softmax"), default="softmin")

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--neighbors", type=int, default=3, help="reweighting pool size b")
    scoring.add_argument("--blur-sigma", type=float, default=4.0)
    scoring.add_argument("--output-size", type=str, default="auto", help="map size HxW, or 'auto'")
    scoring.add_argument("--no-reweight", action="store_true", help="keep raw nearest distances")
    scoring.add_argument(
        "--reweight-around",
        "--reweight-pool",
        dest="reweight_pool",
        choices=("test-nn", "bank-nn"),
        default="test-nn",
        help="whose neighborhood feeds the reweighting softmax",
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key = value option file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)

    parser = argparse.ArgumentParser(prog="patchbank", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=16)
    p.add_argument("--n-test-normal", type=int, default=12)
    p.add_argument("--n-test-anomalous", type=int, default=12)
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--channels", type=str, default="12,24")
    p.add_argument("--synth-levels", type=str, default="2,3")
    p.add_argument("--pixels-per-cell", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--defect-offset", type=float, default=6.0)
    p.add_argument("--defect-cells", type=str, default="6,6")
    p.add_argument("--class-name", type=str, default="synth")

    p = sub.add_parser("build", parents=[common, patch, coreset], help="build and shrink a memory bank")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--out", required=True, help="bank output directory")

    p = sub.add_parser("score", parents=[common, patch, scoring], help="score a test manifest")
    p.add_argument("--bank", required=True, help="bank directory from build")
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True, help="results output directory")
    p.add_argument("--render-pgm", action="store_true", help="also write min-max normalized PGM maps")

    p = sub.add_parser("evaluate", parents=[common], help="compute metrics from score results")
    p.add_argument("--results", required=True, help="results directory from score")
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True, help="metrics output directory")
    p.add_argument("--fpr-limit", type=float, default=0.3)
    p.add_argument("--global-threshold", action="store_true",
                   help="one F1 threshold over all classes instead of per class")
    p.add_argument("--no-pixel", action="store_true", help="skip pixel-level metrics")

    p = sub.add_parser("lowshot", parents=[common, patch, coreset, scoring],
                       help="AUROC vs number of training images")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shots", type=str, required=True, help="e.g. 1,2,5,10")
    p.add_argument("--trials", type=int, default=3)

    p = sub.add_parser("ablate", parents=[common, patch, coreset, scoring],
                       help="sweep subsampling and patch geometry")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", type=str, default="1.0,0.5,0.1,0.01")
    p.add_argument("--methods", type=str, default="greedy_coreset,random")
    p.add_argument("--patch-sizes", type=str, default="1,3,5")
    p.add_argument("--strides", type=str, default="1,2,3")
    p.add_argument("--fpr-limit", type=float, default=0.3)
    return parser


_PATCH_DEFAULTS = {"patch_size": 3, "stride": 1, "level_dim": 1024, "output_dim": 1024, "levels": (2, 3)}


def _patch_config(ns, fallback: dict | None = None) -> PatchConfig:
    base = dict(_PATCH_DEFAULTS)
    if fallback:
        base.update({k: fallback[k] for k in _PATCH_DEFAULTS if k in fallback})
    values = {
        "patch_size": ns.patch_size,
        "stride": ns.stride,
        "level_dim": ns.level_dim,
        "output_dim": ns.output_dim,
        "levels": _parse_int_list(ns.levels) if ns.levels is not None else None,
    }
    merged = {k: (v if v is not None else base[k]) for k, v in values.items()}
    merged["levels"] = tuple(merged["levels"])
    return PatchConfig(**merged)


def _coreset_config(ns) -> CoresetConfig:
    fraction, count = ns.fraction, ns.count
    if fraction is None and count is None:
        fraction = 0.1
    projection = None if ns.projection_dim == 0 else ns.projection_dim
    return CoresetConfig(
        method=ns.method, fraction=fraction, count=count, projection_dim=projection, seed=ns.seed
    )


def _proxy_config(ns) -> ProxyTrainConfig:
    return ProxyTrainConfig(
        epochs=ns.proxy_epochs,
        learning_rate=ns.proxy_lr,
        seed=derive_seed(ns.seed, 3),
        weighting=ns.proxy_weighting,
    )


def _scoring_config(ns) -> ScoringConfig:
    return ScoringConfig(
        neighbors=ns.neighbors,
        blur_sigma=ns.blur_sigma,
        output_size=_parse_size(ns.output_size),
        reweight=not ns.no_reweight,
        reweight_pool=ns.reweight_pool,
    )


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _safe_relpath(image_id: str) -> str:
    parts = [p for p in image_id.split("/") if p not in ("", ".", "..")]
    if not parts:
        raise DataError(f"image id {image_id!r} cannot be used as a file name")
    return os.path.join(*parts)


def _write_pgm(path, arr: np.ndarray) -> None:
    lo, hi = float(arr.min()), float(arr.max())
    norm = np.zeros_like(arr, dtype=np.float64) if hi == lo else (arr - lo) / (hi - lo)
    data = np.round(norm * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _class_of(image_id: str) -> str:
    return image_id.split("/", 1)[0] if "/" in image_id else image_id


# ---------------------------------------------------------------- commands


def cmd_synth(ns) -> int:
    cfg = synth.SynthConfig(
        n_train=ns.n_train,
        n_test_normal=ns.n_test_normal,
        n_test_anomalous=ns.n_test_anomalous,
        grid=ns.grid,
        channels=tuple(_parse_int_list(ns.channels)),
        levels=tuple(_parse_int_list(ns.synth_levels)),
        pixels_per_cell=ns.pixels_per_cell,
        noise_sigma=ns.noise_sigma,
        defect_offset=ns.defect_offset,
        defect_cells=tuple(_parse_int_list(ns.defect_cells)),
        class_name=ns.class_name,
    )
    train_path, test_path = synth.generate(ns.out, ns.seed, cfg)
    print(f"wrote {train_path}")
    print(f"wrote {test_path}")
    return 0


def cmd_build(ns) -> int:
    started = time.perf_counter()
    manifest = tensorio.load_manifest(ns.train_manifest, "train")
    pcfg = _patch_config(ns)
    bank = build_memory_bank(manifest, pcfg, threads=ns.threads)
    full_size = bank.size
    ccfg = _coreset_config(ns)
    target = ccfg.target_size(full_size)
    if target != full_size or ccfg.method == "learned_proxy":
        bank = subsample_memory_bank(bank, ccfg, proxy_cfg=_proxy_config(ns))
    save_memory_bank(bank, ns.out)
    _write_json(
        os.path.join(ns.out, BANK_CONFIG_FILE),
        {
            "patch_size": pcfg.patch_size,
            "stride": pcfg.stride,
            "level_dim": pcfg.level_dim,
            "output_dim": pcfg.output_dim,
            "levels": list(pcfg.levels),
        },
    )
    _write_json(
        os.path.join(ns.out, "build_report.json"),
        {
            "stage": "build",
            "bank_rows": bank.size,
            "dim": bank.dim,
            "subsampled_from": bank.subsampled_from,
            "method": ccfg.method,
            "seed": ns.seed,
            "selection_seed": derive_seed(ns.seed, 2),
            "wall_time_seconds": time.perf_counter() - started,
        },
    )
    print(f"bank: {bank.size} rows of dim {bank.dim} (from {full_size}) -> {ns.out}")
    return 0


def _load_bank_patch_config(bank_dir: str, ns) -> PatchConfig:
    path = os.path.join(bank_dir, BANK_CONFIG_FILE)
    fallback = None
    if os.path.isfile(path):
        with open(path, "r", encoding="utf-8") as fh:
            stored = json.load(fh)
        fallback = dict(stored)
        if "levels" in fallback:
            fallback["levels"] = tuple(fallback["levels"])
    return _patch_config(ns, fallback)


def cmd_score(ns) -> int:
    started = time.perf_counter()
    bank = load_memory_bank(ns.bank)
    manifest = tensorio.load_manifest(ns.test_manifest, "test")
    pcfg = _load_bank_patch_config(ns.bank, ns)
    scfg = _scoring_config(ns)

    def one(entry):
        grid = image_patch_grid(manifest, entry, pcfg)
        # maps default to the declared pixel size so they align with masks
        cfg = scfg if scfg.output_size is not None else replace(scfg, output_size=entry.original_size)
        return score_map(grid, bank, cfg, image_id=entry.image_id)

    if ns.threads == 1:
        results = [one(e) for e in manifest.entries]
    else:
        with ThreadPoolExecutor(max_workers=ns.threads) as pool:
            results = list(pool.map(one, manifest.entries))

    maps_dir = os.path.join(ns.out, "maps")
    rows = []
    for sm in results:
        rel = _safe_relpath(sm.image_id)
        map_path = os.path.join(maps_dir, rel + ".tnsr")
        os.makedirs(os.path.dirname(map_path), exist_ok=True)
        tensorio.write_tensor(sm.pixel_map, map_path)
        if ns.render_pgm:
            pgm_path = os.path.join(ns.out, "maps_pgm", rel + ".pgm")
            os.makedirs(os.path.dirname(pgm_path), exist_ok=True)
            _write_pgm(pgm_path, sm.pixel_map.astype(np.float64))
        rows.append(
            [sm.image_id, _fmt(sm.image_score), _fmt(sm.raw_score), sm.argmax_patch[0], sm.argmax_patch[1]]
        )
    _write_csv(
        os.path.join(ns.out, "results.csv"),
        ["image_id", "image_score", "raw_star", "argmax_row", "argmax_col"],
        rows,
    )
    elapsed = time.perf_counter() - started
    _write_json(
        os.path.join(ns.out, "score_report.json"),
        {
            "note": "timings cover bank lookup and map rendering only; "
            "feature extraction happens upstream and is not included",
            "stage": "score",
            "images": len(results),
            "wall_time_seconds": elapsed,
            "mean_seconds_per_image": elapsed / max(1, len(results)),
        },
    )
    print(f"scored {len(results)} images -> {ns.out}")
    return 0


def _read_results_csv(path) -> dict[str, float]:
    if not os.path.isfile(path):
        raise DataError(f"missing results file {path}")
    scores: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"image_id", "image_score"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise DataError(f"{path}: header must contain {sorted(needed)}")
        for record in reader:
            scores[record["image_id"]] = float(record["image_score"])
    if not scores:
        raise DataError(f"{path}: no result rows")
    return scores


def _metric_rows(items: list[dict], fpr_limit: float, global_threshold: bool, with_pixel: bool):
    """Per-class metric rows plus the AVERAGE row.

    items: dicts with id, cls, score, label, and (if with_pixel) map, mask.
    FP/FN counts are summed in the AVERAGE row; the other columns average.
    """
    classes = sorted({it["cls"] for it in items})
    if global_threshold:
        thr_all, _, _ = metrics.f1_optimal_threshold(
            [it["score"] for it in items], [it["label"] for it in items]
        )
    rows = []
    acc = {"image_auroc": [], "pixel_auroc": [], "pro": [], "f1": [], "fp": 0, "fn": 0}
    for cls in classes:
        group = [it for it in items if it["cls"] == cls]
        scores = [it["score"] for it in group]
        labels = [it["label"] for it in group]
        image_auroc = metrics.auroc(scores, labels)
        if with_pixel:
            maps_ = [it["map"] for it in group]
            masks_ = [it["mask"] for it in group]
            px_auroc = metrics.pixel_auroc(maps_, masks_)
            pro = metrics.pro_score(maps_, masks_, fpr_limit)
        else:
            px_auroc, pro = float("nan"), float("nan")
        if global_threshold:
            thr = thr_all
            arr = np.asarray(scores)
            lab = np.asarray(labels)
            fp = int(((arr >= thr) & (lab == 0)).sum())
            fn = int(((arr < thr) & (lab == 1)).sum())
        else:
            thr, fp, fn = metrics.f1_optimal_threshold(scores, labels)
        rows.append([cls, image_auroc, px_auroc, pro, thr, fp, fn])
        acc["image_auroc"].append(image_auroc)
        acc["pixel_auroc"].append(px_auroc)
        acc["pro"].append(pro)
        acc["f1"].append(thr)
        acc["fp"] += fp
        acc["fn"] += fn
    rows.append(
        [
            "AVERAGE",
            float(np.mean(acc["image_auroc"])),
            float(np.mean(acc["pixel_auroc"])),
            float(np.mean(acc["pro"])),
            float(np.mean(acc["f1"])),
            acc["fp"],
            acc["fn"],
        ]
    )
    return rows


def _fmt_opt(x: float) -> str:
    return "" if math.isnan(x) else _fmt(x)


def _format_metric_rows(rows) -> list[list[str]]:
    out = []
    for cls, ia, pa, pro, thr, fp, fn in rows:
        out.append([cls, _fmt(ia), _fmt_opt(pa), _fmt_opt(pro), _fmt(thr), str(fp), str(fn)])
    return out


METRIC_HEADER = ["class", "image_auroc", "pixel_auroc", "pro", "f1_threshold", "fp", "fn"]


def cmd_evaluate(ns) -> int:
    manifest = tensorio.load_manifest(ns.test_manifest, "test")
    scores = _read_results_csv(os.path.join(ns.results, "results.csv"))
    manifest_ids = {e.image_id for e in manifest.entries}
    if manifest_ids != set(scores):
        missing = sorted(manifest_ids - set(scores))[:3]
        extra = sorted(set(scores) - manifest_ids)[:3]
        raise DataError(f"results do not match manifest (missing {missing}, extra {extra})")

    items = []
    for entry in manifest.entries:
        item = {
            "id": entry.image_id,
            "cls": _class_of(entry.image_id),
            "score": scores[entry.image_id],
            "label": entry.label,
        }
        if not ns.no_pixel:
            map_path = os.path.join(ns.results, "maps", _safe_relpath(entry.image_id) + ".tnsr")
            if not os.path.isfile(map_path):
                raise DataError(f"{entry.image_id}: missing map tensor {map_path}")
            pixel_map = tensorio.read_tensor(map_path)
            if pixel_map.shape != entry.original_size:
                raise DataError(
                    f"{entry.image_id}: map shape {pixel_map.shape} != image size {entry.original_size}"
                )
            item["map"] = pixel_map
            item["mask"] = tensorio.load_mask(manifest, entry)
        items.append(item)

    rows = _metric_rows(items, ns.fpr_limit, ns.global_threshold, with_pixel=not ns.no_pixel)
    _write_csv(os.path.join(ns.out, "metrics.csv"), METRIC_HEADER, _format_metric_rows(rows))

    curves_dir = os.path.join(ns.out, "curves")
    for cls in sorted({it["cls"] for it in items}):
        group = [it for it in items if it["cls"] == cls]
        s = [it["score"] for it in group]
        y = [it["label"] for it in group]
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in cls)
        fpr, tpr, thr = metrics.roc_curve(s, y)
        _write_csv(
            os.path.join(curves_dir, f"roc_{safe}.csv"),
            ["threshold", "fpr", "tpr"],
            [[_fmt(t), _fmt(x), _fmt(yv)] for t, x, yv in zip(thr, fpr, tpr)],
        )
        precision, recall, thr_pr = metrics.precision_recall_curve(s, y)
        _write_csv(
            os.path.join(curves_dir, f"pr_{safe}.csv"),
            ["threshold", "precision", "recall"],
            [[_fmt(t), _fmt(p), _fmt(r)] for t, p, r in zip(thr_pr, precision, recall)],
        )
    average = rows[-1]
    _write_json(
        os.path.join(ns.out, "evaluate_report.json"),
        {
            "stage": "evaluate",
            "classes": [row[0] for row in rows[:-1]],
            "image_auroc": average[1],
            "pixel_auroc": None if math.isnan(average[2]) else average[2],
            "pro": None if math.isnan(average[3]) else average[3],
            "false_positives": average[5],
            "false_negatives": average[6],
        },
    )
    def disp(x):
        return "-" if math.isnan(x) else f"{x:.4f}"

    for row in rows:
        print(
            f"{row[0]}: image_auroc={disp(row[1])} pixel_auroc={disp(row[2])} "
            f"pro={disp(row[3])} fp={row[5]} fn={row[6]}"
        )
    return 0


def _grids_for(manifest, pcfg, threads=1):
    def one(entry):
        return image_patch_grid(manifest, entry, pcfg)

    if threads == 1:
        return [one(e) for e in manifest.entries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, manifest.entries))


def _bank_from_blocks(blocks: list, ids: list[str]) -> MemoryBank:
    provenance = []
    feats = []
    for image_id, grid in zip(ids, blocks):
        feats.append(grid.features)
        rr, cc = np.divmod(np.arange(grid.rows * grid.cols), grid.cols)
        provenance.extend((image_id, int(r), int(c)) for r, c in zip(rr, cc))
    return MemoryBank(features=np.concatenate(feats, axis=0), provenance=tuple(provenance))


def _score_items(manifest, grids, bank, scfg, with_pixel: bool) -> list[dict]:
    items = []
    for entry, grid in zip(manifest.entries, grids):
        cfg = scfg if scfg.output_size is not None else replace(scfg, output_size=entry.original_size)
        sm = score_map(grid, bank, cfg, image_id=entry.image_id, render_pixels=with_pixel)
        item = {
            "id": entry.image_id,
            "cls": _class_of(entry.image_id),
            "score": sm.image_score,
            "label": entry.label,
        }
        if with_pixel:
            item["map"] = sm.pixel_map
            item["mask"] = tensorio.load_mask(manifest, entry)
        items.append(item)
    return items


def cmd_lowshot(ns) -> int:
    train = tensorio.load_manifest(ns.train_manifest, "train")
    test = tensorio.load_manifest(ns.test_manifest, "test")
    shots = sorted(set(_parse_int_list(ns.shots)))
    if ns.trials < 1:
        raise ConfigError(f"trials must be >= 1, got {ns.trials}")
    if shots[0] < 1:
        raise ConfigError(f"shot counts must be >= 1, got {shots[0]}")
    if shots[-1] > len(train.entries):
        raise ConfigError(f"shot count {shots[-1]} exceeds train set size {len(train.entries)}")

    pcfg = _patch_config(ns)
    scfg = _scoring_config(ns)
    base_coreset = _coreset_config(ns)
    train_grids = _grids_for(train, pcfg, ns.threads)
    test_grids = _grids_for(test, pcfg, ns.threads)
    test_labels = [e.label for e in test.entries]

    rows = []
    summary = []
    for shot in shots:
        aurocs = []
        for trial in range(ns.trials):
            rng = np.random.default_rng(np.random.SeedSequence([ns.seed, shot, trial]))
            picked = np.sort(rng.choice(len(train.entries), size=shot, replace=False))
            bank = _bank_from_blocks(
                [train_grids[i] for i in picked], [train.entries[i].image_id for i in picked]
            )
            ccfg = replace(base_coreset, seed=derive_seed(ns.seed, (shot << 16) + trial + 7))
            target = ccfg.target_size(bank.size)
            if not (target == bank.size and ccfg.method != "learned_proxy"):
                bank = subsample_memory_bank(bank, ccfg, proxy_cfg=_proxy_config(ns))
            items = _score_items(test, test_grids, bank, scfg, with_pixel=False)
            per_class = _metric_rows(items, 0.3, False, with_pixel=False)
            auroc_avg = per_class[-1][1]
            aurocs.append(auroc_avg)
            rows.append([str(shot), str(trial), _fmt(auroc_avg)])
        mean = float(np.mean(aurocs))
        std = float(np.std(aurocs, ddof=1)) if len(aurocs) > 1 else 0.0
        summary.append([str(shot), str(len(aurocs)), _fmt(mean), _fmt(std)])
        print(f"shots={shot}: image_auroc {mean:.4f} +- {std:.4f} over {len(aurocs)} trials")
    _write_csv(os.path.join(ns.out, "lowshot.csv"), ["shots", "trial", "image_auroc"], rows)
    _write_csv(
        os.path.join(ns.out, "lowshot_summary.csv"),
        ["shots", "trials", "mean_image_auroc", "std_image_auroc"],
        summary,
    )
    return 0


def cmd_ablate(ns) -> int:
    train = tensorio.load_manifest(ns.train_manifest, "train")
    test = tensorio.load_manifest(ns.test_manifest, "test")
    fractions = _parse_float_list(ns.fractions)
    methods = tuple(ns.methods.split(","))
    for m in methods:
        if m not in ("greedy_coreset", "random", "learned_proxy"):
            raise ConfigError(f"unknown method {m!r} in --methods")
    patch_sizes = _parse_int_list(ns.patch_sizes)
    strides = _parse_int_list(ns.strides)
    scfg = _scoring_config(ns)
    base_pcfg = _patch_config(ns)
    base_ccfg = _coreset_config(ns)

    def run(bank, grids) -> tuple[float, float, float]:
        items = _score_items(test, grids, bank, scfg, with_pixel=True)
        avg = _metric_rows(items, ns.fpr_limit, False, with_pixel=True)[-1]
        return avg[1], avg[2], avg[3]

    rows = []
    header = ["sweep", "method", "fraction", "patch_size", "stride", "image_auroc", "pixel_auroc", "pro"]

    full_bank = build_memory_bank(train, base_pcfg, threads=ns.threads)
    test_grids = _grids_for(test, base_pcfg, ns.threads)
    for method in methods:
        for fraction in fractions:
            ccfg = replace(base_ccfg, method=method, fraction=fraction, count=None)
            target = ccfg.target_size(full_bank.size)
            if target == full_bank.size and method != "learned_proxy":
                bank = full_bank
            else:
                bank = subsample_memory_bank(full_bank, ccfg, proxy_cfg=_proxy_config(ns))
            ia, pa, pro = run(bank, test_grids)
            rows.append(
                ["subsampling", method, _fmt(fraction), str(base_pcfg.patch_size),
                 str(base_pcfg.stride), _fmt(ia), _fmt(pa), _fmt(pro)]
            )
            print(f"subsampling {method}@{fraction}: image_auroc={ia:.4f}")

    base_fraction = base_ccfg.fraction if base_ccfg.fraction is not None else -1.0
    for p in patch_sizes:
        for s in strides:
            pcfg = replace(base_pcfg, patch_size=p, stride=s)
            bank = build_memory_bank(train, pcfg, threads=ns.threads)
            target = base_ccfg.target_size(bank.size)
            if not (target == bank.size and base_ccfg.method != "learned_proxy"):
                bank = subsample_memory_bank(bank, base_ccfg, proxy_cfg=_proxy_config(ns))
            grids = _grids_for(test, pcfg, ns.threads)
            ia, pa, pro = run(bank, grids)
            rows.append(
                ["patch_geometry", base_ccfg.method, _fmt(base_fraction), str(p), str(s),
                 _fmt(ia), _fmt(pa), _fmt(pro)]
            )
            print(f"geometry p={p} s={s}: image_auroc={ia:.4f}")
    _write_csv(os.path.join(ns.out, "ablate.csv"), header, rows)
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "build": cmd_build,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "lowshot": cmd_lowshot,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    tokens = list(sys.argv[1:] if argv is None else argv)
    stage = tokens[0] if tokens and not tokens[0].startswith("-") else "cli"
    try:
        if "--config" in tokens:
            idx = tokens.index("--config")
            if idx + 1 >= len(tokens):
                raise ConfigError("--config needs a path")
            file_tokens = _config_file_tokens(tokens[idx + 1])
            tokens = tokens[:1] + file_tokens + tokens[1:idx] + tokens[idx + 2 :]
        parser = _build_parser()
        try:
            ns = parser.parse_args(tokens)
        except SystemExit as exc:
            return int(exc.code or 0)
        return _DISPATCH[ns.command](ns)
    except ConfigError as exc:
        print(f"{stage}: configuration error: {exc}", file=sys.stderr)
        return 2
    except UndefinedMetricError as exc:
        print(f"{stage}: metric undefined: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError) as exc:
        print(f"{stage}: data error: {exc}", file=sys.stderr)
        return 3
    except PatchBankError as exc:
        print(f"{stage}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
