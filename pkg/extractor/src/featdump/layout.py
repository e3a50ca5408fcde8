"""Directory walk for the class/train/good, class/test/<defect> layout.

Ground-truth masks live in class/ground_truth/<defect>/<stem>_mask.png.
The walk is pure: it returns records, reads no pixels, and leaves all
warnings and IO to the caller.
"""

import os
from dataclasses import dataclass

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetImage:
    image_id: str  # "<class>/<split>_<category>_<stem>"
    cls: str
    split: str  # train | test
    label: int
    path: str
    mask_path: str | None  # None for nominal images or missing ground truth


def _images_in(directory: str) -> list[str]:
    names = [n for n in sorted(os.listdir(directory)) if n.lower().endswith(IMAGE_EXTS)]
    return [os.path.join(directory, n) for n in names]


def scan_layout(data_dir: str) -> list[DatasetImage]:
    if not os.path.isdir(data_dir):
        raise LayoutError(f"data directory {data_dir!r} does not exist")
    classes = sorted(
        n for n in os.listdir(data_dir)
        if os.path.isdir(os.path.join(data_dir, n)) and not n.startswith(".")
    )
    if not classes:
        raise LayoutError(f"no class directories under {data_dir!r}")

    records: list[DatasetImage] = []
    for cls in classes:
        cls_dir = os.path.join(data_dir, cls)
        train_good = os.path.join(cls_dir, "train", "good")
        test_dir = os.path.join(cls_dir, "test")
        if not os.path.isdir(train_good) or not os.path.isdir(test_dir):
            raise LayoutError(f"class {cls!r} lacks train/good or test/ subdirectories")

        for path in _images_in(train_good):
            stem = os.path.splitext(os.path.basename(path))[0]
            records.append(DatasetImage(f"{cls}/train_good_{stem}", cls, "train", 0, path, None))

        categories = sorted(
            n for n in os.listdir(test_dir) if os.path.isdir(os.path.join(test_dir, n))
        )
        if not categories:
            raise LayoutError(f"class {cls!r} has an empty test/ directory")
        for category in categories:
            anomalous = category != "good"
            for path in _images_in(os.path.join(test_dir, category)):
                stem = os.path.splitext(os.path.basename(path))[0]
                mask = None
                if anomalous:
                    candidate = os.path.join(
                        cls_dir, "ground_truth", category, f"{stem}_mask.png"
                    )
                    mask = candidate if os.path.isfile(candidate) else None
                records.append(
                    DatasetImage(
                        f"{cls}/test_{category}_{stem}", cls, "test", int(anomalous), path, mask
                    )
                )
    if not any(r.split == "train" for r in records):
        raise LayoutError("layout contains no training images")
    if not any(r.split == "test" for r in records):
        raise LayoutError("layout contains no test images")
    return records
