import hashlib
import logging
import math
import os
import re
from dataclasses import dataclass, field

import pandas as pd

from lesionsynth.errors import InvalidArgumentError
from lesionsynth.mapkit import MARKERS
from lesionsynth.storage import atomic_path

IMAGE_PATTERN = re.compile(r"^(ISIC_\d+)\.(jpg|jpeg|png)$", re.IGNORECASE)
SEGMENTATION_PATTERN = re.compile(r"^(ISIC_\d+)_segmentation\.png$", re.IGNORECASE)
ATTRIBUTE_PATTERN = re.compile(r"^(ISIC_\d+)_attribute_([a-z_]+)\.png$", re.IGNORECASE)
SUPERPIXEL_PATTERN = re.compile(r"^(ISIC_\d+)_superpixels\.png$", re.IGNORECASE)

MANIFEST_COLUMNS = (["image_id", "split", "diagnosis", "image_path", "segmentation_path"]
                    + [f"attribute_{name}_path" for name in MARKERS] + ["superpixel_path"])


@dataclass
class DatasetManifest:
    root: str
    records: pd.DataFrame
    skipped: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=["image_id", "reason"]))

    @property
    def train(self):
        return self.records[self.records["split"] == "train"]

    @property
    def test(self):
        return self.records[self.records["split"] == "test"]


def _split_key(image_id):
    return hashlib.sha256(image_id.encode("utf-8")).hexdigest()


def assign_splits(image_ids, test_fraction):
    """
    Deterministic train/test split: ids ordered by their SHA-256, the first round(n * fraction) go to test.

    Returns:
        dict[str, str]: image_id -> "train" | "test".
    """
    if not 0 <= test_fraction < 1:
        raise InvalidArgumentError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    ordered = sorted(image_ids, key=lambda image_id: (_split_key(image_id), image_id))
    n_test = int(math.floor(len(ordered) * test_fraction + 0.5))
    return {image_id: ("test" if i < n_test else "train") for i, image_id in enumerate(ordered)}


def _scan(root):
    found = {}
    for folder, _, files in os.walk(root):
        for filename in files:
            path = os.path.join(folder, filename)
            match = IMAGE_PATTERN.match(filename)
            if match:
                found.setdefault(match.group(1), {})["image_path"] = path
                continue
            match = SEGMENTATION_PATTERN.match(filename)
            if match:
                found.setdefault(match.group(1), {})["segmentation_path"] = path
                continue
            match = ATTRIBUTE_PATTERN.match(filename)
            if match and match.group(2).lower() in MARKERS:
                found.setdefault(match.group(1), {})[f"attribute_{match.group(2).lower()}_path"] = path
                continue
            match = SUPERPIXEL_PATTERN.match(filename)
            if match:
                found.setdefault(match.group(1), {})["superpixel_path"] = path
    return found


def _missing_parts(entry):
    required = ["image_path", "segmentation_path"] + [f"attribute_{name}_path" for name in MARKERS]
    return [key[:-len("_path")] for key in required if key not in entry]


def ingest_dataset(root, test_fraction, labels=None):
    """
    Discovers ISIC task-2 style records under `root` and splits them into train and test.

    Args:
        root (str): Dataset folder, searched recursively.
        test_fraction (float): Share of complete records assigned to the test split.
        labels (dict[str, ConditionLabel] | None): Optional diagnosis per image id.

    Returns:
        DatasetManifest: Complete records plus a report of skipped ones.
    """
    if not os.path.isdir(root):
        raise InvalidArgumentError(f"Dataset root {root} is not a directory")
    logging.info(f"Scanning {root} for lesion records")
    found = _scan(root)

    rows, skipped = [], []
    for image_id in sorted(found):
        entry = found[image_id]
        missing = _missing_parts(entry)
        if missing:
            skipped.append({"image_id": image_id, "reason": "missing " + ", ".join(missing)})
            continue
        label = labels.get(image_id) if labels else None
        row = {column: entry.get(column, "") for column in MANIFEST_COLUMNS}
        row.update(image_id=image_id, diagnosis=label.name.lower() if label is not None else "")
        rows.append(row)

    splits = assign_splits([row["image_id"] for row in rows], test_fraction)
    for row in rows:
        row["split"] = splits[row["image_id"]]

    records = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    skipped_frame = pd.DataFrame(skipped, columns=["image_id", "reason"])
    if records.empty:
        logging.warning(f"No complete records found under {root}")
    for item in skipped:
        logging.warning(f"Skipping {item['image_id']}: {item['reason']}")
    n_test = int((records["split"] == "test").sum())
    logging.info(f"Ingested {len(records)} records ({len(records) - n_test} train / {n_test} test), "
                 f"skipped {len(skipped)}")
    return DatasetManifest(root=root, records=records, skipped=skipped_frame)


def save_manifest(manifest: DatasetManifest, path):
    with atomic_path(path) as tmp_path:
        manifest.records.to_csv(tmp_path, index=False)
    if not manifest.skipped.empty:
        skipped_path = os.path.join(os.path.dirname(path), "skipped_records.csv")
        with atomic_path(skipped_path) as tmp_path:
            manifest.skipped.to_csv(tmp_path, index=False)


def load_manifest(file_path):
    """
    Loads a manifest written by save_manifest.

    Returns:
        pd.DataFrame: The records, or an empty DataFrame on error.
    """
    try:
        df = pd.read_csv(file_path, dtype=str, keep_default_na=False)
        logging.info(f"Successfully loaded manifest from {file_path}")
        return df
    except FileNotFoundError:
        logging.error(f"Manifest not found at {file_path}")
        return pd.DataFrame(columns=MANIFEST_COLUMNS)
    except Exception as e:
        logging.error(f"Error loading manifest from {file_path}: {e}")
        return pd.DataFrame(columns=MANIFEST_COLUMNS)
