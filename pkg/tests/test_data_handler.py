import pytest

import config
from lesionsynth import data_handler
from lesionsynth.errors import InvalidArgumentError
from lesionsynth.mapkit import MARKERS
from lesionsynth.proggan import ConditionLabel


def _touch_record(root, image_id, skip=()):
    names = [f"{image_id}.jpg", f"{image_id}_segmentation.png"]
    names += [f"{image_id}_attribute_{marker}.png" for marker in MARKERS]
    names.append(f"{image_id}_superpixels.png")
    for name in names:
        if not any(part in name for part in skip):
            (root / name).write_bytes(b"")


def test_full_dataset_split_sizes():
    ids = [f"ISIC_{i:07d}" for i in range(2594)]
    splits = data_handler.assign_splits(ids, config.TEST_FRACTION)
    values = list(splits.values())
    assert values.count("train") == 2346
    assert values.count("test") == 248


def test_split_does_not_depend_on_input_order():
    ids = [f"ISIC_{i:07d}" for i in range(50)]
    assert data_handler.assign_splits(ids, 0.2) == data_handler.assign_splits(list(reversed(ids)), 0.2)


def test_split_rejects_fraction_of_one():
    with pytest.raises(InvalidArgumentError):
        data_handler.assign_splits(["ISIC_0000001"], 1.0)


def test_ingest_skips_incomplete_records(tmp_path):
    _touch_record(tmp_path, "ISIC_0000001")
    _touch_record(tmp_path, "ISIC_0000002")
    _touch_record(tmp_path, "ISIC_0000003", skip=("attribute_streaks",))

    manifest = data_handler.ingest_dataset(str(tmp_path), 0.0, {"ISIC_0000001": ConditionLabel.MELANOMA})

    assert list(manifest.records["image_id"]) == ["ISIC_0000001", "ISIC_0000002"]
    assert list(manifest.records["diagnosis"]) == ["melanoma", ""]
    assert list(manifest.skipped["image_id"]) == ["ISIC_0000003"]
    assert "attribute_streaks" in manifest.skipped["reason"].iloc[0]
    assert len(manifest.train) == 2 and manifest.test.empty


def test_superpixel_raster_is_optional(tmp_path):
    _touch_record(tmp_path, "ISIC_0000004", skip=("superpixels",))
    manifest = data_handler.ingest_dataset(str(tmp_path), 0.0)
    assert manifest.records["superpixel_path"].iloc[0] == ""


def test_ingest_requires_a_directory(tmp_path):
    with pytest.raises(InvalidArgumentError):
        data_handler.ingest_dataset(str(tmp_path / "missing"), 0.1)


def test_manifest_survives_save_and_load(tmp_path):
    _touch_record(tmp_path, "ISIC_0000001")
    _touch_record(tmp_path, "ISIC_0000002", skip=("segmentation",))
    manifest = data_handler.ingest_dataset(str(tmp_path), 0.0)
    path = tmp_path / "out" / "manifest.csv"

    data_handler.save_manifest(manifest, str(path))
    loaded = data_handler.load_manifest(str(path))

    assert list(loaded.columns) == data_handler.MANIFEST_COLUMNS
    assert loaded["diagnosis"].iloc[0] == ""
    assert (tmp_path / "out" / "skipped_records.csv").exists()


def test_load_manifest_returns_empty_frame_when_missing(tmp_path):
    loaded = data_handler.load_manifest(str(tmp_path / "nothing.csv"))
    assert loaded.empty
    assert list(loaded.columns) == data_handler.MANIFEST_COLUMNS
