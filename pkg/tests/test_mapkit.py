import numpy as np
import pytest
from PIL import Image

from lesionsynth import mapkit
from lesionsynth.errors import InvalidArgumentError
from lesionsynth.settings import MapkitSettings


def _brute_force_boundary(inst):
    h, w = inst.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and inst[ny, nx] != inst[y, x]:
                    out[y, x] = 1
    return out


def _empty_markers(shape):
    return {name: np.zeros(shape, dtype=bool) for name in mapkit.MARKERS}


# --- superpixels -------------------------------------------------------------

def test_slic_on_constant_image_gives_quadrants():
    image = np.full((20, 20, 3), 128, dtype=np.uint8)
    labels = mapkit.slic_superpixels(image, k=4)

    assert labels.shape == (20, 20)
    assert len(np.unique(labels)) == 4
    quadrants = [labels[:10, :10], labels[:10, 10:], labels[10:, :10], labels[10:, 10:]]
    for quadrant in quadrants:
        assert len(np.unique(quadrant)) == 1
    assert len({int(q[0, 0]) for q in quadrants}) == 4


def test_slic_superpixels_are_connected():
    rng = np.random.default_rng(3)
    image = rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8)
    labels = mapkit.slic_superpixels(image, k=12, m=10.0)

    assert labels.min() == 0
    assert sorted(np.unique(labels)) == list(range(labels.max() + 1))
    from skimage import measure
    for value in np.unique(labels):
        components = measure.label(labels == value, connectivity=1)
        assert components.max() == 1


def test_slic_count_on_natural_image():
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    image = np.stack([128 + 90 * np.sin(xx / 9.0), 128 + 90 * np.cos(yy / 11.0),
                      np.full_like(xx, 120.0)], axis=2)
    image[(yy - 30) ** 2 + (xx - 34) ** 2 < 15 ** 2] = (60, 40, 30)
    labels = mapkit.slic_superpixels(image.astype(np.uint8), k=16, m=10.0)

    assert 8 <= len(np.unique(labels)) <= 32
    from skimage import measure
    for value in np.unique(labels):
        assert measure.label(labels == value, connectivity=1).max() == 1


def test_slic_keeps_seeds_when_grid_rounding_is_coarse():
    labels = mapkit.slic_superpixels(np.full((12, 12, 3), 90, dtype=np.uint8), k=2)

    assert len(np.unique(labels)) == 2
    assert sorted(np.bincount(labels.ravel()).tolist()) == [72, 72]


@pytest.mark.parametrize("k", [0, 401])
def test_slic_rejects_k_out_of_range(k):
    with pytest.raises(InvalidArgumentError):
        mapkit.slic_superpixels(np.zeros((20, 20, 3), dtype=np.uint8), k=k)


def test_decode_superpixel_png_weights_channels():
    raster = np.array([[[1, 2, 3], [0, 0, 0]]], dtype=np.uint8)
    ids = mapkit.decode_superpixel_png(raster)
    assert ids.tolist() == [[1 + 2 * 256 + 3 * 65536, 0]]


def test_encode_rejects_ids_beyond_weights():
    with pytest.raises(InvalidArgumentError):
        mapkit.encode_superpixel_png(np.array([[256]]), weights=(1, 1, 1))


# --- semantic maps ---------------------------------------------------------

def test_semantic_map_marks_skin_and_lesion():
    seg = np.zeros((4, 4), dtype=bool)
    seg[1:3, 1:3] = True
    labels = mapkit.build_semantic_map(seg, _empty_markers(seg.shape))

    assert labels[0, 0] == mapkit.SKIN
    assert labels[1, 1] == mapkit.LESION
    assert set(np.unique(labels)) == {mapkit.SKIN, mapkit.LESION}


def test_markers_override_segmentation_and_lowest_code_wins():
    seg = np.zeros((3, 3), dtype=bool)
    markers = _empty_markers(seg.shape)
    markers["streaks"][0, 0] = True
    markers["globules"][0, 0] = True
    markers["globules"][2, 2] = True

    labels = mapkit.build_semantic_map(seg, markers)

    assert labels[0, 0] == mapkit.MARKER_CODES["streaks"]
    assert labels[2, 2] == mapkit.MARKER_CODES["globules"]
    assert labels[1, 1] == mapkit.SKIN


def test_semantic_map_rejects_missing_marker():
    markers = _empty_markers((2, 2))
    del markers["milia_like_cyst"]
    with pytest.raises(InvalidArgumentError):
        mapkit.build_semantic_map(np.zeros((2, 2)), markers)


# --- letterboxing ----------------------------------------------------------

def test_letterbox_geometry_centres_the_content():
    assert mapkit.letterbox_geometry(100, 50, 64, 64) == (64, 32, 0, 16)
    assert mapkit.letterbox_geometry(50, 100, 64, 64) == (32, 64, 16, 0)


def test_letterbox_full_size_canvas_puts_odd_pad_on_the_right():
    assert mapkit.letterbox_geometry(600, 450, 1024, 512) == (683, 512, 170, 0)

    out = mapkit.letterbox(np.full((450, 600), mapkit.LESION, dtype=np.uint8), 1024, 512, mapkit.BORDER)

    assert (out[:, :170] == mapkit.BORDER).all()
    assert (out[:, 170:853] == mapkit.LESION).all()
    assert (out[:, 853:] == mapkit.BORDER).all()
    assert out[:, 853:].shape[1] == 171


def test_letterbox_pads_with_fill_value():
    label_map = np.full((10, 20), mapkit.LESION, dtype=np.uint8)
    out = mapkit.letterbox(label_map, 16, 16, mapkit.BORDER)

    assert out.shape == (16, 16)
    assert (out[:4] == mapkit.BORDER).all()
    assert (out[12:] == mapkit.BORDER).all()
    assert (out[4:12] == mapkit.LESION).all()


def test_letterbox_instance_padding_uses_fresh_id():
    inst = np.arange(6).reshape(2, 3)
    fill = mapkit.fresh_instance_id(inst)
    out = mapkit.letterbox(inst, 6, 6, fill)

    assert fill == 6
    assert (out[0] == fill).all()
    assert set(np.unique(out[1:5])) == set(range(6))


def test_letterbox_image_is_black_outside_content():
    image = np.full((10, 20, 3), 200, dtype=np.uint8)
    out = mapkit.letterbox_image(image, 16, 16)

    assert out.shape == (16, 16, 3)
    assert (out[0] == 0).all()
    assert (out[8] == 200).all()


# --- boundary and encoding -------------------------------------------------

def test_boundary_map_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        inst = rng.integers(0, 4, size=(8, 8))
        assert np.array_equal(mapkit.boundary_map(inst), _brute_force_boundary(inst))


def test_boundary_of_single_instance_is_empty():
    assert mapkit.boundary_map(np.zeros((5, 7), dtype=int)).sum() == 0


def test_one_hot_appends_boundary_plane():
    labels = np.array([[0, 1], [7, 2]])
    boundary = np.array([[1, 0], [0, 1]])
    planes = mapkit.one_hot(labels, boundary=boundary)

    assert planes.shape == (mapkit.NUM_LABELS + 1, 2, 2)
    assert planes[:mapkit.NUM_LABELS].sum(axis=0).tolist() == [[1, 1], [1, 1]]
    assert planes[7, 1, 0] == 1.0
    assert planes[-1].tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_one_hot_rejects_unknown_label():
    with pytest.raises(InvalidArgumentError):
        mapkit.one_hot(np.array([[mapkit.NUM_LABELS]]))


# --- record preparation ----------------------------------------------------

def _write_record(folder, image_id="ISIC_0000001", size=(24, 12)):
    w, h = size
    image = np.full((h, w, 3), 180, dtype=np.uint8)
    image[3:9, 6:18] = (90, 40, 30)
    seg = np.zeros((h, w), dtype=np.uint8)
    seg[3:9, 6:18] = 255
    record = {"image_id": image_id, "superpixel_path": ""}
    record["image_path"] = str(folder / f"{image_id}.png")
    Image.fromarray(image).save(record["image_path"])
    record["segmentation_path"] = str(folder / f"{image_id}_segmentation.png")
    Image.fromarray(seg).save(record["segmentation_path"])
    for name in mapkit.MARKERS:
        path = str(folder / f"{image_id}_attribute_{name}.png")
        mask = np.zeros((h, w), dtype=np.uint8)
        if name == "globules":
            mask[4, 8] = 255
        Image.fromarray(mask).save(path)
        record[f"attribute_{name}_path"] = path
    return record


def test_prepare_record_builds_letterboxed_maps(tmp_path):
    record = _write_record(tmp_path)
    settings = MapkitSettings(width=32, height=32, superpixel_source="slic", slic_segments=6)

    maps = mapkit.prepare_record(record, settings)

    assert maps.semantic.shape == (32, 32)
    assert maps.instance.shape == (32, 32)
    assert maps.target.shape == (32, 32, 3)
    assert (maps.semantic[:8] == mapkit.BORDER).all()
    assert mapkit.MARKER_CODES["globules"] in np.unique(maps.semantic)
    assert np.array_equal(maps.boundary, mapkit.boundary_map(maps.instance))


def test_write_prepared_maps_read_back(tmp_path):
    record = _write_record(tmp_path)
    settings = MapkitSettings(width=16, height=16, superpixel_source="slic", slic_segments=4)
    maps = mapkit.prepare_record(record, settings)

    paths = mapkit.write_prepared(maps, str(tmp_path / "maps"))

    assert np.array_equal(mapkit.read_semantic_png(paths["semantic"]), maps.semantic)
    assert np.array_equal(mapkit.read_instance_png(paths["instance"]), maps.instance)
    assert np.array_equal(mapkit.read_rgb(paths["image"]), maps.target)
