import logging
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import color, measure

from lesionsynth.errors import InvalidArgumentError
from lesionsynth.storage import atomic_path

# Semantic label codes
BORDER = 0
SKIN = 1
LESION = 2
MARKERS = ("pigment_network", "negative_network", "streaks", "milia_like_cyst", "globules")
MARKER_CODES = {name: LESION + 1 + i for i, name in enumerate(MARKERS)}
NUM_LABELS = LESION + 1 + len(MARKERS)

DEFAULT_ID_WEIGHTS = (1, 256, 65536)


@dataclass
class PreparedMaps:
    """Network-ready conditioning maps of one record, already letterboxed."""
    image_id: str
    semantic: np.ndarray
    instance: np.ndarray
    boundary: np.ndarray
    target: np.ndarray


def _as_rgb(image):
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"Expected an H x W x 3 RGB raster, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError("Image must be at least 1x1")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise InvalidArgumentError("RGB samples must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


# ---------------------------------------------------------------------------
# Superpixels
# ---------------------------------------------------------------------------

def _gradient_magnitude(lab):
    padded = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return (dx ** 2).sum(axis=2) + (dy ** 2).sum(axis=2)


def _grid_seeds(lab, k, step):
    """Regular grid of cluster centers (y, x, L, a, b), each nudged to the lowest gradient in its 3x3 window."""
    h, w = lab.shape[:2]
    # Spacing stays <= S on both axes
    ny = max(1, int(math.ceil(h / step - 1e-9)))
    nx = max(1, int(math.ceil(w / step - 1e-9)))
    while ny * nx > k:
        if nx >= ny and nx > 1:
            nx -= 1
        else:
            ny -= 1
    gradient = _gradient_magnitude(lab)

    centers = []
    for i in range(ny):
        for j in range(nx):
            cy = (i + 0.5) * h / ny - 0.5
            cx = (j + 0.5) * w / nx - 0.5
            py = min(max(int(math.floor(cy + 0.5)), 0), h - 1)
            px = min(max(int(math.floor(cx + 0.5)), 0), w - 1)
            y0, y1 = max(py - 1, 0), min(py + 2, h)
            x0, x1 = max(px - 1, 0), min(px + 2, w)
            window = gradient[y0:y1, x0:x1]
            wy, wx = np.unravel_index(np.argmin(window), window.shape)
            # Only move when strictly better; flat regions keep the exact grid position
            if window[wy, wx] < gradient[py, px]:
                cy, cx = float(y0 + wy), float(x0 + wx)
                py, px = y0 + wy, x0 + wx
            centers.append([cy, cx, *lab[py, px]])
    return np.array(centers, dtype=np.float64)


def _assign(lab, centers, step, compactness):
    h, w = lab.shape[:2]
    distances = np.full((h, w), np.inf)
    labels = np.full((h, w), -1, dtype=np.int64)
    spatial_weight = (compactness / step) ** 2
    for idx, (cy, cx, cl, ca, cb) in enumerate(centers):
        y0, y1 = max(int(math.ceil(cy - step)), 0), min(int(math.floor(cy + step)) + 1, h)
        x0, x1 = max(int(math.ceil(cx - step)), 0), min(int(math.floor(cx + step)) + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        window = lab[y0:y1, x0:x1]
        d_color = ((window - np.array([cl, ca, cb])) ** 2).sum(axis=2)
        yy, xx = np.ogrid[y0:y1, x0:x1]
        d_xy = (yy - cy) ** 2 + (xx - cx) ** 2
        dist = d_color + d_xy * spatial_weight  # squared D; sqrt is monotone
        region = distances[y0:y1, x0:x1]
        closer = dist < region
        region[closer] = dist[closer]
        labels[y0:y1, x0:x1][closer] = idx
    return labels


def _update_centers(lab, labels, centers):
    h, w = labels.shape
    flat = labels.ravel()
    valid = flat >= 0
    ids = flat[valid]
    counts = np.bincount(ids, minlength=len(centers))
    ys, xs = np.mgrid[0:h, 0:w]
    features = [ys.ravel(), xs.ravel(), *(lab[..., c].ravel() for c in range(3))]
    updated = centers.copy()
    occupied = counts > 0
    for col, feature in enumerate(features):
        sums = np.bincount(ids, weights=feature[valid], minlength=len(centers))
        updated[occupied, col] = sums[occupied] / counts[occupied]
    return updated


def _enforce_connectivity(labels, min_size):
    """Merges orphan components into their largest adjacent superpixel."""
    # +2 keeps unassigned pixels (-1) out of the background value 0
    components = measure.label(labels + 2, connectivity=1, background=0)
    n = int(components.max())
    sizes = np.bincount(components.ravel(), minlength=n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)
    owner[components.ravel()] = labels.ravel()

    best = {}
    for c in range(1, n + 1):
        cluster = owner[c]
        if cluster < 0:
            continue
        if cluster not in best or sizes[c] > sizes[best[cluster]]:
            best[cluster] = c
    keep = np.zeros(n + 1, dtype=bool)
    for c in best.values():
        if sizes[c] >= min_size:
            keep[c] = True
    if not keep.any():
        assigned = [c for c in range(1, n + 1) if owner[c] >= 0]
        keep[max(assigned, key=lambda c: sizes[c])] = True

    final = np.where(keep[components], labels, -1)
    kept_ids, kept_counts = np.unique(final[final >= 0], return_counts=True)
    cluster_size = dict(zip(kept_ids.tolist(), kept_counts.tolist()))

    slices = ndimage.find_objects(components)
    pending = [c for c in range(1, n + 1) if not keep[c]]
    while pending:
        remaining = []
        for c in pending:
            sl = slices[c - 1]
            y0, y1 = max(sl[0].start - 1, 0), min(sl[0].stop + 1, labels.shape[0])
            x0, x1 = max(sl[1].start - 1, 0), min(sl[1].stop + 1, labels.shape[1])
            mask = components[y0:y1, x0:x1] == c
            ring = ndimage.binary_dilation(mask) & ~mask
            neighbours = final[y0:y1, x0:x1][ring]
            neighbours = neighbours[neighbours >= 0]
            if neighbours.size == 0:
                remaining.append(c)
                continue
            target = max(np.unique(neighbours).tolist(), key=lambda lbl: (cluster_size[lbl], -lbl))
            final[y0:y1, x0:x1][mask] = target
            cluster_size[target] += int(mask.sum())
        if len(remaining) == len(pending):
            raise RuntimeError("Superpixel connectivity enforcement made no progress")
        pending = remaining

    _, relabelled = np.unique(final, return_inverse=True)
    return relabelled.reshape(labels.shape).astype(np.int64)


def slic_superpixels(image, k, m=10.0, max_iter=10):
    """
    Partitions an RGB image into roughly k compact superpixels (SLIC).

    Clustering runs in CIELAB on (L, a, b, y, x) with distance
    D = sqrt(d_color^2 + (d_xy / S)^2 * m^2), searching a 2S x 2S window
    around every center, S = sqrt(H*W/k).

    Args:
        image (np.ndarray): H x W x 3 uint8 raster.
        k (int): Target number of superpixels.
        m (float): Compactness; larger values give more regular shapes.
        max_iter (int): Upper bound on assignment/update rounds.

    Returns:
        np.ndarray: H x W int64 instance ids, 0..n-1, each id 4-connected.
    """
    rgb = _as_rgb(image)
    h, w = rgb.shape[:2]
    if not 1 <= k <= h * w:
        raise InvalidArgumentError(f"k must lie in [1, {h * w}], got {k}")
    if not m > 0:
        raise InvalidArgumentError(f"Compactness must be positive, got {m}")
    if max_iter < 1:
        raise InvalidArgumentError(f"max_iter must be >= 1, got {max_iter}")

    lab = color.rgb2lab(rgb)
    step = math.sqrt(h * w / k)
    centers = _grid_seeds(lab, k, step)

    labels = None
    for iteration in range(max_iter):
        assigned = _assign(lab, centers, step, m)
        if labels is not None and np.array_equal(assigned, labels):
            logging.debug(f"SLIC converged after {iteration} iterations")
            break
        labels = assigned
        centers = _update_centers(lab, labels, centers)

    result = _enforce_connectivity(labels, min_size=int(step * step / 4))
    logging.debug(f"SLIC produced {int(result.max()) + 1} superpixels (k={k}, m={m})")
    return result


def decode_superpixel_png(image, weights=DEFAULT_ID_WEIGHTS):
    """Decodes an archive superpixel raster: id = R*w0 + G*w1 + B*w2."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"Superpixel raster must have 3 channels, got shape {arr.shape}")
    arr = arr.astype(np.int64)
    return arr[..., 0] * weights[0] + arr[..., 1] * weights[1] + arr[..., 2] * weights[2]


def encode_superpixel_png(inst, weights=DEFAULT_ID_WEIGHTS):
    ids = np.asarray(inst).astype(np.int64)
    if ids.size and ids.min() < 0:
        raise InvalidArgumentError("Instance ids must be non-negative")
    out = np.zeros(ids.shape + (3,), dtype=np.int64)
    rest = ids.copy()
    for channel in sorted(range(3), key=lambda c: weights[c], reverse=True):
        out[..., channel] = rest // weights[channel]
        rest = rest % weights[channel]
    if out.max(initial=0) > 255:
        raise InvalidArgumentError("Instance ids exceed the range representable with these weights")
    return out.astype(np.uint8)


# ---------------------------------------------------------------------------
# Semantic maps
# ---------------------------------------------------------------------------

def build_semantic_map(seg, markers):
    """
    Combines a lesion segmentation and the five attribute masks into one label map.

    Marker pixels win over the segmentation (also outside the lesion); when
    several markers overlap the lowest code wins.

    Args:
        seg (np.ndarray): H x W binary lesion mask.
        markers (Mapping[str, np.ndarray]): One binary mask per name in MARKERS.

    Returns:
        np.ndarray: H x W uint8 labels in [1, 7].
    """
    seg = np.asarray(seg).astype(bool)
    if seg.ndim != 2:
        raise InvalidArgumentError(f"Segmentation mask must be 2-D, got shape {seg.shape}")
    missing = set(MARKERS) - set(markers)
    unknown = set(markers) - set(MARKERS)
    if missing or unknown:
        raise InvalidArgumentError(f"Attribute masks mismatch (missing={sorted(missing)}, unknown={sorted(unknown)})")

    labels = np.where(seg, LESION, SKIN).astype(np.uint8)
    for name in reversed(MARKERS):
        mask = np.asarray(markers[name]).astype(bool)
        if mask.shape != seg.shape:
            raise InvalidArgumentError(f"Mask '{name}' has shape {mask.shape}, expected {seg.shape}")
        labels[mask] = MARKER_CODES[name]
    return labels


def letterbox_geometry(width, height, target_w, target_h):
    """
    Returns (new_w, new_h, left, top) of the aspect-preserving fit into the canvas.

    Scaled sizes round half up; the odd padding pixel goes right/bottom.
    """
    if target_w < 1 or target_h < 1:
        raise InvalidArgumentError(f"Target size must be positive, got {target_w}x{target_h}")
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"Source size must be positive, got {width}x{height}")
    scale = min(target_w / width, target_h / height)
    new_w = min(target_w, max(1, int(math.floor(scale * width + 0.5))))
    new_h = min(target_h, max(1, int(math.floor(scale * height + 0.5))))
    return new_w, new_h, (target_w - new_w) // 2, (target_h - new_h) // 2


def letterbox(label_map, target_w, target_h, fill):
    """
    Nearest-neighbour, aspect-preserving resize of a label or instance map onto a fixed canvas.

    Args:
        label_map (np.ndarray): H x W integer map.
        target_w (int): Canvas width.
        target_h (int): Canvas height.
        fill (int): Value of the padding (BORDER for semantic maps, a fresh id for instance maps).

    Returns:
        np.ndarray: target_h x target_w map of the same dtype.
    """
    arr = np.asarray(label_map)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"Expected a 2-D map, got shape {arr.shape}")
    h, w = arr.shape
    new_w, new_h, left, top = letterbox_geometry(w, h, target_w, target_h)
    src_y = np.minimum(((np.arange(new_h) + 0.5) * h / new_h).astype(np.int64), h - 1)
    src_x = np.minimum(((np.arange(new_w) + 0.5) * w / new_w).astype(np.int64), w - 1)
    dtype = arr.dtype if np.can_cast(np.min_scalar_type(fill), arr.dtype) else np.int64
    canvas = np.full((target_h, target_w), fill, dtype=dtype)
    canvas[top:top + new_h, left:left + new_w] = arr[np.ix_(src_y, src_x)]
    return canvas


def letterbox_image(image, target_w, target_h):
    """Bilinear counterpart of `letterbox` for RGB targets; padding is black."""
    rgb = _as_rgb(image)
    h, w = rgb.shape[:2]
    new_w, new_h, left, top = letterbox_geometry(w, h, target_w, target_h)
    content = Image.fromarray(rgb)
    if (new_w, new_h) != (w, h):
        content = content.resize((new_w, new_h), Image.BILINEAR)
    canvas = Image.new("RGB", (target_w, target_h), (0, 0, 0))
    canvas.paste(content, (left, top))
    return np.array(canvas)


def fresh_instance_id(inst):
    inst = np.asarray(inst)
    return int(inst.max()) + 1 if inst.size else 0


def boundary_map(inst):
    """1 where any existing 4-neighbour carries a different instance id, else 0."""
    inst = np.asarray(inst)
    edges = np.zeros(inst.shape, dtype=bool)
    vertical = inst[1:, :] != inst[:-1, :]
    edges[1:, :] |= vertical
    edges[:-1, :] |= vertical
    horizontal = inst[:, 1:] != inst[:, :-1]
    edges[:, 1:] |= horizontal
    edges[:, :-1] |= horizontal
    return edges.astype(np.uint8)


def one_hot(label_map, num_labels=NUM_LABELS, boundary=None):
    """
    Encodes a label map as num_labels indicator planes, optionally followed by the boundary plane.

    Returns:
        np.ndarray: (num_labels [+1]) x H x W float32.
    """
    labels = np.asarray(label_map)
    if labels.ndim != 2:
        raise InvalidArgumentError(f"Expected a 2-D label map, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_labels):
        raise InvalidArgumentError(f"Labels must lie in [0, {num_labels}), found range [{labels.min()}, {labels.max()}]")
    planes = (labels[None, :, :] == np.arange(num_labels)[:, None, None]).astype(np.float32)
    if boundary is not None:
        boundary = np.asarray(boundary)
        if boundary.shape != labels.shape:
            raise InvalidArgumentError(f"Boundary shape {boundary.shape} does not match label map {labels.shape}")
        planes = np.concatenate([planes, (boundary > 0).astype(np.float32)[None]], axis=0)
    return planes


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def read_rgb(path):
    with Image.open(path) as img:
        return np.array(img.convert("RGB"))


def read_mask(path, threshold=127):
    with Image.open(path) as img:
        return np.array(img.convert("L")) > threshold


def read_attribute_masks(paths, threshold=127):
    return {name: read_mask(paths[name], threshold) for name in MARKERS}


def _save_png(path, array):
    with atomic_path(path) as tmp_path:
        Image.fromarray(np.ascontiguousarray(array)).save(tmp_path, format="PNG")


def write_semantic_png(path, semantic):
    _save_png(path, np.asarray(semantic).astype(np.uint8))


def read_semantic_png(path):
    with Image.open(path) as img:
        return np.array(img)


def write_instance_png(path, inst, weights=DEFAULT_ID_WEIGHTS):
    _save_png(path, encode_superpixel_png(inst, weights))


def read_instance_png(path, weights=DEFAULT_ID_WEIGHTS):
    return decode_superpixel_png(read_rgb(path), weights)


def write_boundary_png(path, boundary):
    _save_png(path, (np.asarray(boundary) > 0).astype(np.uint8) * 255)


def write_rgb_png(path, image):
    _save_png(path, _as_rgb(image))


def _has_path(value):
    return isinstance(value, str) and value != ""


def prepare_record(record, settings):
    """
    Builds the letterboxed semantic, instance and boundary maps plus the target image of one record.

    Args:
        record (Mapping): Manifest row (image_id, image_path, segmentation_path,
            attribute_<marker>_path, superpixel_path).
        settings (MapkitSettings): Map construction parameters.

    Returns:
        PreparedMaps: Maps at settings.width x settings.height.
    """
    image = read_rgb(record["image_path"])
    seg = read_mask(record["segmentation_path"], settings.mask_threshold)
    if seg.shape != image.shape[:2]:
        raise InvalidArgumentError(f"{record['image_id']}: segmentation {seg.shape} does not match image {image.shape[:2]}")
    markers = read_attribute_masks({name: record[f"attribute_{name}_path"] for name in MARKERS}, settings.mask_threshold)
    semantic = build_semantic_map(seg, markers)

    weights = tuple(settings.id_weights)
    superpixel_path = record.get("superpixel_path")
    if settings.superpixel_source == "archive" and _has_path(superpixel_path):
        instance = read_instance_png(superpixel_path, weights)
    else:
        if settings.superpixel_source == "archive":
            logging.warning(f"{record['image_id']}: no superpixel raster, recomputing with SLIC")
        instance = slic_superpixels(image, settings.slic_segments, settings.slic_compactness, settings.slic_max_iter)
    if instance.shape != semantic.shape:
        raise InvalidArgumentError(f"{record['image_id']}: superpixels {instance.shape} do not match masks {semantic.shape}")

    semantic = letterbox(semantic, settings.width, settings.height, BORDER)
    instance = letterbox(instance, settings.width, settings.height, fresh_instance_id(instance))
    target = letterbox_image(image, settings.width, settings.height)
    return PreparedMaps(str(record["image_id"]), semantic, instance, boundary_map(instance), target)


def map_paths(folder, image_id):
    """File names used by prepare-maps for one record."""
    return {
        "semantic": f"{folder}/{image_id}_semantic.png",
        "instance": f"{folder}/{image_id}_instance.png",
        "boundary": f"{folder}/{image_id}_boundary.png",
        "image": f"{folder}/{image_id}_image.png",
    }


def write_prepared(maps, folder, weights=DEFAULT_ID_WEIGHTS):
    paths = map_paths(folder, maps.image_id)
    write_semantic_png(paths["semantic"], maps.semantic)
    write_instance_png(paths["instance"], maps.instance, weights)
    write_boundary_png(paths["boundary"], maps.boundary)
    write_rgb_png(paths["image"], maps.target)
    return paths
