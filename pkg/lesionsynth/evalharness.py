"""
Synthetic-data utility measurement.

A classifier is trained on each training-set composition (real images,
pix2pixHD samples from instance+semantic or semantic-only maps, PGAN
samples), scored on real test images with test-time augmentation, and the
per-run AUCs are compared against a reference composition with a paired
t-test.
"""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode
from PIL import Image
from scipy.stats import rankdata

import config
from lesionsynth.errors import DegenerateInputError, InsufficientDataError, InvalidArgumentError
from lesionsynth.proggan import ConditionLabel, label_counts
from lesionsynth.trainer import seed_everything

SOURCES = ("real", "instance", "semantic", "pgan")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class EvalSettings:
    runs: int = config.EVAL_RUNS
    set_size: int = config.EVAL_SET_SIZE
    reference: str = config.EVAL_REFERENCE
    specs: list = field(default_factory=list)  # empty: every composition
    classifier: str = config.EVAL_CLASSIFIER
    input_size: int = config.EVAL_INPUT_SIZE
    epochs: int = config.EVAL_EPOCHS
    batch_size: int = config.EVAL_BATCH_SIZE
    learning_rate: float = config.EVAL_LEARNING_RATE
    tta_replicas: int = config.TTA_REPLICAS
    jitter_low: float = config.JITTER_LOW
    jitter_high: float = config.JITTER_HIGH
    significance_level: float = config.SIGNIFICANCE_LEVEL
    workers: int = config.EVAL_WORKERS
    seed: int = config.SEED
    deterministic: bool = config.DETERMINISTIC

    def validate(self):
        for name in ("runs", "set_size", "input_size", "epochs", "batch_size", "learning_rate", "tta_replicas",
                     "workers"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}", field=name)
        if not 0 < self.jitter_low <= self.jitter_high:
            raise InvalidArgumentError(f"Need 0 < jitter_low <= jitter_high, got {self.jitter_low}, {self.jitter_high}",
                                       field="jitter_low")
        if not 0 < self.significance_level < 1:
            raise InvalidArgumentError(f"significance_level must lie in (0, 1), got {self.significance_level}",
                                       field="significance_level")
        if self.classifier not in CLASSIFIERS:
            raise InvalidArgumentError(f"Unknown classifier '{self.classifier}'; known: {sorted(CLASSIFIERS)}",
                                       field="classifier")

    @property
    def jitter_range(self):
        return self.jitter_low, self.jitter_high


@dataclass(eq=False)
class LabeledImage:
    source: str
    image_id: str
    label: int  # 1 = melanoma
    path: str = None
    pixels: np.ndarray = None

    def load(self, size=None):
        """H x W x 3 uint8 pixels, resized to size x size (bilinear) when size is given."""
        if self.pixels is not None:
            img = Image.fromarray(np.asarray(self.pixels, dtype=np.uint8))
        else:
            with Image.open(self.path) as src:
                img = src.convert("RGB")
        if size is not None and img.size != (size, size):
            img = img.resize((size, size), Image.BILINEAR)
        return np.asarray(img, dtype=np.uint8)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    parts: tuple  # ((source, count), ...)

    def __post_init__(self):
        sources = [source for source, _ in self.parts]
        if not sources:
            raise InvalidArgumentError(f"Spec '{self.name}' has no parts")
        if len(set(sources)) != len(sources):
            raise InvalidArgumentError(f"Spec '{self.name}' repeats a source: {sources}")
        for source, count in self.parts:
            if source not in SOURCES:
                raise InvalidArgumentError(f"Spec '{self.name}': unknown source '{source}'")
            if count <= 0:
                raise InvalidArgumentError(f"Spec '{self.name}': count for '{source}' must be > 0, got {count}")

    @property
    def size(self):
        return sum(count for _, count in self.parts)


# Training-set compositions as (name, ((source, multiple of the set size), ...))
COMPOSITION_LAYOUT = (
    ("Real", (("real", 1),)),
    ("Instance", (("instance", 1),)),
    ("Semantic", (("semantic", 1),)),
    ("PGAN", (("pgan", 1),)),
    ("Real+Instance", (("real", 1), ("instance", 1))),
    ("Real+Semantic", (("real", 1), ("semantic", 1))),
    ("Real+PGAN", (("real", 1), ("pgan", 1))),
    ("Real+2xPGAN", (("real", 1), ("pgan", 2))),
    ("Real+Instance+PGAN", (("real", 1), ("instance", 1), ("pgan", 1))),
)


def composition_specs(set_size=config.EVAL_SET_SIZE):
    return [DatasetSpec(name, tuple((source, k * set_size) for source, k in parts)) for name, parts in COMPOSITION_LAYOUT]


DEFAULT_SPECS = composition_specs()


def select_specs(names, set_size):
    specs = composition_specs(set_size)
    if not names:
        return specs
    by_name = {spec.name: spec for spec in specs}
    unknown = [name for name in names if name not in by_name]
    if unknown:
        raise InvalidArgumentError(f"Unknown training-set compositions {unknown}; known: {list(by_name)}")
    return [spec for spec in specs if spec.name in names]


@dataclass
class RunResult:
    run: int
    auc: float
    seed: int


@dataclass
class PairedTTest:
    statistic: float
    dof: int
    p_value: float
    significant: bool


@dataclass
class ExperimentRow:
    name: str
    mean_auc: float  # percent
    std_auc: float  # percent, n-1 divisor
    size: int
    p_value: float = None
    significant: bool = None


@dataclass
class ExperimentReport:
    reference: str
    rows: list
    runs: dict = field(default_factory=dict)  # spec name -> list[RunResult]


# ---------------------------------------------------------------------------
# Training-set assembly
# ---------------------------------------------------------------------------

def _draw(pool, count, rng, what):
    if len(pool) < count:
        raise InsufficientDataError(f"{what}: requested {count} images, pool holds {len(pool)}")
    return [pool[i] for i in rng.choice(len(pool), size=count, replace=False)]


def assemble_training_set(spec: DatasetSpec, pools, seed):
    """
    Draws the images a composition asks for, without replacement.

    PGAN draws keep the real pool's melanoma ratio when a real pool is available.

    Args:
        spec (DatasetSpec): Composition to assemble.
        pools (dict[str, list[LabeledImage]]): Candidate images per source.
        seed (int): Draw seed.

    Returns:
        list[LabeledImage]: Exactly spec.size images.
    """
    rng = np.random.default_rng(seed)
    real_pool = pools.get("real") or []
    items = []
    for source, count in spec.parts:
        pool = pools.get(source) or []
        if source == "pgan" and real_pool:
            ratio = float(np.mean([item.label for item in real_pool]))
            for label, k in label_counts(count, ratio).items():
                if k:
                    subset = [item for item in pool if item.label == int(label)]
                    items += _draw(subset, k, rng, f"{spec.name}/pgan/{label.name.lower()}")
        else:
            items += _draw(pool, count, rng, f"{spec.name}/{source}")
    return items


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def augment(image, rng, jitter_range=(config.JITTER_LOW, config.JITTER_HIGH), rotate=True):
    """
    Random flips, rotation and color jitter of an H x W x 3 uint8 image.

    The same number of draws is taken from `rng` whatever the flags, so
    sequences stay aligned across settings.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"Expected an H x W x 3 image, got shape {image.shape}")
    flip_h, flip_v = rng.random(2) < 0.5
    angle = float(rng.uniform(0.0, 360.0))
    brightness, contrast, saturation = (float(v) for v in rng.uniform(jitter_range[0], jitter_range[1], size=3))

    out = torch.from_numpy(np.ascontiguousarray(image, dtype=np.uint8)).permute(2, 0, 1)
    if flip_h:
        out = TF.hflip(out)
    if flip_v:
        out = TF.vflip(out)
    if rotate:
        out = TF.rotate(out, angle, interpolation=InterpolationMode.BILINEAR)
    out = TF.adjust_brightness(out, brightness)
    out = TF.adjust_contrast(out, contrast)
    out = TF.adjust_saturation(out, saturation)
    return out.permute(1, 2, 0).contiguous().numpy()


# ---------------------------------------------------------------------------
# Classifiers
# ---------------------------------------------------------------------------

CLASSIFIERS = {}


def register_classifier(name):
    def wrap(factory):
        CLASSIFIERS[name] = factory
        return factory
    return wrap


def build_classifier(name, **kwargs):
    if name not in CLASSIFIERS:
        raise InvalidArgumentError(f"Unknown classifier '{name}'; known: {sorted(CLASSIFIERS)}")
    return CLASSIFIERS[name](**kwargs)


class TorchClassifier:
    """Wraps a network producing one melanoma logit per image."""

    def __init__(self, net, input_size):
        self.net = net
        self.input_size = input_size

    def to_batch(self, images):
        size = (self.input_size, self.input_size)
        batch = []
        for image in images:
            x = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1).unsqueeze(0).float() / 127.5 - 1.0
            if x.shape[-2:] != size:
                x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
            batch.append(x)
        return torch.cat(batch)

    def logits(self, images):
        return self.net(self.to_batch(images)).view(-1)

    def predict_proba(self, images):
        self.net.eval()
        with torch.no_grad():
            return torch.sigmoid(self.logits(images)).numpy().astype(np.float64)


@register_classifier("small_cnn")
def small_cnn(input_size=config.EVAL_INPUT_SIZE, width=32):
    """Six 3x3 conv layers with batch norm, pooling after every pair, global average pooling, one logit."""
    layers = []
    channels = 3
    for i, out in enumerate((width, width, 2 * width, 2 * width, 4 * width, 4 * width)):
        layers += [nn.Conv2d(channels, out, 3, padding=1, bias=False), nn.BatchNorm2d(out), nn.ReLU(True)]
        if i % 2 == 1:
            layers.append(nn.MaxPool2d(2))
        channels = out
    layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(channels, 1)]
    return TorchClassifier(nn.Sequential(*layers), input_size)


def train_classifier(model: TorchClassifier, items, settings: EvalSettings, seed):
    """BCE-with-logits training with Adam and on-the-fly augmentation."""
    if not items:
        raise InvalidArgumentError("Cannot train a classifier on an empty set")
    seed_everything(seed, settings.deterministic)
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.Adam(model.net.parameters(), lr=settings.learning_rate)
    criterion = nn.BCEWithLogitsLoss()
    labels = torch.tensor([float(item.label) for item in items])
    for epoch in range(settings.epochs):
        model.net.train()
        order = rng.permutation(len(items))
        total = 0.0
        for start in range(0, len(items), settings.batch_size):
            idx = order[start:start + settings.batch_size]
            images = [augment(items[i].load(settings.input_size), rng, settings.jitter_range) for i in idx]
            loss = criterion(model.logits(images), labels[torch.from_numpy(idx)])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
        logging.debug(f"Classifier epoch {epoch + 1}/{settings.epochs}: loss={total / len(items):.4f}")
    return model


def tta_predict(model, image, rng, replicas=config.TTA_REPLICAS, jitter_range=(config.JITTER_LOW, config.JITTER_HIGH)):
    """Mean melanoma probability over augmented replicas; replicas=1 scores the image as is."""
    if replicas < 1:
        raise InvalidArgumentError(f"replicas must be >= 1, got {replicas}")
    if replicas == 1:
        views = [np.asarray(image)]
    else:
        views = [augment(image, rng, jitter_range) for _ in range(replicas)]
    return float(np.mean(model.predict_proba(views)))


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def auc(scores, labels):
    """Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InvalidArgumentError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidArgumentError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _beta_continued_fraction(x, a, b, max_iter=500, eps=1e-16):
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    logging.warning(f"Incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")
    return h


def regularized_incomplete_beta(x, a, b):
    """I_x(a, b) by continued fraction, using the symmetry relation where it converges faster."""
    if not 0.0 <= x <= 1.0:
        raise InvalidArgumentError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(x, a, b) / a
    return 1.0 - front * _beta_continued_fraction(1.0 - x, b, a) / b


def student_t_sf(t, dof):
    """P(T > t) for Student's t with `dof` degrees of freedom."""
    tail = 0.5 * regularized_incomplete_beta(dof / (dof + t * t), dof / 2.0, 0.5)
    return tail if t >= 0 else 1.0 - tail


def paired_t_test(a, b, significance_level=config.SIGNIFICANCE_LEVEL):
    """
    Two-sided paired-samples t-test on d = a - b with n - 1 degrees of freedom.

    Returns:
        PairedTTest: t statistic, degrees of freedom, p-value and the significance flag.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError(f"Paired samples must have equal length, got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise InvalidArgumentError(f"Paired t-test needs at least 2 pairs, got {n}")
    d = a - b
    sd = d.std(ddof=1)
    if not sd > 0:
        raise DegenerateInputError("Paired differences have zero variance")
    t = d.mean() / (sd / math.sqrt(n))
    dof = n - 1
    # Floored at the smallest normal double; the tail underflows for huge |t|
    p = max(2.0 * student_t_sf(abs(t), dof), np.finfo(float).tiny)
    return PairedTTest(statistic=float(t), dof=dof, p_value=float(p), significant=bool(p < significance_level))


# ---------------------------------------------------------------------------
# Pools and manifests
# ---------------------------------------------------------------------------

def _image_id(filename):
    stem = os.path.splitext(filename)[0]
    return stem[:-len("_synthetic")] if stem.endswith("_synthetic") else stem


def load_pool(directory, source, labels=None):
    """
    Collects the images under `directory` as LabeledImages.

    Labels come from `labels` (image id -> label) when given, otherwise from a
    parent folder named benign or melanoma. Unlabeled files are skipped.
    """
    items = []
    skipped = 0
    for root, _, files in sorted(os.walk(directory)):
        for filename in sorted(files):
            if not filename.lower().endswith(IMAGE_SUFFIXES):
                continue
            image_id = _image_id(filename)
            label = None
            if labels is not None and image_id in labels:
                label = labels[image_id]
            elif os.path.basename(root).lower() in ("benign", "melanoma"):
                label = os.path.basename(root)
            if label is None:
                skipped += 1
                continue
            items.append(LabeledImage(source, image_id, int(ConditionLabel.parse(label)), os.path.join(root, filename)))
    if skipped:
        logging.warning(f"{skipped} unlabeled images skipped in {directory}")
    logging.info(f"Loaded {len(items)} '{source}' images from {directory}")
    return items


def read_image_manifest(path, source="test"):
    """CSV with columns path,label (melanoma = 1); relative paths resolve against the manifest's folder."""
    frame = pd.read_csv(path)
    missing = {"path", "label"} - set(frame.columns)
    if missing:
        raise InvalidArgumentError(f"Image manifest {path} lacks columns {sorted(missing)}")
    base = os.path.dirname(os.path.abspath(path))
    items = []
    for image_path, label in zip(frame["path"], frame["label"]):
        full = image_path if os.path.isabs(image_path) else os.path.join(base, image_path)
        items.append(LabeledImage(source, _image_id(os.path.basename(full)), int(ConditionLabel.parse(label)), full))
    return items


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------

def run_single(spec: DatasetSpec, pools, test_items, settings: EvalSettings, run, seed):
    train_items = assemble_training_set(spec, pools, seed)
    model = build_classifier(settings.classifier, input_size=settings.input_size)
    train_classifier(model, train_items, settings, seed)
    rng = np.random.default_rng(seed + 1)
    scores = [tta_predict(model, item.load(settings.input_size), rng, settings.tta_replicas, settings.jitter_range)
              for item in test_items]
    result = RunResult(run=run, auc=auc(scores, [item.label for item in test_items]), seed=seed)
    logging.info(f"{spec.name} run {run + 1}/{settings.runs}: AUC={result.auc:.4f}")
    return result


def _run_job(job):
    return job[0].name, run_single(*job)


def summarize(runs, sizes, reference, significance_level=config.SIGNIFICANCE_LEVEL):
    """
    Aggregates per-run AUCs into report rows, in the order of `runs`.

    Args:
        runs (dict[str, list[RunResult]]): Results per composition.
        sizes (dict[str, int]): Training-set size per composition.
        reference (str): Composition every other row is tested against.

    Returns:
        ExperimentReport
    """
    reference_runs = runs.get(reference)
    if reference_runs is None:
        logging.warning(f"Reference composition '{reference}' was not run; p-values omitted")
    rows = []
    for name, results in runs.items():
        aucs = np.array([r.auc for r in sorted(results, key=lambda r: r.run)]) * 100.0
        std = float(aucs.std(ddof=1)) if len(aucs) > 1 else 0.0
        row = ExperimentRow(name=name, mean_auc=float(aucs.mean()), std_auc=std, size=sizes[name])
        if reference_runs is not None and name != reference:
            ref = np.array([r.auc for r in sorted(reference_runs, key=lambda r: r.run)]) * 100.0
            try:
                test = paired_t_test(ref, aucs, significance_level)
                row.p_value, row.significant = test.p_value, test.significant
            except DegenerateInputError:
                if np.all(ref == aucs):
                    row.p_value, row.significant = 1.0, False
            except InvalidArgumentError as exc:
                logging.warning(f"No p-value for {name}: {exc}")
        rows.append(row)
    return ExperimentReport(reference=reference, rows=rows, runs=runs)


def run_experiment(specs, pools, test_items, settings: EvalSettings):
    """
    Trains and scores every composition settings.runs times.

    Run r of every composition uses seed settings.seed + r, so runs pair up
    across compositions for the t-test.
    """
    settings.validate()
    if not test_items:
        raise InsufficientDataError("The test set is empty")
    jobs = [(spec, pools, test_items, settings, run, settings.seed + run)
            for spec in specs for run in range(settings.runs)]
    logging.info(f"Running {len(specs)} compositions x {settings.runs} runs on {settings.workers} worker(s)")
    if settings.workers > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            outcomes = list(pool.map(_run_job, jobs))
    else:
        outcomes = [_run_job(job) for job in jobs]
    runs = {spec.name: [] for spec in specs}
    for name, result in outcomes:
        runs[name].append(result)
    return summarize(runs, {spec.name: spec.size for spec in specs}, settings.reference, settings.significance_level)
