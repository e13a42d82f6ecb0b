import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from lesionsynth import checkpoint, data_handler, evalharness, mapkit, proggan, reporting, trainer
from lesionsynth.errors import (InsufficientDataError, InvalidArgumentError, LesionSynthError, MissingCheckpointError,
                                UsageError)
from lesionsynth.settings import PipelineConfig, parse_config

COMMANDS = ("prepare-maps", "train-pix2pixhd", "train-pgan", "synthesize", "evaluate", "report")


# ---------------------------------------------------------------------------
# Paths and shared loading
# ---------------------------------------------------------------------------

def _out(cfg, *parts):
    return os.path.join(cfg.data.output_folder, *parts)


def _under_out(cfg, path):
    return path if os.path.isabs(path) else _out(cfg, path)


def _labels(cfg):
    return proggan.read_label_file(cfg.data.label_file) if cfg.data.label_file else None


def _manifest(cfg):
    records = data_handler.load_manifest(_out(cfg, "manifest.csv"))
    if records.empty:
        raise InsufficientDataError(f"No records in {_out(cfg, 'manifest.csv')}; run prepare-maps first")
    return records


def _labeled(records, source):
    items = []
    for row in records.itertuples(index=False):
        if row.diagnosis:
            items.append(evalharness.LabeledImage(source, row.image_id, int(proggan.ConditionLabel.parse(row.diagnosis)),
                                                  row.image_path))
    return items


def _prepared_ids(cfg, records, split):
    """Ids of the split whose prepare-maps outputs are all on disk."""
    folder = _out(cfg, "maps")
    ids = [row.image_id for row in records.itertuples(index=False) if row.split == split]
    ready = [image_id for image_id in ids
             if all(os.path.isfile(path) for path in mapkit.map_paths(folder, image_id).values())]
    if len(ready) < len(ids):
        logging.warning(f"Skipping {len(ids) - len(ready)}/{len(ids)} {split} records without prepared maps")
    if not ready:
        raise InsufficientDataError(f"No {split} records have prepared maps in {folder}; run prepare-maps first")
    return ready


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _prepare_job(job):
    record, settings, folder = job
    try:
        maps = mapkit.prepare_record(record, settings)
        mapkit.write_prepared(maps, folder, tuple(settings.id_weights))
        return record["image_id"], None
    except (LesionSynthError, OSError) as exc:
        return record["image_id"], str(exc)


def prepare_maps(cfg: PipelineConfig, options):
    root = cfg.data.resolved_root()
    if not root:
        raise InvalidArgumentError("No dataset root: pass --data, set data.root or $LESIONSYNTH_DATA")
    manifest = data_handler.ingest_dataset(root, cfg.data.test_fraction, _labels(cfg))
    data_handler.save_manifest(manifest, _out(cfg, "manifest.csv"))
    folder = _out(cfg, "maps")
    jobs = [(record, cfg.mapkit, folder) for record in manifest.records.to_dict("records")]
    if cfg.mapkit.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.mapkit.workers) as pool:
            outcomes = list(pool.map(_prepare_job, jobs))
    else:
        outcomes = [_prepare_job(job) for job in jobs]
    failures = [(image_id, error) for image_id, error in outcomes if error]
    for image_id, error in failures:
        logging.error(f"prepare-maps failed for {image_id}: {error}")
    logging.info(f"Prepared maps for {len(outcomes) - len(failures)}/{len(outcomes)} records in {folder}")
    return 1 if failures else 0


def train_pix2pixhd(cfg: PipelineConfig, options):
    records = _manifest(cfg)
    train_ids = _prepared_ids(cfg, records, "train")
    settings = cfg.trainer
    checkpoint_dir = _under_out(cfg, settings.checkpoint_dir)
    training = trainer.TrainingConfig(**{**vars(settings), "checkpoint_dir": checkpoint_dir})
    in_channels = training.input_channels
    gen_cfg = cfg.synthnet.generator_config(in_channels)
    disc_cfg = cfg.synthnet.discriminator_config(in_channels + gen_cfg.output_channels)
    dataset = trainer.PreparedMapDataset(train_ids, _out(cfg, "maps"), training.use_boundary, cfg.mapkit.id_weights)
    resume = checkpoint.latest_checkpoint(checkpoint_dir) if options.resume else None
    if options.resume and resume is None:
        logging.warning(f"No checkpoint in {checkpoint_dir}; starting from scratch")
    final = trainer.train(training, dataset, gen_cfg, disc_cfg, cfg.objectives, resume)
    logging.info(f"pix2pixHD training finished at epoch {final.epoch}")
    return 0


def _pgan_corpus(cfg):
    """(paths, labels) of the PGAN training images: data.pgan_manifest when set, else the labeled train split."""
    if cfg.data.pgan_manifest:
        items = evalharness.read_image_manifest(cfg.data.pgan_manifest, "pgan_train")
        if not items:
            raise InsufficientDataError(f"PGAN manifest {cfg.data.pgan_manifest} lists no images")
        logging.info(f"Training PGAN on {len(items)} images from {cfg.data.pgan_manifest}")
        return [item.path for item in items], [item.label for item in items]
    records = _manifest(cfg)
    train = records[records["split"] == "train"]
    unlabeled = train[train["diagnosis"] == ""]
    if not unlabeled.empty:
        raise InvalidArgumentError(f"{len(unlabeled)} training images lack a benign/melanoma label "
                                   f"(first: {unlabeled['image_id'].iloc[0]}); set data.label_file "
                                   f"or data.pgan_manifest")
    return list(train["image_path"]), list(train["diagnosis"])


def train_pgan(cfg: PipelineConfig, options):
    paths, labels = _pgan_corpus(cfg)
    settings = cfg.proggan
    pgan_cfg = proggan.PGANConfig(**{**vars(settings),
                                     "checkpoint_dir": os.path.join(_under_out(cfg, settings.checkpoint_dir), "pgan")})
    dataset = proggan.LabeledImageDataset(paths, labels, pgan_cfg.target_res)
    final = proggan.train_pgan(pgan_cfg, dataset)
    logging.info(f"PGAN training finished at {final.meta['resolution']}x{final.meta['resolution']}")
    return 0


def _resolve_checkpoint(cfg, options):
    if options.checkpoint:
        if not os.path.isfile(options.checkpoint):
            raise MissingCheckpointError(f"Checkpoint {options.checkpoint} does not exist")
        return options.checkpoint
    folder = _under_out(cfg, cfg.trainer.checkpoint_dir)
    path = checkpoint.latest_checkpoint(folder)
    if path is None:
        raise MissingCheckpointError(f"No checkpoint given and none found in {folder}")
    return path


def synthesize(cfg: PipelineConfig, options):
    ckpt = checkpoint.load_checkpoint(_resolve_checkpoint(cfg, options))
    records = _manifest(cfg)

    if ckpt.kind == proggan.KIND:
        train = records[records["split"] == "train"]
        labels = [int(proggan.ConditionLabel.parse(d)) for d in train["diagnosis"] if d]
        if not labels:
            raise InsufficientDataError("PGAN sampling needs labeled training records for the class ratio")
        count = options.count if options.count is not None else 2 * cfg.evalharness.set_size
        counts = proggan.label_counts(count, float(np.mean(labels)))
        for label, n in counts.items():
            folder = _out(cfg, "synthetic", "pgan", label.name.lower())
            images = proggan.sample_pgan(ckpt, label, n, cfg.proggan.seed + int(label))
            for i, image in enumerate(images):
                mapkit.write_rgb_png(os.path.join(folder, f"pgan_{label.name.lower()}_{i:05d}.png"), image)
            logging.info(f"Wrote {n} {label.name.lower()} PGAN samples to {folder}")
        return 0

    split = options.split
    use_boundary = ckpt.config["training"]["use_boundary"]
    pool = "instance" if use_boundary else "semantic"
    # Train-split samples feed the evaluation pools; held-out masks get their own folder
    folder = _out(cfg, "synthetic", pool if split == "train" else f"{pool}_{split}")
    weights = tuple(cfg.mapkit.id_weights)
    image_ids = _prepared_ids(cfg, records, split)

    def maps():
        for image_id in image_ids:
            paths = mapkit.map_paths(_out(cfg, "maps"), image_id)
            semantic = mapkit.read_semantic_png(paths["semantic"])
            yield semantic, (mapkit.read_instance_png(paths["instance"], weights) if use_boundary else None)

    for image_id, image in zip(image_ids, trainer.iter_synthesize(ckpt, maps())):
        mapkit.write_rgb_png(os.path.join(folder, f"{image_id}_synthetic.png"), image)
    logging.info(f"Wrote {len(image_ids)} '{pool}' images from {split} masks to {folder}")
    return 0


def evaluate(cfg: PipelineConfig, options):
    records = _manifest(cfg)
    settings = cfg.evalharness
    labels = {row.image_id: row.diagnosis for row in records.itertuples(index=False) if row.diagnosis}
    pools = {"real": _labeled(records[records["split"] == "train"], "real")}
    for source in ("instance", "semantic"):
        folder = _out(cfg, "synthetic", source)
        pools[source] = evalharness.load_pool(folder, source, labels) if os.path.isdir(folder) else []
    pgan_folder = _out(cfg, "synthetic", "pgan")
    pools["pgan"] = evalharness.load_pool(pgan_folder, "pgan") if os.path.isdir(pgan_folder) else []

    if cfg.data.test_manifest:
        test_items = evalharness.read_image_manifest(cfg.data.test_manifest)
    else:
        test_items = _labeled(records[records["split"] == "test"], "test")
    specs = evalharness.select_specs(settings.specs, settings.set_size)
    report = evalharness.run_experiment(specs, pools, test_items, settings)
    sizes = {spec.name: spec.size for spec in specs}
    reporting.save_runs_to_csv(report, sizes, cfg.data.output_folder)
    reporting.save_report(report, cfg.data.output_folder)
    reporting.print_report(report)
    return 0


def report(cfg: PipelineConfig, options):
    runs_path = _out(cfg, "runs.csv")
    if not os.path.isfile(runs_path):
        raise InsufficientDataError(f"No runs table at {runs_path}; run evaluate first")
    experiment = reporting.report_from_runs(pd.read_csv(runs_path), cfg.evalharness.reference,
                                            cfg.evalharness.significance_level)
    csv_path, json_path = reporting.save_report(experiment, cfg.data.output_folder)
    reporting.print_report(experiment)
    logging.info(f"Report written to {csv_path} and {json_path}")
    return 0


HANDLERS = {
    "prepare-maps": prepare_maps,
    "train-pix2pixhd": train_pix2pixhd,
    "train-pgan": train_pgan,
    "synthesize": synthesize,
    "evaluate": evaluate,
    "report": report,
}


def _default_options():
    return argparse.Namespace(checkpoint=None, resume=False, count=None, split="train")


def dispatch(command, cfg: PipelineConfig, options=None):
    """
    Runs one pipeline command.

    Returns:
        int: 0 on success, 1 on a reported failure, 2 for an unknown command.
    """
    options = options or _default_options()
    try:
        if command not in HANDLERS:
            raise UsageError(f"Unknown command '{command}'; expected one of {', '.join(COMMANDS)}")
        logging.info(f"Running {command} (config {cfg.fingerprint()[:12]})")
        return HANDLERS[command](cfg, options)
    except UsageError as exc:
        logging.error(str(exc))
        return 2
    except LesionSynthError as exc:
        logging.error(f"{command} failed: {exc}")
        return 1


def build_parser():
    parser = argparse.ArgumentParser(prog="lesionsynth", description="Dermoscopic lesion synthesis pipeline")
    parser.add_argument("command", help=f"one of: {', '.join(COMMANDS)}")
    parser.add_argument("--config", help="JSON config document (defaults when omitted)")
    parser.add_argument("--seed", type=int, help="seed for every randomized stage")
    parser.add_argument("--out", help="output folder")
    parser.add_argument("--data", help="dataset root (default: $LESIONSYNTH_DATA)")
    parser.add_argument("--checkpoint", help="checkpoint for synthesize")
    parser.add_argument("--resume", action="store_true", help="resume train-pix2pixhd from the latest checkpoint")
    parser.add_argument("--count", type=int, help="number of PGAN samples for synthesize")
    parser.add_argument("--split", choices=("train", "test"), default="train",
                        help="which masks synthesize translates (pix2pixHD checkpoints)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config).with_overrides(seed=args.seed, out=args.out, data=args.data)
    except LesionSynthError as exc:
        logging.error(f"Invalid configuration: {exc}")
        return 1
    return dispatch(args.command, cfg, args)


if __name__ == "__main__":
    sys.exit(main())
