"""
Pipeline commands. Stages talk to each other only through files:

    simulate  -> {dataset_dir}/{split}/scene_NNNNN/
    train     -> {model_dir}/model_<variant>.cidw, history_<variant>.jsonl
    infer     -> {prediction_dir}/{split}/scene_NNNNN/pred_<variant>.bin|.pgm
    eval      -> {report_dir}/eval_<split>.json
    sweep     -> {report_dir}/sweep_<split>.json
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import DataKind, Settings
from errors import DatasetError, MetricError
from models.imaging import BeamformedImage, BeamformGrid, Disk, PhantomScene, Wire
from models.tensor import ComplexTensor, RealTensor
from schema.network import Variant, default_spec
from schema.reports import (
    DiskAnnotation,
    EvaluationReport,
    MethodSummary,
    MetricsReport,
    ModelInspection,
    SceneManifest,
    SweepReport,
    SweepRow,
    WireAnnotation,
)
from services import beamformer, demodulation, image_metrics, netspec, simulator, trainer
from services.layers import Planes
from services.network import Network, TwoBranchNetwork, predict
from utils import archive, storage
from utils.storage import DatasetLayout

logger = logging.getLogger("compounding.pipeline")

ARCHIVE_SUFFIX = ".cidw"


# ---------------------------------------------------------------- simulate


@dataclass
class SceneJob:
    settings: Settings
    index: int
    split: str
    seed: np.random.SeedSequence


def _scene_manifest(job: SceneJob, scene: PhantomScene, ignored: int) -> SceneManifest:
    acq = job.settings.acquisition
    return SceneManifest(
        scene_id=f"scene_{job.index:05d}",
        split=job.split,
        seed=[int(job.seed.entropy)] + [int(k) for k in job.seed.spawn_key],
        scatterer_count=scene.scatterer_count,
        ignored_scatterers=ignored,
        tilts=list(acq.tilt_angles),
        input_tilts=list(acq.input_angles),
        disks=[DiskAnnotation(x=d.x, z=d.z, radius=d.radius) for d in scene.disks],
        wires=[WireAnnotation(x=w.x, z=w.z) for w in scene.wires],
    )


def simulate_scene(job: SceneJob) -> Path:
    """Simulate, demodulate and beamform every tilt of one scene and store it."""
    cfg = job.settings
    acq = cfg.acquisition
    rf_grid, iq_grid = cfg.grid.rf_grid(), cfg.grid.iq_grid()
    layout = DatasetLayout(cfg.paths.dataset_dir)
    scene_dir = storage.ensure_dir(layout.scene_dir(job.split, job.index))
    if cfg.dataset.save_channels:
        storage.ensure_dir(scene_dir / "channels")

    rng = np.random.default_rng(job.seed)
    scene = simulator.random_scene(acq, iq_grid, cfg.dataset, rng)
    rf_images, iq_images = [], []
    for tilt in acq.tilt_angles:
        rf = simulator.simulate_channels(acq, scene, tilt)
        iq = demodulation.demodulate(rf, acq)
        if cfg.dataset.save_channels:
            storage.write_channels(layout.channel_file(scene_dir, DataKind.RF, tilt), rf)
            storage.write_channels(layout.channel_file(scene_dir, DataKind.IQ, tilt), iq)
        rf_img = beamformer.das_rf(rf, acq, rf_grid, tilt)
        iq_img = beamformer.das_iq(iq, acq, iq_grid, tilt)
        storage.write_image(layout.tilt_image(scene_dir, DataKind.RF, tilt), rf_img)
        storage.write_image(layout.tilt_image(scene_dir, DataKind.IQ, tilt), iq_img)
        rf_images.append(rf_img)
        iq_images.append(iq_img)

    storage.write_image(layout.target_image(scene_dir, DataKind.RF), beamformer.compound(rf_images))
    storage.write_image(layout.target_image(scene_dir, DataKind.IQ), beamformer.compound(iq_images))
    ignored = simulator.ignored_count(acq, scene, acq.tilt_angles)
    layout.write_manifest(scene_dir, _scene_manifest(job, scene, ignored))
    logger.info("%s/%s: %d scatterers, %d disks, %d wires", job.split, scene_dir.name, scene.scatterer_count, len(scene.disks), len(scene.wires))
    return scene_dir


def _split_of(index: int, counts: Tuple[int, int, int]) -> str:
    n_train, n_val, _ = counts
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "val"
    return "test"


def cmd_simulate(settings: Settings) -> Dict[str, int]:
    """Generate the synthetic dataset; deterministic given dataset.seed."""
    ds = settings.dataset
    counts = ds.split_counts()
    seeds = np.random.SeedSequence(ds.seed).spawn(ds.scene_count)
    jobs = [SceneJob(settings, i, _split_of(i, counts), seeds[i]) for i in range(ds.scene_count)]
    storage.ensure_dir(Path(settings.paths.dataset_dir))
    if ds.workers > 1:
        with ProcessPoolExecutor(max_workers=ds.workers) as executor:
            list(executor.map(simulate_scene, jobs))
    else:
        for job in jobs:
            simulate_scene(job)
    summary = dict(zip(storage.SPLITS, counts))
    logger.info("dataset written to %s: %s", settings.paths.dataset_dir, summary)
    return summary


# ---------------------------------------------------------------- samples


def _grid_for(settings: Settings, kind: DataKind) -> BeamformGrid:
    return settings.grid.iq_grid() if kind == DataKind.IQ else settings.grid.rf_grid()


def _planes(img: BeamformedImage) -> Planes:
    if img.kind == DataKind.IQ:
        return (np.asarray(img.pixels.re), np.asarray(img.pixels.im))
    return (np.asarray(img.pixels.data),)


@dataclass
class Sample:
    scene_dir: Path
    inputs: Planes  # each plane input_tilts x H x W
    target: Planes  # each plane 1 x H x W
    scale: float


def load_sample(settings: Settings, scene_dir: Path, kind: DataKind) -> Sample:
    """Input tilts and compounded target, both divided by the peak input amplitude."""
    grid = _grid_for(settings, kind)
    tilts = [storage.read_image(DatasetLayout.tilt_image(scene_dir, kind, t), grid) for t in settings.acquisition.input_angles]
    target = storage.read_image(DatasetLayout.target_image(scene_dir, kind), grid)
    stacked = tuple(np.stack(p) for p in zip(*[_planes(t) for t in tilts]))
    amplitude = np.sqrt(sum(p * p for p in stacked))
    scale = float(np.max(amplitude)) or 1.0
    return Sample(
        scene_dir=scene_dir,
        inputs=tuple(p / scale for p in stacked),
        target=tuple(p[None] / scale for p in _planes(target)),
        scale=scale,
    )


def load_split(settings: Settings, split: str, kind: DataKind) -> List[Sample]:
    layout = DatasetLayout(settings.paths.dataset_dir)
    return [load_sample(settings, d, kind) for d in layout.scene_dirs(split)]


def _pairs(samples: Sequence[Sample], plane: Optional[int] = None):
    if plane is None:
        return [(s.inputs, s.target) for s in samples]
    return [((s.inputs[plane],), (s.target[plane],)) for s in samples]


# ---------------------------------------------------------------- train / infer


def archive_path(settings: Settings, variant: Variant, branch: Optional[str] = None) -> Path:
    name = variant.value.lower() if branch is None else f"{variant.value.lower()}_{branch}"
    return Path(settings.paths.model_dir) / f"model_{name}{ARCHIVE_SUFFIX}"


def history_path(settings: Settings, variant: Variant, branch: Optional[str] = None) -> Path:
    name = variant.value.lower() if branch is None else f"{variant.value.lower()}_{branch}"
    return Path(settings.paths.model_dir) / f"history_{name}.jsonl"


def cmd_train(settings: Settings) -> List[Path]:
    """Train the configured variant; 2BID trains its two real branches separately."""
    variant = settings.model.variant
    kind = settings.model.resolved_kind()
    train_samples = load_split(settings, "train", kind)
    val_samples = load_split(settings, "val", kind)
    if not train_samples or not val_samples:
        raise DatasetError("training needs non-empty train and val splits")
    storage.ensure_dir(Path(settings.paths.model_dir))
    spec = default_spec(variant)
    written = []

    if variant == Variant.TWO_BRANCH:
        for plane, branch in enumerate(("re", "im")):
            network = netspec.build(spec.branch_spec(), seed=settings.model.init_seed + plane)
            result = trainer.train(network, _pairs(train_samples, plane), _pairs(val_samples, plane), settings.trainer)
            written.append(archive.save_weights(network, archive_path(settings, variant, branch)))
            storage.write_history(history_path(settings, variant, branch), result.history)
            logger.info("2BID %s branch: %d epochs, best val %.6g at epoch %d", branch, len(result.history), result.best_val_loss, result.best_epoch)
        return written

    network = netspec.build(spec, seed=settings.model.init_seed)
    result = trainer.train(network, _pairs(train_samples), _pairs(val_samples), settings.trainer)
    written.append(archive.save_weights(network, archive_path(settings, variant)))
    storage.write_history(history_path(settings, variant), result.history)
    logger.info("%s: %d epochs, best val %.6g at epoch %d", variant.value, len(result.history), result.best_val_loss, result.best_epoch)
    return written


def load_trained(settings: Settings, variant: Variant, weights: Optional[Path] = None) -> Network:
    spec = default_spec(variant)
    if weights is not None:
        return netspec.load_weights(weights, spec)
    if variant == Variant.TWO_BRANCH:
        network = TwoBranchNetwork(spec)
        archive.load_weights(archive_path(settings, variant, "re"), network.branch_re)
        archive.load_weights(archive_path(settings, variant, "im"), network.branch_im)
        return network
    return netspec.load_weights(archive_path(settings, variant), spec)


def cmd_infer(settings: Settings, split: str = "test", weights: Optional[Path] = None) -> int:
    """Reconstruct every scene of a split, in scene order, with a B-mode rendering."""
    variant = settings.model.variant
    kind = settings.model.resolved_kind()
    network = load_trained(settings, variant, weights)
    samples = load_split(settings, split, kind)
    if not samples:
        raise DatasetError(f"{split} split is empty")
    grid = _grid_for(settings, kind)
    outputs = predict(network, [s.inputs for s in samples], settings.trainer.workers)
    for sample, planes in zip(samples, outputs):
        values = tuple(p[0] * sample.scale for p in planes)
        pixels = ComplexTensor(*values) if kind == DataKind.IQ else RealTensor(values[0])
        image = BeamformedImage(pixels, grid, tilt=None, compound_count=len(settings.acquisition.input_angles))
        bin_path, pgm_path = storage.prediction_paths(settings.paths.prediction_dir, split, sample.scene_dir.name, variant.value)
        storage.ensure_dir(bin_path.parent)
        storage.write_image(bin_path, image)
        storage.write_pgm(pgm_path, beamformer.envelope_bmode(image, settings.dynamic_range_db))
    logger.info("%s: wrote %d predictions for %s", variant.value, len(samples), split)
    return len(samples)


# ---------------------------------------------------------------- evaluate


def _scene_annotations(manifest: SceneManifest) -> Tuple[List[Disk], List[Wire]]:
    disks = [Disk(x=d.x, z=d.z, radius=d.radius) for d in manifest.disks]
    wires = [Wire(x=w.x, z=w.z) for w in manifest.wires]
    return disks, wires


def measure(
    settings: Settings,
    env: np.ndarray,
    reference_env: Optional[np.ndarray],
    grid: BeamformGrid,
    disks: Sequence[Disk],
    wires: Sequence[Wire],
) -> MetricsReport:
    """All measures for one normalised envelope; failures on a region are logged and skipped."""
    report = MetricsReport()
    if reference_env is not None:
        report.psnr = image_metrics.psnr(env, reference_env)
        report.ssim = image_metrics.ssim(env, reference_env)
        report.mi = image_metrics.mutual_information(env, reference_env, settings.mi_bins)
    for disk in disks:
        try:
            mask = image_metrics.region_mask(grid, disk)
            cr = image_metrics.contrast_ratio(env, mask)
            cnr = image_metrics.cnr(env, mask)
            gcnr = image_metrics.gcnr(env, mask, settings.gcnr_bins)
        except MetricError as exc:
            logger.warning("disk at %.1f mm skipped: %s", 1e3 * math.hypot(disk.x, disk.z), exc)
            continue
        report.cr.append(cr)
        report.cnr.append(cnr)
        report.gcnr.append(gcnr)
        report.disk_fields.append(image_metrics.field_label(math.hypot(disk.x, disk.z), grid, 2))
    for wire in wires:
        try:
            width = image_metrics.lateral_resolution_fwhm(env, wire, grid)
        except MetricError as exc:
            logger.warning("wire at %.1f mm skipped: %s", 1e3 * math.hypot(wire.x, wire.z), exc)
            continue
        report.lr_mm.append(width)
        report.wire_fields.append(image_metrics.field_label(math.hypot(wire.x, wire.z), grid, 3))
    return report


def _collect(reports: Sequence[MetricsReport]) -> Dict[str, List[float]]:
    values: Dict[str, List[float]] = {}

    def add(key: str, value: float) -> None:
        values.setdefault(key, []).append(value)

    for r in reports:
        for key in ("psnr", "ssim", "mi"):
            if getattr(r, key) is not None:
                add(key, getattr(r, key))
        for key in ("cr", "cnr", "gcnr"):
            for value, field in zip(getattr(r, key), r.disk_fields):
                add(key, value)
                add(f"{key}_{field}", value)
        for value, field in zip(r.lr_mm, r.wire_fields):
            add("lr_mm", value)
            add(f"lr_mm_{field}", value)
    return values


def _summaries(reports: Sequence[MetricsReport]):
    return {key: image_metrics.summarize(vals) for key, vals in sorted(_collect(reports).items())}


def image_metrics_input(img: BeamformedImage) -> np.ndarray:
    """
    Normalised envelope without log compression.

    RF images are all detected along depth: network predictions carry no
    quadrature plane, and every RF method is scored with the same detector.
    """
    return beamformer.normalize(beamformer.envelope(img, analytic=False))


@dataclass
class _EvalScene:
    scene_dir: Path
    manifest: SceneManifest


def _map(func: Callable, items: Sequence, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, items))
    return [func(item) for item in items]


def cmd_eval(settings: Settings, split: str = "test", include_reference: bool = False) -> EvaluationReport:
    """Per-method mean and std of every measure against the full-compound reference."""
    layout = DatasetLayout(settings.paths.dataset_dir)
    scenes = [_EvalScene(d, layout.read_manifest(d)) for d in layout.scene_dirs(split)]
    if not scenes:
        raise DatasetError(f"{split} split is empty, nothing to evaluate")
    variants = storage.find_predictions(settings.paths.prediction_dir, split) or []

    methods: List[Tuple[str, DataKind, Callable[[_EvalScene], BeamformedImage]]] = []
    if include_reference:
        methods.append(("reference", DataKind.IQ, lambda s: storage.read_image(layout.target_image(s.scene_dir, DataKind.IQ), _grid_for(settings, DataKind.IQ))))
    methods.append(("compound3", DataKind.IQ, lambda s: _compound_inputs(settings, s.scene_dir, DataKind.IQ)))
    for name in variants:
        kind = DataKind.RF if Variant(name.upper()) == Variant.ID else DataKind.IQ
        if kind == DataKind.RF and not any(m[0] == "compound3_rf" for m in methods):
            methods.append(("compound3_rf", DataKind.RF, lambda s: _compound_inputs(settings, s.scene_dir, DataKind.RF)))
        methods.append((name, kind, _prediction_loader(settings, split, name, kind)))

    for name, _, loader in methods:
        if name not in ("reference", "compound3", "compound3_rf"):
            missing = [s.scene_dir.name for s in scenes if not storage.prediction_paths(settings.paths.prediction_dir, split, s.scene_dir.name, name)[0].exists()]
            if missing:
                raise DatasetError(f"predictions for {name} are missing for {len(missing)} scenes, e.g. {missing[0]}")

    summaries = []
    for name, kind, loader in methods:
        grid = _grid_for(settings, kind)

        def evaluate(scene: _EvalScene, loader=loader, kind=kind, grid=grid) -> MetricsReport:
            reference = storage.read_image(layout.target_image(scene.scene_dir, kind), grid)
            disks, wires = _scene_annotations(scene.manifest)
            return measure(settings, image_metrics_input(loader(scene)), image_metrics_input(reference), grid, disks, wires)

        reports = _map(evaluate, scenes, settings.dataset.workers)
        summaries.append(MethodSummary(method=name, samples=len(reports), metrics=_summaries(reports)))

    report = EvaluationReport(split=split, reference=f"compound{len(settings.acquisition.tilt_angles)}", methods=summaries)
    path = storage.ensure_dir(Path(settings.paths.report_dir)) / f"eval_{split}.json"
    storage.write_json(path, report)
    logger.info("evaluation of %d %s scenes written to %s", len(scenes), split, path)
    return report


def _compound_inputs(settings: Settings, scene_dir: Path, kind: DataKind, tilts: Optional[Sequence[float]] = None) -> BeamformedImage:
    grid = _grid_for(settings, kind)
    tilts = settings.acquisition.input_angles if tilts is None else tilts
    return beamformer.compound([storage.read_image(DatasetLayout.tilt_image(scene_dir, kind, t), grid) for t in tilts])


def _prediction_loader(settings: Settings, split: str, name: str, kind: DataKind):
    grid = _grid_for(settings, kind)

    def load(scene: _EvalScene) -> BeamformedImage:
        path, _ = storage.prediction_paths(settings.paths.prediction_dir, split, scene.scene_dir.name, name)
        return storage.read_image(path, grid)

    return load


# ---------------------------------------------------------------- sweep / export / inspect


def sweep_subsets(tilts: Sequence[float]) -> List[List[float]]:
    """Odd-sized tilt subsets spread evenly over the transmitted set; n = 1 keeps the centre tilt."""
    count = len(tilts)
    subsets = []
    for n in range(1, count + 1, 2):
        if n == 1:
            indices = [count // 2]
        else:
            indices = [int(round(i)) for i in np.linspace(0, count - 1, n)]
        subsets.append([tilts[i] for i in indices])
    return subsets


def cmd_sweep(settings: Settings, split: str = "test") -> SweepReport:
    """Standard compounding quality as a function of the number of transmissions."""
    layout = DatasetLayout(settings.paths.dataset_dir)
    scenes = [_EvalScene(d, layout.read_manifest(d)) for d in layout.scene_dirs(split)]
    if not scenes:
        raise DatasetError(f"{split} split is empty, nothing to sweep")
    grid = _grid_for(settings, DataKind.IQ)
    rows = []
    for subset in sweep_subsets(settings.acquisition.tilt_angles):

        def evaluate(scene: _EvalScene, subset=subset) -> MetricsReport:
            reference = storage.read_image(layout.target_image(scene.scene_dir, DataKind.IQ), grid)
            image = _compound_inputs(settings, scene.scene_dir, DataKind.IQ, subset)
            disks, wires = _scene_annotations(scene.manifest)
            return measure(settings, image_metrics_input(image), image_metrics_input(reference), grid, disks, wires)

        reports = _map(evaluate, scenes, settings.dataset.workers)
        rows.append(SweepRow(transmissions=len(subset), tilts=list(subset), metrics=_summaries(reports)))
    report = SweepReport(split=split, reference=f"compound{len(settings.acquisition.tilt_angles)}", rows=rows)
    path = storage.ensure_dir(Path(settings.paths.report_dir)) / f"sweep_{split}.json"
    storage.write_json(path, report)
    logger.info("sweep over %d subsets of %d %s scenes written to %s", len(rows), len(scenes), split, path)
    return report


def cmd_export_bmode(settings: Settings, split: str = "test", out_dir: Optional[Path] = None) -> int:
    """PGM B-modes of the reference and the 3-transmission compound for every scene."""
    layout = DatasetLayout(settings.paths.dataset_dir)
    out_root = Path(out_dir) if out_dir is not None else Path(settings.paths.report_dir) / "bmode"
    written = 0
    for scene_dir in layout.scene_dirs(split):
        target_dir = storage.ensure_dir(out_root / split / scene_dir.name)
        for kind in (DataKind.IQ, DataKind.RF):
            grid = _grid_for(settings, kind)
            reference = storage.read_image(layout.target_image(scene_dir, kind), grid)
            storage.write_pgm(target_dir / f"{kind.value.lower()}_reference.pgm", beamformer.envelope_bmode(reference, settings.dynamic_range_db))
            baseline = _compound_inputs(settings, scene_dir, kind)
            storage.write_pgm(target_dir / f"{kind.value.lower()}_compound3.pgm", beamformer.envelope_bmode(baseline, settings.dynamic_range_db))
            written += 2
    if written == 0:
        raise DatasetError(f"{split} split is empty, nothing to export")
    return written


def cmd_inspect_model(variant: Variant, input_hw: Tuple[int, int], benchmark: bool = False) -> ModelInspection:
    spec = default_spec(variant)
    (min_h, min_w), (max_h, max_w) = netspec.receptive_field(spec)
    inspection = ModelInspection(
        variant=spec.variant.value,
        parameters=netspec.count_parameters(spec),
        receptive_field_min=[min_h, min_w],
        receptive_field_max=[max_h, max_w],
        input_hw=list(input_hw),
        flops=netspec.count_flops(spec, input_hw),
        flop_convention=netspec.FLOP_CONVENTION,
        published_flops=netspec.PUBLISHED_FLOPS.get(spec.variant),
        shape_trace=[list(s) for s in netspec.trace_shapes(spec, input_hw)],
    )
    if benchmark:
        timings = netspec.benchmark_forward(netspec.build(spec, seed=0), input_hw)
        inspection.forward_seconds_f64 = timings["f64"]
        inspection.forward_seconds_f32 = timings["f32"]
    return inspection
