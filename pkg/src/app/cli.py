"""
Command-line interface: generate, train, attribute, evaluate, benchmark.

Every command writes under the output root (``--out``, then the
ATTRIB_OUTPUT_ROOT environment variable, then ``runtime.output_dir``):

    <out>/data/                   dataset and manifest
    <out>/models/<stage>/         model archives
    <out>/attributions/           attribution results
    <out>/eval/                   reports, ROC curves, acceptance.csv
    <out>/logs/                   one log file per command
    <out>/config_<command>.yaml   resolved configuration snapshot
    <out>/ledger.db               run ledger
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

sys.path.append(str(Path(__file__).parent.parent.parent))

from src.engines.attribution import attribute_many, save_result
from src.engines.attribution_loss import ConstraintConfig
from src.engines.attributor_trainer import (
    AttributorTrainConfig, attributor_config_from_section, load_attributor, resolve_area_budget,
    save_attributor, train_attributor,
)
from src.engines.benchmark import run_benchmark
from src.engines.classifier_trainer import (
    ClassifierTrainConfig, load_classifier, predict_scores, save_classifier, train_classifier,
)
from src.engines.explainers import cam, saliency
from src.engines.inpainter_trainer import InpainterTrainConfig, load_inpainter, save_inpainter, train_inpainter
from src.etl.dataset import MANIFEST_NAME, DatasetManifest, generate_dataset, load_manifest
from src.etl.loader import DatasetLoader
from src.etl.masks import MaskConfig
from src.etl.synth import SynthConfig
from src.eval.experiments import map_mass_localization, perturbation_roc_experiment, randomization_sanity_check
from src.eval.metrics import roc_auc
from src.eval.plots import roc_figure, write_figure
from src.eval.report import OURS, AcceptanceCheck, EvalConfig, build_comparison_report, write_acceptance
from src.models.base import LEDGER_NAME
from src.models.ledger import RunLedger
from src.utils.archive import module_hash
from src.utils.config_loader import Config, config as default_config
from src.utils.errors import AttributionError, ConfigurationError, DependencyError
from src.utils.imaging import load_image

logger = logging.getLogger(__name__)

STAGES = ('classifier', 'inpainter', 'attributor')
RUNTIME_FAILURE_EXIT = 4


def setup_logging(out_root: Path, command: str) -> Path:
    """File + console logging, one log file per command invocation."""
    log_dir = out_root / 'logs'
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / f'{command}_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log'
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True,
    )
    return log_file


class Workspace:
    """Paths and shared loading logic for one output root."""

    def __init__(self, cfg: Config, out_root: Path, allow_hash_mismatch: bool = False):
        self.cfg = cfg
        self.root = Path(out_root)
        self.allow_hash_mismatch = allow_hash_mismatch
        self.data_dir = self.root / 'data'
        self.models_dir = self.root / 'models'
        self.eval_dir = self.root / 'eval'
        self.attributions_dir = self.root / 'attributions'
        self.ledger = RunLedger(self.root / LEDGER_NAME)
        self.archives: Dict[str, Dict[str, Any]] = {}

    def model_dir(self, stage: str) -> Path:
        return self.models_dir / stage

    def stage_hash(self, stage: str) -> str:
        sections = ['runtime', 'data', stage] + (['masks'] if stage == 'inpainter' else [])
        return self.cfg.fingerprint(sections)

    def manifest(self) -> DatasetManifest:
        if not (self.data_dir / MANIFEST_NAME).exists():
            raise DependencyError(f"No dataset in {self.data_dir}: run generate first")
        return load_manifest(self.data_dir)

    def check_dataset(self, stage: str, archive: Dict[str, Any], manifest: DatasetManifest) -> None:
        """Archives must come from the same dataset as the current manifest."""
        if archive.get('dataset_fingerprint') == manifest.fingerprint:
            return
        message = f"The {stage} archive was trained on a different dataset than {self.data_dir}"
        if not self.allow_hash_mismatch:
            raise DependencyError(f"{message}; retrain {stage} or pass --allow-hash-mismatch")
        logger.warning(message)

    def classifier(self, manifest: DatasetManifest):
        model, archive = load_classifier(self.model_dir('classifier'))
        self.archives['classifier'] = archive
        self.check_dataset('classifier', archive, manifest)
        return model

    def inpainter(self, manifest: DatasetManifest, scorer=None):
        model, archive = load_inpainter(self.model_dir('inpainter'))
        self.archives['inpainter'] = archive
        self.check_dataset('inpainter', archive, manifest)
        if scorer is not None and archive.get('classifier_hash') != module_hash(scorer):
            message = "The inpainter archive was trained against a different classifier"
            if not self.allow_hash_mismatch:
                raise DependencyError(f"{message}; retrain inpainter or pass --allow-hash-mismatch")
            logger.warning(message)
        return model

    def attributor(self, manifest: DatasetManifest, scorer):
        model, archive = load_attributor(self.model_dir('attributor'), scorer)
        self.archives['attributor'] = archive
        self.check_dataset('attributor', archive, manifest)
        return model


def cmd_generate(ws: Workspace) -> DatasetManifest:
    """Generate the synthetic dataset and its manifest."""
    started = datetime.utcnow()
    synth = SynthConfig.from_section(ws.cfg.section('data'))
    manifest = generate_dataset(synth, ws.data_dir)
    ws.ledger.record_stage('generate', started, seed=synth.master_seed, config_hash=ws.cfg.fingerprint(['data']),
                           metrics=manifest.split_sizes())
    print(f"✓ Dataset written to {ws.data_dir}: {manifest.split_sizes()}")
    return manifest


def cmd_train(ws: Workspace, stage: str) -> Path:
    """Train one stage; later stages load the archives of earlier ones."""
    if stage not in STAGES:
        raise ConfigurationError(f"Unknown stage '{stage}'; choose from {STAGES}")
    started = datetime.utcnow()
    seed = ws.cfg.seed
    manifest = ws.manifest()
    loader = DatasetLoader(manifest)
    out = ws.model_dir(stage)
    metrics: Dict[str, Any] = {}

    if stage == 'classifier':
        train_cfg = ClassifierTrainConfig.from_section(ws.cfg.section('classifier'))
        model = train_classifier(manifest, train_cfg, seed=seed, loader=loader)
        test = loader.load_split('test')
        test_labels = test.shuffled_labels(seed + 3) if train_cfg.shuffle_labels else test.labels
        if len(test) and len(torch.unique(test_labels)) == 2:
            metrics['test_auc'] = roc_auc(predict_scores(model, test.images), test_labels.numpy())
        metrics['shuffled_labels'] = train_cfg.shuffle_labels
        metrics['threshold'] = model.threshold
        save_classifier(model, out, ws.stage_hash(stage), manifest.fingerprint)

    elif stage == 'inpainter':
        scorer = ws.classifier(manifest)
        model = train_inpainter(manifest, scorer, InpainterTrainConfig.from_section(ws.cfg.section('inpainter')),
                                MaskConfig.from_section(ws.cfg.section('masks')), seed=seed, loader=loader)
        if model.loss_history:
            metrics['final_loss'] = model.loss_history[-1]['total']
        metrics['validation_mae'] = model.validation_mae
        metrics['loss_decreasing'] = model.loss_decreasing
        save_inpainter(model, out, ws.stage_hash(stage), manifest.fingerprint, module_hash(scorer))

    else:
        scorer = ws.classifier(manifest)
        inpainter = ws.inpainter(manifest, scorer)
        section = ws.cfg.section('attributor')
        delta = resolve_area_budget(section, loader.load_split('train'))
        constraints = ConstraintConfig.from_section(section, theta=scorer.threshold, delta=delta)
        model = train_attributor(manifest, scorer, inpainter, attributor_config_from_section(section), constraints,
                                 AttributorTrainConfig.from_section(section), seed=seed, loader=loader)
        if model.training_history:
            metrics['val_satisfaction'] = max(h['val_satisfaction'] for h in model.training_history)
        metrics['area_budget'] = delta
        metrics['step_loss_decreasing'] = model.step_loss_decreasing
        save_attributor(model, out, constraints, ws.stage_hash(stage), manifest.fingerprint,
                        module_hash(scorer), module_hash(inpainter))

    ws.ledger.record_stage(f'train_{stage}', started, seed=seed, config_hash=ws.stage_hash(stage),
                           model_hash=module_hash(model), metrics=metrics)
    print(f"✓ {stage} archive written to {out} {metrics}")
    return out


def cmd_attribute(ws: Workspace, image_paths: Optional[List[str]] = None, split: Optional[str] = None,
                  out_dir: Optional[Path] = None) -> list:
    """Attribute PNG files (or a whole manifest split) and write maps, overlays and sidecars."""
    started = datetime.utcnow()
    manifest = ws.manifest()
    scorer = ws.classifier(manifest)
    inpainter = ws.inpainter(manifest, scorer)
    model = ws.attributor(manifest, scorer)
    out_dir = Path(out_dir) if out_dir else ws.attributions_dir

    if image_paths:
        pixels = [load_image(Path(p)) for p in image_paths]
        names = [Path(p).stem for p in image_paths]
        expected = tuple(manifest.config.image_size)
        for name, grid in zip(names, pixels):
            if grid.shape != expected:
                raise ConfigurationError(f"Image {name} has shape {grid.shape}, the models expect {expected}")
        images = torch.as_tensor(np.stack(pixels)[:, None], dtype=torch.float32)
    else:
        tensors = DatasetLoader(manifest).load_split(split or 'test')
        images, names = tensors.images, tensors.sample_ids
        pixels = [img[0].double().numpy() for img in images]

    results = attribute_many(model, inpainter, images, names)
    for result, grid in zip(results, pixels):
        save_result(result, out_dir, grid)
    below = sum(r.below_threshold for r in results)
    ws.ledger.record_stage('attribute', started, seed=ws.cfg.seed, metrics={
        'n_images': len(results),
        'below_threshold': below,
        'constraint_satisfied': sum(r.constraint_satisfied for r in results),
    })
    print(f"✓ Attributed {len(results)} images into {out_dir} ({below} below threshold)")
    return results


def _pathological_maps(scorer, images: torch.Tensor, batch_size: int = 32) -> Dict[str, np.ndarray]:
    maps = {'cam': [], 'saliency': []}
    for start in range(0, images.shape[0], batch_size):
        batch = images[start:start + batch_size]
        maps['cam'].append(cam(scorer, batch)[:, 0].double().numpy())
        maps['saliency'].append(saliency(scorer, batch)[:, 0].double().numpy())
    return {k: np.concatenate(v) for k, v in maps.items()}


def cmd_evaluate(ws: Workspace) -> Dict[str, Any]:
    """Full evaluation: perturbation ROC, comparison report, sanity check, CAM check, acceptance table."""
    started = datetime.utcnow()
    ev = EvalConfig.from_section(ws.cfg.section('eval'))
    seed = ws.cfg.seed
    manifest = ws.manifest()
    scorer = ws.classifier(manifest)
    inpainter = ws.inpainter(manifest, scorer)
    model = ws.attributor(manifest, scorer)
    ws.eval_dir.mkdir(parents=True, exist_ok=True)

    test = DatasetLoader(manifest).load_split('test')
    test_auc = roc_auc(predict_scores(scorer, test.images), test.labels.numpy())

    print("Perturbation ROC experiment...")
    perturbation = perturbation_roc_experiment(scorer, inpainter, test, MaskConfig.from_section(ws.cfg.section('masks')),
                                               runs=ev.roc_runs, seed=seed)
    perturbation.runs_frame().to_csv(ws.eval_dir / 'roc_runs.csv', index=False)
    perturbation.roc_frame().to_csv(ws.eval_dir / 'roc_points.csv', index=False)
    aucs = {'baseline': perturbation.baseline_auc, 'healthy_inpaint': perturbation.healthy_auc,
            'pathological_inpaint': perturbation.pathological_auc}
    write_figure(roc_figure(perturbation.roc_frame(), aucs), ws.eval_dir / 'roc')

    print("Attribution maps and comparison report...")
    patho = test.pathological()
    results = attribute_many(model, inpainter, patho.images, patho.sample_ids)
    ours_binary = np.stack([r.binary_mask for r in results])
    baselines = _pathological_maps(scorer, patho.images)
    gts = patho.gt_masks[:, 0].numpy() > 0.5
    organs = patho.organ_masks[:, 0].numpy() > 0.5
    report = build_comparison_report(
        patho.sample_ids, ours_binary, baselines, gts, organs, percentiles=ev.percentiles,
        tau=ev.iou_threshold, literal=ev.literal_iou_reading, reduction=ev.localization_reduction,
        alpha=ev.alpha,
    )
    report.save(ws.eval_dir)
    print(report.to_text())

    print("Randomization sanity check...")
    sanity = randomization_sanity_check(model, patho.images, gts, n_draws=ev.sanity_draws,
                                        chance_draws=ev.chance_draws, seed=seed)
    sanity.to_frame().to_csv(ws.eval_dir / 'sanity.csv', index=False)

    cam_check = map_mass_localization(baselines['cam'], gts, shifts=ev.cam_shifts, seed=seed,
                                      sample_ids=patho.sample_ids)
    cam_check.rows.to_csv(ws.eval_dir / 'cam_localization.csv', index=False)

    n = max(len(results), 1)
    satisfaction = sum(r.constraint_satisfied for r in results) / n
    within_budget = sum(r.area_satisfied for r in results) / n
    single_pass = all(r.encoder_passes == 1 for r in results)
    percentiles = ev.percentiles
    l_ours = report.cell(percentiles[0], OURS, 'L')
    h_checks = report.wilcoxon[report.wilcoxon['baseline'] == 'saliency']
    h_better = bool(len(h_checks)) and bool(
        ((h_checks['median_h_ours'] < h_checks['median_h_baseline']) & (h_checks['p_value'] < ev.alpha)).all()
    )
    p50 = 50 if 50 in percentiles else percentiles[0]
    a_ours, a_sal = report.cell(p50, OURS, 'A_mean'), report.cell(p50, 'saliency', 'A_mean')
    inpainter_mae = ws.archives['inpainter'].get('validation_mae')
    inpainter_trend = bool(ws.archives['inpainter'].get('loss_decreasing'))
    val_satisfaction = ws.archives['attributor'].get('best_val_satisfaction')
    step_trend = bool(ws.archives['attributor'].get('step_loss_decreasing'))

    checks = [
        AcceptanceCheck('classifier test AUC', test_auc, '>= 0.95', test_auc >= 0.95),
        AcceptanceCheck('AUC drop, pathological inpainting', perturbation.pathological_gap, '>= 0.10',
                        perturbation.pathological_gap >= 0.10),
        AcceptanceCheck('AUC shift, healthy inpainting', perturbation.healthy_shift, '<= 0.02',
                        perturbation.healthy_shift <= 0.02),
        AcceptanceCheck('constraint satisfaction', satisfaction, '>= 0.80', satisfaction >= 0.80),
        AcceptanceCheck('area within budget', within_budget, '>= 0.95', within_budget >= 0.95),
        AcceptanceCheck('weak localization (ours)', l_ours, '>= 0.60', bool(l_ours >= 0.60)),
        AcceptanceCheck('median H ours < saliency, Wilcoxon', None, f"all P, p < {ev.alpha}", h_better),
        AcceptanceCheck(f'area ratio ours < saliency at P{p50}', a_ours - a_sal, '< 0', a_ours < a_sal),
        AcceptanceCheck('randomization sanity check', None, 'all draws at chance', sanity.passed),
        AcceptanceCheck('single encoder pass per attribution', float(single_pass), '== 1', single_pass),
        AcceptanceCheck('CAM mass localization vs shifts', cam_check.hit_rate, '>= 0.60', cam_check.hit_rate >= 0.60),
        AcceptanceCheck('inpainter empty-mask MAE (val)', inpainter_mae, '< 0.02',
                        inpainter_mae is not None and inpainter_mae < 0.02),
        AcceptanceCheck('inpainter loss, 20-epoch moving average', float(inpainter_trend), 'monotone decreasing',
                        inpainter_trend),
        AcceptanceCheck('attributor step loss, 50-step moving average', float(step_trend),
                        'decreasing over first 1000 steps', step_trend),
        AcceptanceCheck('attributor val constraint satisfaction', val_satisfaction, '>= 0.80',
                        val_satisfaction is not None and val_satisfaction >= 0.80),
    ]
    write_acceptance(checks, ws.eval_dir / 'acceptance.csv')

    summary = {'test_auc': test_auc, 'satisfaction': satisfaction, 'sanity_passed': sanity.passed,
               'passed_checks': sum(c.passed for c in checks), 'total_checks': len(checks)}
    summary.update(perturbation.summary())
    ws.ledger.record_stage('evaluate', started, seed=seed, config_hash=ws.cfg.fingerprint(), metrics=summary)
    print(f"✓ Evaluation written to {ws.eval_dir} ({summary['passed_checks']}/{summary['total_checks']} checks passed)")
    return summary


def cmd_benchmark(ws: Workspace) -> Dict[str, float]:
    """Maps/second for ours, saliency and CAM; one ledger entry per method."""
    started = datetime.utcnow()
    bench = ws.cfg.section('benchmark')
    manifest = ws.manifest()
    scorer = ws.classifier(manifest)
    model = ws.attributor(manifest, scorer)
    images = DatasetLoader(manifest).load_split('test', limit=bench['max_images']).images

    measurements = run_benchmark(model, images, repetitions=bench['repetitions'])
    model_hash = module_hash(model)
    for m in measurements.values():
        ws.ledger.record_throughput(m.method, m.n_images, m.repetitions, m.total_seconds, m.maps_per_second,
                                    model_hash=model_hash)
        print(f"  → {m.method}: {m.maps_per_second:.1f} maps/s ({m.repetitions} sweeps of {m.n_images} images)")
    rates = {name: m.maps_per_second for name, m in measurements.items()}
    ws.ledger.record_stage('benchmark', started, seed=ws.cfg.seed, model_hash=model_hash, metrics=rates)
    return rates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='attribution', description='Counterfactual attribution toolkit')
    parser.add_argument('--config', help='YAML config file merged over config/config.yaml')
    parser.add_argument('--seed', type=int, help='Global seed (overrides runtime.seed)')
    parser.add_argument('--out', help='Output root directory')
    parser.add_argument('--override', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config key (repeatable)')
    parser.add_argument('--allow-hash-mismatch', action='store_true',
                        help='Warn instead of failing when archives come from another dataset or classifier')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('generate', help='Generate the synthetic dataset')
    train = sub.add_parser('train', help='Train one stage')
    train.add_argument('stage', choices=STAGES)
    attribute_p = sub.add_parser('attribute', help='Attribute images')
    attribute_p.add_argument('--images', nargs='+', help='PNG files to attribute')
    attribute_p.add_argument('--split', choices=('train', 'val', 'test'), help='Attribute a whole dataset split')
    attribute_p.add_argument('--attr-out', help='Directory for attribution results')
    sub.add_parser('evaluate', help='Run the evaluation protocol')
    sub.add_parser('benchmark', help='Measure maps per second')
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    cfg = Config(args.config) if args.config else default_config
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f'runtime.seed={args.seed}')
    return cfg.with_overrides(overrides) if overrides else cfg


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        cfg = resolve_config(args)
        out_root = cfg.output_root(args.out)
        out_root.mkdir(parents=True, exist_ok=True)
    except AttributionError as e:
        print(f"✗ Error: {e}")
        return e.exit_code
    except OSError as e:
        print(f"✗ Error: cannot use output root: {e}")
        return RUNTIME_FAILURE_EXIT

    command = args.command if args.command != 'train' else f'train_{args.stage}'
    log_file = setup_logging(out_root, command)
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(int(cfg.get('runtime.num_threads', 1)))

    print("=" * 60)
    print(f"Counterfactual Attribution - {command}")
    print("=" * 60)
    print()

    try:
        cfg.snapshot(out_root / f'config_{command}.yaml')
        ws = Workspace(cfg, out_root, allow_hash_mismatch=args.allow_hash_mismatch)
        if args.command == 'generate':
            cmd_generate(ws)
        elif args.command == 'train':
            cmd_train(ws, args.stage)
        elif args.command == 'attribute':
            cmd_attribute(ws, args.images, args.split, Path(args.attr_out) if args.attr_out else None)
        elif args.command == 'evaluate':
            cmd_evaluate(ws)
        else:
            cmd_benchmark(ws)
    except AttributionError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"✗ Error: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"✗ Error: {e}")
        return RUNTIME_FAILURE_EXIT
    finally:
        print(f"Log: {log_file}")

    print()
    print("=" * 60)
    print(f"{command} complete!")
    print("=" * 60)
    return 0


if __name__ == '__main__':
    sys.exit(main())
