import hashlib
import json
import logging
import os
from multiprocessing import Pool
from pathlib import Path
from typing import NamedTuple, Optional

import pandas as pd
import torch

from hyperrec.data_loader import InteractionDataset, load_raw_dataset, make_split
from hyperrec.data_models import ExperimentConfig, MetricsReport, ModelKind, SpaceTag
from hyperrec.errors import CheckpointError, DataError, ProtocolMismatchError
from hyperrec.evaluation import Evaluator, load_report, report_frame, save_report
from hyperrec.models import LatentRecommender
from hyperrec.synthetic import SyntheticConfig, generate_dataset
from hyperrec.training_pipeline import Trainer

logger = logging.getLogger(__name__)

DATA_DIR_ENV = 'HYPERREC_DATA_DIR'
DATASET_FILE = 'dataset.pkl'
STATS_FILE = 'stats.json'
LOWER_IS_BETTER = {'mae', 'rmse'}
GROUP_KEYS = ['dataset', 'model', 'dim', 'protocol', 'metric', 'k']


def resolve_path(path) -> Path:
    """Paths that do not exist relative to the working directory are looked up under HYPERREC_DATA_DIR."""
    path = Path(path)
    root = os.environ.get(DATA_DIR_ENV)
    if not path.exists() and not path.is_absolute() and root:
        candidate = Path(root) / path
        if candidate.exists():
            return candidate
    return path


def resolve_dataset(config: ExperimentConfig) -> InteractionDataset:
    """A prepared dataset directory, or a raw interaction file parsed on the fly."""
    path = resolve_path(config.dataset)
    if path.is_dir():
        if not (path / DATASET_FILE).is_file():
            raise DataError(f"{path} is not a prepared dataset directory (no {DATASET_FILE}); run prep first")
        return InteractionDataset.load(path / DATASET_FILE)
    trust = str(resolve_path(config.trust)) if config.trust else None
    return load_raw_dataset(path, config.format, trust, config.min_rating_as_positive)


def split_mode_for(config: ExperimentConfig, model: ModelKind) -> str:
    if config.split != 'auto':
        return config.split
    return 'ratio' if model.is_rating else 'loo'


def _write_config(config: ExperimentConfig, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / 'config.txt').write_text(config.to_text(), encoding='utf-8')


def cmd_prep(config: ExperimentConfig, synthetic: Optional[SyntheticConfig] = None) -> Path:
    """
    Write the canonical files of a dataset into ``config.output``:
    interactions.tsv, idmap.tsv, social.tsv, both split families, stats.json
    and the pickled dataset the other commands read.
    """
    output = Path(config.output)
    if synthetic is not None:
        dataset = generate_dataset(synthetic, name=Path(config.dataset).name or 'synthetic')
    else:
        path = resolve_path(config.dataset)
        if path.is_dir():
            raise DataError(f"prep needs an interaction file, got directory {path}")
        trust = str(resolve_path(config.trust)) if config.trust else None
        dataset = load_raw_dataset(path, config.format, trust, config.min_rating_as_positive)
        dataset.name = path.parent.name if path.stem in ('u', 'ratings') else path.stem
    output.mkdir(parents=True, exist_ok=True)
    dataset.export(output)
    seed = config.seeds[0]
    for mode in ('loo', 'ratio'):
        make_split(dataset, mode, seed).export(output / 'splits')
    stats = dataset.stats.model_dump()
    stats['density_percent'] = dataset.stats.density_percent
    stats['name'] = dataset.name
    (output / STATS_FILE).write_text(json.dumps(stats, indent=2) + '\n', encoding='utf-8')
    dataset.save(output / DATASET_FILE)
    logger.info("Prepared %s in %s: %d users, %d items, %d ratings, density %s", dataset.name, output,
                dataset.n_users, dataset.n_items, dataset.stats.n_ratings, dataset.stats.density_percent)
    return output


def run_name(model: ModelKind, space: SpaceTag, dim: int, seed: int) -> str:
    return f"{model.value}_{space.value}_d{dim}_seed{seed}"


def train_one(config: ExperimentConfig, dataset: InteractionDataset, run_dir: Path, seed: int,
              space: Optional[SpaceTag] = None, dim: Optional[int] = None,
              progress: bool = False, model: Optional[ModelKind] = None) -> MetricsReport:
    """Train one (model, space, dim, seed) cell, keep its best-validation checkpoint and test it."""
    model_config = config.to_model_config(space=space, dim=dim, seed=seed, model=model)
    split = make_split(dataset, split_mode_for(config, model_config.model), seed)
    evaluator = Evaluator(dataset, split, config.ks)
    global_bias = float(split.train['rating'].mean()) if model_config.model.is_rating else 0.0
    recommender = LatentRecommender(model_config, dataset.n_users, dataset.n_items, global_bias)
    trainer = Trainer(recommender, dataset, split, evaluator, progress=progress)
    run_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / 'train_log.csv'
    log_path.unlink(missing_ok=True)
    trainer.fit(log_path)
    recommender.save(run_dir / 'checkpoint', epoch=trainer.best_epoch,
                     validation_metric=trainer.validation_metric, validation_score=trainer.best_score)
    report = evaluator.evaluate(recommender, config.protocol, seed)
    save_report(report, run_dir, 'report')
    return report


def summary_frame(reports: list[MetricsReport]) -> pd.DataFrame:
    """Per-seed rows followed by one ``seed=mean`` row per metric."""
    frame = report_frame(reports)
    keys = ['dataset', 'model', 'space', 'dim', 'protocol', 'metric', 'k']
    mean = frame.groupby(keys, dropna=False, sort=False)['value'].mean().reset_index()
    mean['seed'] = 'mean'
    return pd.concat([frame, mean[frame.columns]], ignore_index=True)


def cmd_train(config: ExperimentConfig, progress: bool = False) -> list[MetricsReport]:
    dataset = resolve_dataset(config)
    output = Path(config.output)
    _write_config(config, output)
    reports = []
    for seed in config.seeds:
        run_dir = output / run_name(config.model, config.space, config.dim, seed)
        logger.info("Training %s in %s space, d=%d, seed %d", config.model.value, config.space.value,
                    config.dim, seed)
        reports.append(train_one(config, dataset, run_dir, seed, progress=progress))
    summary_frame(reports).to_csv(output / 'summary.csv', index=False, lineterminator='\n')
    logger.info("Wrote %d run(s) and summary.csv to %s", len(reports), output)
    return reports


def _protocol_stem(protocol: str) -> str:
    return 'report_' + protocol.replace(':', '')


def cmd_eval(config: ExperimentConfig, checkpoint) -> MetricsReport:
    """Evaluate a saved checkpoint on the configured dataset under ``config.protocol``."""
    checkpoint = Path(checkpoint)
    model, meta = LatentRecommender.load(checkpoint)
    if 'dim' in config.model_fields_set and config.dim != meta.config.dim:
        raise CheckpointError(f"checkpoint has dim {meta.config.dim} but dim {config.dim} was requested")
    dataset = resolve_dataset(config)
    if (meta.n_users, meta.n_items) != (dataset.n_users, dataset.n_items):
        raise CheckpointError(
            f"checkpoint covers {meta.n_users} users x {meta.n_items} items but dataset "
            f"{dataset.name} has {dataset.n_users} users x {dataset.n_items} items"
        )
    seed = meta.config.seed
    split = make_split(dataset, split_mode_for(config, meta.config.model), seed)
    evaluator = Evaluator(dataset, split, config.ks)
    report = evaluator.evaluate(model, config.protocol, seed)
    output = Path(config.output)
    save_report(report, output, _protocol_stem(config.protocol))
    logger.info("Wrote %s report for %s to %s", config.protocol, checkpoint, output)
    return report


class SweepCell(NamedTuple):
    config_text: str
    model: ModelKind
    space: SpaceTag
    dim: int
    seed: int
    directory: str


class SweepResult(NamedTuple):
    curve_path: Path
    completed: int
    skipped: int
    failures: list[tuple[str, str]]


def cell_key(config: ExperimentConfig, dataset: InteractionDataset, model: ModelKind, space: SpaceTag,
             dim: int, seed: int) -> str:
    """Content hash of a sweep cell: its model settings, evaluation settings and the dataset statistics."""
    payload = {
        'model': config.to_model_config(space=space, dim=dim, seed=seed, model=model).model_dump(mode='json'),
        'split': split_mode_for(config, model),
        'protocol': config.protocol,
        'ks': config.ks,
        'dataset': dataset.stats.model_dump(mode='json'),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()[:12]


def run_cell(cell: SweepCell) -> tuple[str, Optional[str]]:
    """Worker entry point; returns the cell directory and an error message on failure."""
    torch.set_num_threads(1)
    try:
        config = ExperimentConfig.parse_text(cell.config_text)
        dataset = resolve_dataset(config)
        train_one(config, dataset, Path(cell.directory), cell.seed, space=cell.space, dim=cell.dim,
                  model=cell.model)
    except Exception as exc:  # failures are collected, the sweep goes on
        logger.error("Sweep cell %s failed: %s", cell.directory, exc)
        return cell.directory, f"{type(exc).__name__}: {exc}"
    return cell.directory, None


def curve_frame(frame: pd.DataFrame) -> pd.DataFrame:
    grouped = frame.groupby(['model', 'dim', 'space', 'metric', 'k'], dropna=False)['value']
    curve = grouped.agg(mean='mean', stddev=lambda values: values.std(ddof=0)).reset_index()
    return curve.sort_values(['model', 'metric', 'k', 'space', 'dim'], kind='stable').reset_index(drop=True)


def cmd_sweep(config: ExperimentConfig) -> SweepResult:
    """
    Train and test every (model, space, dim, seed) cell, skipping cells whose
    directory already holds a report, then write the per-cell reports and the
    curve of mean and standard deviation over seeds.
    """
    dataset = resolve_dataset(config)
    output = Path(config.output)
    _write_config(config, output)
    text = config.to_text()
    cells, done = [], []
    for model in config.sweep_models:
        for dim in config.sweep_dims(model):
            for space in config.spaces:
                for seed in config.seeds:
                    key = cell_key(config, dataset, model, space, dim, seed)
                    directory = output / 'cells' / f"{run_name(model, space, dim, seed)}_{key}"
                    if (directory / 'report.csv').is_file():
                        done.append(directory)
                    else:
                        cells.append(SweepCell(text, model, space, dim, seed, str(directory)))
    logger.info("Sweep: %d cells to run, %d already complete", len(cells), len(done))
    if done:
        logger.warning("Skipping %d completed sweep cells", len(done))

    if config.workers > 1 and len(cells) > 1:
        with Pool(min(config.workers, len(cells))) as pool:
            results = pool.map(run_cell, cells)
    else:
        results = [run_cell(cell) for cell in cells]
    failures = [(directory, error) for directory, error in results if error is not None]

    reports = [load_report(Path(d) / 'report.csv') for d in done]
    reports += [load_report(Path(d) / 'report.csv') for d, error in results if error is None]
    curve_path = output / 'curve.csv'
    if reports:
        frame = pd.concat(reports, ignore_index=True)
        frame.to_csv(output / 'sweep_reports.csv', index=False, lineterminator='\n')
        curve_frame(frame).to_csv(curve_path, index=False, lineterminator='\n')
    if failures:
        pd.DataFrame(failures, columns=['cell', 'error']).to_csv(output / 'failures.csv', index=False,
                                                                  lineterminator='\n')
        logger.warning("%d sweep cells failed; see %s", len(failures), output / 'failures.csv')
    else:
        (output / 'failures.csv').unlink(missing_ok=True)
    return SweepResult(curve_path, len(results) - len(failures), len(done), failures)


def _report_path(path) -> Path:
    path = Path(path)
    if path.is_dir():
        for name in ('summary.csv', 'sweep_reports.csv', 'report.csv'):
            if (path / name).is_file():
                return path / name
        raise DataError(f"no report found in {path}")
    return path


def _mean_over_seeds(frame: pd.DataFrame) -> pd.DataFrame:
    if (frame['seed'] == 'mean').any():
        frame = frame[frame['seed'] == 'mean']
    return frame.groupby(['space'] + GROUP_KEYS, dropna=False)['value'].mean().reset_index()


def _label(frame: pd.DataFrame, fallback: str) -> str:
    spaces = frame['space'].unique()
    return str(spaces[0]) if len(spaces) == 1 else fallback


def _winner(row, label_a: str, label_b: str) -> str:
    a, b = row['value_a'], row['value_b']
    if a == b:
        return 'tie'
    a_better = a < b if row['metric'] in LOWER_IS_BETTER else a > b
    return label_a if a_better else label_b


def compare_frames(a: pd.DataFrame, b: pd.DataFrame, densities: Optional[dict] = None) -> tuple[pd.DataFrame, str, str]:
    """
    Side-by-side metrics of two report sets with absolute and relative
    deltas and the winning side of every (dataset, model, dim, metric, k) cell.
    """
    protocols_a, protocols_b = set(a['protocol']), set(b['protocol'])
    if protocols_a != protocols_b:
        raise ProtocolMismatchError(f"cannot compare protocols {sorted(protocols_a)} and {sorted(protocols_b)}")
    a, b = _mean_over_seeds(a), _mean_over_seeds(b)
    label_a, label_b = _label(a, 'A'), _label(b, 'B')
    if label_a == label_b:
        label_a, label_b = 'A', 'B'
    merged = a.drop(columns='space').merge(b.drop(columns='space'), on=GROUP_KEYS, suffixes=('_a', '_b'))
    if merged.empty:
        raise DataError("the two report sets share no (dataset, model, dim, metric, k) cell")
    merged['delta'] = merged['value_a'] - merged['value_b']
    merged['rel_delta'] = merged['delta'] / merged['value_b'].abs().where(merged['value_b'] != 0)
    merged['winner'] = merged.apply(_winner, axis=1, args=(label_a, label_b))
    if densities:
        merged.insert(1, 'density', merged['dataset'].map(densities).fillna(''))
    merged = merged.rename(columns={'value_a': label_a, 'value_b': label_b})
    merged = merged.sort_values(['dataset', 'model', 'metric', 'k', 'dim'], kind='stable').reset_index(drop=True)
    return merged, label_a, label_b


def dataset_densities(config: Optional[ExperimentConfig]) -> dict:
    """Density of the configured prepared dataset, keyed by dataset name."""
    if config is None:
        return {}
    stats_path = resolve_path(config.dataset) / STATS_FILE
    if not stats_path.is_file():
        return {}
    stats = json.loads(stats_path.read_text(encoding='utf-8'))
    return {stats.get('name', ''): stats['density_percent']}


def cmd_compare(report_a, report_b=None, output='compare', densities: Optional[dict] = None) -> tuple[Path, Path]:
    """
    Compare two report sets, or the two spaces inside a single one, and write
    ``compare.md`` and ``compare.csv`` into ``output``.
    """
    frame_a = load_report(_report_path(report_a))
    if report_b is None:
        frame_b = frame_a[frame_a['space'] == SpaceTag.EUCLIDEAN.value]
        frame_a = frame_a[frame_a['space'] == SpaceTag.POINCARE.value]
        if frame_a.empty or frame_b.empty:
            raise DataError(f"{report_a} does not hold reports for both spaces")
    else:
        frame_b = load_report(_report_path(report_b))
    table, label_a, label_b = compare_frames(frame_a, frame_b, densities)

    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    csv_path = output / 'compare.csv'
    table.to_csv(csv_path, index=False, lineterminator='\n')
    wins = (table['winner'] == label_a).sum()
    lines = [
        f"# {label_a} vs {label_b}",
        '',
        f"{label_a} wins {wins} of {len(table)} cells; protocol {', '.join(sorted(table['protocol'].unique()))}.",
        '',
        table.to_markdown(index=False, floatfmt='.4f'),
        '',
    ]
    md_path = output / 'compare.md'
    md_path.write_text('\n'.join(lines), encoding='utf-8')
    logger.info("Wrote comparison of %d cells to %s", len(table), output)
    return md_path, csv_path
