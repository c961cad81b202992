"""Long-running end-to-end experiments; run with ``pytest -m slow``."""
import os
from pathlib import Path

import numpy as np
import pytest

from hyperrec.data_loader import leave_one_out_split, load_raw_dataset
from hyperrec.data_models import ExperimentConfig, SpaceTag
from hyperrec.distortion import compare_tree_distortion
from hyperrec.evaluation import Evaluator
from hyperrec.experiments import DATA_DIR_ENV, train_one
from hyperrec.models import LatentRecommender
from hyperrec.synthetic import SyntheticConfig, generate_dataset
from hyperrec.training_pipeline import Trainer

pytestmark = pytest.mark.slow


def movielens_file() -> Path:
    path = Path(os.environ.get(DATA_DIR_ENV, 'data')) / 'ml-100k' / 'u.data'
    if not path.is_file():
        pytest.skip(f"MovieLens 100K not found at {path}")
    return path


def test_tree_embeds_with_lower_distortion_in_the_ball():
    results = compare_tree_distortion(seeds=range(5))
    by_seed = results.pivot(index='seed', columns='space', values='mean_distortion')
    wins = int((by_seed['poincare'] < by_seed['euclidean']).sum())
    assert wins >= 4, by_seed


def test_hyperbolic_gain_shrinks_with_latent_size():
    gaps = {10: [], 100: []}
    for seed in range(3):
        dataset = generate_dataset(SyntheticConfig(seed=seed))
        split = leave_one_out_split(dataset)
        evaluator = Evaluator(dataset, split, [10])
        config = ExperimentConfig(dataset='synthetic', epochs=20, seeds=[seed])
        for dim in gaps:
            hr = {}
            for space in (SpaceTag.POINCARE, SpaceTag.EUCLIDEAN):
                model = LatentRecommender(config.to_model_config(space, dim, seed), dataset.n_users, dataset.n_items)
                Trainer(model, dataset, split, evaluator).fit()
                hr[space] = evaluator.evaluate_full_ranking(model).hr[10]
            gaps[dim].append(hr[SpaceTag.POINCARE] - hr[SpaceTag.EUCLIDEAN])
    assert np.mean(gaps[10]) > np.mean(gaps[100]), gaps


def test_movielens_statistics():
    dataset = load_raw_dataset(movielens_file())
    assert (dataset.n_users, dataset.n_items, len(dataset.interactions)) == (943, 1682, 100000)
    assert dataset.stats.density_percent == '6.3047%'


def test_movielens_cml_beats_random(tmp_path):
    dataset = load_raw_dataset(movielens_file())
    config = ExperimentConfig(dataset=str(movielens_file()), dim=10, epochs=20, output=str(tmp_path))
    report = train_one(config, dataset, tmp_path / 'run', seed=0)
    assert report.hr[10] >= 0.05
