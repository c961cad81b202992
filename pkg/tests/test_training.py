import numpy as np
import pandas as pd
import pytest
import torch

from conftest import make_frame
from hyperrec.data_loader import DataSplit, build_dataset, leave_one_out_split, ratio_split
from hyperrec.data_models import ModelConfig, ModelKind, SpaceKind
from hyperrec.errors import SamplingError
from hyperrec.evaluation import Evaluator
from hyperrec.models import LatentRecommender
from hyperrec.training_pipeline import Trainer


def train_only(dataset) -> DataSplit:
    empty = dataset.interactions.iloc[:0]
    return DataSplit(dataset.interactions, empty, empty, 'loo')


def weights(model):
    return [p.detach().clone() for table in model.tables for p in table.parameters()]


def ring_edges(n_users):
    return pd.DataFrame({'truster': np.arange(n_users), 'trustee': (np.arange(n_users) + 1) % n_users})


class TestTrainer:

    def test_zero_epochs_leave_model(self, small_dataset, small_split, make_model):
        model = make_model(epochs=0)
        before = weights(model)
        history = Trainer(model, small_dataset, small_split, Evaluator(small_dataset, small_split)).fit()
        assert history == []
        assert all(torch.equal(a, b) for a, b in zip(before, weights(model)))

    def test_train_epoch_stats(self, small_dataset, small_split, make_model):
        model = make_model()
        stats = Trainer(model, small_dataset, small_split).train_epoch(3)
        assert stats.epoch == 3
        assert stats.triplets == len(small_split.train) * model.config.n_negatives
        assert stats.mean_loss >= 0 and stats.wall_time >= 0
        assert stats.val_score is None

    @pytest.mark.parametrize('kind', list(ModelKind))
    def test_deterministic(self, make_dataset, kind):
        dataset = make_dataset(15, 25, seed=3, edges=ring_edges(15))
        split = ratio_split(dataset) if kind.is_rating else leave_one_out_split(dataset)

        def run():
            config = ModelConfig(model=kind, space=SpaceKind.poincare(), dim=4, epochs=3, batch_size=16, seed=7)
            model = LatentRecommender(config, dataset.n_users, dataset.n_items)
            Trainer(model, dataset, split).fit()
            return weights(model)

        assert all(torch.equal(a, b) for a, b in zip(run(), run()))

    def test_separable_data_reaches_zero_loss(self):
        dataset = build_dataset(make_frame([(u, u, 1.0, 0) for u in range(5)]))
        config = ModelConfig(model=ModelKind.CML, dim=4, lr=0.05, epochs=200, seed=1)
        model = LatentRecommender(config, 5, 5)
        history = Trainer(model, dataset, train_only(dataset)).fit()
        assert history[-1].mean_loss < 0.01 * config.margin_item
        assert [model.recommend_topn(u, 1) for u in range(5)] == [[u] for u in range(5)]

    def test_zero_social_weight_matches_cml(self, make_dataset):
        dataset = make_dataset(12, 20, seed=5, edges=ring_edges(12))
        split = leave_one_out_split(dataset)

        def run(kind, social_weight):
            config = ModelConfig(model=kind, dim=3, epochs=4, batch_size=10, seed=2, social_weight=social_weight)
            model = LatentRecommender(config, dataset.n_users, dataset.n_items)
            Trainer(model, dataset, split).fit()
            return weights(model)

        cml = run(ModelKind.CML, 0.1)
        assert all(torch.equal(a, b) for a, b in zip(cml, run(ModelKind.SCML, 0.0)))
        assert not all(torch.equal(a, b) for a, b in zip(cml, run(ModelKind.SCML, 0.5)))

    def test_social_sampling_only_with_edges(self, make_dataset):
        dataset = make_dataset(12, 20, seed=5)
        model = LatentRecommender(ModelConfig(model=ModelKind.SCML), dataset.n_users, dataset.n_items)
        assert Trainer(model, dataset, leave_one_out_split(dataset)).sampler.neighbors is None

    def test_keeps_best_validation_epoch(self, make_dataset):
        dataset = make_dataset(30, 40, seed=8)
        split = leave_one_out_split(dataset)
        evaluator = Evaluator(dataset, split)
        config = ModelConfig(model=ModelKind.CML, dim=5, lr=0.05, epochs=6, batch_size=32, seed=4)
        model = LatentRecommender(config, dataset.n_users, dataset.n_items)
        trainer = Trainer(model, dataset, split, evaluator)
        history = trainer.fit()
        scores = [stats.val_score for stats in history]
        assert trainer.best_score == max(scores)
        assert trainer.best_epoch == scores.index(max(scores)) + 1
        assert evaluator.validation_score(model) == trainer.best_score

    def test_rating_model_lowers_error(self, make_dataset):
        dataset = make_dataset(20, 30, seed=6)
        split = ratio_split(dataset, seed=1)
        config = ModelConfig(model=ModelKind.MF_RATING, dim=4, lr=0.05, epochs=30, batch_size=8, seed=0)
        global_bias = float(split.train['rating'].mean())
        model = LatentRecommender(config, dataset.n_users, dataset.n_items, global_bias=global_bias)
        history = Trainer(model, dataset, split).fit()
        assert history[-1].mean_loss < history[0].mean_loss

    def test_log_file(self, tmp_path, small_dataset, small_split):
        config = ModelConfig(model=ModelKind.MF_BPR, dim=3, epochs=3, seed=0)
        model = LatentRecommender(config, small_dataset.n_users, small_dataset.n_items)
        Trainer(model, small_dataset, small_split, Evaluator(small_dataset, small_split)).fit(tmp_path / 'log.csv')
        log = pd.read_csv(tmp_path / 'log.csv')
        assert list(log.columns) == ['epoch', 'loss', 'val_hr10', 'wall_time']
        assert log['epoch'].tolist() == [1, 2, 3]
        assert log['val_hr10'].between(0, 1).all()

    def test_empty_training_set(self, small_dataset, make_model):
        model = make_model()
        with pytest.raises(SamplingError):
            Trainer(model, small_dataset, DataSplit(*([small_dataset.interactions.iloc[:0]] * 3), 'loo')).fit()
