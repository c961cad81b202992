import logging
import time
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from hyperrec.data_loader import DataSplit, InteractionDataset
from hyperrec.data_models import EpochStats, ModelKind
from hyperrec.errors import NonFiniteGradientError, SamplingError
from hyperrec.evaluation import Evaluator
from hyperrec.models import LatentRecommender
from hyperrec.optim import LazyAdam
from hyperrec.sampling import TripletBatch, TripletSampler

logger = logging.getLogger(__name__)


class Trainer:
    """
    Mini-batch training of a LatentRecommender with best-validation selection.

    Every epoch is one pass over the training positives (ratings for the
    rating model) in a freshly shuffled order. When an evaluator is given,
    the model is scored on validation after every epoch and the best epoch's
    parameters are restored at the end of :meth:`fit`.
    """

    def __init__(self, model: LatentRecommender, dataset: InteractionDataset, split: DataSplit,
                 evaluator: Optional[Evaluator] = None, progress: bool = False):
        self.model = model
        self.config = model.config
        self.dataset = dataset
        self.split = split
        self.evaluator = evaluator
        self.progress = progress
        use_social = (self.config.model is ModelKind.SCML and self.config.social_weight > 0
                      and dataset.has_social)
        self.sampler = TripletSampler(dataset.n_users, dataset.n_items, split.train,
                                      neighbors=dataset.neighbors if use_social else None,
                                      seed=self.config.seed)
        self.optimizer = LazyAdam(model.tables, self.config.space, lr=self.config.lr,
                                  clip_grad_norm=self.config.clip_grad_norm)
        self.best_epoch = 0
        self.best_score: Optional[float] = None
        self.rejected_batches = 0

    @property
    def validation_metric(self) -> str:
        return 'val_mae' if self.config.model.is_rating else 'val_hr10'

    def _step(self, loss) -> bool:
        self.optimizer.zero_grad()
        loss.backward()
        try:
            self.optimizer.step()
        except NonFiniteGradientError as exc:
            self.rejected_batches += 1
            logger.warning("%s", exc)
            return False
        return True

    def _ranking_batches(self):
        triplets = self.sampler.epoch_triplets(self.config.n_negatives)
        size = self.config.batch_size
        for start in range(0, len(triplets.users), size):
            yield TripletBatch(*(part[start:start + size] for part in triplets))

    def _rating_batches(self):
        train = self.split.train
        order = self.sampler.rng.permutation(len(train))
        users = train['user'].to_numpy(dtype=np.int64)[order]
        items = train['item'].to_numpy(dtype=np.int64)[order]
        ratings = train['rating'].to_numpy(dtype=np.float64)[order]
        size = self.config.batch_size
        for start in range(0, len(order), size):
            stop = start + size
            yield users[start:stop], items[start:stop], ratings[start:stop]

    def train_epoch(self, epoch: int = 1) -> EpochStats:
        """One pass over the training data; returns the mean loss per training term."""
        if self.split.train.empty:
            raise SamplingError("training set is empty")
        started = time.perf_counter()
        total, terms = 0.0, 0
        rating = self.config.model.is_rating
        batches = self._rating_batches() if rating else self._ranking_batches()
        for batch in tqdm(batches, desc=f"epoch {epoch}", disable=not self.progress, leave=False):
            if rating:
                loss = self.model.rating_loss(*batch)
                count = len(batch[0])
            else:
                social = None
                if self.sampler.neighbors is not None:
                    social = self.sampler.social_triplets(batch.users)
                loss = self.model.ranking_loss(batch, social)
                count = batch.negatives.size
            if self._step(loss):
                total += float(loss.detach())
                terms += count
        mean_loss = total / terms if terms else float('nan')
        return EpochStats(epoch=epoch, mean_loss=mean_loss, triplets=terms,
                          wall_time=time.perf_counter() - started)

    def validate(self) -> Optional[float]:
        if self.evaluator is None:
            return None
        return self.evaluator.validation_score(self.model)

    def _improves(self, score: Optional[float]) -> bool:
        if score is None:
            return False
        if self.best_score is None:
            return True
        if self.config.model.is_rating:
            return score < self.best_score
        return score > self.best_score

    def _append_log(self, log_path: Path, stats: EpochStats):
        row = pd.DataFrame([{
            'epoch': stats.epoch,
            'loss': stats.mean_loss,
            self.validation_metric: stats.val_score,
            'wall_time': stats.wall_time,
        }])
        row.to_csv(log_path, mode='a', header=not log_path.exists(), index=False, lineterminator='\n')

    def fit(self, log_path=None) -> list[EpochStats]:
        """
        Train for ``config.epochs`` epochs, appending one row per epoch to
        ``log_path`` when given, and keep the best validation epoch.
        """
        log_path = Path(log_path) if log_path is not None else None
        best = self.model.snapshot()
        history = []
        for epoch in range(1, self.config.epochs + 1):
            stats = self.train_epoch(epoch)
            stats.val_score = self.validate()
            history.append(stats)
            logger.info("Epoch %d: loss %.6f, %s %s, %.1fs", epoch, stats.mean_loss, self.validation_metric,
                        'n/a' if stats.val_score is None else f"{stats.val_score:.4f}", stats.wall_time)
            if log_path is not None:
                self._append_log(log_path, stats)
            if self.evaluator is None or self._improves(stats.val_score):
                self.best_epoch, self.best_score = epoch, stats.val_score
                best = self.model.snapshot()
        if self.rejected_batches:
            logger.warning("%d batches were rejected for non-finite gradients", self.rejected_batches)
        self.model.restore(best)
        if self.config.epochs:
            logger.info("Kept epoch %d (%s %s)", self.best_epoch, self.validation_metric, self.best_score)
        return history
