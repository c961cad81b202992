import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from hyperrec.data_loader import DataSplit, InteractionDataset, positives_by_user
from hyperrec.data_models import MetricsReport, parse_protocol
from hyperrec.errors import DataError
from hyperrec.models import LatentRecommender

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10, 15, 20)
USER_CHUNK = 256
REPORT_COLUMNS = ['dataset', 'model', 'space', 'dim', 'seed', 'protocol', 'metric', 'k', 'value']


def _check_k(k: int):
    if k < 1:
        raise ValueError(f"cut-off k must be at least 1, got {k}")


def hit_ratio_at_k(ranked: Sequence[int], held_out: int, k: int) -> int:
    """1 when ``held_out`` is among the first ``k`` ranked items, else 0."""
    _check_k(k)
    return int(held_out in list(ranked[:k]))


def _dcg_discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_from_ranks(ranks: np.ndarray, n_relevant: int, k: int) -> float:
    """NDCG@k given the 1-based ranks of the relevant items."""
    ranks = np.asarray(ranks)
    dcg = float((1.0 / np.log2(ranks[ranks <= k] + 1.0)).sum())
    idcg = float(_dcg_discounts(min(n_relevant, k)).sum())
    return dcg / idcg


def ndcg_at_k(ranked: Sequence[int], relevant: Iterable[int], k: int) -> float:
    """
    Binary-relevance NDCG@k: DCG of ``ranked`` over the DCG of the ideal
    list that puts every relevant item on top.
    """
    _check_k(k)
    relevant = set(relevant)
    if not relevant:
        raise ValueError("NDCG is undefined for an empty relevant set")
    ranks = np.array([pos for pos, item in enumerate(ranked, 1) if item in relevant], dtype=np.float64)
    return ndcg_from_ranks(ranks, len(relevant), k)


def _errors(preds, observed) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if preds.shape != observed.shape:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {observed.shape} observations")
    if preds.size == 0:
        raise ValueError("cannot compute an error over zero predictions")
    return preds - observed


def mae(preds, observed) -> float:
    return float(np.abs(_errors(preds, observed)).mean())


def rmse(preds, observed) -> float:
    return float(math.sqrt(np.square(_errors(preds, observed)).mean()))


def target_ranks(keys: np.ndarray, targets: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """
    1-based ranks of ``targets`` in the list of ``candidates`` sorted by
    ascending key, ties going to the lower item id.
    """
    masked = np.where(candidates, keys, np.inf)
    ids = np.arange(len(keys))
    kt = masked[targets][:, None]
    before = (masked[None, :] < kt) | ((masked[None, :] == kt) & (ids[None, :] < targets[:, None]))
    return 1 + before.sum(axis=1)


class Evaluator:
    """
    Ranking and rating evaluation of a model on one split.

    At test time the candidates of a user are all items outside the user's
    train and validation interactions; at validation time only train items
    are excluded. Users without a held-out interaction are skipped.
    """

    def __init__(self, dataset: InteractionDataset, split: DataSplit, ks: Sequence[int] = DEFAULT_KS):
        for k in ks:
            _check_k(k)
        self.dataset = dataset
        self.split = split
        self.ks = sorted(set(ks))
        n_users = dataset.n_users
        self.train_items = positives_by_user(split.train, n_users)
        self.validation_items = positives_by_user(split.validation, n_users)
        self.test_items = positives_by_user(split.test, n_users)
        self._sampled_negatives = {}

    def _parts(self, target: str):
        if target == 'test':
            return self.test_items, [self.train_items, self.validation_items]
        if target == 'validation':
            return self.validation_items, [self.train_items]
        raise ValueError(f"unknown evaluation target '{target}'")

    def _report(self, model: LatentRecommender, protocol: str, **fields) -> MetricsReport:
        cfg = model.config
        return MetricsReport(protocol=protocol, dataset=self.dataset.name, model=cfg.model.value,
                             space=cfg.space.tag.value, dim=cfg.dim, seed=str(cfg.seed), **fields)

    def _rank_users(self, model: LatentRecommender, target: str, candidate_mask) -> tuple[list[np.ndarray], list[int]]:
        relevant, _ = self._parts(target)
        users = np.array([u for u in range(self.dataset.n_users) if len(relevant[u])], dtype=np.int64)
        if users.size == 0:
            raise DataError(f"no user has a {target} interaction to evaluate")
        all_ranks, sizes = [], []
        for start in range(0, len(users), USER_CHUNK):
            chunk = users[start:start + USER_CHUNK]
            keys = model.rank_keys(model.score_all(chunk))
            for row, user in zip(keys, chunk):
                targets = relevant[user]
                all_ranks.append(target_ranks(row, targets, candidate_mask(user, targets)))
                sizes.append(len(targets))
        return all_ranks, sizes

    def _aggregate(self, all_ranks, sizes, ks) -> tuple[dict, dict]:
        hr, ndcg = {}, {}
        for k in ks:
            hr[k] = float(np.mean([ranks.min() <= k for ranks in all_ranks]))
            ndcg[k] = float(np.mean([ndcg_from_ranks(r, n, k) for r, n in zip(all_ranks, sizes)]))
        return hr, ndcg

    @torch.no_grad()
    def evaluate_full_ranking(self, model: LatentRecommender, ks: Optional[Sequence[int]] = None,
                              target: str = 'test') -> MetricsReport:
        ks = sorted(set(ks or self.ks))
        _, excluded_parts = self._parts(target)
        n_items = self.dataset.n_items

        def candidates(user, targets):
            mask = np.ones(n_items, dtype=bool)
            for part in excluded_parts:
                mask[part[user]] = False
            mask[targets] = True
            return mask

        all_ranks, sizes = self._rank_users(model, target, candidates)
        hr, ndcg = self._aggregate(all_ranks, sizes, ks)
        skipped = self.dataset.n_users - len(all_ranks)
        logger.info("Full ranking on %s: %d users, HR@%d %.4f", target, len(all_ranks), ks[-1], hr[ks[-1]])
        return self._report(model, 'full', hr=hr, ndcg=ndcg, n_users_evaluated=len(all_ranks),
                            n_users_skipped=skipped)

    def sampled_negatives(self, n_negatives: int, seed: int, target: str = 'test') -> list[np.ndarray]:
        """
        Per-user negatives drawn once per ``(seed, n_negatives, target)``
        without replacement from the full-ranking candidates of ``target``
        minus its held-out items.
        """
        key = (n_negatives, seed, target)
        if key not in self._sampled_negatives:
            rng = np.random.default_rng([seed, n_negatives])
            relevant, excluded_parts = self._parts(target)
            negatives = []
            for user in range(self.dataset.n_users):
                if not len(relevant[user]):
                    negatives.append(np.empty(0, dtype=np.int64))
                    continue
                seen = np.concatenate([relevant[user], *(part[user] for part in excluded_parts)])
                pool = np.setdiff1d(np.arange(self.dataset.n_items), seen)
                size = min(n_negatives, len(pool))
                negatives.append(np.sort(rng.choice(pool, size=size, replace=False)))
            self._sampled_negatives[key] = negatives
        return self._sampled_negatives[key]

    @torch.no_grad()
    def evaluate_sampled(self, model: LatentRecommender, n_negatives: int = 999, seed: int = 0,
                         ks: Optional[Sequence[int]] = None, target: str = 'test') -> MetricsReport:
        if n_negatives < 0:
            raise ValueError(f"n_negatives must be non-negative, got {n_negatives}")
        ks = sorted(set(ks or self.ks))
        negatives = self.sampled_negatives(n_negatives, seed, target)
        n_items = self.dataset.n_items

        def candidates(user, targets):
            mask = np.zeros(n_items, dtype=bool)
            mask[negatives[user]] = True
            mask[targets] = True
            return mask

        all_ranks, sizes = self._rank_users(model, target, candidates)
        hr, ndcg = self._aggregate(all_ranks, sizes, ks)
        skipped = self.dataset.n_users - len(all_ranks)
        return self._report(model, f"sampled:{n_negatives}", hr=hr, ndcg=ndcg,
                            n_users_evaluated=len(all_ranks), n_users_skipped=skipped)

    @torch.no_grad()
    def evaluate_ratings(self, model: LatentRecommender, target: str = 'test') -> MetricsReport:
        frame = self.split.test if target == 'test' else self.split.validation
        if frame.empty:
            raise DataError(f"no {target} ratings to evaluate")
        preds = model.predict_ratings(frame['user'].to_numpy(), frame['item'].to_numpy(),
                                      self.dataset.rating_range)
        observed = frame['rating'].to_numpy(dtype=np.float64)
        evaluated = int(frame['user'].nunique())
        return self._report(model, 'full', mae=mae(preds, observed), rmse=rmse(preds, observed),
                            n_users_evaluated=evaluated, n_users_skipped=self.dataset.n_users - evaluated)

    def evaluate(self, model: LatentRecommender, protocol: str = 'full', seed: int = 0,
                 target: str = 'test') -> MetricsReport:
        """Rating metrics for rating models, otherwise ranking metrics under ``protocol``."""
        if model.config.model.is_rating:
            return self.evaluate_ratings(model, target)
        n_negatives = parse_protocol(protocol)
        if n_negatives is None:
            return self.evaluate_full_ranking(model, target=target)
        return self.evaluate_sampled(model, n_negatives, seed, target=target)

    def validation_score(self, model: LatentRecommender) -> float:
        """HR@10 on validation for ranking models, MAE for rating models."""
        if model.config.model.is_rating:
            return self.evaluate_ratings(model, 'validation').mae
        return self.evaluate_full_ranking(model, ks=[10], target='validation').hr[10]


def report_frame(reports: Iterable[MetricsReport]) -> pd.DataFrame:
    rows = [row for report in reports for row in report.to_rows()]
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    frame['k'] = pd.to_numeric(frame['k']).astype('Int64')
    return frame


def save_report(reports, directory, stem: str = 'report') -> Path:
    """Write ``<stem>.csv`` and its ``<stem>.json`` mirror; returns the CSV path."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame = report_frame(reports)
    csv_path = directory / f"{stem}.csv"
    frame.to_csv(csv_path, index=False, lineterminator='\n')
    frame.to_json(directory / f"{stem}.json", orient='records', indent=2)
    return csv_path


def load_report(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"report not found: {path}")
    frame = pd.read_csv(path, dtype={'seed': str, 'protocol': str})
    missing = set(REPORT_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path} is not a metrics report; missing columns {sorted(missing)}")
    frame['k'] = frame['k'].astype('Int64')
    return frame
