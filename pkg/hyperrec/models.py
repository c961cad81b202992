import json
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch

from hyperrec.data_models import CheckpointMeta, ModelConfig, ModelKind
from hyperrec.errors import CheckpointError
from hyperrec.losses import bpr_loss, mf_rating_loss, scml_loss
from hyperrec.sampling import TripletBatch
from hyperrec.spaces import (
    EmbeddingTable,
    init_embeddings,
    load_table,
    materialize,
    materialize_params,
    save_table,
    score_distance,
    score_projection,
)

logger = logging.getLogger(__name__)

# Upper bound on user-by-item-by-dim elements materialized at once when scoring.
SCORE_CHUNK_ELEMENTS = 4_000_000


class LatentRecommender:
    """
    User and item embedding tables scored by a projection or distance relation.

    Projection models (MF-BPR, rating MF) rank by descending score, distance
    models (CML, SCML) by ascending distance. Both spaces share every code
    path except materialization and the score functions.
    """

    def __init__(self, config: ModelConfig, n_users: int, n_items: int, global_bias: float = 0.0,
                 users: Optional[EmbeddingTable] = None, items: Optional[EmbeddingTable] = None):
        self.config = config
        self.n_users = n_users
        self.n_items = n_items
        self.global_bias = global_bias if config.model.is_rating else 0.0
        user_seed, item_seed = np.random.SeedSequence(config.seed).generate_state(2)
        with_bias = not config.model.is_distance
        self.users = users or init_embeddings(n_users, config.dim, config.init_scale, int(user_seed),
                                              with_bias=with_bias, name='users')
        self.items = items or init_embeddings(n_items, config.dim, config.init_scale, int(item_seed),
                                              with_bias=with_bias, name='items')

    @property
    def space(self):
        return self.config.space

    @property
    def is_distance(self) -> bool:
        return self.config.model.is_distance

    @property
    def tables(self) -> list[EmbeddingTable]:
        return [self.users, self.items]

    def pair_scores(self, users, items) -> torch.Tensor:
        users = torch.as_tensor(users, dtype=torch.long)
        items = torch.as_tensor(items, dtype=torch.long)
        u = materialize(self.space, self.users, users)
        v = materialize(self.space, self.items, items)
        if self.is_distance:
            return score_distance(self.space, u, v)
        bias = self.users.lookup_bias(users) + self.items.lookup_bias(items) + self.global_bias
        return score_projection(self.space, u, v, bias)

    @torch.no_grad()
    def score_all(self, users) -> torch.Tensor:
        """Scores of every item for each user, shape ``(len(users), n_items)``."""
        users = torch.as_tensor(users, dtype=torch.long).reshape(-1)
        v = materialize_params(self.space, self.items.weight)
        item_bias = self.items.biases
        chunk = max(1, SCORE_CHUNK_ELEMENTS // (self.n_items * self.config.dim))
        out = []
        for start in range(0, len(users), chunk):
            batch = users[start:start + chunk]
            u = materialize(self.space, self.users, batch).unsqueeze(1)
            if self.is_distance:
                out.append(score_distance(self.space, u, v.unsqueeze(0)))
            else:
                bias = self.users.lookup_bias(batch).unsqueeze(1) + item_bias.unsqueeze(0) + self.global_bias
                out.append(score_projection(self.space, u, v.unsqueeze(0), bias))
        return torch.cat(out) if out else torch.empty(0, self.n_items, dtype=torch.float64)

    def rank_keys(self, scores: torch.Tensor) -> np.ndarray:
        """Ascending sort keys: distances as is, projection scores negated."""
        keys = scores.detach().numpy()
        return keys.copy() if self.is_distance else -keys

    def recommend_topn(self, user: int, k: int, exclude: Iterable[int] = ()) -> list[int]:
        """Top-k item ids for ``user``, ties broken by ascending item id."""
        if not 0 <= user < self.n_users:
            raise IndexError(f"unknown user id {user}")
        keys = self.rank_keys(self.score_all([user]))[0]
        excluded = np.zeros(self.n_items, dtype=bool)
        excluded[np.fromiter(exclude, dtype=np.int64)] = True
        order = np.argsort(keys, kind='stable')
        return [int(i) for i in order[~excluded[order]][:k]]

    @torch.no_grad()
    def predict_ratings(self, users, items, rating_range: Optional[tuple[float, float]] = None) -> np.ndarray:
        preds = self.pair_scores(users, items)
        if rating_range is not None:
            preds = preds.clamp(*rating_range)
        return preds.numpy()

    def ranking_loss(self, batch: TripletBatch, social: Optional[TripletBatch] = None) -> torch.Tensor:
        cfg = self.config
        if cfg.model is ModelKind.MF_BPR:
            users = torch.as_tensor(batch.users)
            pos = self.pair_scores(users, torch.as_tensor(batch.positives))
            neg = self.pair_scores(users.unsqueeze(1), torch.as_tensor(batch.negatives))
            return bpr_loss(pos.unsqueeze(1), neg).sum()
        if not self.is_distance:
            raise ValueError(f"{cfg.model.value} is not trained on triplets")
        empty = np.empty(0, dtype=np.int64)
        social = social if social is not None else TripletBatch(empty, empty, empty.reshape(0, 1))
        social_weight = cfg.social_weight if cfg.model is ModelKind.SCML else 0.0
        return scml_loss(self.space, self.users, self.items, batch, social, social_weight,
                         cfg.margin_item, cfg.margin_social, cfg.rank_weighting)

    def rating_loss(self, users, items, ratings) -> torch.Tensor:
        pred = self.pair_scores(users, items)
        return mf_rating_loss(pred, torch.as_tensor(ratings, dtype=torch.float64)).sum()

    def snapshot(self):
        return [table.snapshot() for table in self.tables]

    def restore(self, snapshot):
        for table, saved in zip(self.tables, snapshot):
            table.restore(saved)

    def save(self, directory, epoch: int = 0, validation_metric: str = '', validation_score: Optional[float] = None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_table(self.users, self.space, directory / 'users.hrec')
        save_table(self.items, self.space, directory / 'items.hrec')
        meta = CheckpointMeta(config=self.config, epoch=epoch, validation_metric=validation_metric,
                              validation_score=validation_score, global_bias=self.global_bias,
                              n_users=self.n_users, n_items=self.n_items)
        (directory / 'meta.json').write_text(meta.model_dump_json(indent=2), encoding='utf-8')
        logger.info("Saved checkpoint (epoch %d) to %s", epoch, directory)

    @classmethod
    def load(cls, directory) -> tuple['LatentRecommender', CheckpointMeta]:
        directory = Path(directory)
        try:
            meta = CheckpointMeta(**json.loads((directory / 'meta.json').read_text(encoding='utf-8')))
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint metadata in {directory}: {exc}") from exc
        users, tag, _ = load_table(directory / 'users.hrec', name='users')
        items, _, _ = load_table(directory / 'items.hrec', name='items')
        if tag is not meta.config.space.tag:
            raise CheckpointError(f"{directory}: table space {tag.value} disagrees with metadata")
        if (users.rows, items.rows) != (meta.n_users, meta.n_items) or users.dim != meta.config.dim:
            raise CheckpointError(f"{directory}: table shapes disagree with metadata")
        model = cls(meta.config, meta.n_users, meta.n_items, meta.global_bias, users=users, items=items)
        return model, meta
