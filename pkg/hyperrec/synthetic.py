"""
Synthetic implicit feedback with a latent hierarchy.

Users and items hang under the leaves of a complete category tree. A user's
interactions stay inside the user's own category with high probability and
spread to ever larger enclosing subtrees with geometrically decaying
probability. Item popularity follows a Zipf law and user activity a power law
above a minimum, so the data is sparse, skewed and tree-like.
"""
import logging
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from hyperrec.data_loader import InteractionDataset, build_dataset

logger = logging.getLogger(__name__)


class SyntheticConfig(BaseModel):
    n_users: int = Field(default=2000, ge=1)
    n_items: int = Field(default=1000, ge=2)
    branching: int = Field(description="Children per category", default=4, ge=2)
    depth: int = Field(description="Levels of the category tree", default=3, ge=1)
    min_interactions: int = Field(description="Smallest user activity", default=3, ge=1)
    activity_exponent: float = Field(description="Pareto shape of the activity above the minimum", default=3.0, gt=1)
    max_interactions: int = Field(default=200, ge=1)
    popularity_exponent: float = Field(description="Zipf exponent of item popularity", default=1.0, ge=0)
    locality: float = Field(description="Decay of the probability of leaving a subtree", default=0.25, gt=0, lt=1)
    social_degree: int = Field(description="Trust edges per user inside its category", default=0, ge=0)
    seed: int = 0


class HierarchicalGenerator:
    def __init__(self, config: Optional[SyntheticConfig] = None):
        self.config = config or SyntheticConfig()
        self.rng = np.random.default_rng(self.config.seed)
        cfg = self.config
        self.n_leaves = cfg.branching ** cfg.depth
        self.item_leaf = self.rng.integers(0, self.n_leaves, size=cfg.n_items)
        self.user_leaf = self.rng.integers(0, self.n_leaves, size=cfg.n_users)
        ranks = self.rng.permutation(cfg.n_items)
        self.popularity = 1.0 / np.power(ranks + 1.0, cfg.popularity_exponent)
        self._subtrees = {}

    def activity(self) -> np.ndarray:
        cfg = self.config
        extra = np.floor(self.rng.pareto(cfg.activity_exponent, size=cfg.n_users)).astype(np.int64)
        upper = min(cfg.max_interactions, cfg.n_items)
        return np.clip(cfg.min_interactions + extra, 1, upper)

    def _subtree_items(self, leaf: int, level: int) -> np.ndarray:
        key = (leaf // self.config.branching ** level, level)
        if key not in self._subtrees:
            members = np.flatnonzero(self.item_leaf // self.config.branching ** level == key[0])
            self._subtrees[key] = members
        return self._subtrees[key]

    def _levels(self, size: int) -> np.ndarray:
        # level 0 is the user's own category, level ``depth`` the whole catalog
        levels = self.rng.geometric(1 - self.config.locality, size=size) - 1
        return np.minimum(levels, self.config.depth)

    def user_items(self, user: int, count: int) -> list[int]:
        chosen: list[int] = []
        seen = set()
        attempts = 0
        while len(chosen) < count:
            level = int(self._levels(1)[0]) if attempts < 20 * count else self.config.depth
            attempts += 1
            pool = self._subtree_items(int(self.user_leaf[user]), level)
            if pool.size == 0:
                continue
            weights = self.popularity[pool]
            item = int(self.rng.choice(pool, p=weights / weights.sum()))
            if item not in seen:
                seen.add(item)
                chosen.append(item)
        return chosen

    def interactions(self) -> pd.DataFrame:
        rows = []
        for user, count in enumerate(self.activity()):
            for position, item in enumerate(self.user_items(user, int(count)), 1):
                rows.append((user, item, 1.0, position))
        frame = pd.DataFrame(rows, columns=['user', 'item', 'rating', 'timestamp'])
        frame['line'] = np.arange(1, len(frame) + 1)
        return frame

    def trust_edges(self) -> Optional[pd.DataFrame]:
        degree = self.config.social_degree
        if degree == 0:
            return None
        edges = []
        for user in range(self.config.n_users):
            peers = np.flatnonzero(self.user_leaf == self.user_leaf[user])
            peers = peers[peers != user]
            if peers.size == 0:
                continue
            for peer in self.rng.choice(peers, size=min(degree, peers.size), replace=False):
                edges.append((user, int(peer)))
        return pd.DataFrame(edges, columns=['truster', 'trustee'])

    def run(self, name: str = 'synthetic') -> InteractionDataset:
        frame = self.interactions()
        dataset = build_dataset(frame, self.trust_edges(), name=name)
        logger.info("Generated %s: %d users, %d items, %d interactions (%s)", name, dataset.n_users,
                    dataset.n_items, len(frame), dataset.stats.density_percent)
        return dataset


def generate_dataset(config: Optional[SyntheticConfig] = None, name: str = 'synthetic') -> InteractionDataset:
    return HierarchicalGenerator(config).run(name)
