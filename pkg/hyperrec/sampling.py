import logging
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from hyperrec.data_loader import positives_by_user
from hyperrec.errors import SamplingError

logger = logging.getLogger(__name__)


class TrainingTriplet(NamedTuple):
    user: int
    positive: int
    negative: int


class TripletBatch(NamedTuple):
    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray  # shape (n_positives, negatives_per_positive)


def _pair_keys(users: np.ndarray, others: np.ndarray, n_others: int) -> np.ndarray:
    return users.astype(np.int64) * n_others + others.astype(np.int64)


class _PairSet:
    """Sorted (user, other) keys for vectorized membership tests."""

    def __init__(self, lists: list[np.ndarray], n_others: int):
        self.n_others = n_others
        users = np.repeat(np.arange(len(lists)), [len(items) for items in lists])
        others = np.concatenate(lists) if lists else np.empty(0, dtype=np.int64)
        self.keys = np.sort(_pair_keys(users, others, n_others))

    def contains(self, users: np.ndarray, others: np.ndarray) -> np.ndarray:
        keys = _pair_keys(users, others, self.n_others)
        pos = np.searchsorted(self.keys, keys)
        found = np.zeros(keys.shape, dtype=bool)
        inside = pos < len(self.keys)
        found[inside] = self.keys[pos[inside]] == keys[inside]
        return found


class TripletSampler:
    """
    Uniform negative sampling for pairwise losses.

    Item negatives are drawn uniformly from the items a user has not
    interacted with in training; social negatives from the users outside the
    user's trust list, excluding the user. Both use rejection sampling and
    are redrawn every epoch.
    """

    def __init__(self, n_users: int, n_items: int, train: pd.DataFrame,
                 neighbors: Optional[list[np.ndarray]] = None, seed: int = 0):
        self.n_users = n_users
        self.n_items = n_items
        self.rng = np.random.default_rng(seed)
        self.train_users = train['user'].to_numpy(dtype=np.int64)
        self.train_items = train['item'].to_numpy(dtype=np.int64)
        self.positives = positives_by_user(train, n_users)
        self.item_pairs = _PairSet(self.positives, n_items)
        self.neighbors = neighbors
        self.social_pairs = _PairSet(neighbors, n_users) if neighbors is not None else None

    def _check_item_negatives(self, users: np.ndarray):
        counts = np.array([len(self.positives[u]) for u in np.unique(users)])
        if (counts >= self.n_items).any():
            user = int(np.unique(users)[np.argmax(counts >= self.n_items)])
            raise SamplingError(f"user {user} interacted with every item; no negative can be sampled")

    def _resample(self, users: np.ndarray, high: int, rejected) -> np.ndarray:
        draws = self.rng.integers(0, high, size=users.shape)
        bad = np.flatnonzero(rejected(users, draws))
        while bad.size:
            draws[bad] = self.rng.integers(0, high, size=bad.size)
            bad = bad[rejected(users[bad], draws[bad])]
        return draws

    def sample_item_negatives(self, users: np.ndarray) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        self._check_item_negatives(users)
        return self._resample(users, self.n_items, self.item_pairs.contains)

    def sample_bpr_triplet(self, user: int) -> TrainingTriplet:
        if len(self.positives[user]) == 0:
            raise SamplingError(f"user {user} has no training positives")
        positive = int(self.rng.choice(self.positives[user]))
        negative = int(self.sample_item_negatives(np.array([user]))[0])
        return TrainingTriplet(user, positive, negative)

    def _social_rejected(self, users: np.ndarray, draws: np.ndarray) -> np.ndarray:
        return (draws == users) | self.social_pairs.contains(users, draws)

    def sample_social_pair(self, user: int) -> Optional[tuple[int, int]]:
        """Positive neighbor and negative user, or None when the user trusts nobody."""
        if self.neighbors is None or len(self.neighbors[user]) == 0:
            return None
        if len(self.neighbors[user]) >= self.n_users - 1:
            raise SamplingError(f"user {user} trusts every other user; no social negative exists")
        positive = int(self.rng.choice(self.neighbors[user]))
        negative = int(self._resample(np.array([user]), self.n_users, self._social_rejected)[0])
        return positive, negative

    def social_triplets(self, users: np.ndarray) -> TripletBatch:
        """One social triplet for every distinct listed user that has neighbors."""
        empty = np.empty(0, dtype=np.int64)
        if self.neighbors is None:
            return TripletBatch(empty, empty, empty.reshape(0, 1))
        users = np.unique(np.asarray(users, dtype=np.int64))
        degrees = np.array([len(self.neighbors[u]) for u in users], dtype=np.int64)
        users = users[degrees > 0]
        degrees = degrees[degrees > 0]
        if users.size == 0:
            return TripletBatch(empty, empty, empty.reshape(0, 1))
        if (degrees >= self.n_users - 1).any():
            raise SamplingError("a user trusts every other user; no social negative exists")
        picks = (self.rng.random(users.size) * degrees).astype(np.int64)
        positives = np.array([self.neighbors[u][p] for u, p in zip(users, picks)], dtype=np.int64)
        negatives = self._resample(users, self.n_users, self._social_rejected)
        return TripletBatch(users, positives, negatives[:, None])

    def epoch_triplets(self, negatives_per_positive: int) -> TripletBatch:
        """Every training positive once, in shuffled order, with its sampled negatives."""
        n = len(self.train_users)
        if n == 0:
            raise SamplingError("training set is empty")
        order = self.rng.permutation(n)
        users = self.train_users[order]
        positives = self.train_items[order]
        repeated = np.repeat(users, negatives_per_positive)
        negatives = self.sample_item_negatives(repeated).reshape(n, negatives_per_positive)
        return TripletBatch(users, positives, negatives)
