import numpy as np
import pandas as pd
import pytest

from hyperrec.data_loader import build_dataset, leave_one_out_split
from hyperrec.data_models import ModelConfig, ModelKind, SpaceKind
from hyperrec.models import LatentRecommender


def make_frame(rows) -> pd.DataFrame:
    """Interaction frame from ``(user, item, rating, timestamp)`` tuples; lines follow row order."""
    frame = pd.DataFrame(rows, columns=['user', 'item', 'rating', 'timestamp'])
    frame['line'] = np.arange(1, len(frame) + 1)
    return frame


def random_interactions(n_users, n_items, per_user=(3, 8), seed=0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    rows = []
    for user in range(n_users):
        count = int(rng.integers(per_user[0], per_user[1] + 1))
        items = rng.choice(n_items, size=min(count, n_items), replace=False)
        for t, item in enumerate(items, 1):
            rows.append((user, int(item), float(rng.integers(1, 6)), t))
    # make sure every item occurs so the reindex keeps n_items
    for item in range(n_items):
        rows.append((item % n_users, item, 3.0, 0))
    return make_frame(rows)


@pytest.fixture
def make_dataset():
    def factory(n_users=10, n_items=20, seed=0, per_user=(3, 8), edges=None):
        return build_dataset(random_interactions(n_users, n_items, per_user, seed), edges, name='fixture')
    return factory


@pytest.fixture
def small_dataset(make_dataset):
    return make_dataset(10, 20)


@pytest.fixture
def small_split(small_dataset):
    return leave_one_out_split(small_dataset)


@pytest.fixture
def make_model():
    def factory(model=ModelKind.CML, space=None, n_users=10, n_items=20, dim=4, seed=0, **fields):
        config = ModelConfig(model=model, space=space or SpaceKind.euclidean(), dim=dim, seed=seed,
                             init_scale=0.5, **fields)
        return LatentRecommender(config, n_users, n_items)
    return factory


def brute_force_report(model, dataset, split, ks, target='test'):
    """Quadratic-time reference: sort every candidate list with ``sorted`` and read off the hits."""
    scores = model.score_all(np.arange(dataset.n_users)).numpy()
    held = split.test if target == 'test' else split.validation
    excluded_parts = [split.train, split.validation] if target == 'test' else [split.train]
    hr = {k: 0.0 for k in ks}
    ndcg = {k: 0.0 for k in ks}
    users = sorted(set(held['user']))
    for user in users:
        relevant = set(held.loc[held['user'] == user, 'item'])
        excluded = set()
        for part in excluded_parts:
            excluded |= set(part.loc[part['user'] == user, 'item'])
        excluded -= relevant
        candidates = [i for i in range(dataset.n_items) if i not in excluded]
        if model.is_distance:
            ranked = sorted(candidates, key=lambda i: (scores[user, i], i))
        else:
            ranked = sorted(candidates, key=lambda i: (-scores[user, i], i))
        for k in ks:
            top = ranked[:k]
            hits = [pos for pos, item in enumerate(top, 1) if item in relevant]
            hr[k] += 1.0 if hits else 0.0
            dcg = sum(1.0 / np.log2(pos + 1) for pos in hits)
            idcg = sum(1.0 / np.log2(pos + 1) for pos in range(1, min(len(relevant), k) + 1))
            ndcg[k] += dcg / idcg
    return {k: v / len(users) for k, v in hr.items()}, {k: v / len(users) for k, v in ndcg.items()}
