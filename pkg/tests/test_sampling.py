import numpy as np
import pytest
from scipy import stats

from conftest import make_frame
from hyperrec.errors import SamplingError
from hyperrec.sampling import TripletSampler


def sampler_for(rows, n_users, n_items, neighbors=None, seed=0):
    return TripletSampler(n_users, n_items, make_frame(rows), neighbors, seed=seed)


class TestItemNegatives:

    def test_negative_never_positive(self):
        sampler = sampler_for([(0, 42, 1.0, 0)], 1, 100)
        negatives = sampler.sample_item_negatives(np.zeros(10_000, dtype=np.int64))
        assert not (negatives == 42).any()
        assert negatives.min() >= 0 and negatives.max() < 100

    def test_uniform_over_complement(self):
        sampler = sampler_for([(0, 3, 1.0, 0)], 1, 10, seed=7)
        negatives = sampler.sample_item_negatives(np.zeros(100_000, dtype=np.int64))
        counts = np.bincount(negatives, minlength=10)
        assert counts[3] == 0
        _, p_value = stats.chisquare(np.delete(counts, 3))
        assert p_value > 0.01

    def test_user_with_every_item(self):
        sampler = sampler_for([(0, 0, 1.0, 0), (0, 1, 1.0, 0), (0, 2, 1.0, 0), (1, 0, 1.0, 0)], 2, 3)
        with pytest.raises(SamplingError):
            sampler.sample_bpr_triplet(0)
        assert sampler.sample_bpr_triplet(1).negative in (1, 2)

    def test_bpr_triplet(self):
        sampler = sampler_for([(0, 1, 1.0, 0), (0, 4, 1.0, 0)], 1, 6)
        for _ in range(50):
            triplet = sampler.sample_bpr_triplet(0)
            assert triplet.positive in (1, 4)
            assert triplet.negative not in (1, 4)

    def test_epoch_covers_every_positive(self, small_dataset, small_split):
        sampler = TripletSampler(small_dataset.n_users, small_dataset.n_items, small_split.train, seed=1)
        batch = sampler.epoch_triplets(3)
        assert batch.negatives.shape == (len(small_split.train), 3)
        assert sorted(zip(batch.users, batch.positives)) == sorted(
            zip(small_split.train['user'], small_split.train['item']))
        positives = set(zip(small_split.train['user'], small_split.train['item']))
        for user, row in zip(batch.users, batch.negatives):
            assert all((user, item) not in positives for item in row)

    def test_seeded(self, small_dataset, small_split):
        def draw():
            return TripletSampler(small_dataset.n_users, small_dataset.n_items, small_split.train,
                                  seed=5).epoch_triplets(2)

        a, b = draw(), draw()
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestSocialSampling:

    def neighbors(self):
        return [np.array([1]), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.array([0, 2])]

    def test_no_neighbors_is_skipped(self):
        sampler = sampler_for([(0, 0, 1.0, 0)], 4, 2, self.neighbors())
        assert sampler.sample_social_pair(1) is None

    def test_social_pair(self):
        sampler = sampler_for([(0, 0, 1.0, 0)], 4, 2, self.neighbors())
        for _ in range(50):
            positive, negative = sampler.sample_social_pair(0)
            assert positive == 1
            assert negative in (2, 3)

    def test_social_triplets_only_for_users_with_neighbors(self):
        sampler = sampler_for([(0, 0, 1.0, 0)], 4, 2, self.neighbors())
        batch = sampler.social_triplets(np.array([0, 1, 2, 3, 1]))
        assert batch.users.tolist() == [0, 3]
        assert batch.positives[0] == 1 and batch.positives[1] in (0, 2)
        assert batch.negatives[1, 0] == 1

    def test_social_triplets_once_per_user(self):
        sampler = sampler_for([(0, 0, 1.0, 0)], 4, 2, self.neighbors())
        batch = sampler.social_triplets(np.array([3, 0, 3, 3, 0]))
        assert batch.users.tolist() == [0, 3]
        assert batch.negatives.shape == (2, 1)

    def test_without_graph(self):
        sampler = sampler_for([(0, 0, 1.0, 0)], 2, 2)
        assert sampler.sample_social_pair(0) is None
        assert len(sampler.social_triplets(np.array([0, 1])).users) == 0

    def test_user_trusting_everyone(self):
        sampler = sampler_for([(0, 0, 1.0, 0)], 3, 2, [np.array([1, 2]), np.array([0]), np.empty(0)])
        with pytest.raises(SamplingError):
            sampler.sample_social_pair(0)
