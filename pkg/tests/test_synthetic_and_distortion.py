import networkx as nx
import numpy as np
import pandas as pd
import pytest

from hyperrec.data_models import SpaceKind
from hyperrec.distortion import TreeEmbedder, distortion, graph_distances, tree_graph
from hyperrec.synthetic import HierarchicalGenerator, SyntheticConfig, generate_dataset


class TestHierarchicalGenerator:

    def config(self, **fields):
        return SyntheticConfig(**dict(dict(n_users=200, n_items=150, seed=0), **fields))

    def test_deterministic(self):
        a = generate_dataset(self.config()).interactions
        b = generate_dataset(self.config()).interactions
        pd.testing.assert_frame_equal(a, b)

    def test_minimum_activity(self):
        dataset = generate_dataset(self.config(min_interactions=4))
        assert dataset.n_users == 200
        assert min(len(items) for items in dataset.by_user) >= 4

    def test_activity_is_skewed(self):
        counts = HierarchicalGenerator(self.config(n_users=2000, n_items=1000)).activity()
        assert counts.min() >= 3 and counts.max() <= 200
        assert np.mean(counts) > np.median(counts)

    def test_interactions_stay_local(self):
        generator = HierarchicalGenerator(self.config())
        frame = generator.interactions()
        same_leaf = generator.user_leaf[frame['user']] == generator.item_leaf[frame['item']]
        assert same_leaf.mean() > 10 / generator.n_leaves

    def test_trust_edges_within_category(self):
        generator = HierarchicalGenerator(self.config(social_degree=2))
        edges = generator.trust_edges()
        assert (edges['truster'] != edges['trustee']).all()
        assert (generator.user_leaf[edges['truster']] == generator.user_leaf[edges['trustee']]).all()
        assert generate_dataset(self.config(social_degree=2)).has_social

    def test_no_trust_edges_by_default(self):
        assert not generate_dataset(self.config()).has_social


class TestDistortion:

    def test_distortion_values(self):
        assert distortion([2.0, 2.0], [1.0, 1.0]) == (1.0, 1.0)
        mean, worst = distortion([1.0, 2.0], [1.0, 1.0])
        assert (mean, worst) == (0.5, 2.0)

    def test_tree_distances(self):
        graph = tree_graph(4)
        assert graph.number_of_nodes() == 31
        left, right, targets = graph_distances(graph)
        assert len(targets) == 31 * 30 // 2
        assert (left < right).all()
        assert targets.max() == 8 and targets.min() == 1
        assert graph_distances(nx.path_graph(3), tau=0.5)[2].tolist() == [0.5, 1.0, 0.5]

    @pytest.mark.parametrize('space', [SpaceKind.euclidean(), SpaceKind.poincare()])
    def test_embedder_reduces_loss(self, space):
        embedder = TreeEmbedder(tree_graph(2), space, steps=200, seed=1)
        initial = float(embedder.loss())
        result = embedder.fit()
        assert result.final_loss < initial
        assert result.space == space.tag.value and result.dim == 2
