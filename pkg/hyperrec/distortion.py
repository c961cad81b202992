"""Embedding a tree metric in a latent space and measuring its distortion."""
import logging
from typing import Iterable

import networkx as nx
import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel

from hyperrec.data_models import SpaceKind
from hyperrec.optim import LazyAdam
from hyperrec.spaces import init_embeddings, materialize_params, score_distance

logger = logging.getLogger(__name__)


class DistortionResult(BaseModel):
    space: str
    seed: int
    dim: int
    mean_distortion: float
    worst_distortion: float
    final_loss: float


def tree_graph(depth: int = 4, branching: int = 2) -> nx.Graph:
    """Complete ``branching``-ary tree; depth 4 binary gives 31 nodes."""
    return nx.balanced_tree(branching, depth)


def graph_distances(graph: nx.Graph, tau: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Node pairs ``i < j`` and their shortest-path lengths scaled by ``tau``."""
    nodes = sorted(graph.nodes)
    position = {node: i for i, node in enumerate(nodes)}
    lengths = dict(nx.all_pairs_shortest_path_length(graph))
    left, right, targets = [], [], []
    for a in nodes:
        for b in nodes:
            if position[a] < position[b]:
                left.append(position[a])
                right.append(position[b])
                targets.append(lengths[a][b])
    return (np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            tau * np.array(targets, dtype=np.float64))


def distortion(embedded, targets) -> tuple[float, float]:
    """
    Mean relative distortion ``mean |d_emb / d_G - 1|`` and worst-case
    distortion ``max(d_emb / d_G) * max(d_G / d_emb)`` over node pairs.
    """
    embedded = np.asarray(embedded, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    ratio = embedded / targets
    mean = float(np.abs(ratio - 1).mean())
    worst = float(ratio.max() / max(ratio.min(), 1e-300))
    return mean, worst


class TreeEmbedder:
    """
    Fits node embeddings whose pairwise distances match graph distances,
    minimizing the squared relative error with the recommender optimizer.
    """

    def __init__(self, graph: nx.Graph, space: SpaceKind, dim: int = 2, lr: float = 0.05,
                 steps: int = 1500, seed: int = 0, init_scale: float = 0.1, tau: float = 1.0):
        self.graph = graph
        self.space = space
        self.dim = dim
        self.steps = steps
        self.seed = seed
        self.left, self.right, targets = graph_distances(graph, tau)
        self.targets = torch.from_numpy(targets)
        self.table = init_embeddings(graph.number_of_nodes(), dim, init_scale, seed, name='nodes')
        self.optimizer = LazyAdam([self.table], space, lr=lr)

    def pair_distances(self) -> torch.Tensor:
        points = materialize_params(self.space, self.table.lookup(torch.arange(self.table.rows)))
        return score_distance(self.space, points[self.left], points[self.right])

    def loss(self) -> torch.Tensor:
        return (self.pair_distances() / self.targets - 1).pow(2).mean()

    def fit(self) -> DistortionResult:
        loss = None
        for _ in range(self.steps):
            self.optimizer.zero_grad()
            loss = self.loss()
            loss.backward()
            self.optimizer.step()
        with torch.no_grad():
            final = float(self.loss())
            mean, worst = distortion(self.pair_distances().numpy(), self.targets.numpy())
        logger.info("Tree embedding in %s (d=%d, seed %d): mean distortion %.4f, worst %.3f",
                    self.space.tag.value, self.dim, self.seed, mean, worst)
        return DistortionResult(space=self.space.tag.value, seed=self.seed, dim=self.dim,
                                mean_distortion=mean, worst_distortion=worst, final_loss=final)


def compare_tree_distortion(seeds: Iterable[int] = range(5), depth: int = 4, dim: int = 2,
                            steps: int = 1500, lr: float = 0.05, curvature: float = 1.0) -> pd.DataFrame:
    """Embed the same tree in both spaces for every seed; one row per (space, seed)."""
    graph = tree_graph(depth)
    rows = []
    for seed in seeds:
        for space in (SpaceKind.euclidean(), SpaceKind.poincare(curvature)):
            result = TreeEmbedder(graph, space, dim=dim, lr=lr, steps=steps, seed=seed).fit()
            rows.append(result.model_dump())
    return pd.DataFrame(rows)
