import math

import numpy as np
import pytest
import torch

from hyperrec.data_models import SpaceKind
from hyperrec.errors import NonFiniteGradientError
from hyperrec.geometry import hyperbolic_norm
from hyperrec.optim import LazyAdam, post_step_project
from hyperrec.spaces import EmbeddingTable, init_embeddings, materialize_params

EUCLIDEAN = SpaceKind.euclidean()
POINCARE = SpaceKind.poincare(1.0, 6.0)


def reference_adam(theta, grads, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        theta -= lr * (m / (1 - beta1 ** t)) / (math.sqrt(v / (1 - beta2 ** t)) + eps)
    return theta


class TestLazyAdam:

    def test_zero_gradient_leaves_table(self):
        table = init_embeddings(3, 2, 0.5, seed=0)
        before = table.weight.detach().clone()
        opt = LazyAdam([table], EUCLIDEAN, lr=0.1)
        table.weight.grad = torch.zeros_like(table.weight)
        opt.step()
        assert torch.equal(table.weight.detach(), before)
        assert opt.step_count == 1

    def test_unit_first_step(self):
        table = EmbeddingTable(torch.tensor([[0.0]]))
        opt = LazyAdam([table], EUCLIDEAN, lr=0.01)
        table.weight.grad = torch.ones_like(table.weight)
        opt.step()
        np.testing.assert_allclose(float(table.weight), -0.01, rtol=1e-6)

    def test_matches_reference(self):
        table = EmbeddingTable(torch.tensor([[0.5]]))
        opt = LazyAdam([table], EUCLIDEAN, lr=0.01)
        for _ in range(2):
            table.weight.grad = torch.full_like(table.weight, 0.3)
            opt.step()
        np.testing.assert_allclose(float(table.weight), reference_adam(0.5, [0.3, 0.3]), atol=1e-12)

    def test_sparse_rows_only(self):
        table = init_embeddings(5, 2, 0.5, seed=1)
        before = table.weight.detach().clone()
        opt = LazyAdam([table], EUCLIDEAN, lr=0.1)
        table.lookup(torch.tensor([1, 3, 3])).sum().backward()
        assert table.weight.grad.is_sparse
        opt.step()
        changed = (table.weight.detach() != before).any(dim=1)
        assert changed.tolist() == [False, True, False, True, False]
        exp_avg = opt.state[table.weight]['exp_avg']
        assert float(exp_avg[[0, 2, 4]].abs().max()) == 0.0

    def test_lazy_moments_use_global_step(self):
        table = EmbeddingTable(torch.zeros(2, 1))
        opt = LazyAdam([table], EUCLIDEAN, lr=0.01)
        table.lookup(torch.tensor([0])).sum().backward()
        opt.step()
        opt.zero_grad()
        table.lookup(torch.tensor([1])).sum().backward()
        opt.step()
        # row 1 has a single moment update but is bias-corrected with t=2
        m = 0.1 / (1 - 0.9 ** 2)
        v = 0.001 / (1 - 0.999 ** 2)
        np.testing.assert_allclose(float(table.weight[1]), -0.01 * m / (math.sqrt(v) + 1e-8), atol=1e-12)

    def test_non_finite_gradient_rejected(self):
        table = init_embeddings(4, 2, 0.5, seed=2, name='users')
        before = table.weight.detach().clone()
        opt = LazyAdam([table], EUCLIDEAN, lr=0.1)
        grad = torch.zeros_like(table.weight)
        grad[2, 1] = float('nan')
        table.weight.grad = grad
        with pytest.raises(NonFiniteGradientError) as info:
            opt.step()
        assert info.value.table == 'users' and info.value.row == 2
        assert torch.equal(table.weight.detach(), before)
        assert opt.step_count == 0

    def test_gradient_clipping(self):
        table = EmbeddingTable(torch.zeros(1, 2))
        opt = LazyAdam([table], EUCLIDEAN, lr=0.01, clip_grad_norm=1.0)
        table.weight.grad = torch.tensor([[30.0, 40.0]], dtype=torch.float64)
        opt.step()
        # Adam's first step is scale free, so clipping keeps the direction and step size
        np.testing.assert_allclose(table.weight.detach().numpy(), [[-0.01, -0.01]], rtol=1e-5)

    def test_deterministic(self):
        def trajectory():
            table = init_embeddings(6, 3, 0.3, seed=5)
            opt = LazyAdam([table], POINCARE, lr=0.05)
            target = torch.ones(6, 3, dtype=torch.float64) * 0.2
            for step in range(30):
                opt.zero_grad()
                rows = torch.tensor([step % 6, (step * 2) % 6])
                (materialize_params(POINCARE, table.lookup(rows)) - target[rows]).pow(2).sum().backward()
                opt.step()
            return table.weight.detach().clone()

        assert torch.equal(trajectory(), trajectory())

    def test_converges_on_quadratic(self):
        theta_star = torch.tensor([[1.0, -2.0, 0.5]], dtype=torch.float64)
        table = EmbeddingTable(torch.zeros(1, 3))
        opt = LazyAdam([table], EUCLIDEAN, lr=0.01)
        losses = []
        for _ in range(5000):
            opt.zero_grad()
            loss = (table.weight - theta_star).pow(2).sum()
            loss.backward()
            opt.step()
            losses.append(float(loss))
        # converged coordinates stall at float resolution, so equal steps are allowed
        assert np.all(np.diff(losses[10:]) <= 1e-12)
        assert np.all(np.diff(losses[10:100]) < 0)
        assert float((table.weight - theta_star).pow(2).sum()) < 1e-6

    def test_invalid_hyperparameters(self):
        table = init_embeddings(2, 2)
        with pytest.raises(ValueError):
            LazyAdam([table], EUCLIDEAN, lr=0.0)
        with pytest.raises(ValueError):
            LazyAdam([table], EUCLIDEAN, betas=(1.0, 0.999))


class TestPostStepProject:

    def test_euclidean_identity(self):
        table = EmbeddingTable(torch.tensor([[30.0, 40.0]]))
        post_step_project(EUCLIDEAN, table)
        assert torch.equal(table.weight.detach(), torch.tensor([[30.0, 40.0]], dtype=torch.float64))

    def test_euclidean_max_norm(self):
        table = EmbeddingTable(torch.tensor([[3.0, 4.0], [0.1, 0.0]]))
        post_step_project(SpaceKind.euclidean(max_norm=1.0), table)
        np.testing.assert_allclose(table.weight.detach().numpy(), [[0.6, 0.8], [0.1, 0.0]], atol=1e-12)

    def test_tangent_norm_clipped_to_half_cap(self):
        table = EmbeddingTable(torch.tensor([[10.0, 0.0], [1.0, 1.0]]))
        post_step_project(POINCARE, table, torch.tensor([0]))
        np.testing.assert_allclose(table.weight.detach().numpy(), [[3.0, 0.0], [1.0, 1.0]], atol=1e-12)
        point = materialize_params(POINCARE, table.weight.detach()[0])
        np.testing.assert_allclose(float(hyperbolic_norm(point)), 6.0, atol=1e-6)

    @pytest.mark.parametrize('c', [0.25, 1.0, 4.0])
    def test_clipped_rows_respect_cap_for_any_curvature(self, c):
        space = SpaceKind.poincare(c, 6.0)
        table = EmbeddingTable(torch.from_numpy(np.random.default_rng(0).normal(scale=20, size=(50, 4))))
        post_step_project(space, table)
        norms = hyperbolic_norm(materialize_params(space, table.weight.detach()), c)
        assert float(norms.max()) <= 6.0 + 1e-6

    def test_optimizer_projects_touched_rows(self):
        table = EmbeddingTable(torch.tensor([[2.9, 0.0], [0.0, 0.0]]))
        opt = LazyAdam([table], POINCARE, lr=1.0)
        (-table.lookup(torch.tensor([0])).sum()).backward()
        opt.step()
        assert float(table.weight[0].norm()) <= 3.0 + 1e-12
