import logging
from typing import Optional

import torch

from hyperrec.data_models import SpaceKind
from hyperrec.errors import NonFiniteGradientError
from hyperrec.geometry import MIN_NORM
from hyperrec.spaces import EmbeddingTable, row_norm_cap

logger = logging.getLogger(__name__)


def post_step_project(space: SpaceKind, table: EmbeddingTable, rows: Optional[torch.Tensor] = None) -> EmbeddingTable:
    """
    Clip the stored norm of ``rows`` (all rows when None) to the space's cap.

    For the ball the cap is on the tangent norm, which keeps the materialized
    hyperbolic norm within ``max_hyp_norm``. Euclidean space without
    ``max_norm`` is left untouched.
    """
    cap = row_norm_cap(space)
    if cap is None:
        return table
    with torch.no_grad():
        weight = table.weight
        if rows is None:
            rows = torch.arange(table.rows)
        selected = weight[rows]
        norms = selected.norm(dim=-1, keepdim=True)
        weight[rows] = selected * (cap / norms.clamp_min(MIN_NORM)).clamp_max(1.0)
    return table


class LazyAdam(torch.optim.Optimizer):
    r"""
    Adam over embedding tables with sparse row gradients.

    Only rows present in a gradient are updated, and only their moments
    advance; bias correction uses the global step count. Dense gradients are
    treated as touching every row. After each step the touched rows are
    projected back under the space's norm cap.

    Parameters
    ----------
    tables : list of EmbeddingTable
        tables whose weights (and biases) are optimized
    space : SpaceKind
        space the tables are materialized in
    lr : float
        learning rate (default: 1e-3)
    betas : Tuple[float, float]
        coefficients of the running averages (default: (0.9, 0.999))
    eps : float
        term added to the denominator (default: 1e-8)
    clip_grad_norm : float (optional)
        cap on the global gradient norm of a step (default: no clipping)
    """

    def __init__(self, tables, space: SpaceKind, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip_grad_norm=None):
        if not lr > 0:
            raise ValueError(f"Invalid learning rate: {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"Invalid betas: {betas}")
        self.tables = list(tables)
        self.space = space
        self.clip_grad_norm = clip_grad_norm
        self.step_count = 0
        self._owners = {}
        params = []
        for table in self.tables:
            for suffix, param in zip(('', '.bias'), table.parameters()):
                self._owners[param] = (table, table.name + suffix)
                params.append(param)
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps))

    def _row_gradients(self):
        grads = []
        for group in self.param_groups:
            for param in group['params']:
                if param.grad is None:
                    continue
                grad = param.grad
                if grad.is_sparse:
                    grad = grad.coalesce()
                    rows, values = grad.indices()[0], grad.values()
                else:
                    rows, values = torch.arange(param.shape[0]), grad
                bad = ~torch.isfinite(values).reshape(values.shape[0], -1).all(dim=1)
                if bad.any():
                    raise NonFiniteGradientError(self._owners[param][1], int(rows[bad][0]))
                grads.append((group, param, rows, values))
        return grads

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        grads = self._row_gradients()
        if self.clip_grad_norm is not None and grads:
            total = torch.sqrt(sum(values.pow(2).sum() for _, _, _, values in grads))
            if total > self.clip_grad_norm:
                scale = self.clip_grad_norm / total
                grads = [(group, param, rows, values * scale) for group, param, rows, values in grads]
                logger.debug("Clipped gradient norm %.4g to %.4g", float(total), self.clip_grad_norm)

        self.step_count += 1
        touched = {}
        for group, param, rows, grad in grads:
            beta1, beta2 = group['betas']
            state = self.state[param]
            if len(state) == 0:
                state['exp_avg'] = torch.zeros_like(param)
                state['exp_avg_sq'] = torch.zeros_like(param)
            exp_avg = state['exp_avg'][rows].mul_(beta1).add_(grad, alpha=1 - beta1)
            exp_avg_sq = state['exp_avg_sq'][rows].mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
            state['exp_avg'][rows] = exp_avg
            state['exp_avg_sq'][rows] = exp_avg_sq
            bias_correction1 = 1 - beta1 ** self.step_count
            bias_correction2 = 1 - beta2 ** self.step_count
            denom = (exp_avg_sq / bias_correction2).sqrt_().add_(group['eps'])
            param[rows] -= group['lr'] * (exp_avg / bias_correction1) / denom

            table, _ = self._owners[param]
            if param is table.weight:
                touched[id(table)] = (table, rows)

        for table, rows in touched.values():
            post_step_project(self.space, table, rows)
        return loss
