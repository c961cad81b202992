"""Euclidean and Poincaré latent spaces over a shared parameter domain.

Embeddings are stored unconstrained: plain coordinates for Euclidean space and
tangent vectors at the origin for the ball. :func:`materialize` turns stored
rows into points of the chosen space, so one optimizer serves both.
"""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
import torch.nn.functional as F

from hyperrec.data_models import SpaceKind, SpaceTag
from hyperrec.errors import CheckpointError, DimensionError
from hyperrec.geometry import (
    as_tensor,
    exp_map_origin,
    hyperbolic_inner,
    poincare_distance,
    project_into_ball,
)

logger = logging.getLogger(__name__)

MAGIC = b'HREC1'
HEADER_DTYPE = np.dtype([
    ('magic', 'S5'),
    ('space', 'u1'),
    ('curvature', '<f8'),
    ('rows', '<u8'),
    ('dim', '<u8'),
    ('has_bias', 'u1'),
])
SPACE_CODES = {SpaceTag.EUCLIDEAN: 0, SpaceTag.POINCARE: 1}


class EmbeddingTable:
    """
    Per-entity parameter rows plus an optional per-entity scalar bias.

    The bias is kept as a ``rows x 1`` matrix so it flows through the same
    sparse row lookups and optimizer updates as the embeddings.
    """

    def __init__(self, weight: torch.Tensor, bias: Optional[torch.Tensor] = None, name: str = 'table'):
        weight = as_tensor(weight).detach().clone()
        if weight.dim() != 2 or weight.shape[0] < 1 or weight.shape[1] < 1:
            raise DimensionError(f"embedding table needs rows >= 1 and dim >= 1, got {tuple(weight.shape)}")
        if not torch.isfinite(weight).all():
            raise ValueError(f"table '{name}' has non-finite entries")
        self.name = name
        self.weight = weight.requires_grad_(True)
        self.bias = None
        if bias is not None:
            bias = as_tensor(bias).detach().clone().reshape(-1, 1)
            if bias.shape[0] != weight.shape[0]:
                raise DimensionError(f"bias length {bias.shape[0]} does not match rows {weight.shape[0]}")
            self.bias = bias.requires_grad_(True)

    @property
    def rows(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def biases(self) -> Optional[torch.Tensor]:
        return None if self.bias is None else self.bias.detach()[:, 0]

    def parameters(self) -> list[torch.Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def check_index(self, index: torch.Tensor):
        if index.numel() and (int(index.min()) < 0 or int(index.max()) >= self.rows):
            raise IndexError(f"row id out of range for table '{self.name}' with {self.rows} rows")

    def lookup(self, index) -> torch.Tensor:
        index = torch.as_tensor(index, dtype=torch.long)
        self.check_index(index)
        return F.embedding(index, self.weight, sparse=True)

    def lookup_bias(self, index) -> torch.Tensor:
        index = torch.as_tensor(index, dtype=torch.long)
        if self.bias is None:
            return torch.zeros(index.shape, dtype=torch.float64)
        self.check_index(index)
        return F.embedding(index, self.bias, sparse=True)[..., 0]

    def snapshot(self) -> list[torch.Tensor]:
        return [p.detach().clone() for p in self.parameters()]

    def restore(self, snapshot: list[torch.Tensor]):
        with torch.no_grad():
            for param, saved in zip(self.parameters(), snapshot):
                param.copy_(saved)


def init_embeddings(rows: int, dim: int, scale: float = 0.01, seed: int = 0,
                    with_bias: bool = False, name: str = 'table') -> EmbeddingTable:
    """Uniform initialization in ``[-scale, scale]``; biases start at zero."""
    if rows < 1 or dim < 1:
        raise DimensionError(f"embedding table needs rows >= 1 and dim >= 1, got {rows}x{dim}")
    if not scale > 0:
        raise ValueError(f"init scale must be positive, got {scale}")
    generator = torch.Generator().manual_seed(int(seed))
    weight = (torch.rand(rows, dim, generator=generator, dtype=torch.float64) * 2 - 1) * scale
    bias = torch.zeros(rows, dtype=torch.float64) if with_bias else None
    return EmbeddingTable(weight, bias, name=name)


def materialize_params(space: SpaceKind, params: torch.Tensor) -> torch.Tensor:
    """Map stored rows (any leading shape) to points of ``space``."""
    if not space.is_hyperbolic:
        return params
    return project_into_ball(exp_map_origin(params, space.curvature), space.curvature, space.max_hyp_norm)


def materialize(space: SpaceKind, table: EmbeddingTable, index: Union[int, torch.Tensor]) -> torch.Tensor:
    return materialize_params(space, table.lookup(index))


def _euclidean_distance(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    sq = (u - v).pow(2).sum(dim=-1)
    return torch.where(sq > 0, sq.clamp_min(1e-30).sqrt(), torch.zeros_like(sq))


def _check_dims(u: torch.Tensor, v: torch.Tensor):
    if u.dim() == 0 or v.dim() == 0 or u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"dimension mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")


def score_distance(space: SpaceKind, u, v) -> torch.Tensor:
    """Distance relation ``r_uv = d_uv`` between materialized points."""
    u, v = as_tensor(u), as_tensor(v)
    _check_dims(u, v)
    if space.is_hyperbolic:
        return poincare_distance(u, v, space.curvature, validate=False)
    return _euclidean_distance(u, v)


def score_projection(space: SpaceKind, u, v, b=0.0) -> torch.Tensor:
    """Projection relation ``r_uv = <u, v> + b`` between materialized points."""
    u, v = as_tensor(u), as_tensor(v)
    _check_dims(u, v)
    if space.is_hyperbolic:
        return hyperbolic_inner(u, v, space.curvature, validate=False) + b
    return (u * v).sum(dim=-1) + b


def row_norm_cap(space: SpaceKind) -> Optional[float]:
    """
    Largest stored-row norm allowed after an optimizer step, or None.

    The hyperbolic norm of ``exp_o(t)`` is ``2 ||t||`` for every curvature, so
    the tangent cap is half the hyperbolic one.
    """
    if space.is_hyperbolic:
        return space.max_hyp_norm / 2
    return space.max_norm


def save_table(table: EmbeddingTable, space: SpaceKind, path):
    path = Path(path)
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header['magic'] = MAGIC
    header['space'] = SPACE_CODES[space.tag]
    header['curvature'] = space.curvature or 0.0
    header['rows'] = table.rows
    header['dim'] = table.dim
    header['has_bias'] = int(table.bias is not None)
    with open(path, 'wb') as outp:
        outp.write(header.tobytes())
        outp.write(table.weight.detach().numpy().astype('<f8').tobytes())
        if table.bias is not None:
            outp.write(table.biases.numpy().astype('<f8').tobytes())
    logger.debug("Saved table '%s' (%dx%d) to %s", table.name, table.rows, table.dim, path)


def load_table(path, name: str = 'table') -> tuple[EmbeddingTable, SpaceTag, float]:
    """Read a table written by :func:`save_table`; returns ``(table, space tag, curvature)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < HEADER_DTYPE.itemsize:
        raise CheckpointError(f"{path} is too short to be a table checkpoint")
    header = np.frombuffer(raw[:HEADER_DTYPE.itemsize], dtype=HEADER_DTYPE)[0]
    if header['magic'] != MAGIC:
        raise CheckpointError(f"{path} is not a table checkpoint (bad magic)")
    codes = {code: tag for tag, code in SPACE_CODES.items()}
    if int(header['space']) not in codes:
        raise CheckpointError(f"{path} has unknown space code {int(header['space'])}")
    rows, dim, has_bias = int(header['rows']), int(header['dim']), bool(header['has_bias'])
    expected = HEADER_DTYPE.itemsize + 8 * (rows * dim + (rows if has_bias else 0))
    if len(raw) != expected:
        raise CheckpointError(f"{path} has {len(raw)} bytes, expected {expected}")
    body = np.frombuffer(raw[HEADER_DTYPE.itemsize:], dtype='<f8')
    weight = torch.from_numpy(body[:rows * dim].reshape(rows, dim).copy())
    bias = torch.from_numpy(body[rows * dim:].copy()) if has_bias else None
    return EmbeddingTable(weight, bias, name=name), codes[int(header['space'])], float(header['curvature'])
