"""Poincaré ball kernel.

Points are ``torch.float64`` tensors whose last dimension holds the
coordinates, so every function broadcasts over leading batch dimensions.
The ball of curvature ``-c`` is the open ball of radius ``1/sqrt(c)``;
tangent vectors at the origin are unconstrained.
"""
import math
from enum import Enum
from typing import Union

import torch
from pydantic import BaseModel, ConfigDict, model_validator

from hyperrec.errors import DimensionError, DomainError

MIN_NORM = 1e-15
ACOSH_EPS = 1e-15
ATANH_MAX = 1.0 - 1e-7
TANH_MAX_ARG = 15.0
DEFAULT_MAX_HYP_NORM = 6.0

# BallPoint and TangentVec are both plain tensors; the aliases document intent.
BallPoint = torch.Tensor
TangentVec = torch.Tensor
ArrayLike = Union[torch.Tensor, list, tuple, float]


class Activation(str, Enum):
    IDENTITY = 'identity'
    RELU = 'relu'
    SIGMOID = 'sigmoid'
    TANH = 'tanh'


ACTIVATIONS = {
    Activation.IDENTITY: lambda x: x,
    Activation.RELU: torch.relu,
    Activation.SIGMOID: torch.sigmoid,
    Activation.TANH: torch.tanh,
}


class HypLinearParams(BaseModel):
    """
    Weight and bias of a hyperbolic linear layer. Both live on the tangent
    space at the origin, so they are ordinary Euclidean tensors.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: torch.Tensor
    bias: torch.Tensor
    activation: Activation = Activation.IDENTITY

    @model_validator(mode='after')
    def check_shapes(self):
        if self.weight.dim() != 2:
            raise DimensionError(f"weight must be a matrix, got shape {tuple(self.weight.shape)}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"bias shape {tuple(self.bias.shape)} does not match weight rows {self.weight.shape[0]}"
            )
        if not (torch.isfinite(self.weight).all() and torch.isfinite(self.bias).all()):
            raise DomainError("hyperbolic linear parameters must be finite")
        return self


def as_tensor(x: ArrayLike) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == torch.float64 else x.to(torch.float64)
    return torch.as_tensor(x, dtype=torch.float64)


def check_curvature(c: float) -> float:
    c = float(c)
    if not math.isfinite(c) or c <= 0:
        raise DomainError(f"curvature parameter c must be positive and finite, got {c}")
    return c


def check_finite(x: torch.Tensor, what: str = 'input'):
    if not torch.isfinite(x).all():
        raise DomainError(f"{what} has non-finite coordinates")


def check_in_ball(x: torch.Tensor, c: float = 1.0, what: str = 'point'):
    """Raise unless every point satisfies ``c * ||x||^2 < 1``."""
    check_finite(x, what)
    if x.dim() == 0:
        raise DimensionError(f"{what} must be a vector, got a scalar")
    if (c * x.pow(2).sum(dim=-1) >= 1).any():
        raise DomainError(f"{what} lies on or outside the Poincaré ball of curvature -{c}")


def _check_same_dim(u: torch.Tensor, v: torch.Tensor):
    if u.dim() == 0 or v.dim() == 0 or u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"dimension mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")


def _arcosh1p(z: torch.Tensor) -> torch.Tensor:
    # arcosh(1 + z) written with log1p, which keeps precision for small z.
    zc = z.clamp_min(ACOSH_EPS)
    value = torch.log1p(zc + torch.sqrt(zc * (zc + 2)))
    return torch.where(z > 0, value, torch.zeros_like(value))


def poincare_distance(u: ArrayLike, v: ArrayLike, c: float = 1.0, validate: bool = True) -> torch.Tensor:
    """
    Geodesic distance between two points of the ball.

    The unit-curvature arcosh formula is applied to the coordinates scaled by
    ``sqrt(c)`` and the result divided by ``sqrt(c)``.
    """
    u, v = as_tensor(u), as_tensor(v)
    c = check_curvature(c)
    _check_same_dim(u, v)
    if validate:
        check_in_ball(u, c, 'u')
        check_in_ball(v, c, 'v')
    sq_diff = (u - v).pow(2).sum(dim=-1)
    denom = (1 - c * u.pow(2).sum(dim=-1)) * (1 - c * v.pow(2).sum(dim=-1))
    z = 2 * c * sq_diff / denom
    return _arcosh1p(z) / math.sqrt(c)


def hyperbolic_norm(u: ArrayLike, c: float = 1.0, validate: bool = True) -> torch.Tensor:
    """Distance from ``u`` to the origin."""
    u = as_tensor(u)
    return poincare_distance(u, torch.zeros_like(u), c, validate=validate)


def conformal_factor(x: ArrayLike, c: float = 1.0) -> torch.Tensor:
    """``lambda_x = 2 / (1 - c ||x||^2)``; equals 2 at the origin."""
    x = as_tensor(x)
    c = check_curvature(c)
    check_in_ball(x, c, 'x')
    return 2 / (1 - c * x.pow(2).sum(dim=-1))


def hyperbolic_inner(u: ArrayLike, v: ArrayLike, c: float = 1.0, validate: bool = True) -> torch.Tensor:
    """
    Inner product ``||u||_D * ||v||_D * cos(u, v)`` with the Euclidean angle,
    which the ball preserves because it is conformal. A zero argument gives 0.
    """
    u, v = as_tensor(u), as_tensor(v)
    _check_same_dim(u, v)
    norm_u = hyperbolic_norm(u, c, validate=validate)
    norm_v = hyperbolic_norm(v, c, validate=validate)
    cos = (u * v).sum(dim=-1) / (
        u.norm(dim=-1).clamp_min(MIN_NORM) * v.norm(dim=-1).clamp_min(MIN_NORM)
    )
    return norm_u * norm_v * cos


def exp_map_origin(t: ArrayLike, c: float = 1.0) -> BallPoint:
    """
    Map a tangent vector at the origin into the ball.

    The tanh argument is capped so the image stays strictly inside the ball
    even for very long tangent vectors.
    """
    t = as_tensor(t)
    c = check_curvature(c)
    check_finite(t, 'tangent vector')
    sqrt_c = math.sqrt(c)
    norm = t.norm(dim=-1, keepdim=True).clamp_min(MIN_NORM)
    return torch.tanh((sqrt_c * norm).clamp_max(TANH_MAX_ARG)) * t / (sqrt_c * norm)


def log_map_origin(u: ArrayLike, c: float = 1.0, validate: bool = True) -> TangentVec:
    """Inverse of :func:`exp_map_origin`."""
    u = as_tensor(u)
    c = check_curvature(c)
    if validate:
        check_in_ball(u, c, 'u')
    sqrt_c = math.sqrt(c)
    norm = u.norm(dim=-1, keepdim=True).clamp_min(MIN_NORM)
    return torch.atanh((sqrt_c * norm).clamp_max(ATANH_MAX)) * u / (sqrt_c * norm)


def max_ball_radius(c: float, max_hyp_norm: float) -> float:
    """Euclidean radius whose hyperbolic norm is ``max_hyp_norm``."""
    sqrt_c = math.sqrt(c)
    return math.tanh(min(sqrt_c * max_hyp_norm / 2, TANH_MAX_ARG)) / sqrt_c


def project_into_ball(x: ArrayLike, c: float = 1.0, max_hyp_norm: float = DEFAULT_MAX_HYP_NORM) -> BallPoint:
    """
    Rescale points radially so their hyperbolic norm is at most ``max_hyp_norm``.

    Points already within the cap are returned unchanged. Points on or beyond
    the boundary are treated as having infinite norm and pulled in.
    """
    x = as_tensor(x)
    c = check_curvature(c)
    check_finite(x, 'point')
    if not max_hyp_norm > 0:
        raise DomainError(f"max_hyp_norm must be positive, got {max_hyp_norm}")
    radius = x.norm(dim=-1, keepdim=True)
    scale = (max_ball_radius(c, max_hyp_norm) / radius.clamp_min(MIN_NORM)).clamp_max(1.0)
    return x * scale


def hyp_matvec(weight: ArrayLike, u: ArrayLike, c: float = 1.0) -> BallPoint:
    """Hyperbolic weight multiplication ``exp_o(W log_o(u))``."""
    weight, u = as_tensor(weight), as_tensor(u)
    if weight.dim() != 2 or u.dim() == 0 or weight.shape[1] != u.shape[-1]:
        raise DimensionError(f"cannot multiply weight {tuple(weight.shape)} with point {tuple(u.shape)}")
    return exp_map_origin(log_map_origin(u, c) @ weight.T, c)


def hyp_bias_add(u: ArrayLike, b: ArrayLike, c: float = 1.0) -> BallPoint:
    """Hyperbolic bias addition ``exp_o(log_o(u) + b)``."""
    u, b = as_tensor(u), as_tensor(b)
    _check_same_dim(u, b)
    check_finite(b, 'bias')
    return exp_map_origin(log_map_origin(u, c) + b, c)


def hyp_linear(params: HypLinearParams, u: ArrayLike, c: float = 1.0) -> BallPoint:
    """
    Hyperbolic linear layer ``exp_o(sigma(log_o((W (x) u) (+) b)))``.

    ``log_o`` of ``(W (x) u) (+) b`` is ``W log_o(u) + b`` exactly, so the
    layer makes a single round trip through the tangent space.
    """
    u = as_tensor(u)
    if u.dim() == 0 or params.weight.shape[1] != u.shape[-1]:
        raise DimensionError(
            f"cannot apply layer with weight {tuple(params.weight.shape)} to point {tuple(u.shape)}"
        )
    tangent = log_map_origin(u, c) @ as_tensor(params.weight).T + as_tensor(params.bias)
    return exp_map_origin(ACTIVATIONS[params.activation](tangent), c)
