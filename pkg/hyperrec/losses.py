import torch
import torch.nn.functional as F

from hyperrec.data_models import SpaceKind
from hyperrec.sampling import TripletBatch
from hyperrec.spaces import EmbeddingTable, materialize, score_distance


def bpr_loss(pos_score, neg_score) -> torch.Tensor:
    """``-ln sigmoid(pos - neg)``, computed as a softplus for stability."""
    return F.softplus(torch.as_tensor(neg_score, dtype=torch.float64) - pos_score)


def hinge_triplet_loss(d_pos, d_neg, margin: float) -> torch.Tensor:
    """``[margin + d_pos^2 - d_neg^2]_+`` on raw (unsquared) distances."""
    d_pos = torch.as_tensor(d_pos, dtype=torch.float64)
    return torch.relu(margin + d_pos.pow(2) - torch.as_tensor(d_neg, dtype=torch.float64).pow(2))


def mf_rating_loss(pred, observed) -> torch.Tensor:
    return (torch.as_tensor(pred, dtype=torch.float64) - observed).pow(2)


def rank_weights(hinges: torch.Tensor, n_items: int) -> torch.Tensor:
    """
    Per-positive weight ``log(1 + floor(n_items * M / N))`` where M of the N
    sampled negatives in each row of ``hinges`` violate the margin.
    """
    with torch.no_grad():
        violations = (hinges > 0).sum(dim=-1, dtype=torch.float64)
        return torch.log1p(torch.floor(n_items * violations / hinges.shape[-1]))


def triplet_hinges(space: SpaceKind, anchors: EmbeddingTable, targets: EmbeddingTable,
                   batch: TripletBatch, margin: float) -> torch.Tensor:
    """Hinge terms of shape ``(n_positives, negatives_per_positive)``."""
    u = materialize(space, anchors, torch.as_tensor(batch.users))
    p = materialize(space, targets, torch.as_tensor(batch.positives))
    n = materialize(space, targets, torch.as_tensor(batch.negatives))
    d_pos = score_distance(space, u, p)
    d_neg = score_distance(space, u.unsqueeze(1), n)
    return hinge_triplet_loss(d_pos.unsqueeze(1), d_neg, margin)


def scml_loss(space: SpaceKind, users: EmbeddingTable, items: EmbeddingTable,
              item_triplets: TripletBatch, social_triplets: TripletBatch,
              social_weight: float, margin_item: float, margin_social: float,
              rank_weighting: bool = False) -> torch.Tensor:
    """
    ``L_item + lambda * L_so``: summed item-side hinges plus weighted summed
    social-side hinges. The social term is skipped entirely when lambda is 0
    or there are no social triplets, so no social rows receive gradients.
    CML is the same loss without the social term.
    """
    hinges = triplet_hinges(space, users, items, item_triplets, margin_item)
    if rank_weighting:
        hinges = hinges * rank_weights(hinges, items.rows).unsqueeze(1)
    loss = hinges.sum()
    if social_weight > 0 and len(social_triplets.users):
        social = triplet_hinges(space, users, users, social_triplets, margin_social)
        loss = loss + social_weight * social.sum()
    return loss
