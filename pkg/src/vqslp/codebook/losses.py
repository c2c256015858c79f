from __future__ import annotations

import torch
import torch.nn.functional as F


def codebook_loss(pred_poses, true_poses, pred_counters, true_counters, alpha: float) -> torch.Tensor:
    """Reconstruction plus weighted counter regression, averaged over frames.

    Poses are (B, U, ...) and counters (B, U) or (U,); the pose term of each
    frame is the mean squared error over all of its joints and dims.
    """
    if pred_poses.shape != true_poses.shape:
        raise ValueError(f"pose shapes differ: {tuple(pred_poses.shape)} vs {tuple(true_poses.shape)}")
    B, U = pred_poses.shape[:2]
    pose_term = ((pred_poses - true_poses) ** 2).reshape(B, U, -1).mean(-1)
    true_counters = torch.as_tensor(true_counters, dtype=pred_counters.dtype).expand(B, U)
    counter_term = (pred_counters.reshape(B, U) - true_counters) ** 2
    return (pose_term + alpha * counter_term).mean()


def pool_embeddings(z: torch.Tensor) -> torch.Tensor:
    """Mean over the window axis: (B, U, H) -> (B, H)."""
    return z.mean(dim=1)


def supcon_loss(features: torch.Tensor, labels: torch.Tensor, temperature: float) -> torch.Tensor:
    """Supervised contrastive loss with the log-softmax form.

    ``features`` are (B, d) and are L2-normalized here. Every other sample in
    the batch enters the denominator; positives are samples sharing the
    anchor's label. Anchors without positives contribute zero and the result
    is averaged over all B anchors.
    """
    B = features.shape[0]
    if B < 2:
        raise ValueError("contrastive loss needs a batch of at least 2")
    f = F.normalize(features, dim=1)
    sim = f @ f.T / temperature
    self_mask = torch.eye(B, dtype=torch.bool, device=f.device)
    labels = labels.reshape(-1)
    pos = (labels[:, None] == labels[None, :]) & ~self_mask
    log_denom = torch.logsumexp(sim.masked_fill(self_mask, float("-inf")), dim=1, keepdim=True)
    log_prob = sim - log_denom
    n_pos = pos.sum(1)
    per_anchor = -(log_prob * pos).sum(1) / n_pos.clamp(min=1)
    per_anchor = torch.where(n_pos > 0, per_anchor, torch.zeros_like(per_anchor))
    return per_anchor.mean()


def total_loss(codebook_term: torch.Tensor, supcon_term, delta: float) -> torch.Tensor:
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0 or supcon_term is None:
        return codebook_term
    return codebook_term + delta * supcon_term
