"""Composite objectives over product groups.

The embedding space is split into ordered blocks Z = Z_1 x ... x Z_k,
each with its own group objective. In passive mode every block's loss is
evaluated on the same batch. In active mode each batch carries
transformations of a single subgroup: its own block gets the
equivariance loss while all other blocks are penalized for moving at
all (invariance).
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import objectives as obj
from .errors import ConfigurationError, DimensionError

log = logging.getLogger(__name__)


@dataclass
class DecompositionSpec:
    """Ordered (block dim, objective) pairs plus the composition mode."""

    blocks: list  # list of (dim, objective)
    mode: str = "passive"  # active | passive
    invariance_weight: float = 1.0
    reduction: str = "mean"

    def __post_init__(self):
        if self.mode not in ("active", "passive"):
            raise ConfigurationError(f"unknown decomposition mode {self.mode!r}")
        if not self.blocks:
            raise ConfigurationError("decomposition needs at least one block")
        if self.invariance_weight < 0:
            raise ConfigurationError("invariance weight must be >= 0")
        for dim, objective in self.blocks:
            if dim <= 0:
                raise ConfigurationError("block dims must be positive")
            if isinstance(objective, obj.Orthogonal) and objective.unitary \
                    and dim % 2:
                raise ConfigurationError("unitary blocks need even dim")
            if isinstance(objective, obj.Finite) and dim != objective.latent_dim:
                raise ConfigurationError(
                    f"finite block dim {dim} != b*m = {objective.latent_dim}")
            if isinstance(objective, obj.Informed):
                raise ConfigurationError(
                    "informed objectives are not supported inside blocks")

    @property
    def total_dim(self):
        return sum(dim for dim, _ in self.blocks)

    @property
    def num_blocks(self):
        return len(self.blocks)

    def slices(self):
        out = []
        start = 0
        for dim, _ in self.blocks:
            out.append(slice(start, start + dim))
            start += dim
        return out


@dataclass
class SubgroupBatch:
    """A TransformBatch whose transformations all lie in subgroup `index`."""

    index: int
    batch: obj.TransformBatch


def _check_width(spec, n):
    if spec.total_dim != n:
        raise DimensionError(
            f"embedding dim {n} != sum of block dims {spec.total_dim}")


def passive_loss_z(z_all, spec, rng=None):
    """Passive decomposition loss on stacked embeddings [(K+1), B, n]."""
    z_all = obj._as_3d(z_all)
    _check_width(spec, z_all.shape[2])
    total = None
    for sl, (_, objective) in zip(spec.slices(), spec.blocks):
        term = obj.objective_loss(objective, z_all[:, :, sl], rng=rng)
        total = term if total is None else total + term
    return total


def passive_loss(model, batch, spec, rng=None):
    """Per-block objective, every block on the same TransformBatch."""
    if spec.mode != "passive":
        raise ConfigurationError("passive_loss requires mode='passive'")
    return passive_loss_z(obj.embed_batch(model, batch), spec, rng=rng)


def active_loss_z(z_all_per_subgroup, spec, rng=None):
    """Active decomposition loss from per-subgroup stacked embeddings.

    `z_all_per_subgroup` maps subgroup index -> [(K+1), B, n] embeddings
    of a batch transformed only by that subgroup.
    """
    total = None
    for j, z_all in z_all_per_subgroup.items():
        if not 0 <= j < spec.num_blocks:
            raise ConfigurationError(f"subgroup index {j} has no block")
        z_all = obj._as_3d(z_all)
        _check_width(spec, z_all.shape[2])
        for i, (sl, (_, objective)) in enumerate(
                zip(spec.slices(), spec.blocks)):
            block = z_all[:, :, sl]
            if i == j:
                term = obj.objective_loss(objective, block, rng=rng)
            else:
                term = spec.invariance_weight * obj.invariant_feature_loss(
                    block, reduction=spec.reduction)
            total = term if total is None else total + term
    return total


def active_loss(model, batches, spec, rng=None):
    """Eq-style sum of per-subgroup equivariance plus cross invariance."""
    if spec.mode != "active":
        raise ConfigurationError("active_loss requires mode='active'")
    z_per = {}
    for sb in batches:
        if not 0 <= sb.index < spec.num_blocks:
            raise ConfigurationError(f"subgroup index {sb.index} has no block")
        z_per[sb.index] = obj.embed_batch(model, sb.batch)
    return active_loss_z(z_per, spec, rng=rng)


def invariance_score(model, batches, spec):
    """Normalized per-block displacement under each subgroup's actions.

    Entry (i, j) is the mean squared displacement of block i under
    subgroup-j transformations divided by the total variance of block i
    over all base embeddings seen. Diagonal entries should be high and
    off-diagonal entries low after active training.
    """
    n_blocks = spec.num_blocks
    disp = np.zeros((n_blocks, n_blocks))
    disp_count = np.zeros(n_blocks)
    base_embeddings = []
    slices = spec.slices()

    for sb in batches:
        if not 0 <= sb.index < n_blocks:
            raise ConfigurationError(f"subgroup index {sb.index} has no block")
        z0 = model.embed(sb.batch.base)
        base_embeddings.append(z0)
        K, B, _ = sb.batch.transformed.shape
        zt = model.embed(sb.batch.transformed.reshape(K * B, -1)).reshape(
            K, B, -1)
        for i, sl in enumerate(slices):
            d = zt[:, :, sl] - z0[None, :, sl]
            disp[i, sb.index] += (d * d).sum(axis=2).mean() * K * B
        disp_count[sb.index] += K * B

    base = np.concatenate(base_embeddings, axis=0)
    scores = np.full((n_blocks, n_blocks), np.nan)
    for i, sl in enumerate(slices):
        block = base[:, sl]
        var = ((block - block.mean(axis=0)) ** 2).sum(axis=1).mean()
        if var <= 0:
            log.warning("block %d has zero variance; scores are NaN", i)
            continue
        for j in range(n_blocks):
            if disp_count[j] > 0:
                scores[i, j] = disp[i, j] / disp_count[j] / var
    return scores
