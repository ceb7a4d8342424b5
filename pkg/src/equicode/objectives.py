"""Symmetry-regularization losses and injectivity barriers.

Each loss penalizes the change of a group-characteristic quantity
(latent action residual, block-matching cost, pairwise distance, inner
product, or angle cosine) across transformed copies of a batch, which
pushes the induced latent action towards the simple linear action of
the chosen group. The induced-action verifier checks the table-lookup
action of an injective encoder against the group axioms.

Embedding batches are stacked as ``z_all`` with shape [(K+1), B, n]:
slice 0 holds the base embeddings and slice k >= 1 the embeddings after
the k-th (unknown) transformation. The identity slice participates as
one of the K+1 transformations in all pairwise-over-transformation sums.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Tensor, take
from .errors import ConfigurationError, DimensionError

log = logging.getLogger(__name__)

DIST_FLOOR = 1e-12  # distance floor inside barriers and cosine denominators

_warned = set()


def _warn_once(key, msg, *args):
    if key in _warned:
        log.debug(msg, *args)
        return
    _warned.add(key)
    log.warning(msg + " (further occurrences logged at DEBUG)", *args)


# -- batch containers ---------------------------------------------------


@dataclass
class TransformBatch:
    """B base observations plus K transformed copies of each.

    ``transformed[k][i]`` is observation i after the k-th group element;
    the element is unknown to the learner but shared across i.
    """

    base: np.ndarray          # [B, D]
    transformed: np.ndarray   # [K, B, D]

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float64)
        self.transformed = np.asarray(self.transformed, dtype=np.float64)
        if self.base.ndim != 2 or self.transformed.ndim != 3:
            raise DimensionError("TransformBatch expects [B,D] and [K,B,D]")
        if self.transformed.shape[1:] != self.base.shape:
            raise DimensionError(
                f"transformed {self.transformed.shape} does not align with "
                f"base {self.base.shape}")

    @property
    def num_observations(self):
        return self.base.shape[0]

    @property
    def num_transforms(self):
        return self.transformed.shape[0]

    def stacked(self):
        """All observations as one [(K+1)*B, D] array, base slice first."""
        return np.concatenate(
            [self.base[None], self.transformed], axis=0).reshape(
                -1, self.base.shape[1])


@dataclass
class InformedTriple:
    """An observation, a known group-element id, and its transform."""

    x: np.ndarray
    g: object
    x_t: np.ndarray


def embed_batch(model, batch):
    """Embed a TransformBatch in one forward pass; returns [(K+1), B, n]."""
    z = model(batch.stacked())
    return ad.reshape(z, (batch.num_transforms + 1,
                          batch.num_observations, model.output_dim))


# -- objective descriptors ---------------------------------------------


@dataclass
class Informed:
    """Known latent action matrices t_Z(g, z) = A_g z, indexed by g."""

    actions: dict  # g -> [n, n] ndarray
    kind = "informed"

    def latent_dim(self):
        return next(iter(self.actions.values())).shape[0]


def _is_group(perms):
    elems = set(perms)
    m = len(perms[0])
    identity = tuple(range(m))
    if identity not in elems:
        return False
    for p in perms:
        inv = [0] * m
        for i, pi in enumerate(p):
            inv[pi] = i
        if tuple(inv) not in elems:
            return False
        for q in perms:
            comp = tuple(p[q[i]] for i in range(m))
            if comp not in elems:
                return False
    return True


@dataclass
class Finite:
    """Block-permutation latent action for a finite group.

    The embedding is read as m blocks of size b; the latent action
    permutes blocks by a member of ``permutations`` (a subgroup of S_m,
    or all of S_m when None).
    """

    block_size: int
    num_blocks: int
    permutations: tuple = None  # tuple of m-tuples; None = full S_m
    strategy: str = "enumerate"  # enumerate | assignment | chamfer
    kind = "finite"

    def __post_init__(self):
        if self.strategy not in ("enumerate", "assignment", "chamfer"):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.permutations is not None:
            perms = tuple(tuple(int(i) for i in p) for p in self.permutations)
            if any(sorted(p) != list(range(self.num_blocks)) for p in perms):
                raise ConfigurationError("permutations must act on the blocks")
            if not _is_group(perms):
                raise ConfigurationError(
                    "permutation set is not closed under composition/inverse")
            self.permutations = perms

    @property
    def latent_dim(self):
        return self.block_size * self.num_blocks

    def is_full_symmetric(self):
        if self.permutations is None:
            return True
        return len(self.permutations) == math.factorial(self.num_blocks)

    def explicit_permutations(self):
        if self.permutations is not None:
            return self.permutations
        if self.num_blocks > 8:
            raise ConfigurationError(
                "refusing to enumerate S_m for m > 8; use assignment")
        return tuple(itertools.permutations(range(self.num_blocks)))


@dataclass
class Euclidean:
    """Pairwise-distance preservation (isometry regularization)."""

    reduction: str = "mean"
    kind = "euclidean"


@dataclass
class Orthogonal:
    """Inner-product preservation; unitary mode reads rows as complex."""

    unitary: bool = False
    include_diagonal: bool = True
    reduction: str = "mean"

    @property
    def kind(self):
        return "unitary" if self.unitary else "orthogonal"


def Unitary(**kw):
    return Orthogonal(unitary=True, **kw)


@dataclass
class Conformal:
    """Angle-cosine preservation; triples subsampled per batch."""

    max_triples: int = 4096
    seed: int = 0
    reduction: str = "mean"
    kind = "conformal"


@dataclass
class BarrierSpec:
    """Injectivity barrier on pairwise embedding distances."""

    kind: str = "log"  # hinge | reciprocal | log
    coefficient: float = 1.0
    epsilon: float = 1.0  # hinge margin
    reduction: str = "sum"  # sum matches the pair-summed definition

    def __post_init__(self):
        if self.kind not in ("hinge", "reciprocal", "log"):
            raise ConfigurationError(f"unknown barrier kind {self.kind!r}")
        if self.reduction not in ("sum", "mean"):
            raise ConfigurationError("barrier reduction must be sum|mean")
        if self.kind == "hinge" and self.epsilon <= 0:
            raise ConfigurationError("hinge margin must be positive")
        if not np.isfinite(self.coefficient) or self.coefficient < 0:
            raise ConfigurationError("barrier coefficient must be finite, >= 0")


# -- pairwise helpers ---------------------------------------------------


def _as_3d(z):
    z = ad.as_tensor(z)
    if z.ndim == 2:
        z = ad.reshape(z, (1,) + z.shape)
    if z.ndim != 3:
        raise DimensionError(f"expected [S,B,n] or [B,n], got {z.shape}")
    return z


def _pairwise_distances(z_all, include_diagonal=False):
    """Upper-triangle pairwise distances per slice: [S, P]."""
    _, B, _ = z_all.shape
    i0, i1 = np.triu_indices(B, 0 if include_diagonal else 1)
    zi = take(z_all, i0, axis=1)
    zj = take(z_all, i1, axis=1)
    diff = zi - zj
    d2 = (diff * diff).sum(axis=2)
    return ad.sqrt(ad.clip_min(d2, DIST_FLOOR ** 2))


def _transform_pair_diff(per_slice):
    """Differences of a [S, P] quantity over unordered slice pairs."""
    S = per_slice.shape[0]
    a_idx, b_idx = np.triu_indices(S, 1)
    return take(per_slice, a_idx, axis=0) - take(per_slice, b_idx, axis=0)


def _reduce(sq_sum, count, reduction):
    if reduction == "mean":
        return sq_sum * (1.0 / count)
    if reduction == "sum":
        return sq_sum
    raise ConfigurationError(f"unknown reduction {reduction!r}")


# -- losses -------------------------------------------------------------


def injectivity_loss(z, spec):
    """Barrier over unordered distinct embedding pairs, scaled by lambda."""
    z = ad.as_tensor(z)
    if z.ndim != 2 or z.shape[0] < 2:
        raise DimensionError("injectivity_loss expects [B>=2, n] embeddings")
    d = _pairwise_distances(_as_3d(z))
    if spec.kind != "hinge" and np.any(d.data <= DIST_FLOOR):
        _warn_once("clamp", "coincident embeddings clamped at distance "
                   "floor %g", DIST_FLOOR)
    if spec.kind == "hinge":
        per_pair = ad.relu(spec.epsilon - d)
    elif spec.kind == "reciprocal":
        per_pair = 1.0 / d
    else:
        per_pair = -ad.log(d)
    total = per_pair.sum() * spec.coefficient
    if spec.reduction == "mean":
        total = total * (1.0 / d.data.size)
    return total


def informed_loss(model, triples, objective):
    """Sum of squared residuals f(x_t) - A_g f(x) over known-g triples."""
    if not triples:
        raise DimensionError("informed_loss needs at least one triple")
    xs = np.stack([np.asarray(t.x, dtype=np.float64) for t in triples])
    xts = np.stack([np.asarray(t.x_t, dtype=np.float64) for t in triples])
    for t in triples:
        if t.g not in objective.actions:
            raise ConfigurationError(
                f"no latent action registered for group element {t.g!r}")
    z = model(xs)
    zt = model(xts)
    total = None
    seen = []
    for t in triples:
        if t.g not in seen:
            seen.append(t.g)
    for g in seen:
        rows = np.array([i for i, t in enumerate(triples) if t.g == g])
        a_mat = np.asarray(objective.actions[g], dtype=np.float64)
        pred = take(z, rows, axis=0) @ Tensor(a_mat.T)
        resid = take(zt, rows, axis=0) - pred
        term = (resid * resid).sum()
        total = term if total is None else total + term
    return total


def _block_cost_matrices(zb, ztb):
    """[B, m, m] squared distances between blocks of z and z_t rows."""
    diff = zb[:, :, None, :] - ztb[:, None, :, :]
    return np.einsum("iabk,iabk->iab", diff, diff)


def finite_group_loss(z, z_t, objective):
    """Best block-permutation matching cost, summed over aligned rows."""
    z = ad.as_tensor(z)
    z_t = ad.as_tensor(z_t)
    if z.shape != z_t.shape or z.ndim != 2:
        raise DimensionError("finite_group_loss expects aligned [B, n] pairs")
    B, n = z.shape
    b, m = objective.block_size, objective.num_blocks
    if n != b * m:
        raise DimensionError(f"embedding dim {n} != {b}*{m}")

    zb = z.data.reshape(B, m, b)
    ztb = z_t.data.reshape(B, m, b)
    z_flat = ad.reshape(z, (B * m, b))
    zt_flat = ad.reshape(z_t, (B * m, b))
    row_base = np.arange(B)[:, None] * m

    if objective.strategy == "chamfer":
        cost = _block_cost_matrices(zb, ztb)
        fwd_idx = (row_base + cost.argmin(axis=2)).reshape(-1)
        bwd_idx = (row_base + cost.argmin(axis=1)).reshape(-1)
        fwd = z_flat - take(zt_flat, fwd_idx, axis=0)
        bwd = take(z_flat, bwd_idx, axis=0) - zt_flat
        return ((fwd * fwd).sum() + (bwd * bwd).sum()) * 0.5

    if objective.strategy == "assignment":
        if not objective.is_full_symmetric():
            raise ConfigurationError(
                "assignment matching requires the full symmetric group")
        cost = _block_cost_matrices(zb, ztb)
        best = np.empty((B, m), dtype=np.intp)
        for i in range(B):
            _, cols = linear_sum_assignment(cost[i])
            best[i] = cols
    else:  # enumerate
        perms = objective.explicit_permutations()
        pa = np.asarray(perms, dtype=np.intp)  # [n_perms, m]
        # costs[p, i] = || zb[i] - ztb[i][perm_p] ||^2
        permuted = ztb[:, pa, :]                      # [B, n_perms, m, b]
        diff = zb[:, None, :, :] - permuted
        costs = np.einsum("ipmb,ipmb->ip", diff, diff)
        best = pa[costs.argmin(axis=1)]               # [B, m]

    gather = (row_base + best).reshape(-1)
    resid = z_flat - take(zt_flat, gather, axis=0)
    return (resid * resid).sum()


def euclidean_loss(z_all, reduction="mean"):
    """Penalize pairwise-distance changes across transformations."""
    z_all = _as_3d(z_all)
    S, B, _ = z_all.shape
    if B < 2 or S < 2:
        raise DimensionError("euclidean_loss needs B >= 2 and K >= 1")
    d = _pairwise_distances(z_all)
    r = _transform_pair_diff(d)
    return _reduce((r * r).sum(), r.data.size, reduction)


def orthogonal_loss(z_all, objective=None, reduction=None):
    """Penalize inner-product changes across transformations."""
    if objective is None:
        objective = Orthogonal()
    if reduction is None:
        reduction = objective.reduction
    z_all = _as_3d(z_all)
    S, B, n = z_all.shape
    if B < 2 or S < 2:
        raise DimensionError("orthogonal_loss needs B >= 2 and K >= 1")
    i0, i1 = np.triu_indices(B, 0 if objective.include_diagonal else 1)

    if objective.unitary:
        if n % 2:
            raise ConfigurationError("unitary objective requires even n")
        h = n // 2
        x, y = z_all[:, :, :h], z_all[:, :, h:]
        xi, xj = take(x, i0, axis=1), take(x, i1, axis=1)
        yi, yj = take(y, i0, axis=1), take(y, i1, axis=1)
        re = (xi * xj + yi * yj).sum(axis=2)
        im = (yi * xj - xi * yj).sum(axis=2)
        r_re = _transform_pair_diff(re)
        r_im = _transform_pair_diff(im)
        total = (r_re * r_re).sum() + (r_im * r_im).sum()
        return _reduce(total, r_re.data.size, reduction)

    zi, zj = take(z_all, i0, axis=1), take(z_all, i1, axis=1)
    p = (zi * zj).sum(axis=2)
    r = _transform_pair_diff(p)
    return _reduce((r * r).sum(), r.data.size, reduction)


def sample_triples(B, max_triples, rng):
    """All (i, j, k) with vertex j and i < k, subsampled to max_triples."""
    triples = np.array([(i, j, k)
                        for j in range(B)
                        for i in range(B) if i != j
                        for k in range(i + 1, B) if k != j],
                       dtype=np.intp)
    if len(triples) > max_triples:
        pick = rng.choice(len(triples), size=max_triples, replace=False)
        triples = triples[np.sort(pick)]
    return triples


def conformal_loss(z_all, objective=None, rng=None, reduction=None,
                   diagnostics=None):
    """Penalize angle-cosine changes over sampled point triples."""
    if objective is None:
        objective = Conformal()
    if reduction is None:
        reduction = objective.reduction
    z_all = _as_3d(z_all)
    S, B, _ = z_all.shape
    if B < 3 or S < 2:
        raise DimensionError("conformal_loss needs B >= 3 and K >= 1")
    if rng is None:
        rng = np.random.default_rng(objective.seed)
    triples = sample_triples(B, objective.max_triples, rng)
    ti, tj, tk = triples[:, 0], triples[:, 1], triples[:, 2]

    # drop triples degenerate in any slice (endpoint at the vertex)
    raw = z_all.data
    nu_raw = np.linalg.norm(raw[:, ti] - raw[:, tj], axis=2)
    nw_raw = np.linalg.norm(raw[:, tk] - raw[:, tj], axis=2)
    keep = (nu_raw.min(axis=0) > DIST_FLOOR) & (nw_raw.min(axis=0) > DIST_FLOOR)
    n_skipped = int((~keep).sum())
    if n_skipped:
        _warn_once("degenerate_triples",
                   "conformal_loss: skipped %d degenerate triples", n_skipped)
        ti, tj, tk = ti[keep], tj[keep], tk[keep]
    if diagnostics is not None:
        diagnostics["skipped_triples"] = n_skipped
        diagnostics["used_triples"] = int(len(ti))
    if len(ti) == 0:
        raise DimensionError("all conformal triples degenerate")

    yi = take(z_all, ti, axis=1)
    yv = take(z_all, tj, axis=1)
    yk = take(z_all, tk, axis=1)
    u = yi - yv
    w = yk - yv
    dot = (u * w).sum(axis=2)
    nu = ad.sqrt(ad.clip_min((u * u).sum(axis=2), DIST_FLOOR ** 2))
    nw = ad.sqrt(ad.clip_min((w * w).sum(axis=2), DIST_FLOOR ** 2))
    cos = dot / (nu * nw)
    r = _transform_pair_diff(cos)
    return _reduce((r * r).sum(), r.data.size, reduction)


def invariant_feature_loss(z_inv, reduction="sum"):
    """Squared displacement of the invariant sub-code under transforms."""
    z_inv = _as_3d(z_inv)
    if z_inv.shape[0] < 2:
        raise DimensionError("invariant_feature_loss needs K >= 1")
    diff = z_inv[1:] - z_inv[0:1]
    total = (diff * diff).sum()
    count = z_inv.shape[0] - 1
    return _reduce(total, count * z_inv.shape[1], reduction)


# -- objective dispatch -------------------------------------------------


def objective_loss(objective, z_all, rng=None):
    """Evaluate a Z-level objective on stacked embeddings [(K+1), B, n]."""
    if isinstance(objective, Euclidean):
        return euclidean_loss(z_all, reduction=objective.reduction)
    if isinstance(objective, Orthogonal):
        return orthogonal_loss(z_all, objective)
    if isinstance(objective, Conformal):
        return conformal_loss(z_all, objective, rng=rng)
    if isinstance(objective, Finite):
        z_all = _as_3d(z_all)
        total = None
        for k in range(1, z_all.shape[0]):
            term = finite_group_loss(z_all[0], z_all[k], objective)
            total = term if total is None else total + term
        return total
    raise ConfigurationError(
        f"objective {type(objective).__name__} has no Z-level loss")


# -- induced-action verifier -------------------------------------------


@dataclass
class FiniteGroupTable:
    """A finite group given by an explicit composition table."""

    elements: list
    identity: object
    compose: dict  # (g, g') -> g''

    @classmethod
    def cyclic(cls, n):
        elems = list(range(n))
        table = {(a, b): (a + b) % n for a in elems for b in elems}
        return cls(elements=elems, identity=0, compose=table)


@dataclass
class ActionVerificationReport:
    num_points: int
    num_elements: int
    identity_violations: list = field(default_factory=list)
    composition_violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.identity_violations and not self.composition_violations

    @property
    def num_checks(self):
        n = self.num_points
        return n * self.num_elements * (self.num_elements + 1)

    def to_dict(self):
        return {
            "num_points": self.num_points,
            "num_elements": self.num_elements,
            "num_checks": self.num_checks,
            "identity_violations": [repr(v) for v in self.identity_violations],
            "composition_violations": [
                repr(v) for v in self.composition_violations],
            "ok": self.ok,
        }


def _hashable(z):
    if isinstance(z, np.ndarray):
        return tuple(z.tolist())
    return z


def verify_induced_action(f_table, t_x, group):
    """Check the induced latent action t_Z(g, z) = f(t_X(g, f^-1(z))).

    ``f_table`` maps points to codes (must be injective), ``t_x`` maps
    (g, x) to a point, ``group`` is a FiniteGroupTable. Returns a report
    listing every identity/composition axiom violation; an injective
    encoder over a true action must produce none.
    """
    codes = {}
    for x, z in f_table.items():
        key = _hashable(z)
        if key in codes:
            raise ConfigurationError(
                f"encoder table is not injective: {codes[key]!r} and {x!r} "
                f"share the code {key!r}")
        codes[key] = x

    def t_z(g, zkey):
        x = codes[zkey]
        return _hashable(f_table[t_x[(g, x)]])

    report = ActionVerificationReport(num_points=len(f_table),
                                      num_elements=len(group.elements))
    for zkey in list(codes):
        if t_z(group.identity, zkey) != zkey:
            report.identity_violations.append(("identity", zkey))
        for g in group.elements:
            for g2 in group.elements:
                lhs = t_z(g, t_z(g2, zkey))
                rhs = t_z(group.compose[(g, g2)], zkey)
                if lhs != rhs:
                    report.composition_violations.append((g, g2, zkey))
    return report
