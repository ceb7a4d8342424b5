"""Quantitative verification of learned embeddings.

Preservation residuals turn the training-time distance/inner-product/
angle penalties into held-out test metrics; the ranking metrics (H@1,
MRR) score a latent transition model against reference embeddings.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import environments as envs
from .autodiff import Adam, EncoderModel, Tensor, backward, matmul, take
from .errors import DimensionError, NumericalError

RESIDUAL_EPS = 1e-8  # keeps relative residuals scale-free and finite


# -- preservation metrics ----------------------------------------------


def _stats(values):
    values = np.asarray(values, dtype=np.float64)
    return {"median": float(np.median(values)),
            "p90": float(np.percentile(values, 90)),
            "max": float(values.max()),
            "count": int(values.size)}


@dataclass
class PreservationReport:
    """Relative before/after residual statistics per preserved quantity."""

    distance: dict
    inner_product: dict
    cosine_angle: dict

    def to_dict(self):
        return {"distance": self.distance,
                "inner_product": self.inner_product,
                "cosine_angle": self.cosine_angle}


def _relative_residuals(per_slice):
    """|before - after| / (|before| + eps) over unordered slice pairs."""
    S = per_slice.shape[0]
    a_idx, b_idx = np.triu_indices(S, 1)
    before = per_slice[a_idx]
    after = per_slice[b_idx]
    return (np.abs(before - after) / (np.abs(before) + RESIDUAL_EPS)).ravel()


def batch_residuals(z_all, max_triples=2048, rng=None):
    """Distance / inner-product / cosine residual arrays for one batch."""
    z_all = np.asarray(z_all, dtype=np.float64)
    S, B, _ = z_all.shape
    i0, i1 = np.triu_indices(B, 1)
    diff = z_all[:, i0] - z_all[:, i1]
    d = np.linalg.norm(diff, axis=2)
    inner = np.einsum("spk,spk->sp", z_all[:, i0], z_all[:, i1])

    if rng is None:
        rng = np.random.default_rng(0)
    triples = _sample_eval_triples(B, max_triples, rng)
    ti, tj, tk = triples.T
    u = z_all[:, ti] - z_all[:, tj]
    w = z_all[:, tk] - z_all[:, tj]
    nu = np.linalg.norm(u, axis=2)
    nw = np.linalg.norm(w, axis=2)
    ok = (nu.min(axis=0) > 1e-12) & (nw.min(axis=0) > 1e-12)
    cos = np.einsum("stk,stk->st", u[:, ok], w[:, ok]) \
        / (nu[:, ok] * nw[:, ok])
    # cosine residual is absolute (cosines live in [-1, 1] already)
    S_idx = np.triu_indices(S, 1)
    cos_res = np.abs(cos[S_idx[0]] - cos[S_idx[1]]).ravel()
    return (_relative_residuals(d), _relative_residuals(inner), cos_res)


def _sample_eval_triples(B, max_triples, rng):
    triples = np.array([(i, j, k)
                        for j in range(B)
                        for i in range(B) if i != j
                        for k in range(i + 1, B) if k != j], dtype=np.intp)
    if len(triples) > max_triples:
        pick = rng.choice(len(triples), size=max_triples, replace=False)
        triples = triples[np.sort(pick)]
    return triples


def preservation_eval(model, env, n_batches=8, batch_size=16,
                      num_transforms=3, seed=12345, block=None,
                      subgroup=None):
    """Held-out residual statistics; use a seed disjoint from training.

    `block` is an optional (start, stop) column range restricting the
    metrics to one block of a decomposed embedding.
    """
    rng = np.random.default_rng(seed)
    d_res, p_res, c_res = [], [], []
    for _ in range(int(n_batches)):
        batch, _ = envs.sample_batch(env, batch_size, num_transforms, rng,
                                     subgroup=subgroup)
        z = model.embed(batch.stacked()).reshape(
            batch.num_transforms + 1, batch.num_observations, -1)
        if block is not None:
            z = z[:, :, block[0]:block[1]]
        dr, pr, cr = batch_residuals(z, rng=rng)
        d_res.append(dr)
        p_res.append(pr)
        c_res.append(cr)
    return PreservationReport(distance=_stats(np.concatenate(d_res)),
                              inner_product=_stats(np.concatenate(p_res)),
                              cosine_angle=_stats(np.concatenate(c_res)))


# -- latent transition model and ranking -------------------------------


@dataclass
class TransitionModel:
    """MLP mapping (embedding, one-hot action) to the next embedding."""

    mlp: EncoderModel
    actions: list

    def predict(self, z, action_ids):
        z = np.asarray(z, dtype=np.float64)
        onehot = np.zeros((len(z), len(self.actions)))
        onehot[np.arange(len(z)), action_ids] = 1.0
        return self.mlp.embed(np.concatenate([z, onehot], axis=1))


@dataclass
class RankingReport:
    hits_at_1: float
    mrr: float
    reference_size: int
    tie_policy: str = "worst-rank"
    ranks: list = field(default_factory=list)

    def to_dict(self):
        return {"hits_at_1": self.hits_at_1, "mrr": self.mrr,
                "reference_size": self.reference_size,
                "tie_policy": self.tie_policy}


def rank_eval(transition, encoder, transitions, references):
    """H@1 and MRR of the true next state among reference embeddings.

    For each (x, a, x_next): predict z_hat from f(x), rank f(x_next)
    inside {f(x_next)} u {f(r)} by distance to z_hat. Ties get the worst
    rank among tied candidates, so a collapsed encoder cannot score 1.
    """
    if not transitions:
        raise DimensionError("rank_eval needs at least one transition")
    if len(references) < 2:
        raise DimensionError("rank_eval needs at least two references")
    xs = np.stack([t[0] for t in transitions])
    actions = [t[1] for t in transitions]
    x_next = np.stack([t[2] for t in transitions])
    action_ids = [transition.actions.index(a) for a in actions]

    z = encoder.embed(xs)
    z_next = encoder.embed(x_next)
    z_refs = encoder.embed(np.stack(references))
    z_hat = transition.predict(z, action_ids)

    d_true = np.linalg.norm(z_hat - z_next, axis=1)
    d_refs = np.linalg.norm(z_hat[:, None, :] - z_refs[None, :, :], axis=2)
    worse = (d_refs < d_true[:, None]).sum(axis=1)
    tied = (d_refs == d_true[:, None]).sum(axis=1)
    ranks = 1 + worse + tied  # worst rank among ties (true state included)
    hits = float((ranks == 1).mean())
    mrr = float((1.0 / ranks).mean())
    return RankingReport(hits_at_1=hits, mrr=mrr,
                         reference_size=len(references),
                         ranks=ranks.tolist())


def fit_transition(encoder, transitions, hidden=(64,), steps=2000,
                   learning_rate=1e-3, batch_size=64, seed=0):
    """Fit the latent transition MLP with the encoder frozen."""
    if not transitions:
        raise DimensionError("fit_transition needs transitions")
    actions = []
    for _, a, _ in transitions:
        if a not in actions:
            actions.append(a)
    xs = np.stack([t[0] for t in transitions])
    x_next = np.stack([t[2] for t in transitions])
    action_ids = np.array([actions.index(t[1]) for t in transitions])

    z = encoder.embed(xs)
    z_next = encoder.embed(x_next)
    n = z.shape[1]
    onehot = np.zeros((len(z), len(actions)))
    onehot[np.arange(len(z)), action_ids] = 1.0
    inputs = np.concatenate([z, onehot], axis=1)

    rng = np.random.default_rng(seed)
    mlp = EncoderModel([n + len(actions)] + list(hidden) + [n],
                       activation="relu",
                       seed=int(rng.integers(2 ** 31)))
    optimizer = Adam(mlp.parameters(), lr=learning_rate)
    for _ in range(int(steps)):
        idx = rng.integers(len(inputs), size=min(batch_size, len(inputs)))
        mlp.zero_grad()
        pred = mlp(inputs[idx])
        resid = pred - Tensor(z_next[idx])
        loss = (resid * resid).sum() * (1.0 / len(idx))
        if not np.isfinite(loss.item()):
            raise NumericalError("non-finite transition-model loss")
        backward(loss)
        optimizer.step()
    return TransitionModel(mlp=mlp, actions=actions)


# -- embedding export ---------------------------------------------------


def export_embeddings(model, observations, ground_truth, path):
    """Write one CSV row per observation: embedding then state columns.

    Floats are written with repr (shortest round-trip), so parsing the
    file back recovers the in-memory values exactly.
    """
    observations = np.asarray(observations, dtype=np.float64)
    z = model.embed(observations)
    n = z.shape[1]
    names = list(ground_truth)
    for name in names:
        if len(ground_truth[name]) != len(z):
            raise DimensionError(f"ground-truth column {name!r} length "
                                 f"mismatch")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z{i}" for i in range(n)] + names)
        for row in range(len(z)):
            writer.writerow([repr(float(v)) for v in z[row]]
                            + [repr(float(ground_truth[k][row]))
                               for k in names])
    return path
