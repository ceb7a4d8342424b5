import numpy as np
import pytest

from equicode.autodiff import EncoderModel
from equicode.decomposition import (DecompositionSpec, SubgroupBatch,
                                    active_loss, active_loss_z,
                                    invariance_score, passive_loss,
                                    passive_loss_z)
from equicode.errors import ConfigurationError, DimensionError
from equicode.objectives import (Euclidean, Finite, Informed, TransformBatch,
                                 Unitary, euclidean_loss,
                                 invariant_feature_loss)


def _rigid(rng, n):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q, rng.normal(size=n)


def _two_block_spec(mode="passive", mu=1.0):
    return DecompositionSpec(blocks=[(2, Euclidean()), (2, Euclidean())],
                             mode=mode, invariance_weight=mu)


# -- spec validation -----------------------------------------------------


def test_spec_rejects_bad_configurations():
    with pytest.raises(ConfigurationError):
        DecompositionSpec(blocks=[], mode="passive")
    with pytest.raises(ConfigurationError):
        DecompositionSpec(blocks=[(2, Euclidean())], mode="sideways")
    with pytest.raises(ConfigurationError):
        DecompositionSpec(blocks=[(3, Unitary())])
    with pytest.raises(ConfigurationError):
        DecompositionSpec(blocks=[(3, Finite(block_size=2, num_blocks=2))])
    with pytest.raises(ConfigurationError):
        DecompositionSpec(blocks=[(2, Informed(actions={"g": np.eye(2)}))])
    with pytest.raises(ConfigurationError):
        DecompositionSpec(blocks=[(2, Euclidean())], mode="active",
                          invariance_weight=-0.5)


def test_spec_slices_partition_the_embedding():
    spec = DecompositionSpec(blocks=[(2, Euclidean()), (3, Euclidean())])
    assert spec.total_dim == 5
    assert spec.slices() == [slice(0, 2), slice(2, 5)]


# -- passive mode --------------------------------------------------------


def test_passive_single_block_equals_plain_objective_bitwise():
    rng = np.random.default_rng(0)
    z_all = rng.normal(size=(3, 5, 4))
    spec = DecompositionSpec(blocks=[(4, Euclidean())], mode="passive")
    assert passive_loss_z(z_all, spec).item() == euclidean_loss(z_all).item()


def test_passive_independent_per_block_isometries_zero():
    rng = np.random.default_rng(1)
    z0 = rng.normal(size=(5, 4))
    slices = []
    for _ in range(3):
        qa, ca = _rigid(rng, 2)
        qb, cb = _rigid(rng, 2)
        slices.append(np.concatenate(
            [z0[:, :2] @ qa.T + ca, z0[:, 2:] @ qb.T + cb], axis=1))
    z_all = np.stack([z0] + slices)
    assert passive_loss_z(z_all, _two_block_spec()).item() < 1e-18


def test_passive_random_equals_slice_and_sum_oracle():
    rng = np.random.default_rng(2)
    z_all = rng.normal(size=(3, 4, 4))
    got = passive_loss_z(z_all, _two_block_spec()).item()
    expected = (euclidean_loss(z_all[:, :, :2]).item()
                + euclidean_loss(z_all[:, :, 2:]).item())
    assert got == pytest.approx(expected, rel=1e-12)


def test_passive_loss_through_model():
    rng = np.random.default_rng(3)
    model = EncoderModel([6, 8, 4], "elu", seed=5)
    batch = TransformBatch(base=rng.normal(size=(4, 6)),
                           transformed=rng.normal(size=(2, 4, 6)))
    val = passive_loss(model, batch, _two_block_spec()).item()
    assert np.isfinite(val) and val >= 0.0
    with pytest.raises(ConfigurationError):
        passive_loss(model, batch, _two_block_spec(mode="active"))


def test_passive_width_mismatch_errors():
    with pytest.raises(DimensionError):
        passive_loss_z(np.zeros((2, 3, 5)), _two_block_spec())


# -- active mode ---------------------------------------------------------


def test_active_perfect_disentanglement_is_zero():
    rng = np.random.default_rng(4)
    z0 = rng.normal(size=(4, 4))
    # subgroup 0 rotates block 0 and leaves block 1 frozen; vice versa
    q0, c0 = _rigid(rng, 2)
    z_sub0 = np.stack([z0, np.concatenate(
        [z0[:, :2] @ q0.T + c0, z0[:, 2:]], axis=1)])
    q1, c1 = _rigid(rng, 2)
    z_sub1 = np.stack([z0, np.concatenate(
        [z0[:, :2], z0[:, 2:] @ q1.T + c1], axis=1)])
    spec = _two_block_spec(mode="active")
    assert active_loss_z({0: z_sub0, 1: z_sub1}, spec).item() < 1e-18


def test_active_mu_zero_reduces_to_per_block_losses():
    rng = np.random.default_rng(5)
    z_sub0 = rng.normal(size=(2, 4, 4))
    z_sub1 = rng.normal(size=(2, 4, 4))
    spec = _two_block_spec(mode="active", mu=0.0)
    got = active_loss_z({0: z_sub0, 1: z_sub1}, spec).item()
    expected = (euclidean_loss(z_sub0[:, :, :2]).item()
                + euclidean_loss(z_sub1[:, :, 2:]).item())
    assert got == pytest.approx(expected, rel=1e-12)


def test_active_matches_hand_composed_oracle():
    rng = np.random.default_rng(6)
    mu = 0.7
    z_sub0 = rng.normal(size=(2, 3, 4))
    z_sub1 = rng.normal(size=(2, 3, 4))
    spec = _two_block_spec(mode="active", mu=mu)
    got = active_loss_z({0: z_sub0, 1: z_sub1}, spec).item()
    expected = (
        euclidean_loss(z_sub0[:, :, :2]).item()
        + mu * invariant_feature_loss(z_sub0[:, :, 2:],
                                      reduction=spec.reduction).item()
        + euclidean_loss(z_sub1[:, :, 2:]).item()
        + mu * invariant_feature_loss(z_sub1[:, :, :2],
                                      reduction=spec.reduction).item())
    assert got == pytest.approx(expected, rel=1e-12)


def test_active_rejects_unknown_subgroup_index():
    rng = np.random.default_rng(7)
    model = EncoderModel([3, 4], "relu", seed=0)
    batch = TransformBatch(base=rng.normal(size=(3, 3)),
                           transformed=rng.normal(size=(1, 3, 3)))
    spec = _two_block_spec(mode="active")
    with pytest.raises(ConfigurationError):
        active_loss(model, [SubgroupBatch(index=5, batch=batch)], spec)


# -- invariance score ----------------------------------------------------


class _TableEncoder:
    """Test double mapping observations to fixed embeddings by lookup."""

    def __init__(self, table):
        self.table = {tuple(k): np.asarray(v, float) for k, v in table}

    def embed(self, x):
        return np.stack([self.table[tuple(row)] for row in np.asarray(x)])


def _score_batches(obs, trans):
    return [SubgroupBatch(index=j,
                          batch=TransformBatch(base=obs, transformed=t))
            for j, t in enumerate(trans)]


def test_invariance_score_block_constant_under_subgroup_is_zero():
    rng = np.random.default_rng(8)
    obs = rng.normal(size=(4, 3))
    t0 = rng.normal(size=(2, 4, 3))
    # block 1 varies per base observation but never moves under the
    # subgroup-0 transformations
    block1 = {b: rng.normal(size=2) for b in range(4)}
    table = [(obs[b], np.concatenate([rng.normal(size=2), block1[b]]))
             for b in range(4)]
    table += [(t0[k, b], np.concatenate([rng.normal(size=2), block1[b]]))
              for k in range(2) for b in range(4)]
    enc = _TableEncoder(table)
    spec = _two_block_spec()
    scores = invariance_score(enc, _score_batches(obs, [t0]), spec)
    assert scores[1, 0] == pytest.approx(0.0)
    assert np.isnan(scores[1, 1])  # no subgroup-1 batches supplied


def test_invariance_score_zero_variance_block_is_nan():
    rng = np.random.default_rng(18)
    obs = rng.normal(size=(4, 3))
    t0 = rng.normal(size=(2, 4, 3))
    table = [(row, np.concatenate([rng.normal(size=2), [1.0, 2.0]]))
             for row in np.vstack([obs, t0.reshape(-1, 3)])]
    enc = _TableEncoder(table)
    scores = invariance_score(enc, _score_batches(obs, [t0]),
                              _two_block_spec())
    assert np.isnan(scores[1, 0])


def test_invariance_score_matches_two_pass_oracle():
    rng = np.random.default_rng(9)
    obs = rng.normal(size=(5, 3))
    trans = [rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 5, 3))]
    emb = {tuple(r): rng.normal(size=4)
           for r in np.vstack([obs] + [t.reshape(-1, 3) for t in trans])}
    enc = _TableEncoder(list(emb.items()))
    spec = _two_block_spec()
    scores = invariance_score(enc, _score_batches(obs, trans), spec)

    base = np.stack([emb[tuple(r)] for r in obs] * 2)[:5 * 2]
    for i, sl in enumerate([slice(0, 2), slice(2, 4)]):
        block = base[:, sl]
        var = ((block - block.mean(axis=0)) ** 2).sum(axis=1).mean()
        for j, t in enumerate(trans):
            sq = []
            for k in range(t.shape[0]):
                for b in range(t.shape[1]):
                    d = emb[tuple(t[k, b])][sl] - emb[tuple(obs[b])][sl]
                    sq.append(d @ d)
            assert scores[i, j] == pytest.approx(np.mean(sq) / var, rel=1e-10)


def test_invariance_score_nonnegative_and_isometry_invariant():
    rng = np.random.default_rng(10)
    obs = rng.normal(size=(6, 3))
    trans = [rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6, 3))]
    emb = {tuple(r): rng.normal(size=4)
           for r in np.vstack([obs] + [t.reshape(-1, 3) for t in trans])}
    enc = _TableEncoder(list(emb.items()))
    spec = _two_block_spec()
    scores = invariance_score(enc, _score_batches(obs, trans), spec)
    assert np.all(scores >= 0.0)

    # apply a global rotation to block 0 of every embedding
    q, _ = _rigid(rng, 2)
    emb2 = {k: np.concatenate([q @ v[:2], v[2:]]) for k, v in emb.items()}
    enc2 = _TableEncoder(list(emb2.items()))
    scores2 = invariance_score(enc2, _score_batches(obs, trans), spec)
    np.testing.assert_allclose(scores2, scores, rtol=1e-10)
