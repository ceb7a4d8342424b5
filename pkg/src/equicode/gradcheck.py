"""Finite-difference gradient checks for every loss in the package.

Each named check builds a small random instance (dims <= 8, batch <= 4),
differentiates the loss through a tiny encoder, and compares against
central finite differences.
"""

import numpy as np

from . import autodiff as ad
from . import decomposition as dec
from . import objectives as obj
from .autodiff import EncoderModel, finite_difference_check
from .errors import ConfigurationError


def _model(rng, d_in, n_out, activation="elu"):
    return EncoderModel([d_in, 6, n_out], activation=activation,
                        seed=int(rng.integers(2 ** 31)))


def _z_all(model, rng, S, B):
    x = rng.normal(size=(S * B, model.input_dim))

    def embed():
        z = model(x)
        return ad.reshape(z, (S, B, model.output_dim))

    return embed


def _barrier_case(kind):
    def build(rng):
        model = _model(rng, 5, 3)
        x = rng.normal(size=(4, 5))
        spec = obj.BarrierSpec(kind=kind, coefficient=0.7, epsilon=2.0)
        return model.parameters(), lambda: obj.injectivity_loss(
            model(x), spec)
    return build


def _informed_case(rng):
    model = _model(rng, 4, 3)
    mats = {"g0": rng.normal(size=(3, 3)), "g1": rng.normal(size=(3, 3))}
    objective = obj.Informed(actions=mats)
    triples = [obj.InformedTriple(x=rng.normal(size=4),
                                  g=("g0" if i % 2 else "g1"),
                                  x_t=rng.normal(size=4))
               for i in range(4)]
    return model.parameters(), lambda: obj.informed_loss(
        model, triples, objective)


def _finite_case(strategy):
    def build(rng):
        model = _model(rng, 5, 6)
        objective = obj.Finite(block_size=2, num_blocks=3, strategy=strategy)
        x = rng.normal(size=(3, 5))
        xt = rng.normal(size=(3, 5))
        return model.parameters(), lambda: obj.finite_group_loss(
            model(x), model(xt), objective)
    return build


def _euclidean_case(rng):
    model = _model(rng, 5, 3)
    embed = _z_all(model, rng, 3, 4)
    return model.parameters(), lambda: obj.euclidean_loss(embed())


def _orthogonal_case(rng):
    model = _model(rng, 5, 3)
    embed = _z_all(model, rng, 3, 4)
    return model.parameters(), lambda: obj.orthogonal_loss(embed())


def _unitary_case(rng):
    model = _model(rng, 5, 4)
    embed = _z_all(model, rng, 3, 4)
    return model.parameters(), lambda: obj.orthogonal_loss(
        embed(), obj.Orthogonal(unitary=True))


def _conformal_case(rng):
    model = _model(rng, 5, 3)
    embed = _z_all(model, rng, 2, 4)
    objective = obj.Conformal(max_triples=64, seed=0)
    return model.parameters(), lambda: obj.conformal_loss(embed(), objective)


def _invariance_case(rng):
    model = _model(rng, 5, 3)
    embed = _z_all(model, rng, 3, 4)
    return model.parameters(), lambda: obj.invariant_feature_loss(embed())


def _decomposition_spec(mode):
    return dec.DecompositionSpec(
        blocks=[(2, obj.Euclidean()), (2, obj.Euclidean())],
        mode=mode, invariance_weight=0.5)


def _passive_case(rng):
    model = _model(rng, 5, 4)
    embed = _z_all(model, rng, 2, 4)
    spec = _decomposition_spec("passive")
    return model.parameters(), lambda: dec.passive_loss_z(embed(), spec)


def _active_case(rng):
    model = _model(rng, 5, 4)
    embed0 = _z_all(model, rng, 2, 3)
    embed1 = _z_all(model, rng, 2, 3)
    spec = _decomposition_spec("active")
    return model.parameters(), lambda: dec.active_loss_z(
        {0: embed0(), 1: embed1()}, spec)


CASES = {
    "hinge": _barrier_case("hinge"),
    "reciprocal": _barrier_case("reciprocal"),
    "log_barrier": _barrier_case("log"),
    "informed": _informed_case,
    "finite_enumerate": _finite_case("enumerate"),
    "finite_assignment": _finite_case("assignment"),
    "finite_chamfer": _finite_case("chamfer"),
    "euclidean": _euclidean_case,
    "orthogonal": _orthogonal_case,
    "unitary": _unitary_case,
    "conformal": _conformal_case,
    "invariance": _invariance_case,
    "passive": _passive_case,
    "active": _active_case,
}


def run_gradcheck(losses=None, instances=20, seed=0, h=1e-5):
    """Max relative analytic-vs-numeric gradient error per loss name."""
    if losses in (None, "all"):
        losses = list(CASES)
    unknown = [name for name in losses if name not in CASES]
    if unknown:
        raise ConfigurationError(f"unknown losses {unknown}")
    results = {}
    for name in losses:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(int(instances)):
            params, loss_fn = CASES[name](rng)
            worst = max(worst, finite_difference_check(loss_fn, params, h=h))
        results[name] = worst
    return results
