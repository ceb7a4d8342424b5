"""Acceptance gate: one test per criterion, one verdict line each.

The heavy criteria (5-8) train the shipped presets at full length, so
this file dominates the suite's runtime on one CPU core.
"""
import itertools
import time

import numpy as np
import pytest

from equicode.autodiff import EncoderModel, Tensor
from equicode.cli import _held_out_seed, load_config_dict
from equicode.decomposition import SubgroupBatch, invariance_score
from equicode.environments import sample_batch
from equicode.evaluation import preservation_eval, rank_eval
from equicode.gradcheck import CASES, run_gradcheck
from equicode.objectives import (Conformal, Finite, FiniteGroupTable,
                                 conformal_loss, embed_batch, euclidean_loss,
                                 finite_group_loss, verify_induced_action)
from equicode.training import TrainConfig, train


def _verdict(num, name, ok, detail=""):
    line = f"ACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    assert ok, line


def _preset(name, **overrides):
    d = load_config_dict(name)
    d.update(overrides)
    return TrainConfig.from_dict(d)


def _block_medians(model, cfg, seed):
    env = cfg.build_environment()
    out = []
    for block in ((0, 2), (2, 4)):
        rep = preservation_eval(model, env, n_batches=8, batch_size=16,
                                num_transforms=3, seed=seed, block=block)
        out.append(rep.distance["median"])
    return out


def test_criterion_01_gradient_correctness():
    t0 = time.monotonic()
    results = run_gradcheck(instances=20, seed=0)
    elapsed = time.monotonic() - t0
    worst = max(results.values())
    assert set(results) == set(CASES) and len(results) == 14
    _verdict(1, "gradient correctness",
             worst < 1e-4 and elapsed < 60.0,
             f"max rel err {worst:.2e} over {len(results)} losses, "
             f"{elapsed:.1f}s")


def test_criterion_02_isometry_fixed_point():
    rng = np.random.default_rng(0)
    worst_euc, worst_conf = 0.0, 0.0
    for _ in range(10):
        z0 = rng.normal(size=(8, 3))
        slices = [z0]
        for _ in range(3):
            q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            c = rng.normal(size=3)
            s = np.exp(rng.normal())  # random similarity scale
            slices.append(s * (z0 @ q.T) + c)
        # rigid motions only for the euclidean check
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        rigid = np.stack([z0, z0 @ q.T + rng.normal(size=3)])
        worst_euc = max(worst_euc, euclidean_loss(rigid).item())
        worst_conf = max(worst_conf,
                         conformal_loss(np.stack(slices)).item())
    _verdict(2, "isometry fixed point",
             worst_euc < 1e-18 and worst_conf < 1e-10,
             f"euclidean {worst_euc:.1e}, conformal-under-similarity "
             f"{worst_conf:.1e}")


def test_criterion_03_finite_group_oracle():
    # hand-derived two-block swap
    z = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    z_t = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]))
    swap = finite_group_loss(z, z_t, Finite(block_size=1, num_blocks=2,
                                            permutations=((0, 1), (1, 0))))
    ok = swap.item() == 0.0

    rng = np.random.default_rng(1)
    mismatches = 0
    for trial in range(100):
        m = 2 + trial % 5          # m in 2..6
        b = 1 + trial % 3
        B = 2 + trial % 3
        zr = Tensor(rng.normal(size=(B, m * b)))
        ztr = Tensor(rng.normal(size=(B, m * b)))
        enum = finite_group_loss(zr, ztr, Finite(
            block_size=b, num_blocks=m, strategy="enumerate")).item()
        assign = finite_group_loss(zr, ztr, Finite(
            block_size=b, num_blocks=m, strategy="assignment")).item()
        chamfer = finite_group_loss(zr, ztr, Finite(
            block_size=b, num_blocks=m, strategy="chamfer")).item()
        if enum != assign or chamfer > assign + 1e-12:
            mismatches += 1
    _verdict(3, "finite-group oracle", ok and mismatches == 0,
             f"swap example {swap.item()}, {mismatches}/100 mismatches")


def test_criterion_04_induced_action_verifier():
    rng = np.random.default_rng(2)
    t0 = time.monotonic()
    signal = rng.normal(size=8)
    points = [tuple(np.roll(signal, s)) for s in range(8)]
    group = FiniteGroupTable.cyclic(8)
    t_x = {(g, x): tuple(np.roll(np.asarray(x), g))
           for g in group.elements for x in points}
    f_table = {x: tuple(rng.normal(size=3)) for x in points}
    clean = verify_induced_action(f_table, t_x, group)

    t_x[(3, points[2])] = points[2]
    faulted = verify_induced_action(f_table, t_x, group)
    elapsed = time.monotonic() - t0
    _verdict(4, "induced-action verifier",
             clean.ok and not faulted.ok and elapsed < 1.0,
             f"{clean.num_checks} checks clean, fault detected, "
             f"{elapsed:.2f}s")


def test_criterion_05_double_bump_passive():
    t0 = time.monotonic()
    passing, ratios, details = 0, [], []
    for seed in (0, 1, 2):
        cfg = _preset("doublebump_passive", seed=seed)
        record, model = train(cfg)
        medians = _block_medians(model, cfg, _held_out_seed(cfg))
        ratios.append(record.events[-1]["symmetry"]
                      / record.events[0]["symmetry"])
        if max(medians) < 0.05:
            passing += 1
        details.append(f"seed {seed}: medians "
                       f"{medians[0]:.4f}/{medians[1]:.4f}")
    elapsed = time.monotonic() - t0
    # trainer-module sanity invariant, checked here to reuse the runs:
    # seed-averaged symmetry term at step 5000 < 1% of its step-0 value
    decay_ok = float(np.mean(ratios)) < 0.01
    _verdict(5, "double-bump passive reproduction",
             passing >= 2 and elapsed < 15 * 60 and decay_ok,
             f"{passing}/3 seeds < 0.05 ({'; '.join(details)}), "
             f"mean decay {np.mean(ratios):.4f}, {elapsed:.0f}s")


def test_criterion_06_double_bump_active():
    passing, details = 0, []
    for seed in (0, 1, 2):
        cfg = _preset("doublebump_active", seed=seed)
        _, model = train(cfg)
        env = cfg.build_environment()
        rng = np.random.default_rng(_held_out_seed(cfg))
        batches = [SubgroupBatch(index=j,
                                 batch=sample_batch(env, 32, 4, rng,
                                                    subgroup=j)[0])
                   for j in (0, 1) for _ in range(8)]
        s = invariance_score(model, batches, cfg.build_decomposition())
        off = max(s[0, 1], s[1, 0])
        diag = min(s[0, 0], s[1, 1])
        if off < 0.1 and diag > 0.5:
            passing += 1
        details.append(f"seed {seed}: offdiag {off:.3f} diag {diag:.3f}")
    _verdict(6, "double-bump active decomposition", passing >= 2,
             f"{passing}/3 seeds ({'; '.join(details)})")


def test_criterion_07_conformal_training():
    cfg = _preset("doublebump_conformal")
    _, model = train(cfg)
    env = cfg.build_environment()
    rep = preservation_eval(model, env, n_batches=8, batch_size=16,
                            num_transforms=3, seed=_held_out_seed(cfg))
    median = rep.cosine_angle["median"]

    rng = np.random.default_rng(_held_out_seed(cfg) + 1)
    batch, _ = sample_batch(env, 32, 4, rng)
    z_all = embed_batch(model, batch).data
    c = Conformal(max_triples=2048)
    scale_diff = abs(conformal_loss(z_all, c).item()
                     - conformal_loss(3.0 * z_all, c).item())
    _verdict(7, "conformal training",
             median < 0.05 and scale_diff < 1e-10,
             f"cosine residual median {median:.4f}, "
             f"scale-invariance diff {scale_diff:.1e}")


def test_criterion_08_pendulum_manifold():
    cfg = _preset("pendulum")
    _, model = train(cfg)
    env = cfg.build_environment()
    rep = preservation_eval(model, env, n_batches=6, batch_size=16,
                            num_transforms=3, seed=_held_out_seed(cfg))
    median = rep.distance["median"]

    rng = np.random.default_rng(_held_out_seed(cfg) + 7)
    train_states = env.sample_states(2000, rng)
    test_states = env.sample_states(500, rng)
    z_tr = model.embed(env.observe(train_states))
    z_te = model.embed(env.observe(test_states))
    nn = np.argmin(np.linalg.norm(z_te[:, None, :] - z_tr[None, :, :],
                                  axis=2), axis=1)
    ang_err = np.angle(np.exp(1j * (train_states[nn, 0]
                                    - test_states[:, 0])))
    mae = float(np.abs(ang_err).mean())
    sign_acc = float((np.sign(train_states[nn, 1])
                      == np.sign(test_states[:, 1])).mean())
    _verdict(8, "pendulum manifold sanity",
             median < 0.05 and mae < 0.3 and sign_acc > 0.9,
             f"distance median {median:.4f}, theta MAE {mae:.3f} rad, "
             f"sign(omega) acc {sign_acc:.3f}")


def test_criterion_09_ranking_metrics_oracle():
    rng = np.random.default_rng(3)
    n = 3

    class _Identity:
        def embed(self, x):
            return np.asarray(x, dtype=np.float64)

    class _FixedTransition:
        actions = [0]

        def __init__(self, outputs):
            self.outputs = outputs

        def predict(self, z, ids):
            return self.outputs

    mismatches = 0
    for trial in range(1000):
        T = 1 + trial % 4
        R = 2 + trial % 6
        quantize = trial % 3 == 0  # force frequent exact ties
        draw = (lambda size: np.round(rng.normal(size=size))
                if quantize else rng.normal(size=size))
        transitions = [(draw(n), 0, draw(n)) for _ in range(T)]
        refs = [draw(n) for _ in range(R)]
        preds = np.stack([draw(n) for _ in range(T)])
        rep = rank_eval(_FixedTransition(preds), _Identity(), transitions,
                        refs)
        for t in range(T):
            d_true = np.linalg.norm(preds[t] - transitions[t][2])
            d_all = sorted(np.linalg.norm(preds[t] - r) for r in refs)
            rank = 1 + sum(d < d_true for d in d_all) \
                + sum(d == d_true for d in d_all)
            if rep.ranks[t] != rank:
                mismatches += 1

    # exact invariance under a random similarity transform of all latents
    transitions = [(rng.normal(size=n), 0, rng.normal(size=n))
                   for _ in range(30)]
    refs = [rng.normal(size=n) for _ in range(12)]
    preds = rng.normal(size=(30, n))
    base = rank_eval(_FixedTransition(preds), _Identity(), transitions, refs)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    c, shift = 3.7, rng.normal(size=n)

    class _Sim:
        def embed(self, x):
            return c * np.asarray(x, dtype=np.float64) @ q.T + shift

    simmed = rank_eval(_FixedTransition(c * preds @ q.T + shift), _Sim(),
                       transitions, refs)
    invariant = (simmed.hits_at_1 == base.hits_at_1
                 and simmed.mrr == base.mrr)
    _verdict(9, "ranking metrics oracle", mismatches == 0 and invariant,
             f"{mismatches} rank mismatches over 1000 instances, "
             f"similarity-invariant {invariant}")


def test_criterion_10_preset_determinism(tmp_path):
    from equicode.evaluation import export_embeddings
    identical = True
    for preset, until in (("doublebump_passive", 30), ("pendulum", 5)):
        cfg = _preset(preset)
        artifacts = []
        for run in range(2):
            out = tmp_path / f"{preset}_{run}"
            record, model = train(cfg, out_dir=str(out), until=until)
            env = cfg.build_environment()
            rng = np.random.default_rng(_held_out_seed(cfg))
            states = env.sample_states(32, rng)
            csv = out / "emb.csv"
            export_embeddings(model, env.observe(states),
                              env.state_columns(states), str(csv))
            artifacts.append(((out / "run.ndjson").read_bytes(),
                              csv.read_bytes(), record.events))
        identical = identical and artifacts[0] == artifacts[1]
    _verdict(10, "preset determinism", identical,
             "run records and exports bit-identical across reruns")
