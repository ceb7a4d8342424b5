"""Pendulum frames to a 3-D manifold, then a latent world model.

An encoder is trained on two-frame pendulum observations with the
distance-preservation objective; a transition MLP is then fitted in the
frozen latent space and scored with H@1 / MRR against reference
embeddings. The embedding CSV (z0..z2, theta, omega) can be scatter-
plotted to see the cylinder-like manifold.

Pass --steps to shorten the run (the shipped preset uses 5000).
"""
import argparse

import numpy as np

from equicode.cli import _held_out_seed, load_config_dict
from equicode.environments import collect_rl_quads
from equicode.evaluation import (export_embeddings, fit_transition,
                                 preservation_eval, rank_eval)
from equicode.training import TrainConfig, train

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="pendulum_embeddings.csv")
    args = ap.parse_args()

    cfg_dict = load_config_dict("pendulum")
    cfg_dict["steps"] = args.steps
    cfg_dict["seed"] = args.seed
    cfg = TrainConfig.from_dict(cfg_dict)

    record, model = train(cfg)
    env = cfg.build_environment()
    rep = preservation_eval(model, env, n_batches=4, batch_size=12,
                            seed=_held_out_seed(cfg))
    print(f"held-out distance residual median: {rep.distance['median']:.4f}")

    rng = np.random.default_rng(_held_out_seed(cfg))
    buffers = collect_rl_quads(env, episodes=8, steps_per_episode=25, rng=rng)
    transitions = [(x, a, x_t) for a, pairs in buffers.items()
                   for x, x_t in pairs]
    transition = fit_transition(model, transitions, steps=500, seed=1)
    refs = [transitions[i][0]
            for i in rng.choice(len(transitions), size=64, replace=False)]
    report = rank_eval(transition, model, transitions, refs)
    print(f"latent world model: H@1 {report.hits_at_1:.3f}  "
          f"MRR {report.mrr:.3f}  ({report.reference_size} references)")

    states = env.sample_states(512, rng)
    export_embeddings(model, env.observe(states), env.state_columns(states),
                      args.out)
    print(f"embeddings written to {args.out} (columns z0..z2, theta, omega)")
