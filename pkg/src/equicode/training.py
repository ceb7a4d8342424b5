"""Seeded training loop with checkpointing and metric logging.

A run is fully determined by (config, seed): rng streams are split per
purpose (weight init / environment / subsampling) so that e.g. changing
the number of transformations does not perturb initialization, and the
whole sampling state travels inside checkpoints so a resumed run is
bit-identical to an uninterrupted one.
"""

import copy
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import decomposition as dec
from . import environments as envs
from . import objectives as obj
from .autodiff import (Adam, EncoderModel, backward, load_arrays, save_arrays)
from .errors import (CheckpointError, ConfigurationError, NumericalError)

log = logging.getLogger(__name__)


# -- configuration ------------------------------------------------------


def _require_keys(d, allowed, context):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigurationError(
            f"unknown keys {sorted(unknown)} in {context}")


def _build_objective(d):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "informed":
        _require_keys(d, {"actions"}, "objective")
        actions = {g: np.asarray(m, dtype=np.float64)
                   for g, m in d["actions"].items()}
        return obj.Informed(actions=actions)
    if kind == "finite":
        _require_keys(d, {"block_size", "num_blocks", "permutations",
                          "strategy"}, "objective")
        perms = d.get("permutations")
        if perms is not None:
            perms = tuple(tuple(p) for p in perms)
        return obj.Finite(block_size=d["block_size"],
                          num_blocks=d["num_blocks"],
                          permutations=perms,
                          strategy=d.get("strategy", "enumerate"))
    if kind == "euclidean":
        _require_keys(d, {"reduction"}, "objective")
        return obj.Euclidean(reduction=d.get("reduction", "mean"))
    if kind in ("orthogonal", "unitary"):
        _require_keys(d, {"include_diagonal", "reduction"}, "objective")
        return obj.Orthogonal(unitary=(kind == "unitary"),
                              include_diagonal=d.get("include_diagonal", True),
                              reduction=d.get("reduction", "mean"))
    if kind == "conformal":
        _require_keys(d, {"max_triples", "seed", "reduction"}, "objective")
        return obj.Conformal(max_triples=d.get("max_triples", 4096),
                             seed=d.get("seed", 0),
                             reduction=d.get("reduction", "mean"))
    raise ConfigurationError(f"unknown objective kind {kind!r}")


def _objective_to_dict(objective):
    if isinstance(objective, obj.Informed):
        return {"kind": "informed",
                "actions": {g: m.tolist()
                            for g, m in objective.actions.items()}}
    if isinstance(objective, obj.Finite):
        return {"kind": "finite", "block_size": objective.block_size,
                "num_blocks": objective.num_blocks,
                "permutations": (None if objective.permutations is None else
                                 [list(p) for p in objective.permutations]),
                "strategy": objective.strategy}
    if isinstance(objective, obj.Orthogonal):
        return {"kind": objective.kind,
                "include_diagonal": objective.include_diagonal,
                "reduction": objective.reduction}
    if isinstance(objective, obj.Conformal):
        return {"kind": "conformal", "max_triples": objective.max_triples,
                "seed": objective.seed, "reduction": objective.reduction}
    return {"kind": "euclidean", "reduction": objective.reduction}


@dataclass
class TrainConfig:
    """Everything a run needs; see presets/ for worked examples."""

    environment: dict
    encoder: dict                 # {"hidden": [...], "activation": ...}
    objective: dict = None        # single objective ...
    decomposition: dict = None    # ... or product-group spec
    barrier: dict = field(default_factory=lambda: {
        "kind": "log", "coefficient": 1.0})
    learning_rate: float = 1e-3
    lr_schedule: dict = field(default_factory=lambda: {"kind": "constant"})
    weight_decay: float = 1e-7
    steps: int = 5000
    batch_size: int = 64
    num_transforms: int = 3
    seed: int = 0
    checkpoint_interval: int = 500
    latent_dim: int = None        # required for single objectives

    @classmethod
    def from_dict(cls, d):
        _require_keys(d, {f for f in cls.__dataclass_fields__}, "config")
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def validate(self):
        if (self.objective is None) == (self.decomposition is None):
            raise ConfigurationError(
                "exactly one of 'objective' and 'decomposition' is required")
        if self.steps < 0 or self.batch_size < 2 or self.num_transforms < 1:
            raise ConfigurationError("steps/batch_size/num_transforms invalid")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigurationError("bad learning rate or weight decay")
        sched = self.lr_schedule
        if sched.get("kind") not in ("constant", "halve"):
            raise ConfigurationError("lr_schedule kind must be constant|halve")
        if sched.get("kind") == "halve" and sched.get("interval", 0) <= 0:
            raise ConfigurationError("halving schedule needs interval > 0")
        _require_keys(self.environment, {"name"} | {
            k for k in self.environment if k != "name"}, "environment")
        if "name" not in self.environment:
            raise ConfigurationError("environment.name is required")
        self.build_environment()  # fail on bad parameters before step 0
        _require_keys(self.encoder, {"hidden", "activation"}, "encoder")
        _require_keys(self.barrier,
                      {"kind", "coefficient", "epsilon", "reduction"},
                      "barrier")
        if self.objective is not None and self.latent_dim is None:
            o = _build_objective(self.objective)
            if isinstance(o, obj.Finite):
                self.latent_dim = o.latent_dim
            else:
                raise ConfigurationError(
                    "latent_dim is required with a single objective")
        if self.decomposition is not None:
            _require_keys(self.decomposition,
                          {"blocks", "mode", "invariance_weight", "reduction"},
                          "decomposition")

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k))
                for k in self.__dataclass_fields__}

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def build_environment(self):
        params = {k: v for k, v in self.environment.items() if k != "name"}
        try:
            return envs.make_environment(self.environment["name"], **params)
        except TypeError as exc:
            raise ConfigurationError(f"bad environment parameters: {exc}")

    def build_decomposition(self):
        if self.decomposition is None:
            return None
        d = self.decomposition
        blocks = [(dim, _build_objective(o)) for dim, o in d["blocks"]]
        return dec.DecompositionSpec(
            blocks=blocks, mode=d.get("mode", "passive"),
            invariance_weight=d.get("invariance_weight", 1.0),
            reduction=d.get("reduction", "mean"))

    def build_barrier(self):
        b = self.barrier
        return obj.BarrierSpec(kind=b.get("kind", "log"),
                               coefficient=b.get("coefficient", 1.0),
                               epsilon=b.get("epsilon", 1.0),
                               reduction=b.get("reduction", "sum"))

    def output_dim(self):
        spec = self.build_decomposition()
        if spec is not None:
            return spec.total_dim
        return int(self.latent_dim)


@dataclass
class RunRecord:
    """Append-only per-step loss log plus artifact paths."""

    config: dict
    config_hash: str
    events: list = field(default_factory=list)
    checkpoint_paths: list = field(default_factory=list)
    wall_clock: float = 0.0

    def log_step(self, step, symmetry, barrier, invariance, total):
        self.events.append({"step": step, "symmetry": symmetry,
                            "barrier": barrier, "invariance": invariance,
                            "total": total})

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump({"config": self.config, "hash": self.config_hash},
                      fh, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "run.ndjson"), "w") as fh:
            for event in self.events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")


# -- rng discipline -----------------------------------------------------


def _split_rngs(seed):
    init_ss, env_ss, sample_ss = np.random.SeedSequence(seed).spawn(3)
    return (init_ss.generate_state(1)[0],
            np.random.default_rng(env_ss),
            np.random.default_rng(sample_ss))


def _rng_state(rng):
    return json.loads(json.dumps(rng.bit_generator.state))


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


# -- trainer ------------------------------------------------------------


class Trainer:
    def __init__(self, config, out_dir=None):
        self.config = config
        self.out_dir = out_dir
        init_seed, self.env_rng, self.sample_rng = _split_rngs(config.seed)
        self.env = config.build_environment()
        widths = [self.env.observation_dim] + list(config.encoder["hidden"]) \
            + [config.output_dim()]
        self.model = EncoderModel(widths,
                                  activation=config.encoder["activation"],
                                  seed=int(init_seed))
        self.spec = config.build_decomposition()
        self.objective = (None if config.objective is None
                          else _build_objective(config.objective))
        if isinstance(self.objective, obj.Informed):
            raise ConfigurationError(
                "the informed objective is trained via informed_loss directly,"
                " not through the batch trainer")
        self.barrier = config.build_barrier()
        self.optimizer = Adam(self.model.parameters(), lr=config.learning_rate,
                              weight_decay=config.weight_decay)
        self.record = RunRecord(config=config.to_dict(),
                                config_hash=config.content_hash())
        self.step = 0
        if self.spec is not None and self.spec.mode == "active":
            if self.env.num_subgroups != self.spec.num_blocks:
                raise ConfigurationError(
                    f"environment exposes {self.env.num_subgroups} subgroups "
                    f"but the decomposition has {self.spec.num_blocks} blocks")

    def _lr_for_step(self, step):
        base = self.config.learning_rate
        sched = self.config.lr_schedule
        if sched.get("kind") == "halve":
            return base * 0.5 ** (step // int(sched["interval"]))
        return base

    def _loss_terms(self):
        """Sample a step's data and build (symmetry, barrier, invariance)."""
        cfg = self.config
        if self.spec is not None and self.spec.mode == "active":
            z_per = {}
            base_slices = []
            for j in range(self.spec.num_blocks):
                batch, _ = envs.sample_batch(self.env, cfg.batch_size,
                                             cfg.num_transforms, self.env_rng,
                                             subgroup=j)
                z_all = obj.embed_batch(self.model, batch)
                z_per[j] = z_all
                base_slices.append(z_all[0])
            sym = None
            inv = None
            for j, z_all in z_per.items():
                for i, (sl, (_, o)) in enumerate(
                        zip(self.spec.slices(), self.spec.blocks)):
                    block = z_all[:, :, sl]
                    if i == j:
                        term = obj.objective_loss(o, block,
                                                  rng=self.sample_rng)
                        sym = term if sym is None else sym + term
                    else:
                        term = obj.invariant_feature_loss(
                            block, reduction=self.spec.reduction)
                        inv = term if inv is None else inv + term
            inv = (inv * self.spec.invariance_weight if inv is not None
                   else None)
            barrier = self._barrier_term(base_slices)
            return sym, barrier, inv

        batch, _ = envs.sample_batch(self.env, cfg.batch_size,
                                     cfg.num_transforms, self.env_rng)
        z_all = obj.embed_batch(self.model, batch)
        if self.spec is not None:
            sym = dec.passive_loss_z(z_all, self.spec, rng=self.sample_rng)
        else:
            sym = obj.objective_loss(self.objective, z_all,
                                     rng=self.sample_rng)
        barrier = self._barrier_term([z_all[0]])
        return sym, barrier, None

    def _barrier_term(self, base_embeddings):
        # barrier only across base embeddings: a pair (x, t(g, x)) may
        # legitimately coincide at a fixed point of the action. With a
        # decomposition the barrier is applied per block: a block can
        # otherwise collapse to zero its own symmetry loss while the
        # concatenated embedding stays injective.
        if self.barrier.coefficient == 0.0:
            return None
        term = None
        for z0 in base_embeddings:
            if self.spec is not None:
                for sl in self.spec.slices():
                    t = obj.injectivity_loss(z0[:, sl], self.barrier)
                    term = t if term is None else term + t
            else:
                t = obj.injectivity_loss(z0, self.barrier)
                term = t if term is None else term + t
        return term

    def run(self, until=None):
        cfg = self.config
        target = cfg.steps if until is None else min(until, cfg.steps)
        t0 = time.monotonic()
        while self.step < target:
            self.optimizer.lr = self._lr_for_step(self.step)
            self.model.zero_grad()
            sym, barrier, inv = self._loss_terms()
            total = sym
            if barrier is not None:
                total = total + barrier
            if inv is not None:
                total = total + inv
            total_val = total.item()
            if not np.isfinite(total_val):
                self.record.wall_clock += time.monotonic() - t0
                raise NumericalError(
                    f"non-finite loss at step {self.step}; last checkpoint "
                    f"retained: {self.record.checkpoint_paths[-1:]}")
            backward(total)
            self.optimizer.step()
            self.step += 1
            self.record.log_step(
                self.step, sym.item(),
                0.0 if barrier is None else barrier.item(),
                0.0 if inv is None else inv.item(), total_val)
            if self.out_dir and cfg.checkpoint_interval > 0 and \
                    self.step % cfg.checkpoint_interval == 0:
                self.save_checkpoint()
        self.record.wall_clock += time.monotonic() - t0
        if self.out_dir:
            self.save_checkpoint(final=(self.step >= cfg.steps))
            self.record.write(self.out_dir)
        return self.record, self.model

    # -- checkpointing --------------------------------------------------

    def save_checkpoint(self, final=False):
        os.makedirs(self.out_dir, exist_ok=True)
        name = "final.ckpt" if final else f"step{self.step:06d}.ckpt"
        path = os.path.join(self.out_dir, name)
        header = {
            "widths": self.model.widths,
            "activation": self.model.activation,
            "seed": self.model.seed,
            "step": self.step,
            "adam_step": self.optimizer.step_count,
            "config_hash": self.record.config_hash,
            "env_rng": _rng_state(self.env_rng),
            "sample_rng": _rng_state(self.sample_rng),
            "events": self.record.events,
        }
        arrays = {}
        arrays.update(self.model.state_arrays())
        arrays.update(self.optimizer.state_arrays())
        save_arrays(path, header, arrays)
        if path not in self.record.checkpoint_paths:
            self.record.checkpoint_paths.append(path)
        return path

    def load_checkpoint(self, path):
        header, arrays = load_arrays(path)
        if header["config_hash"] != self.record.config_hash:
            raise CheckpointError(
                "checkpoint belongs to a different config "
                f"({header['config_hash'][:12]} != "
                f"{self.record.config_hash[:12]})")
        self.model.load_state_arrays(arrays)
        self.optimizer.load_state_arrays(arrays, header["adam_step"])
        _set_rng_state(self.env_rng, header["env_rng"])
        _set_rng_state(self.sample_rng, header["sample_rng"])
        self.step = int(header["step"])
        self.record.events = list(header["events"])


def train(config, out_dir=None, until=None):
    """Run a full (or truncated) training job; returns (record, model)."""
    trainer = Trainer(config, out_dir=out_dir)
    return trainer.run(until=until)


def resume(config, checkpoint_path, out_dir=None):
    """Continue a run from a checkpoint; bitwise-identical to no pause."""
    trainer = Trainer(config, out_dir=out_dir)
    trainer.load_checkpoint(checkpoint_path)
    if trainer.step >= config.steps:
        return trainer.record, trainer.model
    return trainer.run()
