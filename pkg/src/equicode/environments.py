"""Synthetic G-set environments.

Each environment produces observations and same-element transformed
copies without revealing the group element to the learner. Ground-truth
state variables travel in a sealed evaluation record that the training
path never touches.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, SamplingError
from .objectives import TransformBatch


@dataclass
class EvaluationRecord:
    """Ground truth for a sampled batch; evaluation-only."""

    state_columns: dict        # name -> [B] array of base-state variables
    elements: list             # the K group elements drawn
    transformed_columns: dict = field(default_factory=dict)  # name -> [K, B]


class Environment:
    """Common interface: sample states, observe them, act on them."""

    observation_dim = None

    def sample_states(self, count, rng):
        raise NotImplementedError

    def observe(self, states):
        raise NotImplementedError

    def random_elements(self, count, rng):
        raise NotImplementedError

    def apply(self, element, states):
        raise NotImplementedError

    def state_columns(self, states):
        raise NotImplementedError

    # subgroup support (active decomposition); override where meaningful
    num_subgroups = 0

    def random_subgroup_elements(self, index, count, rng):
        raise ConfigurationError(
            f"{type(self).__name__} has no subgroup structure")


def sample_batch(env, num_observations, num_transforms, rng, subgroup=None):
    """Draw B states and K unknown group elements; returns (batch, record).

    `transformed[k][i]` is state i advanced by element k. The record
    carries the hidden elements and ground-truth state variables and is
    meant for evaluation only.
    """
    B, K = int(num_observations), int(num_transforms)
    if B < 2 or K < 1:
        raise DimensionError("sample_batch needs B >= 2 and K >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    states = env.sample_states(B, rng)
    if subgroup is None:
        elements = env.random_elements(K, rng)
    else:
        elements = env.random_subgroup_elements(subgroup, K, rng)
    base = env.observe(states)
    transformed = np.empty((K,) + base.shape)
    t_columns = {}
    for k, g in enumerate(elements):
        new_states = env.apply(g, states)
        transformed[k] = env.observe(new_states)
        for name, col in env.state_columns(new_states).items():
            t_columns.setdefault(name, np.empty((K, B)))[k] = col
    record = EvaluationRecord(state_columns=env.state_columns(states),
                              elements=list(elements),
                              transformed_columns=t_columns)
    return TransformBatch(base=base, transformed=transformed), record


def collect_rl_quads(env, episodes, steps_per_episode, rng):
    """Roll out episodes and bucket (x, x_t) transitions per action.

    Pairs drawn from one bucket share the same (unknown) group element,
    which is exactly the data contract of the pairwise losses.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    actions = env.action_set
    buffers = {a: [] for a in actions}
    for _ in range(int(episodes)):
        states = env.sample_states(1, rng)
        for _ in range(int(steps_per_episode)):
            a = actions[rng.integers(len(actions))]
            new_states = env.apply(a, states)
            buffers[a].append((env.observe(states)[0],
                               env.observe(new_states)[0]))
            states = new_states
    return buffers


def quads_to_batch(buffers, action, num_pairs, rng):
    """Build a same-element TransformBatch from one action's buffer."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    pool = buffers.get(action, [])
    if not pool:
        raise SamplingError(f"empty transition buffer for action {action!r}")
    idx = rng.integers(len(pool), size=int(num_pairs))
    base = np.stack([pool[i][0] for i in idx])
    transformed = np.stack([pool[i][1] for i in idx])[None]
    return TransformBatch(base=base, transformed=transformed)


# -- double-bump world --------------------------------------------------


def _rectangle_bump(width):
    return np.ones(width)


def _triangle_bump(width):
    half = (width - 1) / 2.0
    return 1.0 - np.abs(np.arange(width) - half) / half


class DoubleBumpWorld(Environment):
    """Superimposed cyclically shifted rectangle and triangle bumps.

    State (d1, d2) in Z_L x Z_L; the group is cyclic shifts of each bump
    independently, acting exactly on the raw signal. Overlap sums to 2.0
    (no clipping), so the observation keeps full state information.
    """

    num_subgroups = 2

    def __init__(self, length=64, bump_width=16):
        self.length = int(length)
        self.bump_width = int(bump_width)
        self.observation_dim = self.length
        self._rect = np.zeros(self.length)
        self._rect[:self.bump_width] = _rectangle_bump(self.bump_width)
        self._tri = np.zeros(self.length)
        self._tri[:self.bump_width] = _triangle_bump(self.bump_width)

    def sample_states(self, count, rng):
        return rng.integers(self.length, size=(count, 2))

    def observe(self, states):
        states = np.asarray(states)
        out = np.empty((len(states), self.length))
        for i, (d1, d2) in enumerate(states):
            out[i] = np.roll(self._rect, int(d1)) + np.roll(self._tri, int(d2))
        return out

    def random_elements(self, count, rng):
        return [tuple(e) for e in rng.integers(self.length, size=(count, 2))]

    def random_subgroup_elements(self, index, count, rng):
        if index not in (0, 1):
            raise ConfigurationError("double-bump world has subgroups 0 and 1")
        # nonzero shifts: an identity "transformation" teaches nothing
        shifts = 1 + rng.integers(self.length - 1, size=count)
        if index == 0:
            return [(int(s), 0) for s in shifts]
        return [(0, int(s)) for s in shifts]

    def apply(self, element, states):
        d1, d2 = element
        states = np.asarray(states)
        return np.stack([(states[:, 0] + d1) % self.length,
                         (states[:, 1] + d2) % self.length], axis=1)

    def state_columns(self, states):
        states = np.asarray(states)
        return {"shift_rect": states[:, 0].astype(float),
                "shift_tri": states[:, 1].astype(float)}


# -- pendulum -----------------------------------------------------------


def render_rod(angles, size=32, length_frac=0.9, width=2.0):
    """Anti-aliased rod frames: [F, size*size] grayscale in [0, 1].

    The rod hangs from the image center; angle 0 points down and grows
    counterclockwise. Anti-aliasing makes the map injective in the angle
    at this resolution.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    c = (size - 1) / 2.0
    rod_len = length_frac * c
    ys, xs = np.mgrid[0:size, 0:size]
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)

    # rod endpoint per frame; screen y grows downward
    end = np.stack([c + rod_len * np.sin(angles),
                    c + rod_len * np.cos(angles)], axis=1)
    d = end - c                                    # [F, 2]
    rel = pix[None, :, :] - c                      # [1, P, 2]
    denom = (d * d).sum(axis=1)[:, None]
    t = np.clip((rel * d[:, None, :]).sum(axis=2) / denom, 0.0, 1.0)
    nearest = t[:, :, None] * d[:, None, :]
    dist = np.linalg.norm(rel - nearest, axis=2)
    return np.clip(0.5 + width / 2.0 - dist, 0.0, 1.0)


class PendulumSim(Environment):
    """Torque-driven pendulum rendered to two consecutive 32x32 frames.

    Dynamics theta'' = -(g/l) sin(theta) - damping * omega + torque,
    integrated with semi-implicit Euler at time step dt. An observation
    concatenates the frame at theta - dt*omega and the frame at theta,
    so it determines both location and velocity.
    """

    def __init__(self, dt=0.05, gravity=10.0, rod_length=1.0, damping=0.0,
                 torques=(-2.0, 0.0, 2.0), max_speed=8.0, frame_size=32,
                 action_repeat=1):
        self.dt = float(dt)
        self.gravity = float(gravity)
        self.rod_length = float(rod_length)
        self.damping = float(damping)
        self.torques = tuple(float(u) for u in torques)
        self.max_speed = float(max_speed)
        self.frame_size = int(frame_size)
        self.action_repeat = int(action_repeat)
        self.observation_dim = 2 * self.frame_size ** 2

    @property
    def action_set(self):
        return self.torques

    def sample_states(self, count, rng):
        theta = rng.uniform(-np.pi, np.pi, size=count)
        omega = rng.uniform(-self.max_speed, self.max_speed, size=count)
        return np.stack([theta, omega], axis=1)

    def _step_arrays(self, theta, omega, torque):
        accel = -(self.gravity / self.rod_length) * np.sin(theta) \
            - self.damping * omega + torque
        omega = np.clip(omega + self.dt * accel,
                        -self.max_speed, self.max_speed)
        theta = theta + self.dt * omega
        return theta, omega

    def observe(self, states):
        states = np.asarray(states, dtype=np.float64)
        theta, omega = states[:, 0], states[:, 1]
        prev = render_rod(theta - self.dt * omega, self.frame_size)
        curr = render_rod(theta, self.frame_size)
        return np.concatenate([prev, curr], axis=1)

    def random_elements(self, count, rng):
        return [self.torques[i]
                for i in rng.integers(len(self.torques), size=count)]

    def apply(self, element, states):
        states = np.asarray(states, dtype=np.float64)
        theta, omega = states[:, 0].copy(), states[:, 1].copy()
        for _ in range(self.action_repeat):
            theta, omega = self._step_arrays(theta, omega, float(element))
        return np.stack([theta, omega], axis=1)

    def state_columns(self, states):
        states = np.asarray(states, dtype=np.float64)
        return {"theta": np.arctan2(np.sin(states[:, 0]),
                                    np.cos(states[:, 0])),
                "omega": states[:, 1]}

    def energy(self, states):
        states = np.asarray(states, dtype=np.float64)
        g_over_l = self.gravity / self.rod_length
        return 0.5 * states[:, 1] ** 2 - g_over_l * np.cos(states[:, 0])


# -- mountain car (same dynamical-system interface; not in presets) -----


class MountainCarSim(Environment):
    """Classic mountain-car dynamics rendered to two consecutive frames.

    Ships for interface parity with the pendulum; none of the shipped
    presets or tests train on it.
    """

    def __init__(self, dt=1.0, force=0.001, slope=0.0025,
                 accelerations=(-1.0, 0.0, 1.0), frame_size=32):
        self.dt = float(dt)
        self.force = float(force)
        self.slope = float(slope)
        self.accelerations = tuple(float(a) for a in accelerations)
        self.frame_size = int(frame_size)
        self.observation_dim = 2 * self.frame_size ** 2

    @property
    def action_set(self):
        return self.accelerations

    def sample_states(self, count, rng):
        pos = rng.uniform(-1.2, 0.6, size=count)
        vel = rng.uniform(-0.07, 0.07, size=count)
        return np.stack([pos, vel], axis=1)

    def _render(self, positions):
        size = self.frame_size
        frames = np.zeros((len(positions), size, size))
        xs = ((positions + 1.2) / 1.8 * (size - 1)).clip(0, size - 1)
        ys = ((np.sin(3 * positions) + 1.0) / 2.0 * (size - 3)).clip(0, size - 1)
        for i, (x, y) in enumerate(zip(xs, ys)):
            xi, yi = int(round(x)), size - 1 - int(round(y))
            frames[i, max(yi - 1, 0):yi + 1, max(xi - 1, 0):xi + 1] = 1.0
        return frames.reshape(len(positions), -1)

    def observe(self, states):
        states = np.asarray(states, dtype=np.float64)
        prev_pos = states[:, 0] - self.dt * states[:, 1]
        return np.concatenate([self._render(prev_pos),
                               self._render(states[:, 0])], axis=1)

    def random_elements(self, count, rng):
        return [self.accelerations[i]
                for i in rng.integers(len(self.accelerations), size=count)]

    def apply(self, element, states):
        states = np.asarray(states, dtype=np.float64)
        pos, vel = states[:, 0], states[:, 1]
        vel = np.clip(vel + self.dt * (self.force * float(element)
                                       - self.slope * np.cos(3 * pos)),
                      -0.07, 0.07)
        pos = np.clip(pos + self.dt * vel, -1.2, 0.6)
        return np.stack([pos, vel], axis=1)

    def state_columns(self, states):
        states = np.asarray(states, dtype=np.float64)
        return {"position": states[:, 0], "velocity": states[:, 1]}


# -- planar rotation ----------------------------------------------------


class PlanarRotationWorld(Environment):
    """A fixed planar point set observed after an exact SO(2) rotation.

    The observation is the flattened rotated coordinates, so the input
    action is already a linear isometry of the observation vector.
    """

    def __init__(self, num_points=8, seed=0):
        rng = np.random.default_rng(seed)
        self.points = rng.normal(size=(int(num_points), 2))
        self.observation_dim = 2 * int(num_points)

    def sample_states(self, count, rng):
        return rng.uniform(0.0, 2.0 * np.pi, size=count)

    def observe(self, states):
        states = np.atleast_1d(np.asarray(states, dtype=np.float64))
        c, s = np.cos(states), np.sin(states)
        rot = np.stack([np.stack([c, -s], axis=1),
                        np.stack([s, c], axis=1)], axis=1)  # [B, 2, 2]
        return np.einsum("bij,pj->bpi", rot, self.points).reshape(
            len(states), -1)

    def random_elements(self, count, rng):
        return list(rng.uniform(0.0, 2.0 * np.pi, size=count))

    def apply(self, element, states):
        return (np.asarray(states, dtype=np.float64) + float(element)) \
            % (2.0 * np.pi)

    def state_columns(self, states):
        return {"angle": np.asarray(states, dtype=np.float64)}


# -- block shuffle ------------------------------------------------------


class BlockShuffleWorld(Environment):
    """m fixed feature slots reordered by a configured permutation group."""

    def __init__(self, num_slots=4, slot_width=3, permutations=None, seed=0):
        self.num_slots = int(num_slots)
        self.slot_width = int(slot_width)
        rng = np.random.default_rng(seed)
        self.slot_features = rng.normal(size=(self.num_slots, self.slot_width))
        if permutations is None:
            import itertools
            permutations = list(itertools.permutations(range(self.num_slots)))
        self.permutations = [tuple(int(i) for i in p) for p in permutations]
        self.observation_dim = self.num_slots * self.slot_width

    def sample_states(self, count, rng):
        picks = rng.integers(len(self.permutations), size=count)
        return [self.permutations[i] for i in picks]

    def observe(self, states):
        return np.stack([self.slot_features[list(order)].reshape(-1)
                         for order in states])

    def random_elements(self, count, rng):
        picks = rng.integers(len(self.permutations), size=count)
        return [self.permutations[i] for i in picks]

    def apply(self, element, states):
        return [tuple(order[element[j]] for j in range(self.num_slots))
                for order in states]

    def state_columns(self, states):
        codes = [sum(order[j] * self.num_slots ** j
                     for j in range(self.num_slots)) for order in states]
        return {"order_code": np.asarray(codes, dtype=float)}


ENVIRONMENTS = {
    "double_bump": DoubleBumpWorld,
    "pendulum": PendulumSim,
    "mountain_car": MountainCarSim,
    "planar_rotation": PlanarRotationWorld,
    "block_shuffle": BlockShuffleWorld,
}


def make_environment(name, **params):
    if name not in ENVIRONMENTS:
        raise ConfigurationError(f"unknown environment {name!r}")
    return ENVIRONMENTS[name](**params)
