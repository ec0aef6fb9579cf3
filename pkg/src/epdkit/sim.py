"""Toy 2-D push/pick environment with perception-driven scripted control.

One shared controller family produces episode traces; three reward
aggregators (cumulative, discounted entropy-regularized, inverse-goal-
distance weighted) score each trace. All randomness is seeded, so an
episode is a pure function of (scene seed, task, distortion spec, params).

Geometry lives in the unit square; observations are 128x128 RGB renders
(goal: filled circle r=8 px, object: 12 px square, gripper: 8 px cross).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .distortions import DistortionSpec, apply_distortion
from .rng import derive_seed, frame_seed, make_rng

IMG_SIZE = 128
OBJECT_SIZE_PX = 12
GOAL_RADIUS_PX = 8
GRIPPER_ARM_PX = 8
GRIPPER_COLOR = np.array([0.02, 0.02, 0.02])

EPISODE_STEPS = 50

TASKS = ("push", "pick")


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class Scene:
    object_pos: tuple
    goal_pos: tuple
    gripper_pos: tuple
    object_color: tuple
    goal_color: tuple
    table_background: tuple
    scene_seed: int


@dataclass(frozen=True)
class RewardParams:
    gamma: float = 0.99  # discount for the entropy-regularized aggregate
    alpha: float = 0.1  # entropy weight
    lam: float = 0.5  # inverse-distance weight
    eps_d: float = 0.01  # distance clamp against the 1/D singularity


@dataclass(frozen=True)
class SimParams:
    a_max: float = 0.05
    sigma_min: float = 0.005
    sigma_max: float = 0.05
    capture_radius: float = 0.04
    contact_radius: float = 0.055
    tau_c: float = 0.25  # RGB L2 segmentation threshold
    kp: float = 2.0  # proportional gain
    goal_tol: float = 0.02  # push per-step bonus radius
    lift_rate: float = 0.125  # lift progress per held step
    lift_weight: float = 0.2  # weight of (1 - lift) in the pick distance


@dataclass
class StepRecord:
    t: int
    state: dict
    action: tuple
    reward: float
    entropy: float
    distance: float
    clipped: bool = False


@dataclass
class EpisodeResult:
    trace: list
    j_ppo: float
    j_sac: float
    j_tdmpc2: float
    mean_reward: float
    task: str
    scene_seed: int
    spec: DistortionSpec | None
    ref_frame: np.ndarray | None = None
    eval_frame: np.ndarray | None = None  # distorted initial frame

    def agent_scores(self) -> dict:
        return {"ppo": self.j_ppo, "sac": self.j_sac, "tdmpc2": self.j_tdmpc2}


# ---------------------------------------------------------------------------
# scene sampling / rendering


def random_scene(scene_seed: int) -> Scene:
    rng = make_rng(derive_seed(scene_seed, 0x5CE7E))
    while True:
        obj = rng.uniform(0.15, 0.85, 2)
        goal = rng.uniform(0.15, 0.85, 2)
        grip = rng.uniform(0.10, 0.90, 2)
        if (
            np.linalg.norm(obj - goal) < 0.2
            or np.linalg.norm(grip - obj) < 0.12
            or np.linalg.norm(grip - goal) < 0.12
        ):
            continue
        bg = rng.uniform(0.35, 0.65, 3)
        oc = rng.uniform(0.1, 1.0, 3)
        gc = rng.uniform(0.1, 1.0, 3)
        palette = [bg, oc, gc, GRIPPER_COLOR]
        ok = all(
            np.linalg.norm(palette[i] - palette[j]) >= 0.3
            for i in range(len(palette))
            for j in range(i + 1, len(palette))
        )
        if ok:
            return Scene(
                object_pos=tuple(obj),
                goal_pos=tuple(goal),
                gripper_pos=tuple(grip),
                object_color=tuple(oc),
                goal_color=tuple(gc),
                table_background=tuple(bg),
                scene_seed=scene_seed,
            )


@dataclass
class SimState:
    object_pos: np.ndarray
    goal_pos: np.ndarray
    gripper_pos: np.ndarray
    held: bool = False
    lift: float = 0.0

    @classmethod
    def from_scene(cls, scene: Scene):
        return cls(
            object_pos=np.array(scene.object_pos, dtype=np.float64),
            goal_pos=np.array(scene.goal_pos, dtype=np.float64),
            gripper_pos=np.array(scene.gripper_pos, dtype=np.float64),
        )

    def snapshot(self) -> dict:
        return {
            "object_pos": tuple(self.object_pos),
            "goal_pos": tuple(self.goal_pos),
            "gripper_pos": tuple(self.gripper_pos),
            "held": self.held,
            "lift": self.lift,
        }


def _px(pos: float) -> int:
    return int(round(pos * IMG_SIZE))


def render_observation(scene: Scene, state: SimState | None = None) -> np.ndarray:
    """Deterministic rasterization of the current state (no anti-aliasing)."""
    st = state or SimState.from_scene(scene)
    img = np.empty((IMG_SIZE, IMG_SIZE, 3))
    img[:] = scene.table_background

    # goal marker: filled circle
    cy, cx = _px(st.goal_pos[1]), _px(st.goal_pos[0])
    yy, xx = np.mgrid[0:IMG_SIZE, 0:IMG_SIZE]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= GOAL_RADIUS_PX**2] = scene.goal_color

    # object: filled square
    oy, ox = _px(st.object_pos[1]), _px(st.object_pos[0])
    half = OBJECT_SIZE_PX // 2
    y0, y1 = max(0, oy - half), min(IMG_SIZE, oy + half)
    x0, x1 = max(0, ox - half), min(IMG_SIZE, ox + half)
    img[y0:y1, x0:x1] = scene.object_color

    # gripper: cross
    gy, gx = _px(st.gripper_pos[1]), _px(st.gripper_pos[0])
    arm = GRIPPER_ARM_PX
    ys = slice(max(0, gy - arm), min(IMG_SIZE, gy + arm))
    xs = slice(max(0, gx - arm), min(IMG_SIZE, gx + arm))
    if 0 <= gy < IMG_SIZE:
        img[max(0, gy - 1) : min(IMG_SIZE, gy + 1), xs] = GRIPPER_COLOR
    if 0 <= gx < IMG_SIZE:
        img[ys, max(0, gx - 1) : min(IMG_SIZE, gx + 1)] = GRIPPER_COLOR
    return img


# ---------------------------------------------------------------------------
# perception


@dataclass
class Estimate:
    object_pos: np.ndarray
    goal_pos: np.ndarray
    object_conf: float
    goal_conf: float


_CENTER = np.array([0.5, 0.5])
_OBJ_FOOTPRINT = OBJECT_SIZE_PX * OBJECT_SIZE_PX
_GOAL_FOOTPRINT = math.pi * GOAL_RADIUS_PX**2


def _segment(obs, color, tau, footprint):
    d2 = ((obs - np.asarray(color)) ** 2).sum(axis=2)
    mask = d2 < tau * tau
    count = int(mask.sum())
    if count == 0:
        return None, 0.0
    ys, xs = np.nonzero(mask)
    pos = np.array([(xs.mean() + 0.5) / IMG_SIZE, (ys.mean() + 0.5) / IMG_SIZE])
    return pos, min(1.0, count / footprint)


def perceive(obs: np.ndarray, scene: Scene, params: SimParams = SimParams(),
             fallback: Estimate | None = None) -> Estimate:
    """Colour-segmentation perception; degrades gracefully under distortion."""
    if obs.shape[:2] != (IMG_SIZE, IMG_SIZE):
        raise SimError(f"expected {IMG_SIZE}x{IMG_SIZE} observation, got {obs.shape[:2]}")
    obj, obj_conf = _segment(obs, scene.object_color, params.tau_c, _OBJ_FOOTPRINT)
    goal, goal_conf = _segment(obs, scene.goal_color, params.tau_c, _GOAL_FOOTPRINT)
    if obj is None:
        obj = fallback.object_pos if fallback is not None else _CENTER.copy()
    if goal is None:
        goal = fallback.goal_pos if fallback is not None else _CENTER.copy()
    return Estimate(object_pos=obj, goal_pos=goal, object_conf=obj_conf, goal_conf=goal_conf)


# ---------------------------------------------------------------------------
# control


def make_policy_rng(policy_seed: int) -> np.random.Generator:
    return make_rng(derive_seed(policy_seed, 0xAC7104))


def _clip_norm(v, limit):
    n = float(np.linalg.norm(v))
    if n > limit:
        return v * (limit / n), True
    return v, False


def scripted_policy(est: Estimate, task: str, gripper_pos: np.ndarray, held: bool,
                    rng: np.random.Generator, params: SimParams = SimParams()):
    """Proportional controller with confidence-scaled Gaussian action noise.

    Returns (action, entropy). Action is 2-D for push, 3-D (xy + grip/lift
    channel) for pick.
    """
    if task == "push":
        conf = min(est.object_conf, est.goal_conf)
        to_goal = est.goal_pos - est.object_pos
        dist_goal = float(np.linalg.norm(to_goal))
        speed = params.a_max
        if dist_goal < params.goal_tol:
            # task solved: back off so jitter cannot shove the object again
            away = gripper_pos - est.object_pos
            n_away = float(np.linalg.norm(away))
            away = away / n_away if n_away > 1e-9 else np.array([1.0, 0.0])
            target = gripper_pos + away * params.a_max
        else:
            direction = to_goal / dist_goal
            behind = est.object_pos - direction * params.contact_radius * 0.9
            to_obj = est.object_pos - gripper_pos
            dist_obj = float(np.linalg.norm(to_obj))
            aligned = dist_obj > 1e-9 and float(np.dot(to_obj / dist_obj, direction)) > 0.85
            if aligned and dist_obj < params.contact_radius * 2.5:
                # in pushing position: drive through the object toward the
                # goal, easing off as the object closes in on it
                target = est.object_pos + direction * 0.1
                speed = min(params.a_max, max(0.008, dist_goal))
            else:
                target = behind
                to_target = target - gripper_pos
                blocking = (
                    dist_obj < params.contact_radius * 1.6
                    and float(np.linalg.norm(to_target)) > 1e-9
                    and float(np.dot(to_target / np.linalg.norm(to_target), to_obj / max(dist_obj, 1e-9))) > 0.3
                )
                if blocking:
                    # detour tangentially around the object
                    perp = np.array([-to_obj[1], to_obj[0]])
                    if float(np.dot(perp, to_target)) < 0:
                        perp = -perp
                    target = gripper_pos + perp
        raw = params.kp * (target - gripper_pos)
        k = 2
    elif task == "pick":
        conf = est.object_conf
        speed = params.a_max
        if held:
            raw = np.zeros(2)
        else:
            raw = params.kp * (est.object_pos - gripper_pos)
        k = 3
    else:
        raise SimError(f"unknown task {task!r}")

    sigma = params.sigma_min + (1.0 - conf) * (params.sigma_max - params.sigma_min)
    noise = rng.normal(0.0, sigma, 2)
    xy, _ = _clip_norm(raw + noise, speed)
    entropy = 0.5 * k * math.log(2 * math.pi * math.e * sigma * sigma)

    if task == "push":
        return xy, entropy
    grip = 1.0 if (held or float(np.linalg.norm(est.object_pos - gripper_pos)) < params.capture_radius) else 0.0
    return np.array([xy[0], xy[1], grip]), entropy


# ---------------------------------------------------------------------------
# dynamics


def task_distance(state: SimState, task: str, params: SimParams = SimParams()) -> float:
    if task == "push":
        return float(np.linalg.norm(state.object_pos - state.goal_pos))
    d = 0.0 if state.held else float(np.linalg.norm(state.gripper_pos - state.object_pos))
    return d + params.lift_weight * (1.0 - state.lift)


def step(state: SimState, task: str, action, params: SimParams = SimParams()):
    """Kinematic update; returns (reward, distance, clipped_flag)."""
    action = np.asarray(action, dtype=np.float64)
    expected_dim = 2 if task == "push" else 3
    if action.shape != (expected_dim,):
        raise SimError(f"{task} action must be {expected_dim}-D, got {action.shape}")
    d_prev = task_distance(state, task, params)

    xy, clipped = _clip_norm(action[:2], params.a_max)
    new_grip = np.clip(state.gripper_pos + xy, 0.02, 0.98)

    bonus = 0.0
    if task == "push":
        # contact normal from the pre-move gripper position, so an
        # overshooting gripper still pushes the object forward
        gap = state.object_pos - state.gripper_pos
        dist0 = float(np.linalg.norm(gap))
        direction = gap / dist0 if dist0 > 1e-9 else np.array([1.0, 0.0])
        state.gripper_pos = new_grip
        if float(np.linalg.norm(state.object_pos - state.gripper_pos)) < params.contact_radius:
            state.object_pos = np.clip(
                state.gripper_pos + direction * params.contact_radius, 0.05, 0.95
            )
        d_now = task_distance(state, task, params)
        if d_now < params.goal_tol:
            bonus += 1.0
    else:
        state.gripper_pos = new_grip
        grip_on = action[2] > 0.5
        if state.held:
            state.object_pos = state.gripper_pos.copy()
            if grip_on:
                state.lift = min(1.0, state.lift + params.lift_rate)
                if state.lift >= 1.0:
                    bonus += 1.0  # held at lift height
            else:
                state.held = False
                state.lift = 0.0
        elif grip_on and float(np.linalg.norm(state.gripper_pos - state.object_pos)) < params.capture_radius:
            state.held = True
            state.object_pos = state.gripper_pos.copy()
            bonus += 1.0  # successful grasp
        d_now = task_distance(state, task, params)

    reward = (d_prev - d_now) * 10.0 + bonus
    return reward, d_now, clipped


# ---------------------------------------------------------------------------
# reward aggregators


def _check_trace(trace):
    if len(trace) != EPISODE_STEPS:
        raise SimError(f"expected a full {EPISODE_STEPS}-step trace, got {len(trace)}")


def aggregate_ppo(trace) -> float:
    """Plain cumulative reward over the episode."""
    _check_trace(trace)
    return float(sum(r.reward for r in trace))


def aggregate_sac(trace, params: RewardParams = RewardParams()) -> float:
    """Discounted entropy-regularized return: sum gamma^t (r_t + alpha H_t)."""
    _check_trace(trace)
    return float(
        sum(params.gamma**r.t * (r.reward + params.alpha * r.entropy) for r in trace)
    )


def aggregate_tdmpc2(trace, params: RewardParams = RewardParams()) -> float:
    """Goal-distance weighted return: sum r_t + lam / max(D_t, eps_d)."""
    _check_trace(trace)
    return float(
        sum(r.reward + params.lam / max(r.distance, params.eps_d) for r in trace)
    )


# ---------------------------------------------------------------------------
# episode runner


def run_episode(scene: Scene, task: str, spec: DistortionSpec | None,
                reward_params: RewardParams = RewardParams(),
                sim_params: SimParams = SimParams(),
                keep_frames: bool = True) -> EpisodeResult:
    """50-step loop: render -> distort -> perceive -> act -> step.

    The distorted initial frame is the record's evaluated image. Passing
    spec=None runs on undistorted observations.
    """
    if task not in TASKS:
        raise SimError(f"unknown task {task!r}")
    state = SimState.from_scene(scene)
    policy_rng = make_rng(
        derive_seed(scene.scene_seed, spec.seed if spec else 0, 0xAC7104)
    )
    trace: list[StepRecord] = []
    est: Estimate | None = None
    ref_frame = eval_frame = None

    for t in range(EPISODE_STEPS):
        obs = render_observation(scene, state)
        if spec is not None:
            fspec = DistortionSpec(spec.kind, spec.level, frame_seed(spec.seed, t))
            dist_obs = apply_distortion(obs, fspec)
        else:
            dist_obs = obs
        if t == 0 and keep_frames:
            ref_frame, eval_frame = obs, dist_obs
        est = perceive(dist_obs, scene, sim_params, fallback=est)
        snapshot = state.snapshot()
        action, entropy = scripted_policy(est, task, state.gripper_pos, state.held,
                                          policy_rng, sim_params)
        reward, distance, clipped = step(state, task, action, sim_params)
        trace.append(StepRecord(t=t, state=snapshot, action=tuple(action),
                                reward=reward, entropy=entropy, distance=distance,
                                clipped=clipped))

    return EpisodeResult(
        trace=trace,
        j_ppo=aggregate_ppo(trace),
        j_sac=aggregate_sac(trace, reward_params),
        j_tdmpc2=aggregate_tdmpc2(trace, reward_params),
        mean_reward=float(np.mean([r.reward for r in trace])),
        task=task,
        scene_seed=scene.scene_seed,
        spec=spec,
        ref_frame=ref_frame,
        eval_frame=eval_frame,
    )


def trace_to_json(trace) -> list[dict]:
    return [
        {
            "t": r.t,
            "state": r.state,
            "action": list(r.action),
            "reward": r.reward,
            "entropy": r.entropy,
            "distance": r.distance,
            "clipped": r.clipped,
        }
        for r in trace
    ]
