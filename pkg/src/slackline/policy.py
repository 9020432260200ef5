"""Closed-loop policy: observe, plan a subgoal, act, execute, replan every
step until the goal predicate fires or the horizon runs out."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .config import TaskConfig
from .controller import random_single_arm
from .seeding import make_rng
from .simulator import ActionPair, EnvState, execute, goal_reached


class Planner(Protocol):
    name: str

    def reset(self, episode_seed: int) -> None: ...

    def plan(self, state: EnvState) -> tuple[EnvState, tuple | None]: ...


class Controller(Protocol):
    name: str

    def select(
        self, state: EnvState, subgoal: EnvState, rng: np.random.Generator
    ) -> ActionPair | None: ...


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    states: list[EnvState]
    actions: list[ActionPair]
    subgoals: list[EnvState]
    subgoal_ids: list[tuple | None]
    roles: list[dict]
    seed: int
    failure: str | None = None  # None | "horizon" | "no-action"

    def to_obj(self) -> dict:
        return {
            "success": self.success,
            "steps": self.steps,
            "seed": self.seed,
            "failure": self.failure,
            "states": [s.to_obj() for s in self.states],
            "actions": [a.to_obj() for a in self.actions],
            "subgoals": [s.to_obj() for s in self.subgoals],
            "subgoal_ids": [list(i) if i is not None else None
                            for i in self.subgoal_ids],
            "roles": self.roles,
        }

    @staticmethod
    def from_obj(obj: dict) -> "EpisodeResult":
        return EpisodeResult(
            bool(obj["success"]),
            int(obj["steps"]),
            [EnvState.from_obj(s) for s in obj["states"]],
            [ActionPair.from_obj(a) for a in obj["actions"]],
            [EnvState.from_obj(s) for s in obj["subgoals"]],
            [tuple(i) if i is not None else None for i in obj["subgoal_ids"]],
            list(obj["roles"]),
            int(obj["seed"]),
            obj.get("failure"),
        )


def run_episode(
    env: EnvState,
    planner: Planner,
    controller: Controller,
    config: TaskConfig,
    seed: int,
) -> EpisodeResult:
    """One closed-loop episode from `env`, replanning the subgoal each step.

    A controller returning no action falls back to one uniform random
    feasible single-arm correspondence drag; if that also fails the episode
    ends as a failure. States are recorded at file precision so results
    replay bit-exactly from disk.
    """
    rng = make_rng(seed, "episode-rng")
    planner.reset(seed)
    state = env.quantized()
    states = [state]
    actions: list[ActionPair] = []
    subgoals: list[EnvState] = []
    subgoal_ids: list[tuple | None] = []
    roles: list[dict] = []
    success = False
    failure: str | None = None

    for _ in range(config.horizon_max):
        subgoal, ident = planner.plan(state)
        action = controller.select(state, subgoal, rng)
        fallback = False
        if action is None:
            action = random_single_arm(state, subgoal, config, rng)
            fallback = True
        if action is None:
            failure = "no-action"
            break
        state = execute(state, action, config).quantized()
        states.append(state)
        actions.append(action)
        subgoals.append(subgoal)
        subgoal_ids.append(ident)
        roles.append(
            {
                "leader_arm": action.leader.arm_id,
                "follower": action.follower is not None,
                "fallback": fallback,
            }
        )
        if goal_reached(state, config):
            success = True
            break
    if not success and failure is None:
        failure = "horizon"
    return EpisodeResult(
        success,
        len(actions),
        states,
        actions,
        subgoals,
        subgoal_ids,
        roles,
        seed,
        failure,
    )
