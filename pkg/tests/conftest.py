import pytest

from slackline.config import TaskConfig, TrainConfig
from slackline.encoder import train
from slackline.explore import build_goal_pool, collect


@pytest.fixture(scope="session")
def task_config():
    return TaskConfig()


@pytest.fixture(scope="session")
def small_pool(task_config):
    return build_goal_pool(task_config, count=12, seed=101)


@pytest.fixture(scope="session")
def small_dataset(task_config, small_pool):
    """A small but real dataset shared by planner/policy/harness tests."""
    dataset, _ = collect(
        task_config, episodes=12, seed=202, goal_pool=small_pool
    )
    return dataset


@pytest.fixture(scope="session")
def small_encoder(small_dataset):
    report = train(small_dataset, TrainConfig(epochs=3, seed=11))
    return report.params
