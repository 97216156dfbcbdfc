import numpy as np
import pytest

from huvfa.config import (DecompositionSection, EvalSection, ExperimentConfig, HordeSection,
                          LearnerSection, NetsSection)
from huvfa.env import GridPos, load_layout
from huvfa.tabular import LearnerConfig, train_goal


@pytest.fixture(scope="session")
def world():
    return load_layout()


@pytest.fixture(scope="session")
def converged(world):
    """Fully trained tables for a handful of goals, keyed by goal."""
    cfg = LearnerConfig()
    goals = [GridPos(2, 2), GridPos(9, 3), GridPos(3, 9)]
    return {g: train_goal(world, g, cfg, np.random.default_rng(i)) for i, g in enumerate(goals)}


def small_config(mode="supervised", seed=0, **kw) -> ExperimentConfig:
    """A configuration that runs every CLI stage in seconds."""
    goals = 25 if mode == "supervised" else 15
    return ExperimentConfig(
        seed=seed, mode=mode,
        learner=LearnerSection(episodes=20_000),
        horde=HordeSection(n_train_goals=goals, episodes_per_goal=2, replay_updates=2_000),
        decomposition=DecompositionSection(rank=5, max_iters=60),
        nets=NetsSection(epochs=20),
        eval=EvalSection(episodes=3),
        **kw,
    )
