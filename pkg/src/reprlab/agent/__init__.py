"""Short-term DQN agent."""

from reprlab.agent.dqn import (
    EpsilonSchedule,
    ReplayBuffer,
    StmConfig,
    StmResult,
    Transition,
    WindowSelector,
    dqn_loss,
    dqn_target,
    dqn_targets,
    evaluate,
    q_values,
    score_summary,
    select_action,
    train_stm,
)

__all__ = [
    "EpsilonSchedule", "ReplayBuffer", "StmConfig", "StmResult", "Transition",
    "WindowSelector", "dqn_loss", "dqn_target", "dqn_targets", "evaluate", "q_values",
    "score_summary", "select_action", "train_stm",
]
