from reprlab.envs.chain import ChainEnv, chain_q_star
from reprlab.envs.gridworld import (
    ACTIONS,
    BUILTIN_TASKS,
    GridEnv,
    TaskSpec,
    dump_trajectory,
    make_task,
    preprocess,
    register_task,
    registered_tasks,
    rescale,
    task_spec,
    unpreprocess,
)

__all__ = [
    "ACTIONS", "BUILTIN_TASKS", "ChainEnv", "GridEnv", "TaskSpec", "chain_q_star",
    "dump_trajectory", "make_task", "preprocess", "register_task", "registered_tasks",
    "rescale", "task_spec", "unpreprocess",
]
