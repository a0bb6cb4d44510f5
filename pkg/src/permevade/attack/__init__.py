"""Reinforcement-learning evasion attack over permission vectors."""
from .env import (ADD_ONLY, FLIP, BenignOracle, EnvConfig, FunctionDetector, StepResult, all_states,
                  apply_action, env_reset, env_step, state_bits, state_index, state_indices)
from .mc import (Episode, EpsilonGreedy, QTable, ReplayBuffer, TrainingResult, Transition,
                 epsilon_schedule, merge_qtables, mc_every_visit_update, run_episode, train_qtable,
                 train_qtable_parallel)
from .policy import (MPA, SPA, AttackOutcome, AttackPolicy, AttackReport, attack_curve,
                     extract_policy, fooling_rate, mpa_attack, reports_to_csv, spa_attack)

__all__ = [
    "ADD_ONLY", "FLIP", "BenignOracle", "EnvConfig", "FunctionDetector", "StepResult", "all_states",
    "apply_action", "env_reset", "env_step", "state_bits", "state_index", "state_indices",
    "Episode", "EpsilonGreedy", "QTable", "ReplayBuffer", "TrainingResult", "Transition",
    "epsilon_schedule", "merge_qtables", "mc_every_visit_update", "run_episode", "train_qtable",
    "train_qtable_parallel", "MPA", "SPA", "AttackOutcome", "AttackPolicy", "AttackReport",
    "attack_curve", "extract_policy", "fooling_rate", "mpa_attack", "reports_to_csv", "spa_attack",
]
