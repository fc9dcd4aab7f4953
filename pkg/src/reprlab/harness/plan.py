"""Experiment plans: a validated, fully defaulted description of one run.

A plan is written as YAML.  Every key is optional except ``tasks`` and
``condition``; unknown keys are rejected with the dotted key name so typos
never silently fall back to a default.  ``serialize_plan`` writes the fully
resolved plan, which is what each run directory records as provenance.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any, Mapping

import yaml

from reprlab.baselines import CONDITIONS
from reprlab.consolidation import MODES
from reprlab.envs.gridworld import registered_tasks
from reprlab.errors import ConfigurationError, ParseError
from reprlab.profiles import ATARI_DQN, DESK_DQN

PROFILES = ("desk", "atari")
DTYPES = ("float32", "float64")


def _profile_table(profile: str) -> dict:
    return ATARI_DQN if profile == "atari" else DESK_DQN


@dataclass(frozen=True)
class StmSection:
    frames: int = 400_000
    batch_size: int = 32
    replay_capacity: int = 50_000
    target_update_frames: int = 1_000
    gamma: float = 0.9
    update_frequency: int = 4
    lr: float = 0.00025
    decay: float = 0.99
    momentum: float = 0.0
    rms_eps: float = 1e-6
    clip_norm: float = 10.0
    eps_initial: float = 1.0
    eps_final: float = 0.1
    eps_final_frame: int = 50_000
    replay_start_frames: int = 5_000
    select_window_frames: int = 20_000


@dataclass(frozen=True)
class LtmSection:
    alpha: float = 0.55
    mode: str = "q-values"
    standardize_q: bool = False
    frames: int = 400_000
    batch_size: int = 32
    frames_per_update: int = 16
    select_window_frames: int = 20_000
    lr: float = 0.00025
    decay: float = 0.99
    momentum: float = 0.0
    rms_eps: float = 1e-6
    clip_norm: float = 10.0


@dataclass(frozen=True)
class GanSection:
    steps: int = 5_000
    batch_size: int = 100
    lr: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    gp_lambda: float = 10.0
    drift: float = 1e-6
    noise: float = 10.0
    latent_dim: int = 100
    log_every: int = 100


@dataclass(frozen=True)
class EwcSection:
    lam: float = 300.0
    online_lam: float = 75.0
    online_gamma: float = 0.99
    fisher_batches: int = 100
    fisher_batch_size: int = 32
    beta: float = 1.0
    batch_scaled: bool = True


@dataclass(frozen=True)
class EvalSection:
    fraction: float = 0.05
    episodes: int = 30
    epsilon: float = 0.05


@dataclass(frozen=True)
class AnalysisSection:
    fisher_overlap: bool = False
    fisher_samples: int = 1_000
    fisher_epsilon: float = 0.1
    order_label: str = "forward"


@dataclass(frozen=True)
class ExperimentPlan:
    tasks: tuple[str, ...]
    condition: str
    profile: str = "desk"
    seeds: tuple[int, ...] = (0,)
    out: str = "runs/default"
    dtype: str = "float32"
    pseudo_buffer: int = 20_000
    # (first task index, alpha) pairs; task indices count from 1
    alpha_schedule: tuple[tuple[int, float], ...] = ()
    stm_cache: str | None = None
    stop_after: str | None = None
    stm: StmSection = field(default_factory=StmSection)
    ltm: LtmSection = field(default_factory=LtmSection)
    gan: GanSection = field(default_factory=GanSection)
    ewc: EwcSection = field(default_factory=EwcSection)
    eval: EvalSection = field(default_factory=EvalSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def alpha_for(self, task_index: int) -> float:
        alpha = self.ltm.alpha
        for first, value in self.alpha_schedule:
            if task_index >= first:
                alpha = value
        return alpha

    def with_(self, **kw) -> ExperimentPlan:
        return replace(self, **kw)


# YAML spells the EWC strengths "lambda" / "online_lambda"
_ALIASES = {"ewc": {"lambda": "lam", "online_lambda": "online_lam"}}
_SECTIONS = {"stm": StmSection, "ltm": LtmSection, "gan": GanSection, "ewc": EwcSection,
             "eval": EvalSection, "analysis": AnalysisSection}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ParseError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ParseError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ParseError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def _section(name: str, cls, raw, defaults: dict):
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ParseError(f"{name}: expected a mapping")
    aliases = _ALIASES.get(name, {})
    base = cls(**defaults)
    known = {f.name for f in fields(cls)}
    values = {}
    for key, value in raw.items():
        attr = aliases.get(key, key)
        if attr not in known or (attr != key and key not in aliases):
            raise ParseError(f"unknown key {name}.{key}")
        values[attr] = _coerce(f"{name}.{key}", value, getattr(base, attr))
    return replace(base, **values)


def _profile_defaults(profile: str) -> dict[str, dict]:
    t = _profile_table(profile)
    stm = {k: t[k] for k in ("batch_size", "replay_capacity", "target_update_frames", "gamma",
                             "update_frequency", "lr", "decay", "momentum", "rms_eps",
                             "eps_initial", "eps_final", "eps_final_frame",
                             "replay_start_frames", "select_window_frames")}
    stm["frames"] = t["stm_frames"]
    ltm = {"frames": t["ltm_frames"], "select_window_frames": t["select_window_frames"],
           "lr": t["lr"], "decay": t["decay"], "momentum": t["momentum"],
           "rms_eps": t["rms_eps"], "batch_size": t["batch_size"],
           "frames_per_update": t["action_repeat"] * t["update_frequency"]}
    return {"stm": stm, "ltm": ltm, "gan": {"steps": t["gan_steps"]}}


_TOP = {"tasks", "condition", "profile", "seeds", "out", "dtype", "pseudo_buffer",
        "alpha_schedule", "stm_cache", "stop_after", *_SECTIONS}


def plan_from_mapping(raw: Mapping[str, Any]) -> ExperimentPlan:
    """Validate a parsed config mapping and resolve every default."""
    if not isinstance(raw, Mapping):
        raise ParseError("config must be a mapping at the top level")
    for key in raw:
        if key not in _TOP:
            raise ParseError(f"unknown key {key}")
    if "tasks" not in raw:
        raise ParseError("missing key tasks")
    if "condition" not in raw:
        raise ParseError("missing key condition")
    tasks = raw["tasks"]
    if isinstance(tasks, str) or not isinstance(tasks, (list, tuple)) or not tasks:
        raise ParseError("tasks: expected a non-empty list of task ids")
    known_tasks = set(registered_tasks())
    for t in tasks:
        if t not in known_tasks:
            raise ParseError(f"tasks: unknown task {t!r}; known: {sorted(known_tasks)}")
    condition = raw["condition"]
    if condition not in CONDITIONS:
        raise ParseError(f"condition: unknown condition {condition!r}; known: {sorted(CONDITIONS)}")
    profile = raw.get("profile", "desk")
    if profile not in PROFILES:
        raise ParseError(f"profile: expected one of {PROFILES}, got {profile!r}")
    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ParseError("seeds: expected a non-empty list of integers")
    seeds = tuple(_coerce("seeds", s, 0) for s in seeds)
    if any(s < 0 for s in seeds):
        raise ParseError("seeds: seeds must be non-negative")
    if len(set(seeds)) != len(seeds):
        raise ParseError("seeds: duplicate seed")
    dtype = raw.get("dtype", "float32")
    if dtype not in DTYPES:
        raise ParseError(f"dtype: expected one of {DTYPES}, got {dtype!r}")

    defaults = _profile_defaults(profile)
    sections = {name: _section(name, cls, raw.get(name), defaults.get(name, {}))
                for name, cls in _SECTIONS.items()}
    schedule = raw.get("alpha_schedule") or []
    if not isinstance(schedule, (list, tuple)):
        raise ParseError("alpha_schedule: expected a list of [first_task, alpha] pairs")
    pairs = []
    for entry in schedule:
        if isinstance(entry, Mapping):
            entry = (entry.get("from_task"), entry.get("alpha"))
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise ParseError("alpha_schedule: expected [first_task, alpha] pairs")
        pairs.append((_coerce("alpha_schedule.first_task", entry[0], 0),
                      _coerce("alpha_schedule.alpha", entry[1], 0.0)))
    plan = ExperimentPlan(
        tasks=tuple(tasks), condition=condition, profile=profile, seeds=seeds,
        out=str(_coerce("out", raw.get("out", "runs/default"), "")), dtype=dtype,
        pseudo_buffer=_coerce("pseudo_buffer", raw.get("pseudo_buffer",
                                                        _profile_table(profile)["pseudo_buffer"]), 0),
        alpha_schedule=tuple(sorted(pairs)),
        stm_cache=None if raw.get("stm_cache") is None else str(raw["stm_cache"]),
        stop_after=None if raw.get("stop_after") is None else str(raw["stop_after"]),
        **sections)
    validate_plan(plan)
    return plan


def _positive(key: str, value) -> None:
    if not value > 0:
        raise ParseError(f"{key}: must be positive, got {value}")


def _unit_open(key: str, value) -> None:
    if not 0.0 < value < 1.0:
        raise ParseError(f"{key}: must lie strictly between 0 and 1, got {value}")


def validate_plan(plan: ExperimentPlan) -> None:
    s, l, g, e, ev, an = plan.stm, plan.ltm, plan.gan, plan.ewc, plan.eval, plan.analysis
    for key in ("frames", "batch_size", "replay_capacity", "target_update_frames",
                "update_frequency", "lr", "clip_norm", "select_window_frames"):
        _positive(f"stm.{key}", getattr(s, key))
    if not 0.0 <= s.gamma < 1.0:
        raise ParseError(f"stm.gamma: must lie in [0, 1), got {s.gamma}")
    for key in ("eps_initial", "eps_final"):
        if not 0.0 <= getattr(s, key) <= 1.0:
            raise ParseError(f"stm.{key}: must lie in [0, 1]")
    if s.eps_final_frame < 0 or s.replay_start_frames < 0:
        raise ParseError("stm: frame counts must be non-negative")
    if not 0.0 <= s.decay < 1.0 or s.momentum < 0 or s.rms_eps <= 0:
        raise ParseError("stm: invalid RMSProp settings")
    _unit_open("ltm.alpha", l.alpha)
    for first, alpha in plan.alpha_schedule:
        if first < 1:
            raise ParseError("alpha_schedule.first_task: task indices start at 1")
        _unit_open("alpha_schedule.alpha", alpha)
    if l.mode not in MODES:
        raise ParseError(f"ltm.mode: expected one of {MODES}, got {l.mode!r}")
    for key in ("frames", "batch_size", "frames_per_update", "select_window_frames", "lr",
                "clip_norm"):
        _positive(f"ltm.{key}", getattr(l, key))
    if not 0.0 <= l.decay < 1.0 or l.momentum < 0 or l.rms_eps <= 0:
        raise ParseError("ltm: invalid RMSProp settings")
    for key in ("steps", "batch_size", "lr", "adam_eps", "latent_dim"):
        _positive(f"gan.{key}", getattr(g, key))
    if not 0.0 <= g.beta1 < 1.0 or not 0.0 <= g.beta2 < 1.0:
        raise ParseError("gan: Adam betas must lie in [0, 1)")
    if g.gp_lambda < 0 or g.drift < 0 or g.noise < 0 or g.log_every < 0:
        raise ParseError("gan: gp_lambda, drift, noise and log_every must be non-negative")
    if e.lam < 0 or e.online_lam < 0:
        raise ParseError("ewc: lambda values must be non-negative")
    if not 0.0 <= e.online_gamma < 1.0:
        raise ParseError(f"ewc.online_gamma: must lie in [0, 1), got {e.online_gamma}")
    for key in ("fisher_batches", "fisher_batch_size", "beta"):
        _positive(f"ewc.{key}", getattr(e, key))
    if not 0.0 < ev.fraction <= 1.0:
        raise ParseError(f"eval.fraction: must lie in (0, 1], got {ev.fraction}")
    _positive("eval.episodes", ev.episodes)
    if not 0.0 <= ev.epsilon <= 1.0:
        raise ParseError("eval.epsilon: must lie in [0, 1]")
    _positive("analysis.fisher_samples", an.fisher_samples)
    if not 0.0 <= an.fisher_epsilon <= 1.0:
        raise ParseError("analysis.fisher_epsilon: must lie in [0, 1]")
    _positive("pseudo_buffer", plan.pseudo_buffer)
    if not math.isfinite(s.lr * l.lr * g.lr):
        raise ParseError("learning rates must be finite")
    if plan.stop_after is not None and not plan.stop_after:
        raise ParseError("stop_after: empty phase key")


def parse_plan(text: str, overrides: Mapping[str, Any] | None = None) -> ExperimentPlan:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"config is not valid YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ParseError("config must be a mapping at the top level")
    raw = dict(raw)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return plan_from_mapping(raw)


def load_plan(path, overrides: Mapping[str, Any] | None = None) -> ExperimentPlan:
    with open(path) as fh:
        return parse_plan(fh.read(), overrides)


def plan_to_mapping(plan: ExperimentPlan) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in fields(plan):
        value = getattr(plan, f.name)
        if is_dataclass(value):
            sec = asdict(value)
            for yaml_key, attr in _ALIASES.get(f.name, {}).items():
                sec[yaml_key] = sec.pop(attr)
            out[f.name] = sec
        elif f.name == "alpha_schedule":
            out[f.name] = [list(p) for p in value]
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def serialize_plan(plan: ExperimentPlan) -> str:
    return yaml.safe_dump(plan_to_mapping(plan), sort_keys=True, default_flow_style=False)


def check_runnable(plan: ExperimentPlan) -> None:
    """The atari profile documents the full-scale settings; it is never trained here."""
    if plan.profile == "atari":
        raise ConfigurationError(
            "the atari profile is a documentation preset; Atari environments are not "
            "available, run the desk profile instead")
