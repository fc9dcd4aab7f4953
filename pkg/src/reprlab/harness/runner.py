"""The sequential-task protocol.

For every task in order the runner trains a short-term DQN, consolidates it
into the long-term network with the condition's retention mechanism, trains
the long-term GAN where the condition needs one, and evaluates the long-term
network on every task seen so far.  Each step is a named phase
(``t{i}.stm``, ``t{i}.ltm``, ...); a phase's outputs are written before it is
recorded as complete in ``state.json``, so an interrupted run resumes from
the last completed phase and reproduces the uninterrupted metrics exactly.

Run directory layout (one per seed, ``<out>/seed_<n>``)::

    plan.yaml          resolved plan
    state.json         completed phases, committed metric row counts
    metrics.csv        seed, frames, phase, task, eval_task, condition, metric, value
    timings.csv        wall-clock seconds per phase
    ltm_t<i>.ckpt      current long-term network (net_t<i>.ckpt for pr)
    gan_t<i>.gen.ckpt, gan_t<i>.disc.ckpt
    store_t<i>.ckpt / store.ckpt / ewc_*.ckpt   condition-specific memory
    logs/              consolidation and GAN loss curves
    work/              the current task's short-term network and replay
    overlap.csv        Fisher overlap (when requested)
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from reprlab.agent.dqn import ReplayBuffer, StmConfig, evaluate, q_values, score_summary, train_stm
from reprlab.analysis import overlap_reports, write_overlap_csv
from reprlab.baselines import (
    EwcAnchor,
    FisherDiagonal,
    Condition,
    ewc_term,
    fisher_diag,
    get_condition,
    online_ewc_update,
    per_task_quota,
    reh_limit_budget,
)
from reprlab.consolidation import ConsolidationConfig, pr_loss, pseudo_targets, train_ltm
from reprlab.envs.gridworld import GridEnv, make_task, rescale, task_spec
from reprlab.errors import ConfigurationError, ContractError, ReprLabError
from reprlab.genreplay import GanConfig, GanPair, generate_pseudo_buffer, train_gan
from reprlab.harness.metrics import (
    METRIC_COLUMNS,
    TIMING_COLUMNS,
    CsvLog,
    count_rows,
    truncate_rows,
)
from reprlab.harness.plan import ExperimentPlan, check_runnable, serialize_plan
from reprlab.profiles import discriminator_spec, dqn_spec, generator_spec
from reprlab.seeding import seed_int, stream
from reprlab.tensor.checkpoint import load_arrays, load_params, save_arrays, save_params
from reprlab.tensor.nn import Network, NetworkParams

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_STOPPED = 3


class StopRequested(Exception):
    """Raised after the phase named by ``plan.stop_after`` commits."""


@dataclass
class SeedResult:
    seed: int
    run_dir: Path
    status: int
    completed: list[str] = field(default_factory=list)


@dataclass
class RunSummary:
    out: Path
    status: int
    seeds: list[SeedResult]


def run_plan(plan: ExperimentPlan, *, resume: bool = False) -> RunSummary:
    """Run (or resume) every seed of ``plan`` in sequence."""
    check_runnable(plan)
    results = []
    for seed in plan.seeds:
        res = SeedRun(plan, seed).run(resume=resume)
        results.append(res)
        if res.status != EXIT_OK:
            break
    status = max((r.status for r in results), default=EXIT_OK)
    return RunSummary(Path(plan.out), status, results)


def seed_dir(plan: ExperimentPlan, seed: int) -> Path:
    return Path(plan.out) / f"seed_{seed}"


# -- persistence helpers -------------------------------------------------------------
def _np_dtype(plan: ExperimentPlan):
    return np.float32 if plan.dtype == "float32" else np.float64


def save_gan(prefix: Path, gan: GanPair) -> int:
    meta = {"tasks_seen": gan.tasks_seen}
    n = save_params(prefix.with_name(prefix.name + ".gen.ckpt"), gan.gen, meta)
    return n + save_params(prefix.with_name(prefix.name + ".disc.ckpt"), gan.disc, meta)


def load_gan(prefix: Path, gen_net: Network, disc_net: Network) -> GanPair:
    gen, meta = load_params(prefix.with_name(prefix.name + ".gen.ckpt"))
    disc, _ = load_params(prefix.with_name(prefix.name + ".disc.ckpt"))
    return GanPair(gen_net, disc_net, gen, disc, tasks_seen=int(meta["tasks_seen"]))


def remove_gan(prefix: Path) -> None:
    for part in (".gen.ckpt", ".disc.ckpt"):
        prefix.with_name(prefix.name + part).unlink(missing_ok=True)


def save_anchor(path: Path, anchor: EwcAnchor) -> int:
    layout = [[s.name, list(s.shape)] for s in anchor.params.segments]
    return save_arrays(path, {"theta": anchor.params.flat, "fisher": anchor.fisher.flat},
                       meta={"task_index": anchor.task_index, "beta": anchor.fisher.beta},
                       layout=layout)


def load_anchor(path: Path, net: Network) -> EwcAnchor:
    arrays, meta, _ = load_arrays(path)
    theta = NetworkParams(net.segments, arrays["theta"])
    fisher = NetworkParams(net.segments, arrays["fisher"])
    return EwcAnchor(theta, FisherDiagonal(fisher, float(meta["beta"])), int(meta["task_index"]))


def artifact_bytes(run_dir: Path) -> int:
    """Bytes of persisted long-term memory: every ``*.ckpt`` directly in the run dir."""
    return sum(p.stat().st_size for p in sorted(run_dir.glob("*.ckpt")))


def stm_cache_key(plan: ExperimentPlan, seed: int, task: str, net: Network) -> str:
    payload = {
        "task": asdict(task_spec(task)),
        "seed": seed,
        "stm": asdict(plan.stm),
        "dtype": plan.dtype,
        "net": net.spec.to_dict(),
    }
    text = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(text.encode()).hexdigest()[:20]


# -- one seed ----------------------------------------------------------------------
class SeedRun:
    def __init__(self, plan: ExperimentPlan, seed: int):
        self.plan = plan
        self.seed = seed
        self.dir = seed_dir(plan, seed)
        self.cond: Condition = get_condition(plan.condition)
        self.dtype = _np_dtype(plan)
        specs = [task_spec(t) for t in plan.tasks]
        shapes = {(s.obs_shape, s.n_actions) for s in specs}
        if len(shapes) != 1:
            raise ConfigurationError("all tasks in a plan must share observation shape and actions")
        (obs_shape, n_actions), = shapes
        self.obs_shape = obs_shape
        self.n_actions = n_actions
        self.net = Network(dqn_spec(plan.profile, obs_shape, n_actions))
        self.gen_net = Network(generator_spec(plan.profile, obs_shape, plan.gan.latent_dim))
        self.disc_net = Network(discriminator_spec(plan.profile, obs_shape))
        self.net_name = "ltm" if self.cond.dual_memory else "net"
        self.state: dict = {}
        self.metrics: CsvLog | None = None
        self.timings: CsvLog | None = None

    # bookkeeping ------------------------------------------------------------------
    @property
    def state_path(self) -> Path:
        return self.dir / "state.json"

    def _load_state(self) -> dict:
        if self.state_path.exists():
            return json.loads(self.state_path.read_text())
        return {"completed": [], "metrics_rows": 0, "timings_rows": 0}

    def _save_state(self) -> None:
        tmp = self.state_path.with_name("state.json.tmp")
        tmp.write_text(json.dumps(self.state, indent=1, sort_keys=True))
        os.replace(tmp, self.state_path)

    def _commit(self, key: str) -> None:
        self.state["completed"].append(key)
        self.state["metrics_rows"] = count_rows(self.dir / "metrics.csv")
        self.state["timings_rows"] = count_rows(self.dir / "timings.csv")
        self._save_state()

    def row(self, frames: int, phase: str, task: str, eval_task: str, metric: str, value) -> None:
        self.metrics.write((self.seed, int(frames), phase, task, eval_task, self.plan.condition,
                            metric, value))

    def path(self, name: str) -> Path:
        return self.dir / name

    def segment_frames(self) -> int:
        return self.plan.ltm.frames if self.cond.dual_memory else self.plan.stm.frames

    def base_frames(self, i: int) -> int:
        return (i - 1) * self.segment_frames()

    # driver -----------------------------------------------------------------------
    def run(self, resume: bool = False) -> SeedResult:
        plan = self.plan
        if self.dir.exists() and not resume and (self.dir / "state.json").exists():
            shutil.rmtree(self.dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "logs").mkdir(exist_ok=True)
        (self.dir / "work").mkdir(exist_ok=True)
        self.state = self._load_state()
        (self.dir / "failure.json").unlink(missing_ok=True)
        truncate_rows(self.dir / "metrics.csv", self.state["metrics_rows"])
        truncate_rows(self.dir / "timings.csv", self.state["timings_rows"])
        (self.dir / "plan.yaml").write_text(serialize_plan(plan))
        self.metrics = CsvLog(self.dir / "metrics.csv", METRIC_COLUMNS)
        self.timings = CsvLog(self.dir / "timings.csv", TIMING_COLUMNS)
        status = EXIT_OK
        try:
            for key, fn in self.phases():
                if key in self.state["completed"]:
                    continue
                t0 = time.perf_counter()
                log.info("seed %d: phase %s", self.seed, key)
                fn()
                self.timings.write((self.seed, key, round(time.perf_counter() - t0, 3)))
                self._commit(key)
                if plan.stop_after == key:
                    raise StopRequested(key)
        except StopRequested:
            status = EXIT_STOPPED
        except (ReprLabError, FloatingPointError, OSError, ValueError, RuntimeError) as exc:
            status = EXIT_FAILED
            failure = {"seed": self.seed, "phase": self._current_phase(),
                       "error": type(exc).__name__, "message": str(exc),
                       "traceback": traceback.format_exc()}
            (self.dir / "failure.json").write_text(json.dumps(failure, indent=1))
            log.error("seed %d failed in %s: %s", self.seed, failure["phase"], exc)
        finally:
            self.metrics.close()
            self.timings.close()
        return SeedResult(self.seed, self.dir, status, list(self.state["completed"]))

    def _current_phase(self) -> str | None:
        for key, _ in self.phases():
            if key not in self.state["completed"]:
                return key
        return None

    def phases(self):
        cond = self.cond
        out = []
        for i, task in enumerate(self.plan.tasks, start=1):
            if cond.dual_memory or i == 1:
                out.append((f"t{i}.stm", lambda i=i, t=task: self.phase_stm(i, t)))
            if cond.dual_memory or i == 1:
                out.append((f"t{i}.ltm", lambda i=i, t=task: self.phase_ltm(i, t)))
            else:
                out.append((f"t{i}.pr", lambda i=i, t=task: self.phase_pr(i, t)))
            if cond.uses_gan:
                out.append((f"t{i}.gan", lambda i=i, t=task: self.phase_gan(i, t)))
            if cond.penalty is not None:
                out.append((f"t{i}.fisher", lambda i=i, t=task: self.phase_fisher(i, t)))
            if cond.rehearsal_source in ("replay", "replay-limited"):
                out.append((f"t{i}.store", lambda i=i, t=task: self.phase_store(i, t)))
            out.append((f"t{i}.close", lambda i=i, t=task: self.phase_close(i, t)))
        if self.plan.analysis.fisher_overlap:
            out.append(("analysis.fisher", self.phase_overlap))
        return out

    # shared pieces ----------------------------------------------------------------
    def stm_config(self) -> StmConfig:
        return StmConfig.from_mapping(asdict(self.plan.stm))

    def ltm_config(self, i: int) -> ConsolidationConfig:
        l = self.plan.ltm
        mode = self.cond.mode if self.cond.mode != "q-values" else l.mode
        return ConsolidationConfig(
            alpha=self.plan.alpha_for(i), mode=mode, standardize_q=l.standardize_q,
            frames=l.frames, batch_size=l.batch_size, frames_per_update=l.frames_per_update,
            select_window_frames=l.select_window_frames, lr=l.lr, decay=l.decay,
            momentum=l.momentum, rms_eps=l.rms_eps, clip_norm=l.clip_norm)

    def gan_config(self) -> GanConfig:
        return GanConfig(**asdict(self.plan.gan))

    def env(self, task: str) -> GridEnv:
        return make_task(task, seed_int(self.seed, "env", task))

    def eval_point(self, frames: int, phase: str, task: str, params: NetworkParams,
                   i: int) -> None:
        """Evaluate on every task seen so far and log mean and stdev."""
        ev = self.plan.eval
        for eval_task in self.plan.tasks[:i]:
            scores = evaluate(
                self.net, params,
                lambda e, t=eval_task: make_task(t, seed_int(self.seed, "eval-env", t, e)),
                ev.episodes, ev.epsilon, stream(self.seed, "eval-act", eval_task, frames))
            mean, std = score_summary(scores)
            self.row(frames, phase, task, eval_task, "eval_mean", mean)
            self.row(frames, phase, task, eval_task, "eval_std", std)

    def eval_hook(self, i: int, task: str, phase: str, phase_frames: int):
        every = max(1, int(round(self.plan.eval.fraction * phase_frames)))
        base = self.base_frames(i)

        def hook(frames, params):
            if frames < phase_frames:
                self.eval_point(base + frames, phase, task, params, i)
        return hook, every

    def load_net(self, i: int) -> NetworkParams:
        params, _ = load_params(self.path(f"{self.net_name}_t{i}.ckpt"))
        return params

    def replay_states(self, i: int) -> np.ndarray:
        return ReplayBuffer.load(self.dir / "work" / f"replay_t{i}.ckpt").states()

    # phases -----------------------------------------------------------------------
    def phase_stm(self, i: int, task: str) -> None:
        work = self.dir / "work"
        cfg = self.stm_config()
        cache = None
        if self.plan.stm_cache:
            cache = Path(self.plan.stm_cache) / stm_cache_key(self.plan, self.seed, task, self.net)
            if (cache / "params.ckpt").exists() and (cache / "replay.ckpt").exists():
                shutil.copyfile(cache / "params.ckpt", work / f"stm_t{i}.ckpt")
                shutil.copyfile(cache / "replay.ckpt", work / f"replay_t{i}.ckpt")
                meta = json.loads((cache / "meta.json").read_text())
                self._stm_rows(i, task, meta)
                return
        res = train_stm(self.net, self.env(task), cfg,
                        init_rng=stream(self.seed, "stm-init", task),
                        sample_rng=stream(self.seed, "replay-sample", task),
                        act_rng=stream(self.seed, "egreedy", task), dtype=self.dtype)
        best = max((v for _, v in res.window_history), default=float("nan"))
        meta = {"best_window_score": best, "updates": res.updates, "frames": res.frames}
        save_params(work / f"stm_t{i}.ckpt", res.params, meta)
        res.replay.save(work / f"replay_t{i}.ckpt")
        if cache is not None:
            cache.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(work / f"stm_t{i}.ckpt", cache / "params.ckpt.tmp")
            shutil.copyfile(work / f"replay_t{i}.ckpt", cache / "replay.ckpt.tmp")
            (cache / "meta.json").write_text(json.dumps(meta, sort_keys=True))
            os.replace(cache / "params.ckpt.tmp", cache / "params.ckpt")
            os.replace(cache / "replay.ckpt.tmp", cache / "replay.ckpt")
        self._stm_rows(i, task, meta)

    def _stm_rows(self, i: int, task: str, meta: dict) -> None:
        base = self.base_frames(i)
        self.row(base, "stm", task, task, "stm_best_window_score", float(meta["best_window_score"]))
        self.row(base, "stm", task, task, "stm_updates", int(meta["updates"]))

    def _rehearsal(self, i: int, prev: NetworkParams, mode: str):
        """(states, targets, encode) for retaining tasks < i, by rehearsal source."""
        src = self.cond.rehearsal_source
        if src == "gan":
            gan = load_gan(self.path(f"gan_t{i - 1}"), self.gen_net, self.disc_net)
            buf = generate_pseudo_buffer(gan, self.plan.pseudo_buffer, stream(self.seed, "pseudo", i))
            states, encode = buf.states, None
        elif src == "replay":
            parts = [load_arrays(self.path(f"store_t{j}.ckpt"))[0]["states"] for j in range(1, i)]
            states, encode = np.concatenate(parts, axis=0), rescale
        elif src == "replay-limited":
            arrays, _, _ = load_arrays(self.path("store.ckpt"))
            states = np.concatenate([arrays[f"t{j}"] for j in range(1, i)], axis=0)
            encode = rescale
        else:
            raise ContractError(f"condition {self.cond.condition_id} has no rehearsal source")
        if len(states) == 0:
            raise ContractError("rehearsal memory is empty")
        targets = pseudo_targets(self.net, prev, states, mode, encode)
        if encode is None:
            states = states.astype(self.dtype, copy=False)
        return states, targets, encode

    def _anchors(self, i: int) -> tuple[list[EwcAnchor], float]:
        e = self.plan.ewc
        if self.cond.penalty == "ewc":
            return [load_anchor(self.path(f"ewc_t{j}.ckpt"), self.net) for j in range(1, i)], e.lam
        return [load_anchor(self.path("ewc_online.ckpt"), self.net)], e.online_lam

    def phase_ltm(self, i: int, task: str) -> None:
        plan = self.plan
        stm_ckpt = self.dir / "work" / f"stm_t{i}.ckpt"
        stm_params, _ = load_params(stm_ckpt)
        cfg = self.ltm_config(i)
        end = self.base_frames(i) + self.segment_frames()
        if i == 1:
            res = train_ltm(self.net, stm_params, np.empty((0,)), rescale, cfg,
                            rng=stream(self.seed, "ltm", i), task_index=1)
        else:
            prev = self.load_net(i - 1)
            replay = self.replay_states(i)
            hook, every = self.eval_hook(i, task, "ltm", cfg.frames)
            kwargs = {}
            if self.cond.retention == "pseudo":
                states, targets, encode = self._rehearsal(i, prev, cfg.mode)
                kwargs = {"pseudo_states": states, "pseudo_y": targets, "pseudo_encode": encode}
            elif self.cond.retention == "penalty":
                anchors, lam = self._anchors(i)
                scale = cfg.batch_size if plan.ewc.batch_scaled else None
                kwargs = {"penalty": lambda pair: ewc_term(pair, anchors, lam, scale)}
            res = train_ltm(self.net, stm_params, replay, rescale, cfg,
                            rng=stream(self.seed, "ltm", i), prev_params=prev, task_index=i,
                            retention=self.cond.retention, on_frames=hook, callback_every=every,
                            metrics_path=self.dir / "logs" / f"ltm_t{i}.csv", **kwargs)
        save_params(self.path(f"{self.net_name}_t{i}.ckpt"), res.params,
                    {"task_index": i, "task": task, "best_window": res.best_window})
        self.eval_point(end, "ltm", task, res.params, i)
        self.row(end, "ltm", task, "", "task_switch", 1)
        if i > 1:
            self.path(f"{self.net_name}_t{i - 1}.ckpt").unlink(missing_ok=True)

    def phase_pr(self, i: int, task: str) -> None:
        """Single-network pseudo-rehearsal: DQN loss on the new task plus the
        pseudo-rehearsal loss on generated states, one network throughout."""
        plan = self.plan
        cfg = self.stm_config()
        alpha = plan.alpha_for(i)
        prev = self.load_net(i - 1)
        states, targets, _ = self._rehearsal(i, prev, "q-values")
        n = cfg.batch_size

        def extra(pair, rng):
            j = rng.integers(0, len(states), size=n)
            return pr_loss(self.net, pair, states[j], targets[j]) * (1.0 - alpha)

        hook, every = self.eval_hook(i, task, "pr", cfg.frames)
        res = train_stm(self.net, self.env(task), cfg,
                        init_rng=stream(self.seed, "stm-init", task),
                        sample_rng=stream(self.seed, "replay-sample", task, "pr"),
                        act_rng=stream(self.seed, "egreedy", task, "pr"),
                        init_params=prev, dqn_weight=alpha, extra_loss=extra,
                        on_frames=hook, callback_every=every, dtype=self.dtype)
        res.replay.save(self.dir / "work" / f"replay_t{i}.ckpt")
        params = res.last_params
        end = self.base_frames(i) + self.segment_frames()
        save_params(self.path(f"net_t{i}.ckpt"), params, {"task_index": i, "task": task})
        self.eval_point(end, "pr", task, params, i)
        self.row(end, "pr", task, "", "task_switch", 1)
        self.path(f"net_t{i - 1}.ckpt").unlink(missing_ok=True)

    def phase_gan(self, i: int, task: str) -> None:
        replay = self.replay_states(i)
        prev = load_gan(self.path(f"gan_t{i - 1}"), self.gen_net, self.disc_net) if i > 1 else None
        log_path = self.dir / "logs" / f"gan_t{i}.csv"
        with CsvLog(log_path.with_name(log_path.name + ".tmp"),
                    ("step", "loss_d", "loss_g", "d_real", "d_fake")) as gl:
            gan = train_gan(self.gen_net, self.disc_net, replay, i, self.gan_config(),
                            init_rng=stream(self.seed, "gan-init", i),
                            rng=stream(self.seed, "gan", i), prev_gan=prev,
                            pseudo_count=self.plan.pseudo_buffer,
                            on_log=lambda *r: gl.write(r), dtype=self.dtype)
        os.replace(log_path.with_name(log_path.name + ".tmp"), log_path)
        save_gan(self.path(f"gan_t{i}"), gan)
        if gan.log:
            step, ld, lg, dr, df = gan.log[-1]
            end = self.base_frames(i) + self.segment_frames()
            self.row(end, "gan", task, "", "gan_loss_d", ld)
            self.row(end, "gan", task, "", "gan_score_gap", abs(dr - df))
        if i > 1:
            remove_gan(self.path(f"gan_t{i - 1}"))

    def fisher_states(self, i: int) -> np.ndarray:
        e = self.plan.ewc
        replay = self.replay_states(i)
        rng = stream(self.seed, "fisher", i)
        idx = rng.integers(0, len(replay), size=e.fisher_batches * e.fisher_batch_size)
        return rescale(replay[idx]).astype(self.dtype)

    def phase_fisher(self, i: int, task: str) -> None:
        params = self.load_net(i)
        f = fisher_diag(self.net, params, self.fisher_states(i), self.plan.ewc.beta)
        if self.cond.penalty == "ewc":
            save_anchor(self.path(f"ewc_t{i}.ckpt"), EwcAnchor(params, f, i))
            return
        prev = None
        if i > 1:
            prev = load_anchor(self.path("ewc_online.ckpt"), self.net).fisher
        rolled = online_ewc_update(prev, f, self.plan.ewc.online_gamma)
        save_anchor(self.path("ewc_online.ckpt"), EwcAnchor(params, rolled, i))

    def limit_budget(self) -> int:
        itemsize = np.dtype(self.dtype).itemsize
        gan_bytes = (self.gen_net.num_params() + self.disc_net.num_params()) * itemsize
        return reh_limit_budget(gan_bytes, int(np.prod(self.obs_shape)) * np.dtype(np.uint8).itemsize)

    def phase_store(self, i: int, task: str) -> None:
        replay = self.replay_states(i)
        if self.cond.rehearsal_source == "replay":
            save_arrays(self.path(f"store_t{i}.ckpt"), {"states": replay}, {"task": task})
            return
        budget = self.limit_budget()
        quotas = per_task_quota(budget, i)
        arrays = {}
        if i > 1:
            arrays, _, _ = load_arrays(self.path("store.ckpt"))
        for j in range(1, i):
            arrays[f"t{j}"] = arrays[f"t{j}"][:quotas[j - 1]]
        rng = stream(self.seed, "reh-limit", i)
        pick = rng.choice(len(replay), size=min(quotas[i - 1], len(replay)), replace=False)
        arrays[f"t{i}"] = replay[np.sort(pick)]
        save_arrays(self.path("store.ckpt"), arrays, {"budget": budget, "quotas": quotas})
        end = self.base_frames(i) + self.segment_frames()
        self.row(end, "store", task, "", "stored_items", sum(len(v) for v in arrays.values()))

    def phase_close(self, i: int, task: str) -> None:
        work = self.dir / "work"
        for name in (f"stm_t{i}.ckpt", f"replay_t{i}.ckpt"):
            (work / name).unlink(missing_ok=True)
        end = self.base_frames(i) + self.segment_frames()
        self.row(end, "close", task, "", "artifact_bytes", artifact_bytes(self.dir))

    def phase_overlap(self) -> None:
        an = self.plan.analysis
        params = self.load_net(len(self.plan.tasks))
        fishers = {}
        for task in self.plan.tasks:
            states = rollout_states(self.net, params, task, an.fisher_samples, an.fisher_epsilon,
                                    self.seed)
            fishers[task] = fisher_diag(self.net, params, states.astype(self.dtype))
        canonical = {t: fishers[t] for t in sorted(fishers)}
        reports = overlap_reports(canonical, an.order_label)
        write_overlap_csv(self.dir / "overlap.csv", reports)
        end = self.base_frames(len(self.plan.tasks)) + self.segment_frames()
        for r in reports:
            self.row(end, "analysis", "", f"{r.task_a}|{r.task_b}", "fisher_overlap", r.overlap)


def rollout_states(net: Network, params: NetworkParams, task: str, count: int, eps: float,
                   seed: int) -> np.ndarray:
    """``count`` encoded states visited by the epsilon-greedy policy of ``params``."""
    env = make_task(task, seed_int(seed, "fisher-env", task))
    rng = stream(seed, "fisher-act", task)
    out = np.empty((count,) + env.obs_shape, dtype=np.float64)
    obs = env.reset()
    for k in range(count):
        out[k] = obs
        if rng.random() < eps:
            a = int(rng.integers(env.n_actions))
        else:
            a = int(np.argmax(q_values(net, params, obs[None].astype(params.dtype))[0]))
        obs, _, done = env.step(a)
        if done:
            obs = env.reset()
    return out


def final_params(run_dir: Path) -> tuple[NetworkParams, dict]:
    """The newest long-term (or single) network checkpoint in a seed directory."""
    cands = sorted(run_dir.glob("ltm_t*.ckpt")) + sorted(run_dir.glob("net_t*.ckpt"))
    if not cands:
        raise ContractError(f"{run_dir}: no network checkpoint")
    best = max(cands, key=lambda p: int(p.stem.split("_t")[-1]))
    return load_params(best)
