import csv
import json

import numpy as np
import pytest
import yaml

from reprlab.baselines import per_task_quota, reh_limit_budget
from reprlab.errors import ConfigurationError, ContractError, NumericError, ParseError
from reprlab.harness import cli, runner
from reprlab.harness.metrics import (CsvLog, count_rows, export_plot_data, format_value, read_rows,
                                     truncate_rows)
from reprlab.harness.plan import (ExperimentPlan, parse_plan, plan_from_mapping, serialize_plan)
from reprlab.harness.runner import artifact_bytes, run_plan
from reprlab.profiles import DESK_DQN
from reprlab.tensor.checkpoint import load_params

TINY = {
    "tasks": ["collect", "chase"],
    "condition": "repr",
    "seeds": [0],
    "dtype": "float64",
    "pseudo_buffer": 64,
    "stm": {"frames": 1600, "replay_capacity": 400, "target_update_frames": 200,
            "replay_start_frames": 200, "eps_final_frame": 800, "select_window_frames": 400},
    "ltm": {"frames": 640, "select_window_frames": 160},
    "gan": {"steps": 4, "batch_size": 16, "log_every": 2},
    "eval": {"fraction": 0.25, "episodes": 2},
}


def tiny_plan(out, **over) -> ExperimentPlan:
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    raw["out"] = str(out)
    return plan_from_mapping(raw)


def metrics_bytes(out, seed=0) -> bytes:
    return (out / f"seed_{seed}" / "metrics.csv").read_bytes()


@pytest.fixture(scope="module")
def repr_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("repr")
    summary = run_plan(tiny_plan(out))
    assert summary.status == 0
    return out


# -- plan parsing ------------------------------------------------------------------
def test_minimal_plan_gets_desk_defaults():
    plan = parse_plan("tasks: [collect, chase]\ncondition: repr\n")
    assert plan.tasks == ("collect", "chase") and plan.profile == "desk"
    assert plan.stm.frames == DESK_DQN["stm_frames"]
    assert plan.ltm.alpha == 0.55 and plan.gan.steps == DESK_DQN["gan_steps"]
    assert plan.pseudo_buffer == DESK_DQN["pseudo_buffer"]


def test_alpha_out_of_range_names_key():
    with pytest.raises(ParseError, match="ltm.alpha"):
        parse_plan("tasks: [collect]\ncondition: repr\nltm: {alpha: 1.2}\n")


@pytest.mark.parametrize("text,key", [
    ("tasks: [collect]\ncondition: repr\nbogus: 1\n", "bogus"),
    ("tasks: [collect]\ncondition: repr\nstm: {frame: 10}\n", "stm.frame"),
    ("condition: repr\n", "tasks"),
    ("tasks: []\ncondition: repr\n", "tasks"),
    ("tasks: [pong]\ncondition: repr\n", "pong"),
    ("tasks: [collect]\ncondition: dgdmn\n", "condition"),
    ("tasks: [collect]\ncondition: repr\nstm: {frames: -5}\n", "stm.frames"),
    ("tasks: [collect]\ncondition: repr\nalpha_schedule: [[2, 1.5]]\n", "alpha_schedule"),
])
def test_parse_errors_name_the_key(text, key):
    with pytest.raises(ParseError, match=key):
        parse_plan(text)


def test_round_trip_through_serialisation():
    texts = [
        "tasks: [collect, chase]\ncondition: repr\n",
        "tasks: [avoid]\ncondition: online-ewc\nseeds: [3, 1]\newc: {lambda: 50, online_gamma: 0.9}\n",
        "tasks: [chase, avoid, collect]\ncondition: repr-policy\nalpha_schedule: [[4, 0.01], [1, 0.05]]\n"
        "ltm: {standardize_q: true}\ndtype: float64\n",
    ]
    for text in texts:
        plan = parse_plan(text)
        again = parse_plan(serialize_plan(plan))
        assert again == plan
        assert serialize_plan(again) == serialize_plan(plan)


def test_alpha_schedule_lookup():
    plan = parse_plan("tasks: [collect]\ncondition: repr\nalpha_schedule: [[1, 0.05], [5, 0.01]]\n")
    assert plan.alpha_for(1) == 0.05 and plan.alpha_for(4) == 0.05 and plan.alpha_for(5) == 0.01


def test_atari_profile_is_not_runnable(tmp_path):
    with pytest.raises(ConfigurationError, match="atari"):
        run_plan(tiny_plan(tmp_path, profile="atari"))


# -- metric files -------------------------------------------------------------------
def test_format_value_round_trips_floats():
    x = 0.1 + 0.2
    assert float(format_value(x)) == x
    assert format_value(np.float32(0.5)) == "0.5" and format_value(True) == "1"


def test_csv_log_and_truncation(tmp_path):
    path = tmp_path / "m.csv"
    with CsvLog(path, ("a", "b")) as log:
        for i in range(5):
            log.write((i, i / 3))
        with pytest.raises(ContractError):
            log.write((1,))
    assert count_rows(path) == 5
    truncate_rows(path, 2)
    assert count_rows(path) == 2 and read_rows(path)[1]["b"] == repr(1 / 3)
    with CsvLog(path, ("a", "b")) as log:            # reopening appends without a new header
        log.write((9, 9))
    assert path.read_text().count("a,b") == 1 and count_rows(path) == 3


# -- runs ---------------------------------------------------------------------------
def test_metrics_rows_are_ordered_and_complete(repr_run):
    rows = read_rows(repr_run / "seed_0" / "metrics.csv")
    frames = [int(r["frames"]) for r in rows]
    assert frames == sorted(frames)
    evals = [r for r in rows if r["metric"] == "eval_mean"]
    # task 1: one point at the end of its copy phase; task 2: three in-phase points and the end
    assert [(r["eval_task"], int(r["frames"])) for r in evals] == [
        ("collect", 640), ("collect", 800), ("chase", 800), ("collect", 960), ("chase", 960),
        ("collect", 1120), ("chase", 1120), ("collect", 1280), ("chase", 1280)]


def test_same_seed_gives_identical_metrics(repr_run, tmp_path):
    run_plan(tiny_plan(tmp_path))
    assert metrics_bytes(tmp_path) == metrics_bytes(repr_run)


def test_resume_reproduces_the_uninterrupted_run(repr_run, tmp_path):
    for stop in ("t1.gan", "t2.stm", "t2.ltm"):
        out = tmp_path / stop
        first = run_plan(tiny_plan(out, stop_after=stop))
        assert first.status == runner.EXIT_STOPPED
        assert first.seeds[0].completed[-1] == stop
        assert cli.main(["resume", "--out", str(out)]) == 0
        assert metrics_bytes(out) == metrics_bytes(repr_run), stop


def test_resume_discards_rows_of_an_uncommitted_phase(repr_run, tmp_path):
    out = tmp_path / "crash"
    run_plan(tiny_plan(out, stop_after="t1.close"))
    with open(out / "seed_0" / "metrics.csv", "a") as fh:        # a phase that died mid-way
        fh.write("0,999,ltm,chase,chase,repr,eval_mean,1.0\n")
    run_plan(tiny_plan(out), resume=True)
    assert metrics_bytes(out) == metrics_bytes(repr_run)


def test_single_task_copies_short_term_weights(tmp_path):
    run_plan(tiny_plan(tmp_path, tasks=["collect"], stop_after="t1.ltm"))
    d = tmp_path / "seed_0"
    stm, _ = load_params(d / "work" / "stm_t1.ckpt")
    ltm, _ = load_params(d / "ltm_t1.ckpt")
    assert stm.layout_id == ltm.layout_id
    assert stm.flat.tobytes() == ltm.flat.tobytes()


def test_repr_keeps_no_raw_states_after_a_task(repr_run):
    d = repr_run / "seed_0"
    assert sorted(p.name for p in d.glob("*.ckpt")) == ["gan_t2.disc.ckpt", "gan_t2.gen.ckpt",
                                                         "ltm_t2.ckpt"]
    assert list((d / "work").iterdir()) == []


def test_repr_memory_does_not_grow_with_tasks(repr_run):
    rows = [r for r in read_rows(repr_run / "seed_0" / "metrics.csv") if r["metric"] == "artifact_bytes"]
    sizes = [int(r["value"]) for r in rows]
    assert len(sizes) == 2 and sizes[1] <= 1.05 * sizes[0]
    assert sizes[1] == artifact_bytes(repr_run / "seed_0")


def test_failure_leaves_record_and_partial_artifacts(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise NumericError("non-finite discriminator loss nan at GAN step 1")

    monkeypatch.setattr(runner, "train_gan", broken)
    summary = run_plan(tiny_plan(tmp_path))
    assert summary.status == runner.EXIT_FAILED
    d = tmp_path / "seed_0"
    record = json.loads((d / "failure.json").read_text())
    assert record["phase"] == "t1.gan" and record["error"] == "NumericError"
    assert (d / "ltm_t1.ckpt").exists() and count_rows(d / "metrics.csv") > 0


def test_single_network_pr_condition_has_one_parameter_set(tmp_path):
    assert run_plan(tiny_plan(tmp_path, condition="pr")).status == 0
    d = tmp_path / "seed_0"
    names = sorted(p.name for p in d.glob("*.ckpt"))
    assert names == ["gan_t2.disc.ckpt", "gan_t2.gen.ckpt", "net_t2.ckpt"]
    phases = json.loads((d / "state.json").read_text())["completed"]
    assert "t2.stm" not in phases and "t2.pr" in phases


def test_reh_limit_stores_exactly_the_gan_byte_budget(tmp_path):
    assert run_plan(tiny_plan(tmp_path, condition="reh-limit")).status == 0
    plan = tiny_plan(tmp_path)
    run = runner.SeedRun(plan, 0)
    gan_bytes = (run.gen_net.num_params() + run.disc_net.num_params()) * 8      # float64
    budget = reh_limit_budget(gan_bytes, 16 * 8 * 8)
    assert run.limit_budget() == budget
    stored = [int(r["value"]) for r in read_rows(tmp_path / "seed_0" / "metrics.csv")
              if r["metric"] == "stored_items"]
    # each replay holds 400 states; the budget is split equally over the tasks seen
    cap = TINY["stm"]["replay_capacity"]
    expected = [min(budget, cap), sum(min(q, cap) for q in per_task_quota(budget, 2))]
    assert stored == expected and stored[1] == budget


@pytest.mark.parametrize("condition", ["no-reh", "reh", "ewc", "online-ewc", "repr-policy"])
def test_every_condition_runs(tmp_path, condition):
    assert run_plan(tiny_plan(tmp_path, condition=condition)).status == 0
    files = {p.name for p in (tmp_path / "seed_0").glob("*.ckpt")}
    assert "ltm_t2.ckpt" in files
    if condition == "online-ewc":
        assert "ewc_online.ckpt" in files and not any(f.startswith("ewc_t") for f in files)
    if condition == "ewc":
        assert {"ewc_t1.ckpt", "ewc_t2.ckpt"} <= files


# -- export -------------------------------------------------------------------------
def test_export_rows_switches_and_determinism(repr_run, tmp_path):
    a = export_plot_data(repr_run, tmp_path / "a")
    b = export_plot_data(repr_run, tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    rows = read_rows(repr_run / "seed_0" / "metrics.csv")
    for task in ("collect", "chase"):
        curve = read_rows(tmp_path / "a" / f"curve_{task}_repr.csv")
        n_evals = sum(1 for r in rows if r["metric"] == "eval_mean" and r["eval_task"] == task)
        assert len(curve) == n_evals
    switches = {r["task"]: int(r["frames"]) for r in read_rows(tmp_path / "a" / "switches.csv")}
    assert switches == {"collect": 640, "chase": 1280}       # the plan's phase boundaries
    marked = [int(r["frames"]) for r in read_rows(tmp_path / "a" / "curve_collect_repr.csv")
              if r["task_switch"] == "1"]
    assert marked == [640, 1280]


def test_export_of_empty_dir_is_error(tmp_path):
    with pytest.raises(ContractError):
        export_plot_data(tmp_path)


# -- command line -------------------------------------------------------------------
def test_cli_list_conditions(capsys):
    assert cli.main(["list-conditions"]) == 0
    out = capsys.readouterr().out
    for cid in ("no-reh", "reh", "reh-limit", "pr", "ewc", "online-ewc", "repr", "repr-policy"):
        assert cid in out


def test_cli_run_export_evaluate(tmp_path, capsys):
    cfg = tmp_path / "plan.yaml"
    raw = dict(TINY, tasks=["collect"])
    cfg.write_text(yaml.safe_dump(raw))
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "4",
                     "--condition", "no-reh"]) == 0
    plan = parse_plan((out / "seed_4" / "plan.yaml").read_text())
    assert plan.seeds == (4,) and plan.condition == "no-reh"
    assert cli.main(["export-plots", "--out", str(out)]) == 0
    assert (out / "plots" / "curve_collect_no-reh.csv").exists()
    assert cli.main(["evaluate", "--out", str(out), "--episodes", "2"]) == 0
    assert "collect: mean" in capsys.readouterr().out
    assert cli.main(["fisher-overlap", "--out", str(out), "--samples", "5"]) == 0
    assert list(csv.reader(open(out / "seed_4" / "overlap.csv"))) == [["task_a", "task_b", "order", "overlap"]]


def test_cli_reports_configuration_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("tasks: [collect]\ncondition: repr\nltm: {alpha: 1.2}\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "ltm.alpha" in capsys.readouterr().err


def test_thread_cap_must_be_positive(monkeypatch):
    monkeypatch.setenv("REPRLAB_THREADS", "zero")
    with pytest.raises(SystemExit):
        cli.main(["list-conditions"])
