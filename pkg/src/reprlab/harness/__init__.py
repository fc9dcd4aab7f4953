"""Experiment orchestration: plans, the sequential-task runner, metric logs."""

from reprlab.harness.metrics import export_plot_data
from reprlab.harness.plan import ExperimentPlan, load_plan, parse_plan, plan_from_mapping, serialize_plan
from reprlab.harness.runner import RunSummary, run_plan

__all__ = ["ExperimentPlan", "RunSummary", "export_plot_data", "load_plan", "parse_plan",
           "plan_from_mapping", "run_plan", "serialize_plan"]
