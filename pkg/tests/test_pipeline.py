import csv

import numpy as np
import pytest

from slipcontrol.config import parse_config
from slipcontrol.errors import ConfigError
from slipcontrol.ns_solver import UNCONTROLLED
from slipcontrol.pipeline import (
    REPORT_COLUMNS,
    STAGE4_NOTE,
    StagePlan,
    export_report,
    run_ablation,
    run_member,
    run_pipeline,
    stage_plan,
    summary_text,
)

SMALL = "[domain]\nnx = 32\nny = 16\n[sweep]\neps = 0.1,0.05\n"


@pytest.fixture(scope="module")
def small_ablation():
    return run_ablation(parse_config(SMALL))


def test_small_ablation_passes_checks(small_ablation):
    rep = small_ablation
    assert rep.feasible and rep.passed
    assert {name for name, _, _ in rep.checks} >= {"flushed", "moments_cancelled", "designed_decreasing",
                                                    "designed_beats_ablation", "finite"}
    for m in rep.members:
        assert m.modes_after_T == (UNCONTROLLED,)
        assert m.div_max < 1e-8


def test_report_files(small_ablation, tmp_path):
    assert export_report(small_ablation, tmp_path) == 0
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == REPORT_COLUMNS and len(rows) == 5
    for name in ("stage2_flush.csv", "stage2_design.csv", "stage4_ablation.csv", "config_echo.ini",
                 "stage3_history_designed_eps0.05.csv"):
        assert (tmp_path / name).exists()
    assert STAGE4_NOTE in (tmp_path / "summary.txt").read_text()


def test_infeasible_mass_stops_before_viscous_stage(tmp_path):
    rep = run_pipeline(parse_config("[domain]\nnx = 32\nny = 16\n[envelope]\nmass = 1\n[sweep]\neps = 0.1\n"))
    assert not rep.feasible and not rep.members
    assert "flush" in rep.stop_reason
    assert export_report(rep, tmp_path) == 1
    assert "STOPPED" in summary_text(rep)


def test_zero_initial_state_leftover_is_the_layer():
    # from rest the only leftover is the boundary layer the control itself creates
    cfg = parse_config("[domain]\nnx = 32\nny = 16\n[viscous]\nustar_amplitude = 0\n[sweep]\neps = 0.1\n")
    designed, ablation = run_member(cfg, 0.1, True), run_member(cfg, 0.1, False)
    assert np.isfinite(designed.final_norm)
    assert designed.final_norm < 0.5 * ablation.final_norm


def test_seeded_noise_is_reproducible():
    cfg = parse_config("[domain]\nnx = 32\nny = 16\n[viscous]\nnoise = 0.5\n[sweep]\neps = 0.1\n")
    a = run_member(cfg, 0.1, True, seed=3)
    b = run_member(cfg, 0.1, True, seed=3)
    c = run_member(cfg, 0.1, True, seed=4)
    assert a.final_norm == b.final_norm and a.final_norm != c.final_norm


def test_stage_plan():
    plan = stage_plan(parse_config(SMALL))
    assert plan.stage2_convection == (0.0, 0.05)
    assert plan.stage3_dissipation[0.1] == pytest.approx((0.05, 0.5))
    with pytest.raises(ConfigError):
        StagePlan(0.0, (0.0, 1.0), {0.5: (1.0, 0.5)})
