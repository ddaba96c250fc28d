import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

CRITERIA = {
    "test_expansion_oracle_200_randomized_templates": "expansion oracle (200 randomized templates, < 10 s)",
    "test_bundled_demo_study_cardinality_and_duration": "bundled demo study: 1800 instances, 216000 s estimate",
    "test_dispatch_safety_randomized_schedules": "dispatch safety (8 workers, >= 100 schedules, crashes, < 60 s)",
    "test_end_to_end_determinism_and_planted_ordering": "end-to-end determinism (36 experiments, byte-identical CSVs, < 2 min)",
    "test_analysis_oracle_100_randomized_frames": "analysis oracle (100 randomized frames, <= 1e-12)",
    "test_pareto_oracle_200_instances_all_directions": "pareto oracle (200 x 50-point instances, 4 direction combos)",
    "test_pareto_monotone_transform_invariance_50_instances": "pareto monotone-transform invariance (50 instances)",
    "test_crash_recovery_conserves_results": "crash recovery (kill/restart conserves results)",
    "test_parity_demo_six_line_adaptation": "reproduction-parity demo (<= 6 added lines, runs as a study)",
}

_results = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.split("::")[-1]
    if name in CRITERIA:
        _results[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, label in CRITERIA.items():
        if name in _results:
            outcome = "PASS" if _results[name] == "passed" else "FAIL"
            terminalreporter.write_line(f"[{outcome}] {label}")
