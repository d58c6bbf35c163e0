import json

import numpy as np
import pytest

from flowcause.attribution import (
    AttributionConfig,
    attribute_change,
    detect_drift,
    mechanism_deviation,
    report_from_dict,
    scores_to_probabilities,
)
from flowcause.dataset import WindowLabel, impute_absent
from flowcause.report import to_json_text
from flowcause.simulator import get_pipeline, parse_fault, simulate
from flowcause.stats import ShapleyGame, shapley

BUG = parse_fault("bug:classify_claim_complexity_op")
SHIFT = parse_fault("shift:input:1.5")

# calibrated ceiling for no-fault attributions: three times the largest
# max-|score| observed over a null seed sweep (which stayed under 0.007)
NULL_SCORE_BOUND = 0.02


def windows(fault, seed_old, seed_new, n=1000):
    spec = get_pipeline("insurance")
    old = simulate(spec, None, n, seed_old, WindowLabel.OLD)
    new = simulate(spec, fault, n, seed_new, WindowLabel.NEW)
    return spec.graph, old, new


# ---------------------------------------------------------------------------
# scores_to_probabilities
# ---------------------------------------------------------------------------


def test_probabilities_single_negative_entry():
    probs, degenerate = scores_to_probabilities({"x": -0.4})
    assert probs == {"x": 1.0}
    assert not degenerate


def test_probabilities_all_zero_uniform_flagged():
    probs, degenerate = scores_to_probabilities({"a": 0.0, "b": 0.0, "c": 0.0, "d": 0.0})
    assert degenerate
    assert all(v == pytest.approx(0.25) for v in probs.values())


def test_probabilities_absolute_share():
    probs, degenerate = scores_to_probabilities({"a": 0.0163, "b": -0.0081, "c": 0.0081})
    assert not degenerate
    assert probs["b"] == probs["c"]
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# drift detection
# ---------------------------------------------------------------------------


def test_detect_drift_identical_windows_false():
    g, old, _ = windows(None, 0, 1)
    assert detect_drift(old, old, "output", threshold=1e-6) is False


def test_detect_drift_threshold_minus_inf_true():
    g, old, new = windows(None, 0, 1)
    assert detect_drift(old, new, "output", threshold=float("-inf")) is True


def test_detect_drift_fires_on_bug():
    g, old, new = windows(BUG, 0, 1)
    assert detect_drift(old, new, "output", threshold=0.01) is True


def test_detect_drift_quiet_without_fault():
    fires = 0
    for s in range(20):
        g, old, new = windows(None, 5000 + s, 6000 + s)
        fires += detect_drift(old, new, "output", threshold=0.01)
    assert fires <= 1


# ---------------------------------------------------------------------------
# mechanism deviation
# ---------------------------------------------------------------------------


def test_deviation_same_dataset_not_changed():
    g, old, _ = windows(None, 0, 1)
    old = impute_absent(old)
    result = mechanism_deviation(g, old, old, "simple_claims", AttributionConfig())
    assert result.statistic == 0.0
    assert result.p_value == 1.0
    assert not result.changed


def test_deviation_flags_buggy_classifier_output():
    hits = 0
    for s in range(20):
        g, old, new = windows(BUG, 1000 + s, 2000 + s)
        old, new = impute_absent(old), impute_absent(new)
        result = mechanism_deviation(g, old, new, "simple_claims", AttributionConfig(master_seed=s))
        hits += result.changed and result.p_value < 0.01
    assert hits == 20


def test_deviation_spares_unchanged_root():
    false_alarms = 0
    for s in range(20):
        g, old, new = windows(BUG, 1000 + s, 2000 + s)
        old, new = impute_absent(old), impute_absent(new)
        result = mechanism_deviation(g, old, new, "input", AttributionConfig(master_seed=s))
        false_alarms += result.changed
    assert false_alarms <= 2


# ---------------------------------------------------------------------------
# attribute_change
# ---------------------------------------------------------------------------


def test_attribution_bug_scenario_top_probability_is_simple_claims():
    g, old, new = windows(BUG, 11, 12)
    report = attribute_change(g, old, new, "output", AttributionConfig(master_seed=5))
    assert report.top_stream == "simple_claims"
    assert {r.stream for r in report.rows} == set(g.ancestors_of_target("output"))


def test_attribution_input_shift_top_probability_is_input():
    g, old, new = windows(SHIFT, 13, 14)
    report = attribute_change(g, old, new, "output", AttributionConfig(master_seed=5))
    assert report.top_stream == "input"
    assert report.scores["input"] > 0.05


def test_attribution_null_scores_stay_small():
    for seed in (0, 1, 2):
        g, old, new = windows(None, 3000 + seed, 4000 + seed)
        report = attribute_change(g, old, new, "output", AttributionConfig(master_seed=seed))
        assert max(abs(v) for v in report.scores.values()) <= NULL_SCORE_BOUND


def test_attribution_probabilities_sum_to_one():
    g, old, new = windows(BUG, 11, 12)
    report = attribute_change(g, old, new, "output", AttributionConfig(master_seed=5))
    assert sum(report.probabilities.values()) == pytest.approx(1.0, abs=1e-9)
    assert all(v >= 0.0 for v in report.probabilities.values())


def test_attribution_efficiency_audit():
    g, old, new = windows(BUG, 11, 12)
    report = attribute_change(g, old, new, "output", AttributionConfig(master_seed=5))
    assert sum(report.scores.values()) == pytest.approx(report.game_total, abs=1e-9)


def test_attribution_deterministic_bytes():
    g, old, new = windows(BUG, 21, 22)
    config = AttributionConfig(master_seed=9)
    first = to_json_text(attribute_change(g, old, new, "output", config))
    second = to_json_text(attribute_change(g, old, new, "output", config))
    assert first == second


def test_attribution_report_roundtrip():
    g, old, new = windows(SHIFT, 13, 14)
    report = attribute_change(g, old, new, "output", AttributionConfig(master_seed=5))
    doc = json.loads(to_json_text(report))
    again = report_from_dict(doc)
    assert again == report


def test_attribution_changed_only_policy():
    g, old, new = windows(BUG, 11, 12)
    config = AttributionConfig(master_seed=5, player_policy="changed")
    report = attribute_change(g, old, new, "output", config)
    # rows still cover the full ancestor set; unchanged streams score zero
    assert {r.stream for r in report.rows} == set(g.ancestors_of_target("output"))
    for row in report.rows:
        if not row.deviation.changed:
            assert row.score == 0.0
    assert report.top_stream == "simple_claims"


def test_attribution_config_validation():
    with pytest.raises(ValueError):
        AttributionConfig(n_hybrid_samples=10)
    with pytest.raises(ValueError):
        AttributionConfig(alpha=1.5)
    with pytest.raises(ValueError):
        AttributionConfig(player_policy="some")
    with pytest.raises(ValueError):
        AttributionConfig(shapley_mode="qmc")


def test_probability_ranking_invariant_to_game_scaling():
    table = {
        (): 0.0,
        ("a",): 1.0,
        ("b",): 0.25,
        ("a", "b"): 1.5,
    }

    def ranking(scale):
        game = ShapleyGame(
            players=("a", "b"),
            value_fn=lambda s: scale * table[tuple(sorted(s))],
            mode="exact",
        )
        scores = shapley(game)
        probs, _ = scores_to_probabilities(scores)
        return sorted(probs, key=probs.get), probs

    base_order, base_probs = ranking(1.0)
    for scale in (0.1, 7.0, 1234.5):
        order, probs = ranking(scale)
        assert order == base_order
        for p in probs:
            assert probs[p] == pytest.approx(base_probs[p], abs=1e-12)
