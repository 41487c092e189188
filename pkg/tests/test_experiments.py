from dataclasses import replace

import numpy as np
import pytest

from pnag.budget import BudgetDistribution
from pnag.experiments import (REDUCED_PIPELINE, PipelineConfig, accuracy_under_budget, budget_for, compare_methods,
                              eval_budgets, frontier_hypervolume, midpoint_budgets, reference_point, run_pipeline,
                              summarize)
from pnag.oracle import SyntheticOracle
from pnag.search_space import REDUCED_SPACE

TINY = replace(REDUCED_PIPELINE, evaluator_epochs=5, evaluator_hidden=(16,), generator_iters=30)


def test_budget_grids():
    b = BudgetDistribution(100, 145, 10)
    assert eval_budgets(b).tolist() == [100.0, 111.25, 122.5, 133.75, 145.0]
    mids = midpoint_budgets(b)
    anchors = b.anchors
    assert len(mids) == 5 and not np.isin(mids, anchors).any()
    assert all(((anchors[:-1] + anchors[1:]) / 2 == m).any() for m in mids)
    assert midpoint_budgets(BudgetDistribution(100, 145, 3)).tolist() == [111.25, 133.75]


def test_accuracy_under_budget():
    assert accuracy_under_budget([0.7, 0.8], [90, 110], 100).tolist() == [0.7, 0.0]


def test_budget_for_uses_data_or_fixed_range():
    oracle = SyntheticOracle(REDUCED_SPACE)
    from pnag.experiments import make_dataset
    recs = make_dataset(TINY, oracle)
    b = budget_for(TINY, recs)
    lat = np.array([r.latency["mobile"] for r in recs])
    assert lat.min() <= b.b_min < b.b_max <= lat.max() and b.k == 5
    fixed = budget_for(replace(TINY, b_min=36.0, b_max=50.0), recs, k=2)
    assert (fixed.b_min, fixed.b_max, fixed.k) == (36.0, 50.0, 2)


def test_config_dict_is_json_ready():
    import json
    d = PipelineConfig().to_dict()
    assert json.loads(json.dumps(d))["space"]["num_units"] == 5


def test_compare_methods_equal_evaluations():
    oracle = SyntheticOracle(REDUCED_SPACE)
    res = run_pipeline(TINY, oracle)
    rows = compare_methods(TINY, res, oracle, n_hist=50)
    per_method = {}
    for r in rows:
        per_method[r.method] = per_method.get(r.method, 0) + r.evaluations
    assert per_method == {"pnag": 400, "evo": 400, "nasmo": 400}
    summary = summarize(rows, reference_point(res.budget, oracle))
    assert [s[0] for s in summary] == ["pnag", "evo", "nasmo"]
    assert all(s[1] >= 0 for s in summary)


def test_frontier_hypervolume_ignores_points_outside_reference():
    from pnag.dominance import FrontierPoint
    from pnag.search_space import sample_uniform
    a = sample_uniform(REDUCED_SPACE, 0)
    pts = [FrontierPoint(a, 40.0, 0.7), FrontierPoint(a, 60.0, 0.9)]
    assert frontier_hypervolume(pts, 50.0, 0.6) == pytest.approx(10 * 0.1)
    assert frontier_hypervolume([FrontierPoint(a, 60.0, 0.9)], 50.0, 0.6) == 0.0
