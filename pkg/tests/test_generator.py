import numpy as np
import pytest

from pnag.budget import BudgetDistribution
from pnag.errors import NumericalError, ValidationError
from pnag.generator import (Baseline, GeneratorModel, generate, reinforce_step, rollout, rollout_backward, sample,
                            sample_archs, sequence_logprob, train_generator)
from pnag import nn_core
from pnag.oracle import SyntheticOracle
from pnag.search_space import MASK, REDUCED_SPACE, SearchSpaceConfig, active_mask, decode, encode

from gradcheck import check_params

TINY = SearchSpaceConfig(1, (1,), (3, 6), (3,))  # one real decision: the width


def _model(cfg=REDUCED_SPACE, k=3, seed=0, hidden=8, lo=80.0, hi=110.0):
    return GeneratorModel.init(cfg, BudgetDistribution(lo, hi, k), seed=seed, hidden=hidden, embed_dim=5,
                               budget_dim=4)


def test_budget_vector_interpolates_linearly():
    m = _model(k=2)
    assert np.allclose(m.budget_weights(95.0), [[0.5, 0.5]])
    assert np.allclose(m.budget_vector(95.0), 0.5 * (m.budget_vector(80.0) + m.budget_vector(110.0)))
    m3 = _model(k=4, lo=80, hi=110)
    b = np.linspace(80, 110, 31)
    vecs = np.stack([m3.budget_vector(x) for x in b])
    for lo, hi in zip(m3.anchors[:-1], m3.anchors[1:]):
        seg = (b >= lo) & (b <= hi)
        # inside a segment the vector is affine in the budget: second differences vanish
        assert np.allclose(np.diff(vecs[seg], 2, axis=0), 0, atol=1e-12)


def test_out_of_range_budget_rejected():
    m = _model()
    for b in (79.9, 110.1):
        with pytest.raises(ValidationError, match="outside generator range"):
            rollout(m, [b], np.random.default_rng(0))
        with pytest.raises(ValidationError):
            generate(m, b, mode="greedy")


def test_zero_heads_give_uniform_policy():
    m = _model()
    m.params["head.W"][:] = 0
    m.params["head.b"][:] = 0
    ro = rollout(m, np.full(50, 95.0), np.random.default_rng(0))
    sizes = np.array([s.n_choices for s in REDUCED_SPACE.steps])
    expect = np.where(ro.active, -np.log(sizes)[None, :], 0.0)
    assert np.allclose(ro.logp, expect)
    assert np.allclose(ro.entropy, -expect)


def test_masking_contract():
    m = _model(seed=3)
    ro = rollout(m, np.linspace(80, 110, 200), np.random.default_rng(1))
    for t, on, lp, ent in zip(ro.tokens, ro.active, ro.logp, ro.entropy):
        assert np.array_equal(on, active_mask(t[None, :], REDUCED_SPACE)[0])
        assert np.all(t[~on] == MASK) and np.all(lp[~on] == 0) and np.all(ent[~on] == 0)
        assert np.array_equal(encode(decode(t, REDUCED_SPACE), REDUCED_SPACE), t)


def test_teacher_forcing_reproduces_sampled_logprob():
    m = _model(seed=4)
    for s in range(10):
        traj = sample(m, 90.0, s)
        lp, ent = sequence_logprob(m, 90.0, encode(traj.arch, REDUCED_SPACE))
        assert lp == pytest.approx(traj.token_logprobs.sum())
        assert ent == pytest.approx(traj.entropy)


def _perturb(model, rng, scale=0.4):
    for k in model.params:
        model.params[k] = model.params[k] + rng.normal(0, scale, model.params[k].shape)


def test_surrogate_gradcheck_100_configs():
    worst = 0.0
    for c in range(100):
        rng = np.random.default_rng(c)
        k = int(rng.integers(1, 4))
        m = GeneratorModel.init(REDUCED_SPACE, BudgetDistribution(80, 110, k) if k > 1 else
                                BudgetDistribution(95, 95, 1), seed=c, hidden=int(rng.integers(2, 6)),
                                embed_dim=int(rng.integers(1, 4)), budget_dim=int(rng.integers(1, 4)))
        _perturb(m, rng)
        B = int(rng.integers(1, 4))
        budgets = rng.uniform(80, 110, B) if k > 1 else np.full(B, 95.0)
        forced = rollout(m, budgets, rng).tokens
        a, e = rng.normal(size=B), rng.normal(size=B)

        def objective():
            ro = rollout(m, budgets, forced=forced)
            return float(a @ ro.total_logp + e @ ro.total_entropy)

        grads = rollout_backward(m, rollout(m, budgets, forced=forced, keep_cache=True), a, e)
        worst = max(worst, check_params(objective, m.params, grads, n_probe=8, rng=rng))
    assert worst < 1e-4


def test_backward_requires_cache():
    m = _model()
    ro = rollout(m, [90.0], np.random.default_rng(0))
    with pytest.raises(ValidationError):
        rollout_backward(m, ro, np.ones(1), np.zeros(1))


def test_constant_reward_leaves_policy_unchanged_without_entropy():
    m = _model(seed=1)
    before = {k: v.copy() for k, v in m.params.items()}
    opt = nn_core.Adam(lr=1e-2)
    reinforce_step(m, lambda t, b: np.full(len(b), 3.0), opt, Baseline(m.budget.k), np.random.default_rng(0),
                   n_per_anchor=4, entropy_weight=0.0)
    assert all(np.array_equal(before[k], m.params[k]) for k in before)


def test_non_finite_reward_raises():
    m = _model()
    with pytest.raises(NumericalError):
        reinforce_step(m, lambda t, b: np.full(len(b), np.nan), nn_core.Adam(), Baseline(m.budget.k),
                       np.random.default_rng(0))


def _p_wide(m, budget=95.0):
    lp, _ = sequence_logprob(m, budget, np.array([0, 1, 0]))
    return float(np.exp(lp))


def test_two_action_policy_moves_toward_reward():
    m = _model(TINY, k=2, seed=0)
    p0 = _p_wide(m)
    reward = lambda tokens, budgets: (tokens[:, 1] == 1).astype(float)
    train_generator(reward, m, iters=300, lr=1e-2, n_per_anchor=4, log_every=100)
    assert _p_wide(m) > max(p0 + 0.3, 0.9)
    m2 = _model(TINY, k=2, seed=0)
    train_generator(lambda t, b: 1.0 - reward(t, b), m2, iters=300, lr=1e-2, n_per_anchor=4, log_every=100)
    assert _p_wide(m2) < min(p0 - 0.3, 0.1)


def test_budget_dependent_reward_is_learned_per_anchor():
    m = _model(TINY, k=2, seed=2)
    reward = lambda tokens, budgets: ((tokens[:, 1] == 1) == (budgets > 95)).astype(float)
    train_generator(reward, m, iters=400, lr=1e-2, n_per_anchor=4, log_every=100)
    assert _p_wide(m, 110.0) > 0.9 and _p_wide(m, 80.0) < 0.1


def test_baseline_leaves_expected_gradient_unbiased():
    # E[grad log p] = 0, so subtracting any baseline leaves the mean gradient unchanged
    m = _model(TINY, k=1, seed=5, lo=95, hi=95)
    _perturb(m, np.random.default_rng(0), 0.3)
    rng = np.random.default_rng(1)
    means = []
    for _ in range(40):
        ro = rollout(m, np.full(250, 95.0), rng, keep_cache=True)
        g = rollout_backward(m, ro, np.full(250, 1 / 250), np.zeros(250))
        means.append(np.concatenate([g["head.b"].ravel(), g["head.W"].ravel()]))
    means = np.array(means)
    t_stat = means.mean(axis=0) / (means.std(axis=0, ddof=1) / np.sqrt(len(means)) + 1e-12)
    live = means.std(axis=0) > 1e-9
    assert np.all(np.abs(t_stat[live]) < 4.5)


def test_baseline_ema():
    b = Baseline(2, decay=0.5)
    slots = np.array([0, 0, 1])
    assert b.get(slots, np.array([1.0, 3.0, 10.0])).tolist() == [2.0, 2.0, 10.0]
    b.update(slots, np.array([1.0, 3.0, 10.0]))
    b.update(np.array([0]), np.array([4.0]))
    assert b.values.tolist() == [3.0, 10.0]


def test_training_bit_identical_and_logged():
    def run():
        m = _model(seed=7)
        reward = lambda t, b: (t[:, 1] == 1).astype(float) - 0.01 * b
        return train_generator(reward, m, iters=30, seed=3, log_every=10, cost_fn=lambda t: np.full(len(t), 90.0))
    (m1, l1), (m2, l2) = run(), run()
    assert all(m1.params[k].tobytes() == m2.params[k].tobytes() for k in m1.params)
    assert l1.to_csv() == l2.to_csv()
    assert len(l1.rows) == 3 * m1.budget.k
    assert l1.to_csv().splitlines()[0] == "iter,anchor_ms,mean_reward,violation_rate"
    assert [r[3] for r in l1.rows if r[1] == 80.0] == [1.0, 1.0, 1.0]
    assert len(l1.curve(95.0)) == 3


def test_resample_mode_and_single_anchor():
    m = _model(k=1, lo=95, hi=95)
    train_generator(lambda t, b: np.zeros(len(b)), m, iters=3, resample=True, log_every=1)
    m = _model(k=3)
    _, hist = train_generator(lambda t, b: b / 100, m, iters=5, resample=True, n_per_anchor=3, log_every=5)
    assert {r[1] for r in hist.rows} <= set(m.anchors.tolist())


def test_generate_modes():
    oracle = SyntheticOracle(REDUCED_SPACE)
    m = _model(seed=2, lo=36, hi=52)
    lat_fn = lambda t: oracle.latency_tokens(t, "mobile")
    assert generate(m, 40.0, "greedy") == generate(m, 40.0, "greedy")
    a = generate(m, 44.0, samples=64, latency_fn=lat_fn, seed=1)
    assert a == generate(m, 44.0, samples=64, latency_fn=lat_fn, seed=1)
    assert oracle.latency(a, "mobile") <= 44.0
    (only,) = sample_archs(m, 44.0, 1, seed=9)
    assert encode(generate(m, 44.0, samples=1, latency_fn=lat_fn, seed=9), REDUCED_SPACE).tolist() == only.tolist()
    # nothing feasible: fall back to the cheapest sample
    toks = sample_archs(m, 36.0, 8, seed=0)
    cheapest = toks[np.argmin(lat_fn(toks))]
    got = generate(m, 36.0, samples=8, latency_fn=lambda t: lat_fn(t) + 100, seed=0)
    assert oracle.latency(got, "mobile") == lat_fn(cheapest[None, :])[0]
    with pytest.raises(ValidationError):
        generate(m, 40.0, mode="beam")
    with pytest.raises(ValidationError):
        generate(m, 40.0)


def test_save_load_roundtrip(tmp_path):
    m = _model(seed=11)
    m.meta = {"device": "mobile"}
    path = tmp_path / "gen.json"
    m.save(path)
    back = GeneratorModel.load(path)
    assert back.meta == m.meta and back.budget == m.budget
    assert np.array_equal(sample_archs(back, 90.0, 20, 3), sample_archs(m, 90.0, 20, 3))
    path.write_text('{"kind": "evaluator", "version": 1}')
    with pytest.raises(ValidationError):
        GeneratorModel.load(path)


def test_interior_budgets_fall_inside_gaps_and_skip_the_log():
    m = _model(k=3)
    seen = []

    def reward(tokens, budgets):
        seen.append(budgets.copy())
        return np.zeros(len(budgets))

    _, hist = train_generator(reward, m, iters=4, n_per_anchor=2, interior=True, log_every=2,
                              cost_fn=lambda t: np.full(len(t), 90.0))
    a = m.anchors
    for b in seen:
        assert b.size == 3 * 2 + 2 * 2
        assert b[:6].tolist() == np.repeat(a, 2).tolist()
        gaps = np.repeat([0, 1], 2)
        assert np.all((b[6:] >= a[gaps]) & (b[6:] <= a[gaps + 1]))
    # log rows cover anchors only: the 80 ms anchor never fits a 90 ms architecture
    assert len(hist.rows) == 2 * 3 and {r[1] for r in hist.rows} == set(a.tolist())
    assert [r[3] for r in hist.rows if r[1] == 80.0] == [1.0, 1.0]


def test_interior_baseline_interpolates_anchor_baselines():
    m = _model(k=2)
    base = Baseline(2)
    # reward equals the budget, so the baseline interpolated between anchors
    # matches interior rewards exactly and their advantage vanishes
    ro = reinforce_step(m, lambda t, b: b.copy(), nn_core.Adam(), base, np.random.default_rng(0),
                        n_per_anchor=3, entropy_weight=0.0, interior=True)
    assert base.values.tolist() == [80.0, 110.0]
    before = {k: v.copy() for k, v in m.params.items()}
    reinforce_step(m, lambda t, b: b.copy(), nn_core.Adam(), base, np.random.default_rng(1),
                   n_per_anchor=3, entropy_weight=0.0, interior=True)
    assert ro.budgets.size == 9
    assert all(np.allclose(before[k], m.params[k], atol=1e-12) for k in before)


def test_interior_training_deterministic():
    def run():
        m = _model(seed=8)
        train_generator(lambda t, b: (t[:, 1] == 1).astype(float) - 0.01 * b, m, iters=20, seed=2,
                        interior=True, log_every=10)
        return m
    m1, m2 = run(), run()
    assert all(m1.params[k].tobytes() == m2.params[k].tobytes() for k in m1.params)
