import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgadapt.kg import FewShotTask, KnowledgeGraph, SamplingError
from kgadapt.trainer import (
    ProtocolError,
    TaskSampler,
    TrainConfig,
    evaluate,
    evaluate_with,
    margin_loss,
    metrics_from_ranks,
    random_baseline,
    rank_candidates,
    task_loss,
    train,
)

from conftest import make_scorer, random_kg


def two_relation_kg():
    trips = [(f"a{i}", "r", f"b{i}") for i in range(5)] + [(f"b{i}", "s", f"a{i + 1}") for i in range(4)]
    return KnowledgeGraph.from_named(trips)


class TestMarginLoss:
    def test_satisfied(self):
        assert margin_loss(0.9, 0.1, 0.5) == 0.0

    def test_violated(self):
        assert margin_loss(0.5, 0.5, 0.5) == 0.5

    def test_arithmetic(self):
        assert margin_loss(0.2, 0.4, 0.1) == pytest.approx(0.3)

    def test_boundary_is_zero(self):
        assert margin_loss(1.0, 0.0, 1.0) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2))
    def test_nonnegative_and_monotone(self, p, n, g):
        loss = margin_loss(p, n, g)
        assert loss >= 0.0
        assert margin_loss(p + 0.1, n, g) <= loss


class TestRanking:
    def test_clear_winner(self):
        assert rank_candidates([(1, 0.9), (2, 0.1), (3, 0.2)], 1) == 1

    def test_pessimistic_ties(self):
        assert rank_candidates([(1, 0.5), (2, 0.5), (3, 0.5)], 1) == 3

    def test_full_tie_among_51(self):
        assert rank_candidates([(c, 0.25) for c in range(51)], 17) == 51

    def test_tied_with_one_at_max(self):
        assert rank_candidates([(1, 0.9), (2, 0.9), (3, 0.1)], 1) == 2

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_candidate_order_free(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 30))
        scores = [(c, float(s)) for c, s in enumerate(rng.integers(0, 4, size=n) / 4)]
        true = int(rng.integers(n))
        perm = rng.permutation(n)
        assert rank_candidates([scores[i] for i in perm], true) == rank_candidates(scores, true)

    def test_missing_true_tail(self):
        with pytest.raises(ProtocolError):
            rank_candidates([(1, 0.5)], 7)

    def test_single_candidate(self):
        assert rank_candidates([(4, -0.3)], 4) == 1


class TestMetrics:
    def test_all_first(self):
        m = metrics_from_ranks([1, 1, 1])
        assert (m.mrr, m.hits1, m.hits5, m.hits10) == (1.0, 1.0, 1.0, 1.0)

    def test_all_second(self):
        m = metrics_from_ranks([2, 2])
        assert (m.mrr, m.hits1, m.hits5, m.hits10) == (0.5, 0.0, 1.0, 1.0)

    def test_mixed(self):
        m = metrics_from_ranks([1, 4, 20])
        assert m.mrr == pytest.approx((1 + 0.25 + 0.05) / 3)
        assert (m.hits1, m.hits5, m.hits10) == (pytest.approx(1 / 3), pytest.approx(2 / 3), pytest.approx(2 / 3))

    def test_empty(self):
        with pytest.raises(ProtocolError):
            metrics_from_ranks([])

    def test_record_counts_tasks(self):
        assert metrics_from_ranks([1, 3]).record()["num_tasks"] == 2

    def test_evaluate_with_oracle_scorer(self):
        tasks = [FewShotTask("r", ((0, 1),), 2, (3, 4, 5), t) for t in (3, 4, 5)]
        m = evaluate_with(lambda t: np.array([float(c == t.true_tail) for c in t.candidates]), tasks)
        assert m.mrr == 1.0

    def test_unlabelled_task(self):
        with pytest.raises(ProtocolError):
            evaluate_with(lambda t: np.zeros(2), [FewShotTask("r", ((0, 1),), 2, (3, 4), None)])


class TestRandomBaseline:
    def test_expected_mrr_for_51_candidates(self):
        rng = np.random.default_rng(0)
        tasks = [FewShotTask("r", ((0, 1),), 0, tuple(range(51)), int(rng.integers(51))) for _ in range(4000)]
        m = random_baseline(tasks, np.random.default_rng(1))
        expected = sum(1.0 / k for k in range(1, 52)) / 51
        assert expected == pytest.approx(0.0886, abs=1e-4)
        assert m.mrr == pytest.approx(expected, abs=0.01)
        assert m.hits10 == pytest.approx(10 / 51, abs=0.02)


class TestSampler:
    def test_shapes_and_contracts(self):
        kg = two_relation_kg()
        s = TaskSampler(kg, shots=2)
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = s.sample(rng, negatives=3)
            assert len(t.support) == 2 and len(t.negatives) == 3
            assert all(r == t.relation for _, r, _ in t.support) and t.positive[1] == t.relation
            assert t.positive not in t.support
            assert all(kg.contains(*n) and n[1] != t.relation for n in t.negatives)

    def test_eligibility_needs_k_plus_one(self):
        kg = two_relation_kg()
        assert TaskSampler(kg, shots=4).eligible == [kg.relation_index["r"]]
        with pytest.raises(SamplingError):
            TaskSampler(kg, shots=5)

    def test_designated_relations(self):
        kg = two_relation_kg()
        s = TaskSampler(kg, shots=2, relations=["s"])
        rng = np.random.default_rng(0)
        assert {s.sample(rng).relation for _ in range(20)} == {kg.relation_index["s"]}
        with pytest.raises(SamplingError):
            TaskSampler(kg, shots=2, relations=["nope"])

    def test_single_relation_graph(self):
        with pytest.raises(SamplingError):
            TaskSampler(KnowledgeGraph.from_named([("a", "r", "b"), ("b", "r", "c")]), shots=1)


class TestTraining:
    def kg(self):
        return random_kg(np.random.default_rng(2), 16, 40, 3)

    def test_zero_steps_leaves_params(self):
        s = make_scorer(self.kg())
        before = [p.data.copy() for p in s.params.parameters()]
        res = train(s, TrainConfig(steps=0, warmup_steps=0))
        assert res.losses == []
        for a, p in zip(before, s.params.parameters()):
            np.testing.assert_array_equal(a, p.data)

    def test_loss_decreases(self):
        s = make_scorer(self.kg(), seed=1)
        cfg = TrainConfig(shots=2, steps=300, warmup_steps=20, peak_lr=1e-2, margin=0.5, seed=0)
        losses = train(s, cfg).losses
        assert np.mean(losses[-50:]) < np.mean(losses[:50])

    def test_deterministic(self):
        cfg = TrainConfig(shots=2, steps=15, warmup_steps=2, peak_lr=1e-2, seed=4)
        a, b = make_scorer(self.kg()), make_scorer(self.kg())
        la, lb = train(a, cfg).losses, train(b, cfg).losses
        assert la == lb
        for p, q in zip(a.params.parameters(), b.params.parameters()):
            assert p.data.tobytes() == q.data.tobytes()

    def test_step_log(self):
        fh = io.StringIO()
        train(make_scorer(self.kg()), TrainConfig(shots=2, steps=3, warmup_steps=1, seed=0), log_fh=fh)
        recs = [json.loads(line) for line in fh.getvalue().splitlines()]
        assert [r["step"] for r in recs] == [1, 2, 3]
        assert all(set(r) == {"step", "loss", "lr"} for r in recs)

    def test_task_loss_value(self):
        kg = self.kg()
        s = make_scorer(kg)
        t = TaskSampler(kg, 2).sample(np.random.default_rng(0), negatives=2)
        loss = task_loss(s, t, 0.5).item()
        ctx = s.support_context(kg.relations[t.relation], [(h, tt) for h, _, tt in t.support])
        sc = s.score_queries(ctx, [(t.positive[0], t.positive[2])] + [(h, tt) for h, _, tt in t.negatives],
                             [(t.positive,)] + [(n,) for n in t.negatives]).data
        assert loss == pytest.approx(np.mean([max(n - sc[0] + 0.5, 0) for n in sc[1:]]), rel=1e-14)

    def test_warmup_not_below_steps(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=10, warmup_steps=10)

    def test_evaluate_bounds(self):
        kg = self.kg()
        s = make_scorer(kg)
        tasks = [FewShotTask("r0", ((0, 1),), 2, (3, 4, 5), 4)]
        m = evaluate(s, tasks)
        assert 1 / 3 <= m.mrr <= 1.0


def test_synthetic_loss_window_decreases():
    from kgadapt.pipeline import benchmark_config, build_scorer, pretrain_for, train_scorer
    from kgadapt.synth import composition_benchmark

    synth = composition_benchmark(seed=0, num_entities=80, num_test_tasks=4)
    cfg = benchmark_config(entities=80, pretrained_dim=8, hidden_dim=8, iterations=2, pretrain_epochs=20,
                           training_relations=synth.train_relations)
    losses = train_scorer(build_scorer(synth.kg, pretrain_for(synth.kg, cfg), cfg), cfg).losses
    assert len(losses) == 2000
    assert np.mean(losses[-200:]) < np.mean(losses[:200])
