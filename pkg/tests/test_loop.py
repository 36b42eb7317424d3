import math

import numpy as np
import pytest

import epiglab.data as data_mod
from epiglab.data import TaskSpec
from epiglab.errors import (
    AggregationError,
    ConfigError,
    DataError,
    StateError,
    TimingError,
)
from epiglab.heads import HeadConfig
from epiglab.loop import (
    ActiveLearningLoop,
    DataBundle,
    LoopConfig,
    RunRecord,
    StepRow,
    aggregate,
    class_histogram,
    evaluate,
    null_clock,
    run,
    step_timing,
)

FOREST = HeadConfig(kind="forest", trees=20)


def _config(**kwargs):
    base = dict(head=FOREST, method="random", budget=12, members=20)
    base.update(kwargs)
    return LoopConfig(**base)


class _FixedHead:
    """Stub head emitting a constant marginal, for evaluate() unit tests."""

    def __init__(self, marginal):
        self.marginal = np.asarray(marginal, dtype=np.float64)

    def predict_members(self, features, k_requested=None, seed=0):
        return self.marginal[None, : features.shape[0], :]


class TestRun:
    def test_budget_equal_init_gives_single_row(self, small_bundle):
        record = run(_config(budget=6), small_bundle, seed=0, clock=null_clock)
        assert len(record.rows) == 1
        assert record.rows[0].step == 0
        assert record.rows[0].accuracy is not None

    def test_deterministic_records(self, small_bundle):
        config = _config(method="bald", budget=10)
        a = run(config, small_bundle, seed=1, clock=null_clock)
        b = run(config, small_bundle, seed=1, clock=null_clock)
        assert a.to_csv() == b.to_csv()
        assert a.to_json() == b.to_json()

    def test_step_count_arithmetic(self, small_bundle):
        # budget B, batch 1, init 2-per-class on 3 classes: B - 6 steps
        record = run(_config(budget=16), small_bundle, seed=3, clock=null_clock)
        steps = [r for r in record.rows if r.step > 0]
        assert len(steps) == 10
        assert record.rows[-1].train_size == 16

    def test_default_budget_arithmetic(self):
        # the canonical budget of 300 with 2-per-class init on 3 classes
        # yields exactly 294 single-acquisition steps
        latent, _, labels = data_mod.make_synthetic(
            data_mod.SyntheticSpec(classes=3, per_class=160, latent_dim=3,
                                   raw_dim=3), seed=21)
        splits = data_mod.split(latent.n, {"target": 30, "validation": 30,
                                           "test": 60}, labels, seed=1)
        bundle = DataBundle(tables={"latent": latent}, oracle=labels,
                            splits=splits)
        config = _config(head=HeadConfig(kind="forest", trees=5),
                         budget=300, eval_every=500)
        record = run(config, bundle, seed=0, clock=null_clock)
        assert sum(1 for r in record.rows if r.step > 0) == 294
        assert record.rows[-1].train_size == 300

    def test_defaults_match_reference_protocol(self):
        # canonical experiment constants: 300-label budget, 2-per-class init,
        # 20 seeds, 100 member realisations, 100 target samples per estimate
        config = LoopConfig()
        assert config.budget == 300
        assert config.init_per_class == 2
        assert len(config.seeds) == 20
        assert config.members == 100
        assert config.target_per_step == 100
        head = HeadConfig()
        assert head.trees == 100
        assert head.train.learning_rate == 0.01
        assert head.train.max_steps == 50_000
        assert head.train.patience_steps == 5_000

    def test_conservation_and_monotone_budget(self, small_bundle):
        config = _config(method="maxent", budget=11)
        engine = ActiveLearningLoop(config, small_bundle, seed=2, clock=null_clock)
        engine.start()
        pool_total = small_bundle.splits.pool.size
        while not engine.finished:
            assert engine.train_idx.size + engine.pool_idx.size == pool_total
            assert np.intersect1d(engine.train_idx, engine.pool_idx).size == 0
            before = engine.train_idx.size
            idx = engine.pending
            assert np.isin(idx, engine.pool_idx).all()
            engine.provide_labels(engine.task_labels.entries[idx])
            assert engine.train_idx.size == before + 1
        assert engine.train_idx.size == 11

    def test_every_method_runs(self, small_bundle):
        for method in ("random", "bald", "epig", "maxent", "kcentre",
                       "kmeans", "typiclust"):
            record = run(_config(method=method, budget=8), small_bundle,
                         seed=0, clock=null_clock)
            assert record.rows[-1].train_size == 8
        record = run(_config(method="probcover", budget=8, probcover_delta=2.0),
                     small_bundle, seed=0, clock=null_clock)
        assert record.rows[-1].train_size == 8

    def test_acquired_labels_match_oracle(self, small_bundle):
        record = run(_config(budget=10), small_bundle, seed=5, clock=null_clock)
        oracle = small_bundle.oracle.entries
        for row in record.rows:
            for idx, cls in zip(row.acquired, row.acquired_classes):
                assert oracle[idx] == cls

    def test_unknown_oracle_label_rejected(self, small_data):
        latent, raw, labels = small_data
        entries = labels.entries.copy()
        entries[:200] = -1  # hide most labels
        hidden = data_mod.LabelVector(entries=entries, classes=labels.classes)
        splits = data_mod.split(latent.n, {"target": 20, "validation": 20, "test": 40},
                                hidden, seed=1)
        bundle = DataBundle(tables={"latent": latent}, oracle=hidden, splits=splits)
        with pytest.raises(DataError, match="no label"):
            run(_config(budget=120), bundle, seed=0, clock=null_clock)

    def test_batch_acquisition(self, small_bundle):
        record = run(_config(batch=3, budget=12), small_bundle, seed=1,
                     clock=null_clock)
        steps = [r for r in record.rows if r.step > 0]
        assert len(steps) == 2
        assert all(len(r.acquired) == 3 for r in steps)

    def test_eval_thinning_keeps_final_point(self, small_bundle):
        record = run(_config(budget=13, eval_every=4), small_bundle, seed=0,
                     clock=null_clock)
        eval_steps = [r.step for r in record.rows if r.accuracy is not None]
        assert eval_steps[0] == 0
        assert eval_steps[-1] == 7  # final step always evaluated
        assert 4 in eval_steps

    def test_budget_below_init_rejected(self, small_bundle):
        with pytest.raises(ConfigError):
            run(_config(budget=5), small_bundle, seed=0)

    def test_neural_head_without_validation_aborts(self, small_data):
        latent, _, labels = small_data
        splits = data_mod.split(latent.n, {"target": 20, "validation": 0, "test": 40},
                                labels, seed=1)
        bundle = DataBundle(tables={"latent": latent}, oracle=labels, splits=splits)
        config = _config(head=HeadConfig(kind="dropout_mlp", hidden_layers=(4,)),
                         budget=8)
        with pytest.raises(StateError):
            ActiveLearningLoop(config, bundle, seed=0)

    def test_embeddings_read_once_per_run(self, tmp_path, small_data):
        latent, _, labels = small_data
        emb_path = tmp_path / "latent.emb1"
        lab_path = tmp_path / "labels.lab1"
        data_mod.write_embeddings(latent, emb_path)
        data_mod.write_labels(labels, lab_path)

        data_mod.reset_embedding_read_count()
        table = data_mod.load_embeddings(emb_path)
        oracle = data_mod.load_labels(lab_path)
        splits = data_mod.split(table.n, {"target": 20, "validation": 20, "test": 40},
                                oracle, seed=1)
        bundle = DataBundle(tables={"latent": table}, oracle=oracle, splits=splits)
        assert data_mod.embedding_read_count() == 1
        run(_config(method="epig", budget=12), bundle, seed=0, clock=null_clock)
        assert data_mod.embedding_read_count() == 1  # no re-reads inside the loop


@pytest.fixture(scope="module")
def redundant_bundle():
    latent, raw, labels = data_mod.make_synthetic(
        data_mod.SyntheticSpec(classes=6, per_class=80, latent_dim=4, raw_dim=4),
        seed=9)
    splits = data_mod.split(latent.n, {"target": 40, "validation": 30, "test": 90},
                            labels, seed=2)
    return DataBundle(tables={"latent": latent}, oracle=labels, splits=splits)


class TestRedundantTask:
    def test_grouping_applied_before_init(self, redundant_bundle):
        task = TaskSpec(classes_of_interest=(1, 4), group_rest_as_other=True)
        config = _config(task=task, budget=9)
        engine = ActiveLearningLoop(config, redundant_bundle, seed=0, clock=null_clock)
        engine.start()
        init_labels = engine.known[engine.train_idx]
        np.testing.assert_array_equal(np.bincount(init_labels, minlength=3), [2, 2, 2])

    def test_run_and_histogram_over_task_classes(self, redundant_bundle):
        task = TaskSpec(classes_of_interest=(1, 4), group_rest_as_other=True)
        config = _config(task=task, method="bald", budget=10)
        records = [run(config, redundant_bundle, seed=s, clock=null_clock)
                   for s in (0, 1)]
        hist = class_histogram(records)
        assert hist.shape == (3,)
        assert hist.sum() == pytest.approx(10 - 6)


class TestEvaluate:
    def test_restricted_argmax_prefers_second_interest_class(self):
        head = _FixedHead([[0.1, 0.2, 0.7]])
        task = TaskSpec(classes_of_interest=(0, 1), group_rest_as_other=True,
                        class_names=("one", "seven"))
        out = evaluate(head, np.zeros((1, 2)), np.array([1]), task)
        assert out["accuracy"] == 1.0  # predicts "seven" despite "other" mass

    def test_perfect_one_hot(self):
        head = _FixedHead([[1.0, 0.0], [0.0, 1.0]])
        task = TaskSpec(classes_of_interest=(0, 1))
        out = evaluate(head, np.zeros((2, 2)), np.array([0, 1]), task)
        assert out["accuracy"] == 1.0
        assert out["nll"] == pytest.approx(0.0, abs=1e-9)

    def test_uniform_binary_nll(self):
        head = _FixedHead([[0.5, 0.5], [0.5, 0.5]])
        task = TaskSpec(classes_of_interest=(0, 1))
        out = evaluate(head, np.zeros((2, 2)), np.array([0, 1]), task)
        assert out["nll"] == pytest.approx(math.log(2), abs=1e-12)

    def test_grouped_task_drops_other_class_examples(self):
        head = _FixedHead([[0.6, 0.2, 0.2], [0.6, 0.2, 0.2], [0.6, 0.2, 0.2]])
        task = TaskSpec(classes_of_interest=(0, 1), group_rest_as_other=True)
        out = evaluate(head, np.zeros((3, 2)), np.array([0, 1, 2]), task)
        assert out["accuracy"] == 0.5  # the label-2 example is excluded

    def test_empty_test_set(self):
        head = _FixedHead(np.zeros((0, 2)))
        task = TaskSpec(classes_of_interest=(0, 1))
        with pytest.raises(ConfigError):
            evaluate(head, np.zeros((0, 2)), np.array([], dtype=int), task)


def _record(seed, accs, train_sizes=None):
    sizes = train_sizes or list(range(6, 6 + len(accs)))
    rows = [StepRow(step=i, train_size=s, acquired=(i,), acquired_classes=(0,),
                    accuracy=a, nll=0.1, seconds=float(i))
            for i, (s, a) in enumerate(zip(sizes, accs))]
    return RunRecord(seed=seed, config={"task_classes": 2}, rows=rows)


class TestAggregate:
    def test_two_seed_mean_and_stderr(self):
        summary = aggregate([_record(0, [0.8]), _record(1, [0.9])])
        assert summary.mean_accuracy[0] == pytest.approx(0.85)
        assert summary.stderr[0] == pytest.approx(0.05)

    def test_identical_records_zero_stderr(self):
        summary = aggregate([_record(0, [0.7, 0.8]), _record(1, [0.7, 0.8])])
        np.testing.assert_allclose(summary.stderr, 0.0)

    def test_mismatched_grids_rejected(self):
        with pytest.raises(AggregationError):
            aggregate([_record(0, [0.8]), _record(1, [0.9, 0.95])])

    def test_single_record_rejected(self):
        with pytest.raises(AggregationError):
            aggregate([_record(0, [0.8])])


class TestHistogramAndTiming:
    def test_single_record_counts(self):
        rows = [
            StepRow(0, 6, (), (), 0.5, 0.1, 0.0),
            StepRow(1, 7, (10,), (0,), None, None, 1.0),
            StepRow(2, 8, (11,), (0,), None, None, 3.0),
            StepRow(3, 9, (12,), (1,), 0.6, 0.1, 2.0),
        ]
        record = RunRecord(seed=0, config={"task_classes": 2}, rows=rows)
        np.testing.assert_allclose(class_histogram([record]), [2.0, 1.0])
        assert step_timing([record]) == pytest.approx(2.0)

    def test_timing_requires_steps(self):
        record = RunRecord(seed=0, config={"task_classes": 2},
                           rows=[StepRow(0, 6, (), (), 0.5, 0.1, 0.0)])
        with pytest.raises(TimingError):
            step_timing([record])

    def test_random_histogram_near_uniform(self, small_bundle):
        config = _config(method="random", budget=26)
        records = [run(config, small_bundle, seed=s, clock=null_clock)
                   for s in range(6)]
        hist = class_histogram(records)
        assert hist.sum() == pytest.approx(20.0)
        # sampling symmetry: each class within 3 stderr of uniform
        per_seed = np.array([
            np.bincount([c for r in rec.rows for c in r.acquired_classes],
                        minlength=3) for rec in records
        ])
        stderr = per_seed.std(axis=0, ddof=1) / np.sqrt(len(records))
        assert (np.abs(hist - 20.0 / 3) <= 3 * np.maximum(stderr, 1e-9)).all()


class TestRecordSerialization:
    def test_csv_layout(self, small_bundle):
        record = run(_config(budget=8), small_bundle, seed=0, clock=null_clock)
        lines = record.to_csv().strip().splitlines()
        assert lines[0] == RunRecord.CSV_HEADER
        first = lines[1].split(",")
        assert first[:5] == ["0", "0", "6", "-1", "-1"]
        assert len(lines) == 1 + len(record.rows)

    def test_json_echoes_config(self, small_bundle):
        import json
        record = run(_config(budget=7), small_bundle, seed=0, clock=null_clock)
        body = json.loads(record.to_json())
        assert body["seed"] == 0
        assert body["config"]["method"] == "random"
        assert body["config"]["budget"] == 7
        assert len(body["rows"]) == len(record.rows)
