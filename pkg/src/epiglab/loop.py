"""Pool-based active-learning orchestration.

A run initializes the training set with a stratified draw, then repeats:
score the pool (or coverage-select), reveal labels for the chosen inputs,
refit the head, evaluate on the test split. Embeddings are read from the
in-memory table; nothing re-executes an encoder inside the loop.

The stepwise engine below is shared by the headless `run` and the labelling
server, so both produce identical records for identical configs and seeds
(wall time aside).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import acquisition, heads
from .data import (
    UNKNOWN,
    AssetStore,
    EmbeddingTable,
    LabelVector,
    SplitSpec,
    TaskSpec,
    apply_task,
    full_task,
    stratified_init,
)
from .errors import (
    AggregationError,
    ConfigError,
    DataError,
    StateError,
    TimingError,
)
from .heads import HeadConfig

METHODS = (
    "random", "bald", "epig", "maxent",
    "kcentre", "kmeans", "typiclust", "probcover",
)

_SCORED_METHODS = ("bald", "epig", "maxent")

# roles for per-step seed derivation
_INIT, _FIT, _SCORE, _TIE, _TARGET, _EVAL, _BOOTSTRAP = range(7)


def _derive_seed(seed: int, role: int, step: int = 0) -> int:
    return int(np.random.SeedSequence([seed, role, step]).generate_state(1)[0])


def null_clock() -> float:
    """Clock that always reads zero; makes run outputs byte-reproducible."""
    return 0.0


@dataclass(frozen=True)
class LoopConfig:
    head: HeadConfig = field(default_factory=HeadConfig)
    method: str = "random"
    budget: int = 300
    init_per_class: int = 2
    batch: int = 1
    seeds: tuple[int, ...] = tuple(range(20))
    task: TaskSpec | None = None
    feature_source: str = "latent"
    eval_every: int = 1
    members: int = 100           # member realisations used for scoring
    target_per_step: int = 100   # EPIG target subsample cap per step
    probcover_delta: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.init_per_class < 1:
            raise ConfigError("init_per_class must be >= 1")
        if self.method == "probcover" and (self.probcover_delta is None
                                           or self.probcover_delta <= 0):
            raise ConfigError("probcover needs a positive probcover_delta")


@dataclass
class DataBundle:
    """Everything a run consumes: feature tables, oracle labels, splits, assets."""

    tables: dict[str, EmbeddingTable]
    oracle: LabelVector
    splits: SplitSpec
    assets: AssetStore | None = None

    def __post_init__(self):
        for name, table in self.tables.items():
            if table.n != self.oracle.n:
                raise DataError(
                    f"table {name!r} has {table.n} rows but oracle has {self.oracle.n}"
                )
        n = self.oracle.n
        for part in (self.splits.pool, self.splits.target,
                     self.splits.validation, self.splits.test):
            if part.size and part.max() >= n:
                raise DataError(f"split index {part.max()} out of range for n={n}")
        if self.assets is not None and self.assets.max_index() >= n:
            raise DataError(f"asset index {self.assets.max_index()} out of range for n={n}")

    def features(self, source: str) -> np.ndarray:
        if source not in self.tables:
            raise ConfigError(
                f"feature source {source!r} not in bundle (has {sorted(self.tables)})"
            )
        return self.tables[source].values


@dataclass(frozen=True)
class StepRow:
    step: int
    train_size: int
    acquired: tuple[int, ...]
    acquired_classes: tuple[int, ...]
    accuracy: float | None
    nll: float | None
    seconds: float


@dataclass
class RunRecord:
    seed: int
    config: dict
    rows: list[StepRow] = field(default_factory=list)

    CSV_HEADER = "seed,step,train_size,acquired_index,acquired_class,accuracy,nll,step_seconds"

    def eval_rows(self) -> list[StepRow]:
        return [r for r in self.rows if r.accuracy is not None]

    def to_csv(self) -> str:
        """One line per acquired index; the initialization row uses index -1."""
        lines = [self.CSV_HEADER]
        for r in self.rows:
            acc = "" if r.accuracy is None else repr(r.accuracy)
            nll = "" if r.nll is None else repr(r.nll)
            pairs = list(zip(r.acquired, r.acquired_classes)) or [(-1, -1)]
            for idx, cls in pairs:
                lines.append(
                    f"{self.seed},{r.step},{r.train_size},{idx},{cls},{acc},{nll},{r.seconds!r}"
                )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        body = {
            "seed": self.seed,
            "config": self.config,
            "rows": [
                {
                    "step": r.step,
                    "train_size": r.train_size,
                    "acquired": list(r.acquired),
                    "acquired_classes": list(r.acquired_classes),
                    "accuracy": r.accuracy,
                    "nll": r.nll,
                    "step_seconds": r.seconds,
                }
                for r in self.rows
            ],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def evaluate(head, test_features: np.ndarray, test_labels: np.ndarray,
             task: TaskSpec, members: int | None = None, seed: int = 0) -> dict:
    """Accuracy and clamped NLL of the marginal predictive on the test set.

    On a grouped task the model is scored as a classifier over the classes of
    interest only: the marginal is restricted to those columns, renormalized,
    and test examples labelled "other" are left out.
    """
    test_labels = np.asarray(test_labels)
    keep = test_labels != UNKNOWN
    if task.group_rest_as_other:
        keep &= test_labels < len(task.classes_of_interest)
    if not keep.any():
        raise ConfigError("no usable test examples for this task")
    test_features = np.asarray(test_features)[keep]
    labels = test_labels[keep]

    cube = heads.predict_members(head, test_features, members, seed)
    marginal = heads.marginal_predictive(cube)
    if task.group_rest_as_other:
        m = len(task.classes_of_interest)
        marginal = marginal[:, :m]
        marginal = marginal / np.maximum(marginal.sum(axis=1, keepdims=True),
                                         acquisition.LOG_CLAMP)

    predictions = np.argmax(marginal, axis=1)
    accuracy = float((predictions == labels).mean())
    true_prob = marginal[np.arange(labels.shape[0]), labels]
    nll = float(-np.log(np.maximum(true_prob, acquisition.LOG_CLAMP)).mean())
    return {"accuracy": accuracy, "nll": nll}


class ActiveLearningLoop:
    """Stepwise engine: select a query batch, wait for labels, refit, repeat.

    Labels may come from an oracle vector (headless `run`) or from a human
    (the labelling server); the state trajectory is identical either way.
    """

    def __init__(self, config: LoopConfig, bundle: DataBundle, seed: int,
                 clock=time.perf_counter, score_hook=None):
        self.config = config
        self.bundle = bundle
        self.seed = int(seed)
        self.clock = clock
        self.score_hook = score_hook

        self.task = config.task or full_task(bundle.oracle.classes)
        self.task_labels = apply_task(bundle.oracle, self.task)
        self.classes = self.task.effective_classes()
        self.features = bundle.features(config.feature_source)

        init_size = config.init_per_class * self.classes
        if config.budget < init_size:
            raise ConfigError(
                f"budget {config.budget} below the {init_size} initial labels"
            )

        splits = bundle.splits
        self.val_idx = splits.validation[
            self.task_labels.entries[splits.validation] != UNKNOWN
        ]
        if config.head.kind != "forest" and self.val_idx.size == 0:
            raise StateError(
                "neural heads need a non-empty labelled validation split"
            )
        self.test_idx = splits.test
        self.target_idx = splits.target
        if config.method == "epig" and self.target_idx.size == 0:
            raise ConfigError("epig needs a non-empty target split")

        # a fully human-labelled session may have no test ground truth at
        # all; rows then carry no accuracy instead of failing the run
        test_entries = self.task_labels.entries[self.test_idx]
        usable = test_entries != UNKNOWN
        if self.task.group_rest_as_other:
            usable &= test_entries < len(self.task.classes_of_interest)
        self._evaluatable = bool(usable.any())

        # labels revealed so far, in task space (init labels come from the
        # oracle when it knows them, otherwise a bootstrap phase asks for them)
        self.known = np.full(bundle.oracle.n, UNKNOWN, dtype=np.int32)
        self.step = 0
        self.rows: list[StepRow] = []
        self.head = None
        self._pending = np.empty(0, dtype=np.int64)
        self._pending_cost = 0.0
        self._bootstrap = not self._oracle_can_init(splits.pool)
        self._bootstrap_queue: list[int] = []

        if self._bootstrap:
            rng = np.random.default_rng(_derive_seed(self.seed, _BOOTSTRAP))
            self._bootstrap_queue = rng.permutation(splits.pool).tolist()
            self.train_idx = np.empty(0, dtype=np.int64)
            self.pool_idx = splits.pool.copy()
        else:
            init = stratified_init(self.task_labels, config.init_per_class,
                                   splits.pool, _derive_seed(self.seed, _INIT))
            self.known[init] = self.task_labels.entries[init]
            self.train_idx = init
            self.pool_idx = np.setdiff1d(splits.pool, init, assume_unique=True)

    # -- setup ------------------------------------------------------------

    def _oracle_can_init(self, pool: np.ndarray) -> bool:
        entries = self.task_labels.entries[pool]
        counts = np.bincount(entries[entries != UNKNOWN], minlength=self.classes)
        return bool((counts >= self.config.init_per_class).all())

    def start(self) -> None:
        """Fit on the initial labels (or open the bootstrap phase)."""
        if self._bootstrap:
            self._pending = np.array([self._bootstrap_queue.pop(0)], dtype=np.int64)
            return
        self._initial_fit()

    def _initial_fit(self) -> None:
        t0 = self.clock()
        self._refit()
        metrics = self._evaluate()
        self.rows.append(StepRow(
            step=0, train_size=int(self.train_idx.size), acquired=(),
            acquired_classes=(), accuracy=metrics["accuracy"],
            nll=metrics["nll"], seconds=self.clock() - t0,
        ))
        self._advance_pending()

    # -- state ------------------------------------------------------------

    @property
    def in_bootstrap(self) -> bool:
        return self._bootstrap

    @property
    def finished(self) -> bool:
        return not self._bootstrap and self.train_idx.size >= self.config.budget

    @property
    def pending(self) -> np.ndarray:
        return self._pending

    def record(self) -> RunRecord:
        return RunRecord(seed=self.seed, config=_config_echo(self.config, self.classes),
                         rows=list(self.rows))

    def accuracy_curve(self) -> list[dict]:
        return [
            {"train_size": r.train_size, "accuracy": r.accuracy}
            for r in self.rows if r.accuracy is not None
        ]

    # -- label intake -----------------------------------------------------

    def provide_labels(self, classes) -> None:
        """Reveal labels for the pending indices and run the step's tail."""
        classes = np.asarray(classes, dtype=np.int64).ravel()
        if self.finished:
            raise StateError("budget exhausted, no labels expected")
        if classes.shape[0] != self._pending.shape[0]:
            raise StateError(
                f"expected {self._pending.shape[0]} labels, got {classes.shape[0]}"
            )
        if classes.size and (classes.min() < 0 or classes.max() >= self.classes):
            raise DataError(f"label outside [0, {self.classes}) provided")

        if self._bootstrap:
            self._bootstrap_step(int(self._pending[0]), int(classes[0]))
            return

        t0 = self.clock()
        idx = self._pending
        self.known[idx] = classes
        self.train_idx = np.sort(np.concatenate([self.train_idx, idx]))
        self.pool_idx = np.setdiff1d(self.pool_idx, idx, assume_unique=True)
        self.step += 1
        self._refit()

        evaluate_now = (self.step % self.config.eval_every == 0) or self.finished
        metrics = self._evaluate() if evaluate_now else {"accuracy": None, "nll": None}
        self.rows.append(StepRow(
            step=self.step, train_size=int(self.train_idx.size),
            acquired=tuple(int(i) for i in idx),
            acquired_classes=tuple(int(c) for c in classes),
            accuracy=metrics["accuracy"], nll=metrics["nll"],
            seconds=self._pending_cost + (self.clock() - t0),
        ))
        self._advance_pending()

    def _bootstrap_step(self, index: int, cls: int) -> None:
        self.known[index] = cls
        self.train_idx = np.sort(np.append(self.train_idx, index))
        self.pool_idx = self.pool_idx[self.pool_idx != index]
        counts = np.bincount(self.known[self.train_idx], minlength=self.classes)
        if (counts >= self.config.init_per_class).all():
            self._bootstrap = False
            self._initial_fit()
            return
        if not self._bootstrap_queue:
            raise DataError("pool exhausted before every class reached its quota")
        if self.train_idx.size >= self.config.budget:
            raise DataError("budget exhausted before every class reached its quota")
        self._pending = np.array([self._bootstrap_queue.pop(0)], dtype=np.int64)

    # -- internals ---------------------------------------------------------

    def _refit(self) -> None:
        features = self.features[self.train_idx]
        labels = self.known[self.train_idx]
        validation = None
        if self.config.head.kind != "forest":
            validation = (self.features[self.val_idx],
                          self.task_labels.entries[self.val_idx])
        self.head = heads.fit(
            self.config.head, features, labels, validation=validation,
            seed=_derive_seed(self.seed, _FIT, self.step), classes=self.classes,
        )

    def _evaluate(self) -> dict:
        if not self._evaluatable:
            return {"accuracy": None, "nll": None}
        return evaluate(
            self.head, self.features[self.test_idx],
            self.task_labels.entries[self.test_idx], self.task,
            members=self.config.members,
            seed=_derive_seed(self.seed, _EVAL, self.step),
        )

    def _advance_pending(self) -> None:
        if self.finished:
            self._pending = np.empty(0, dtype=np.int64)
            self._pending_cost = 0.0
            return
        t0 = self.clock()
        self._pending = self._select_batch()
        self._pending_cost = self.clock() - t0

    def _select_batch(self) -> np.ndarray:
        cfg = self.config
        step = self.step + 1  # the step these queries belong to
        batch = min(cfg.batch, cfg.budget - int(self.train_idx.size))
        if cfg.method == "random":
            return acquisition.random_select(
                self.pool_idx, batch, _derive_seed(self.seed, _TIE, step))
        if cfg.method in _SCORED_METHODS:
            scores = self._score_pool(step)
            if self.score_hook is not None:
                self.score_hook(step, self.pool_idx, scores)
            return acquisition.select_top(
                scores, self.pool_idx, batch, _derive_seed(self.seed, _TIE, step))
        if cfg.method == "kcentre":
            return acquisition.kcentre_select(
                self.features, self.train_idx, self.pool_idx, batch)
        if cfg.method == "kmeans":
            return acquisition.kmeans_select(
                self.features, self.pool_idx, batch,
                _derive_seed(self.seed, _TIE, step))
        if cfg.method == "typiclust":
            return acquisition.typiclust_select(
                self.features, self.train_idx, self.pool_idx, batch,
                _derive_seed(self.seed, _TIE, step))
        if cfg.method == "probcover":
            return acquisition.probcover_select(
                self.features, self.train_idx, self.pool_idx, batch,
                cfg.probcover_delta)
        raise ConfigError(f"unknown method {cfg.method!r}")

    def _score_pool(self, step: int) -> np.ndarray:
        cfg = self.config
        score_seed = _derive_seed(self.seed, _SCORE, step)
        if cfg.method == "bald":
            cube = heads.predict_members(
                self.head, self.features[self.pool_idx], cfg.members, score_seed)
            return acquisition.bald_scores(cube)
        if cfg.method == "maxent":
            cube = heads.predict_members(
                self.head, self.features[self.pool_idx], cfg.members, score_seed)
            return acquisition.max_entropy_scores(cube)
        # epig: fresh seeded target subsample each step, capped per estimate.
        # Pool and target predictions come from one call so that stochastic
        # heads realise the same member set for both cubes.
        rng = np.random.default_rng(_derive_seed(self.seed, _TARGET, step))
        m = min(cfg.target_per_step, self.target_idx.size)
        targets = rng.choice(self.target_idx, size=m, replace=False)
        stacked = np.concatenate(
            [self.features[self.pool_idx], self.features[targets]])
        cube = heads.predict_members(self.head, stacked, cfg.members, score_seed)
        n_pool = self.pool_idx.size
        return acquisition.epig_scores(cube[:, :n_pool], cube[:, n_pool:])


def _config_echo(config: LoopConfig, classes: int) -> dict:
    head = config.head
    return {
        "method": config.method,
        "budget": config.budget,
        "init_per_class": config.init_per_class,
        "batch": config.batch,
        "feature_source": config.feature_source,
        "eval_every": config.eval_every,
        "members": config.members,
        "target_per_step": config.target_per_step,
        "task_classes": classes,
        "head": {
            "kind": head.kind,
            "trees": head.trees,
            "bootstrap": head.bootstrap,
            "hidden_layers": list(head.hidden_layers),
            "dropout_rate": head.dropout_rate,
            "members": head.members,
            "ensemble_size": head.ensemble_size,
        },
    }


def run(config: LoopConfig, bundle: DataBundle, seed: int,
        clock=time.perf_counter, score_hook=None) -> RunRecord:
    """Execute one seeded active-learning run against the bundle's oracle."""
    engine = ActiveLearningLoop(config, bundle, seed, clock=clock,
                                score_hook=score_hook)
    engine.start()
    while not engine.finished:
        idx = engine.pending
        revealed = engine.task_labels.entries[idx]
        unknown = idx[revealed == UNKNOWN]
        if unknown.size:
            raise DataError(f"oracle has no label for selected index {int(unknown[0])}")
        engine.provide_labels(revealed)
    return engine.record()


@dataclass(frozen=True)
class CurveSummary:
    train_sizes: np.ndarray
    mean_accuracy: np.ndarray
    stderr: np.ndarray

    CSV_HEADER = "train_size,mean_accuracy,stderr"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for size, mean, err in zip(self.train_sizes, self.mean_accuracy, self.stderr):
            lines.append(f"{int(size)},{float(mean)!r},{float(err)!r}")
        return "\n".join(lines) + "\n"


def aggregate(records: list[RunRecord]) -> CurveSummary:
    """Mean and standard error of test accuracy across seeds, per budget point."""
    if len(records) < 2:
        raise AggregationError(f"need at least 2 records, got {len(records)}")
    grids = [tuple(r.train_size for r in rec.eval_rows()) for rec in records]
    if len(set(grids)) != 1:
        raise AggregationError("records evaluate at different budget points")
    acc = np.array([[r.accuracy for r in rec.eval_rows()] for rec in records])
    mean = acc.mean(axis=0)
    stderr = acc.std(axis=0, ddof=1) / np.sqrt(acc.shape[0])
    return CurveSummary(
        train_sizes=np.asarray(grids[0], dtype=np.int64),
        mean_accuracy=mean, stderr=stderr,
    )


def class_histogram(records: list[RunRecord]) -> np.ndarray:
    """Mean per-class count of acquired labels (initial labels excluded)."""
    classes = {rec.config["task_classes"] for rec in records}
    if len(classes) != 1:
        raise AggregationError("records come from different tasks")
    c = classes.pop()
    counts = np.zeros((len(records), c))
    for i, rec in enumerate(records):
        for row in rec.rows:
            for cls in row.acquired_classes:
                counts[i, cls] += 1
    return counts.mean(axis=0)


def step_timing(records: list[RunRecord]) -> float:
    """Mean wall seconds per acquisition step across all records."""
    times = [r.seconds for rec in records for r in rec.rows if r.step > 0]
    if not times:
        raise TimingError("no acquisition steps recorded")
    return float(np.mean(times))
