"""Per-source discrepancies, weighted geometric-mean fusion, nearest-neighbor
decisions, and the benchmark harness that evaluates them."""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, InputError
from .kernels import DEFAULT_MEDIAN_SUBSET
from .mmd import _rep_mmd
from .sampling import DataStream, PreparedStream, SamplingSpec, draw_pair, prepare_stream
from .seeding import derive_rng

RAW_SCORE_FLOOR = 1e-12


@dataclass(frozen=True)
class SourceConfig:
    """Per-source pipeline knobs: how to sample and how to treat the result."""

    sampling: SamplingSpec
    cross_user: bool = False
    weight: float = 1.0
    shift_by_one: bool = False   # keeps the fused product informative when raw MMD is 0
    hsv: bool = False            # images only: convert to HSV before sampling

    def __post_init__(self):
        if self.weight <= 0:
            raise ConfigError(f"source weight must be positive, got {self.weight}")


@dataclass
class Trial:
    """One recorded interaction: named raw streams plus identity metadata."""

    trial_id: str
    sources: dict[str, DataStream]
    label: str | None = None
    user_id: str = ""


@dataclass
class ClassLibrary:
    """The training store: labeled trials plus the per-source configuration."""

    classes: dict[str, list[Trial]]
    source_config: dict[str, SourceConfig]

    def __post_init__(self):
        if not self.classes:
            raise InputError("library needs at least one class")
        if not self.source_config:
            raise InputError("library needs at least one configured source")
        universe = set(self.source_config)
        for label, trials in self.classes.items():
            if not trials:
                raise InputError(f"class {label!r} has no trials")
            for trial in trials:
                unknown = set(trial.sources) - universe
                if unknown:
                    raise InputError(
                        f"trial {trial.trial_id!r} of class {label!r} carries "
                        f"unconfigured sources {sorted(unknown)}"
                    )

    @property
    def labels(self) -> list[str]:
        return list(self.classes)

    def trials_flat(self) -> list[tuple[int, str, int, Trial]]:
        """(flat_index, label, trial_index, trial) in stable library order."""
        out = []
        for label, trials in self.classes.items():
            for q, trial in enumerate(trials):
                out.append((len(out), label, q, trial))
        return out


@dataclass(frozen=True)
class PipelineConfig:
    """Run-level knobs shared by every pairwise comparison."""

    repetitions: int = 10
    median_subset: int = DEFAULT_MEDIAN_SUBSET
    fallback_lengthscale: float = 1.0
    score_floor: float = RAW_SCORE_FLOOR
    missing_source: str = "error"   # or "skip": drop and renormalize weights

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.missing_source not in ("error", "skip"):
            raise ConfigError(f"unknown missing_source policy {self.missing_source!r}")


@dataclass
class DiscrepancyScore:
    """Fused weighted geometric mean of per-source averaged MMD values."""

    value: float
    per_source: dict[str, float]


@dataclass
class RankedCandidate:
    label: str
    trial_id: str
    score: float


@dataclass
class Prediction:
    """Class decision plus the full similarity ranking behind it."""

    label: str
    ranking: list[RankedCandidate]
    per_pair_sources: dict[tuple[str, str], dict[str, float]]  # (label, trial_id) -> source values


def restrict_sources(library: ClassLibrary, names) -> ClassLibrary:
    """Library view limited to the given sources (order taken from the library)."""
    keep = [s for s in library.source_config if s in set(names)]
    missing = set(names) - set(library.source_config)
    if missing:
        raise ConfigError(f"unknown sources requested: {sorted(missing)}")
    if not keep:
        raise ConfigError("source selection is empty")
    cfg = {s: library.source_config[s] for s in keep}
    classes = {
        label: [
            Trial(t.trial_id, {s: t.sources[s] for s in keep if s in t.sources},
                  t.label, t.user_id)
            for t in trials
        ]
        for label, trials in library.classes.items()
    }
    return ClassLibrary(classes, cfg)


def apply_ablations(
    source_config: dict[str, SourceConfig],
    *,
    no_hsv: bool = False,
    no_dft: bool = False,
    no_cross_user: bool = False,
) -> dict[str, SourceConfig]:
    """Switch off individual pipeline blocks, leaving everything else intact.

    no_hsv samples images in their raw color space; no_dft sends spectral
    sources through equidistant temporal sampling instead (gap spread to
    cover the stream); no_cross_user drops the mean compensation.
    """
    out = {}
    for name, scfg in source_config.items():
        new = scfg
        if no_hsv and new.hsv:
            new = replace(new, hsv=False)
        if no_dft and new.sampling.strategy == "random_spectral":
            new = replace(new, sampling=replace(
                new.sampling, strategy="equidistant_temporal",
                temporal_gap=None, frequency_cap=None))
        if no_cross_user and new.cross_user:
            new = replace(new, cross_user=False)
        out[name] = new
    return out


def _prepare_trial(trial: Trial, source_config: dict[str, SourceConfig]) -> dict[str, PreparedStream]:
    """HSV conversion and spectra once per trial, shared by all comparisons."""
    prepared = {}
    for name, scfg in source_config.items():
        stream = trial.sources.get(name)
        if stream is not None:
            prepared[name] = prepare_stream(stream, scfg.sampling, hsv=scfg.hsv)
    return prepared


def _averaged_source_mmd(
    prep_y: PreparedStream,
    prep_z: PreparedStream,
    scfg: SourceConfig,
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> float:
    """Mean over repetitions of the per-draw squared-MMD estimate."""
    spec = scfg.sampling
    total = 0.0
    for _ in range(cfg.repetitions):
        y, z = draw_pair(prep_y, prep_z, spec, rng)
        if scfg.cross_user:
            z = z - z.mean(axis=0) + y.mean(axis=0)
        if spec.channel_mode == "split":
            vals = [
                _rep_mmd(y[:, [c]], z[:, [c]], None, cfg.median_subset,
                         cfg.fallback_lengthscale)
                for c in range(y.shape[1])
            ]
            total += float(np.mean(vals))
        else:
            total += _rep_mmd(y, z, None, cfg.median_subset, cfg.fallback_lengthscale)
    return total / cfg.repetitions


def source_discrepancy(
    y_trial: Trial,
    z_trial: Trial,
    source: str,
    source_config: SourceConfig,
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> float:
    """Averaged MMD between two trials on one source, post shift and floor.

    Strictly positive for shift-flagged sources; floored at cfg.score_floor
    otherwise so the geometric-mean fusion never collapses to zero.
    """
    for side, trial in (("library", y_trial), ("test", z_trial)):
        if source not in trial.sources:
            raise DataError(f"{side} trial {trial.trial_id!r} is missing source {source!r}")
    prep_y = prepare_stream(y_trial.sources[source], source_config.sampling,
                            hsv=source_config.hsv)
    prep_z = prepare_stream(z_trial.sources[source], source_config.sampling,
                            hsv=source_config.hsv)
    value = _averaged_source_mmd(prep_y, prep_z, source_config, cfg, rng)
    if source_config.shift_by_one:
        value += 1.0
    return max(value, cfg.score_floor)


def fuse_scores(per_source: dict[str, float], weights: dict[str, float]) -> float:
    """Weighted geometric-mean style product, evaluated in log space."""
    return math.exp(log_fused(per_source, weights))


def log_fused(per_source: dict[str, float], weights: dict[str, float]) -> float:
    total = 0.0
    for name, value in per_source.items():
        if value <= 0.0:
            raise RuntimeError(f"fused score factor for {name!r} must be positive, got {value}")
        total += weights[name] * math.log(value)
    return total


def _effective_weights(source_config: dict[str, SourceConfig], present) -> dict[str, float]:
    """Weights renormalized so skipped sources do not shrink the product scale."""
    total = sum(s.weight for s in source_config.values())
    got = sum(source_config[name].weight for name in present)
    scale = total / got
    return {name: source_config[name].weight * scale for name in present}


def discrepancy_score(
    y_trial: Trial,
    z_trial: Trial,
    source_config: dict[str, SourceConfig],
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> DiscrepancyScore:
    """Fused discrepancy between two trials across all configured sources."""
    per_source = {}
    for name, scfg in source_config.items():
        try:
            per_source[name] = source_discrepancy(y_trial, z_trial, name, scfg, cfg, rng)
        except DataError:
            if cfg.missing_source == "error":
                raise
    if not per_source:
        raise DataError(
            f"no shared sources between trials {y_trial.trial_id!r} and {z_trial.trial_id!r}"
        )
    weights = _effective_weights(source_config, per_source)
    return DiscrepancyScore(fuse_scores(per_source, weights), per_source)


def _compare_cell(
    prep_y: dict[str, PreparedStream],
    prep_z: dict[str, PreparedStream],
    source_order: list[str],
    source_config: dict[str, SourceConfig],
    cfg: PipelineConfig,
    cell_rng,
    reuse: dict | None,
    reuse_key,
) -> dict[str, float]:
    """Per-source values for one (library trial, test trial) pair."""
    values = {}
    for s_idx, name in enumerate(source_order):
        if reuse is not None:
            key = reuse_key(name)
            if key in reuse:
                values[name] = reuse[key]
                continue
        scfg = source_config[name]
        y_ok, z_ok = name in prep_y, name in prep_z
        if not (y_ok and z_ok):
            if cfg.missing_source == "error":
                raise DataError(f"source {name!r} missing from "
                                f"{'library' if not y_ok else 'test'} trial")
            continue
        value = _averaged_source_mmd(prep_y[name], prep_z[name], scfg, cfg, cell_rng(s_idx))
        if scfg.shift_by_one:
            value += 1.0
        values[name] = max(value, cfg.score_floor)
    if not values:
        raise DataError("no shared sources for comparison")
    return values


def _decide(scored, k: int) -> str:
    """k-NN vote over (log_score, class_idx, trial_idx, label) tuples, ascending."""
    if k == 1:
        return scored[0][3]
    top = scored[:k]
    votes: dict[str, int] = {}
    best: dict[str, tuple] = {}
    for row in top:
        votes[row[3]] = votes.get(row[3], 0) + 1
        best.setdefault(row[3], row[:3])
    max_votes = max(votes.values())
    tied = [label for label, v in votes.items() if v == max_votes]
    return min(tied, key=lambda label: best[label])


def _classify_prepared(
    prep_z: dict[str, PreparedStream],
    library: ClassLibrary,
    prepared_library,
    cfg: PipelineConfig,
    k: int,
    rng_factory,
    reuse: dict | None = None,
    reuse_key_factory=None,
) -> Prediction:
    source_order = list(library.source_config)
    label_index = {label: i for i, label in enumerate(library.classes)}
    scored = []
    per_pair: dict[tuple[str, str], dict[str, float]] = {}
    weights_cache: dict[frozenset, dict[str, float]] = {}
    for flat, label, q, trial in library.trials_flat():
        cell_rng = rng_factory(flat)
        reuse_key = (reuse_key_factory(label, trial.trial_id)
                     if reuse_key_factory is not None else (lambda name: None))
        values = _compare_cell(prepared_library[flat], prep_z, source_order,
                               library.source_config, cfg, cell_rng, reuse, reuse_key)
        present = frozenset(values)
        if present not in weights_cache:
            weights_cache[present] = _effective_weights(library.source_config, values)
        log_ds = log_fused(values, weights_cache[present])
        scored.append((log_ds, label_index[label], q, label, trial.trial_id))
        per_pair[(label, trial.trial_id)] = values
    scored.sort(key=lambda row: row[:3])
    ranking = [RankedCandidate(row[3], row[4], math.exp(row[0])) for row in scored]
    label = _decide(scored, k)
    return Prediction(label, ranking, per_pair)


def classify_trial(
    z_trial: Trial,
    library: ClassLibrary,
    cfg: PipelineConfig,
    k: int = 1,
    rng=0,
) -> Prediction:
    """1-NN (or k-NN) decision against every library trial.

    ``rng`` may be a seed int, in which case every (library trial, source)
    cell derives its own substream and results are independent of evaluation
    order; passing a Generator consumes it sequentially instead.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    prep_z = _prepare_trial(z_trial, library.source_config)
    prepared_library = [
        _prepare_trial(trial, library.source_config)
        for _, _, _, trial in library.trials_flat()
    ]
    if isinstance(rng, np.random.Generator):
        def rng_factory(flat):
            return lambda s_idx: rng
    else:
        seed = int(rng)

        def rng_factory(flat):
            return lambda s_idx: derive_rng(seed, 0, flat, s_idx)

    return _classify_prepared(prep_z, library, prepared_library, cfg, k, rng_factory)


@dataclass
class ClassStats:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float | None


@dataclass
class EvaluationReport:
    """Per-class counts and metrics, fold accuracies, confusion matrix."""

    class_labels: list[str]
    confusion: np.ndarray                 # rows: actual, cols: predicted
    per_class: dict[str, ClassStats]
    fold_ids: list[str]
    fold_accuracies: list[float]
    accuracy_mean: float
    accuracy_std: float
    micro_accuracy: float
    macro_precision: float
    total: int

    def to_json_dict(self) -> dict:
        return {
            "class_labels": list(self.class_labels),
            "confusion": self.confusion.tolist(),
            "per_class": {
                label: {
                    "tp": s.tp, "tn": s.tn, "fp": s.fp, "fn": s.fn,
                    "accuracy": s.accuracy, "precision": s.precision,
                }
                for label, s in self.per_class.items()
            },
            "folds": {
                "ids": list(self.fold_ids),
                "accuracies": list(self.fold_accuracies),
                "mean": self.accuracy_mean,
                "std": self.accuracy_std,
            },
            "micro_accuracy": self.micro_accuracy,
            "macro_precision": self.macro_precision,
            "total_predictions": self.total,
        }

    def confusion_csv(self) -> str:
        lines = ["actual\\predicted," + ",".join(self.class_labels)]
        for i, label in enumerate(self.class_labels):
            lines.append(label + "," + ",".join(str(int(v)) for v in self.confusion[i]))
        return "\n".join(lines) + "\n"


def evaluate(predictions, class_labels=None) -> EvaluationReport:
    """Metrics from (predicted, actual, fold_id) records.

    Per-class accuracy counts true negatives, so it is reported alongside the
    per-fold micro accuracies whose mean and standard deviation summarize the
    run.  Precision is undefined for classes never predicted; those are
    reported as None and excluded from the macro mean.
    """
    records = list(predictions)
    if not records:
        raise InputError("no predictions to evaluate")
    if class_labels is None:
        class_labels = sorted({r[0] for r in records} | {r[1] for r in records})
    labels = list(class_labels)
    index = {label: i for i, label in enumerate(labels)}
    unknown = ({r[0] for r in records} | {r[1] for r in records}) - set(labels)
    if unknown:
        raise InputError(f"predictions reference unknown labels {sorted(unknown)}")

    c = len(labels)
    confusion = np.zeros((c, c), dtype=np.int64)
    folds: dict[str, list[bool]] = {}
    for predicted, actual, fold in records:
        confusion[index[actual], index[predicted]] += 1
        folds.setdefault(str(fold), []).append(predicted == actual)

    total = len(records)
    per_class = {}
    precisions = []
    for label in labels:
        i = index[label]
        tp = int(confusion[i, i])
        fp = int(confusion[:, i].sum() - tp)
        fn = int(confusion[i, :].sum() - tp)
        tn = total - tp - fp - fn
        precision = tp / (tp + fp) if (tp + fp) > 0 else None
        if precision is not None:
            precisions.append(precision)
        per_class[label] = ClassStats(tp, tn, fp, fn, (tp + tn) / total, precision)

    fold_ids = sorted(folds)
    fold_acc = [float(np.mean(folds[f])) for f in fold_ids]
    mean = float(np.mean(fold_acc))
    std = float(np.std(fold_acc, ddof=1)) if len(fold_acc) > 1 else 0.0
    return EvaluationReport(
        class_labels=labels,
        confusion=confusion,
        per_class=per_class,
        fold_ids=fold_ids,
        fold_accuracies=fold_acc,
        accuracy_mean=mean,
        accuracy_std=std,
        micro_accuracy=float(np.trace(confusion)) / total,
        macro_precision=float(np.mean(precisions)) if precisions else 0.0,
        total=total,
    )


@dataclass
class PredictionRecord:
    user_id: str
    trial_id: str
    actual: str
    predicted: str


@dataclass
class BenchmarkResult:
    """Evaluation report plus the raw per-pair, per-source value cache.

    The cache is keyed (test_index, class_label, library_trial_id, source)
    and supports ablation re-analysis: a rerun that only changes one pipeline
    block can reuse every untouched entry.
    """

    report: EvaluationReport
    predictions: list[PredictionRecord]
    ds_cache: dict[tuple[int, str, str, str], float]


_FORK_STATE: dict = {}


def _bench_one(t_idx: int):
    st = _FORK_STATE
    return _bench_test_trial(
        t_idx, st["test_trials"][t_idx], st["library"], st["prepared_library"],
        st["cfg"], st["k"], st["seed"], st["reuse"],
    )


def _bench_test_trial(t_idx, trial, library, prepared_library, cfg, k, seed, reuse):
    prep_z = _prepare_trial(trial, library.source_config)

    def rng_factory(flat):
        return lambda s_idx: derive_rng(seed, t_idx, flat, s_idx)

    def reuse_key_factory(label, trial_id):
        return lambda name: (t_idx, label, trial_id, name)

    pred = _classify_prepared(prep_z, library, prepared_library, cfg, k,
                              rng_factory, reuse, reuse_key_factory)
    cache_rows = {
        (t_idx, label, trial_id, name): value
        for (label, trial_id), values in pred.per_pair_sources.items()
        for name, value in values.items()
    }
    return t_idx, pred.label, cache_rows


def run_benchmark(
    library: ClassLibrary,
    test_trials: list[Trial],
    cfg: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    *,
    k: int = 1,
    folds=None,
    jobs: int | None = None,
    reuse_cache: dict | None = None,
) -> BenchmarkResult:
    """Classify every test trial against the library and evaluate per-user folds.

    Every (test trial, library trial, source) cell derives its RNG substream
    from its grid coordinates, so results are identical for any worker count.
    ``folds`` optionally maps user_id to a fold id (default: one fold per
    user).  ``reuse_cache`` supplies per-source values from a previous run for
    the cells a configuration change did not touch.
    """
    if not test_trials:
        raise InputError("no test trials supplied")
    for trial in test_trials:
        if trial.label is None:
            raise InputError(f"test trial {trial.trial_id!r} has no actual label for evaluation")
    prepared_library = [
        _prepare_trial(trial, library.source_config)
        for _, _, _, trial in library.trials_flat()
    ]

    if jobs is None:
        jobs = os.cpu_count() or 1
    jobs = max(1, min(jobs, len(test_trials)))
    use_pool = jobs > 1 and "fork" in multiprocessing.get_all_start_methods()

    state = {
        "test_trials": test_trials, "library": library,
        "prepared_library": prepared_library, "cfg": cfg, "k": k,
        "seed": seed, "reuse": reuse_cache,
    }
    results = []
    if use_pool:
        _FORK_STATE.update(state)
        try:
            with multiprocessing.get_context("fork").Pool(jobs) as pool:
                results = pool.map(_bench_one, range(len(test_trials)), chunksize=4)
        finally:
            _FORK_STATE.clear()
    else:
        for t_idx in range(len(test_trials)):
            results.append(_bench_test_trial(
                t_idx, test_trials[t_idx], library, prepared_library,
                cfg, k, seed, reuse_cache))

    fold_of = (lambda uid: folds[uid]) if folds is not None else (lambda uid: uid)
    predictions = []
    ds_cache: dict[tuple[int, str, str, str], float] = {}
    eval_rows = []
    for t_idx, predicted, cache_rows in sorted(results):
        trial = test_trials[t_idx]
        predictions.append(PredictionRecord(trial.user_id, trial.trial_id,
                                            trial.label, predicted))
        eval_rows.append((predicted, trial.label, fold_of(trial.user_id)))
        ds_cache.update(cache_rows)
    report = evaluate(eval_rows, class_labels=library.labels)
    return BenchmarkResult(report, predictions, ds_cache)
