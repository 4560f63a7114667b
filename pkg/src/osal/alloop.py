"""Experiment driver: the train / score / query / promote stage loop.

A run is configured once (dataset, model variant, strategy, oracle, budget
schedule), seeded, and then advances stage by stage: train on the labeled
pool, evaluate, select a batch from the unlabeled pool, send it to the
oracle, promote whatever labels come back. Budget schedule entries are
cumulative labeled-pool targets; the first entry sizes the initial pool, so
an n-entry schedule produces n stage records and n-1 acquisition rounds.

Every run draws from five named RNG streams spawned off the single run seed
(pool_init, model_init, train, acquire, oracle). Training consumes only the
train stream and acquisition only the acquire stream, so two strategies on
the same seed share an identical stage-0 history and diverge exactly at the
first acquisition.
"""
from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import kernels
from .datapool import (
    Dataset,
    PoolState,
    generate_blobs,
    load_dataset,
    load_pool,
    make_biased_pool,
    mix_ood,
    promote,
    save_foreign_block,
    save_pool,
    split_initial,
)
from .errors import AggregationError, ConfigError, ContractError
from .oracle import LABEL, REJECT_OOD, NoiseSpec, answer_query, human_oracle_session
from .sampling import (
    REJECT_THRESHOLD_DEFAULT,
    TAIL_FRACTION_DEFAULT,
    append_selection_csv,
    random_select,
    select_weibull,
    uncertain_selection,
)
from .vnn import LossConfig, TrainConfig, build_model, evaluate, load_model, save_model, train_stage

log = logging.getLogger(__name__)

VARIANTS = ("m1", "m2")
STRATEGIES = ("uncertainty", "weibull", "random")
ORACLE_KINDS = ("clean", "noisy", "ood_reject", "human")
DATASET_KINDS = ("blobs", "idx", "cifar")
STREAM_NAMES = ("pool_init", "model_init", "train", "acquire", "oracle")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)

STAGE_CSV_COLUMNS = ["stage", "labeled", "accuracy", "sampling_seconds", "rejected_ood"]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "name",
    "dataset",
    "variant",
    "strategy",
    "oracle",
    "budget_schedule",
    "max_labeled_fraction",
    "seeds",
    "train",
    "loss",
    "model",
    "sampling",
    "excluded_classes",
    "ood_mix",
    "cold_start",
}


@dataclass
class ExperimentConfig:
    dataset: dict
    budget_schedule: list
    variant: str = "m1"
    strategy: str = "uncertainty"
    oracle: dict = field(default_factory=lambda: {"kind": "clean"})
    max_labeled_fraction: float = 0.40
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    model: dict = field(default_factory=dict)
    sampling: dict = field(default_factory=dict)
    excluded_classes: tuple[int, ...] = ()
    ood_mix: dict | None = None
    cold_start: bool = False
    name: str = "experiment"


def _fail(fieldname: str, message: str):
    raise ConfigError(f"{fieldname}: {message}")


def _check_dataset_spec(spec, fieldname: str) -> dict:
    if not isinstance(spec, dict):
        _fail(fieldname, "must be a mapping")
    kind = spec.get("kind")
    if kind not in DATASET_KINDS:
        _fail(f"{fieldname}.kind", f"must be one of {DATASET_KINDS}, got {kind!r}")
    if kind == "blobs":
        for key in ("classes", "n_per_class", "dim", "stddev", "seed"):
            if key not in spec:
                _fail(f"{fieldname}.{key}", "required for blob datasets")
    else:
        if "path" not in spec:
            _fail(f"{fieldname}.path", f"required for {kind} datasets")
    return dict(spec)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate a parsed config mapping and build an ExperimentConfig.

    Raises ConfigError naming the offending field; the CLI surfaces these
    with exit status 2.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        _fail(sorted(unknown)[0], "unknown config key")

    dataset = _check_dataset_spec(doc.get("dataset"), "dataset")

    variant = str(doc.get("variant", "m1")).lower()
    if variant not in VARIANTS:
        _fail("variant", f"must be one of {VARIANTS}, got {variant!r}")
    strategy = str(doc.get("strategy", "uncertainty")).lower()
    if strategy not in STRATEGIES:
        _fail("strategy", f"must be one of {STRATEGIES}, got {strategy!r}")

    oracle = doc.get("oracle", {"kind": "clean"})
    if isinstance(oracle, str):
        oracle = {"kind": oracle}
    if not isinstance(oracle, dict) or oracle.get("kind") not in ORACLE_KINDS:
        _fail("oracle.kind", f"must be one of {ORACLE_KINDS}")
    oracle = dict(oracle)
    if oracle["kind"] == "noisy":
        rate = oracle.get("noise_rate")
        if not isinstance(rate, (int, float)) or isinstance(rate, bool) or not 0.0 <= rate <= 1.0:
            _fail("oracle.noise_rate", f"must lie in [0,1], got {rate!r}")
        oracle["noise_rate"] = float(rate)
    if oracle["kind"] == "human":
        if not oracle.get("url"):
            _fail("oracle.url", "human oracle needs a service url (or OSAL_ORACLE_URL)")
        oracle.setdefault("timeout", 300.0)
        oracle.setdefault("poll_interval", 0.25)

    schedule = doc.get("budget_schedule")
    if not isinstance(schedule, list) or not schedule:
        _fail("budget_schedule", "must be a non-empty list")
    for i, entry in enumerate(schedule):
        if isinstance(entry, bool) or not isinstance(entry, (int, float, str)):
            _fail(f"budget_schedule[{i}]", f"bad entry {entry!r}")

    fraction = doc.get("max_labeled_fraction", 0.40)
    if isinstance(fraction, bool) or not isinstance(fraction, (int, float)):
        _fail("max_labeled_fraction", f"must be a number, got {fraction!r}")
    if not 0.0 < fraction <= 1.0:
        _fail("max_labeled_fraction", f"must lie in (0,1], got {fraction}")

    seeds = doc.get("seeds", list(DEFAULT_SEEDS))
    if not isinstance(seeds, list) or not seeds:
        _fail("seeds", "must be a non-empty list of integers")
    for s in seeds:
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            _fail("seeds", f"bad seed {s!r}")
    if len(set(seeds)) != len(seeds):
        _fail("seeds", "duplicate seeds")

    try:
        train = TrainConfig(**doc.get("train", {}))
    except (TypeError, ContractError) as e:
        _fail("train", str(e))
    try:
        loss = LossConfig(**doc.get("loss", {}))
    except (TypeError, ContractError) as e:
        _fail("loss", str(e))

    model = dict(doc.get("model", {}))
    unknown = set(model) - {"z_dim", "hidden", "encoder_preset", "reconstruction_hidden"}
    if unknown:
        _fail(f"model.{sorted(unknown)[0]}", "unknown model key")

    sampling = dict(doc.get("sampling", {}))
    unknown = set(sampling) - {"tail_fraction", "reject_threshold"}
    if unknown:
        _fail(f"sampling.{sorted(unknown)[0]}", "unknown sampling key")
    sampling.setdefault("tail_fraction", TAIL_FRACTION_DEFAULT)
    sampling.setdefault("reject_threshold", REJECT_THRESHOLD_DEFAULT)
    if not 0.0 < sampling["tail_fraction"] <= 1.0:
        _fail("sampling.tail_fraction", f"must lie in (0,1], got {sampling['tail_fraction']}")

    excluded = doc.get("excluded_classes", [])
    if not isinstance(excluded, list):
        _fail("excluded_classes", "must be a list of class indices")

    ood_mix = doc.get("ood_mix")
    if ood_mix is not None:
        if not isinstance(ood_mix, dict):
            _fail("ood_mix", "must be a mapping with fraction and dataset")
        frac = ood_mix.get("fraction")
        if not isinstance(frac, (int, float)) or isinstance(frac, bool) or not 0.0 < frac < 1.0:
            _fail("ood_mix.fraction", f"must lie in (0,1), got {frac!r}")
        _check_dataset_spec(ood_mix.get("dataset"), "ood_mix.dataset")
        ood_mix = {"fraction": float(frac), "dataset": dict(ood_mix["dataset"])}

    return ExperimentConfig(
        dataset=dataset,
        budget_schedule=list(schedule),
        variant=variant,
        strategy=strategy,
        oracle=oracle,
        max_labeled_fraction=float(fraction),
        seeds=tuple(int(s) for s in seeds),
        train=train,
        loss=loss,
        model=model,
        sampling=sampling,
        excluded_classes=tuple(int(c) for c in excluded),
        ood_mix=ood_mix,
        cold_start=bool(doc.get("cold_start", False)),
        name=str(doc.get("name", "experiment")),
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-type snapshot of a config, the inverse of config_from_dict."""
    return {
        "name": config.name,
        "dataset": dict(config.dataset),
        "variant": config.variant,
        "strategy": config.strategy,
        "oracle": dict(config.oracle),
        "budget_schedule": list(config.budget_schedule),
        "max_labeled_fraction": config.max_labeled_fraction,
        "seeds": list(config.seeds),
        "train": {
            "batch_size": config.train.batch_size,
            "learning_rate": config.train.learning_rate,
            "weight_decay": config.train.weight_decay,
            "optimizer": config.train.optimizer,
            "epochs_per_stage": config.train.epochs_per_stage,
        },
        "loss": {
            "beta": config.loss.beta,
            "mc_samples": config.loss.mc_samples,
            "reconstruction": config.loss.reconstruction,
        },
        "model": dict(config.model),
        "sampling": dict(config.sampling),
        "excluded_classes": list(config.excluded_classes),
        "ood_mix": dict(config.ood_mix) if config.ood_mix else None,
        "cold_start": config.cold_start,
    }


def load_config(path) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"config does not parse: {e}") from None
    return config_from_dict(doc)


def apply_overrides(doc: dict, pairs: list[str]) -> dict:
    """Apply KEY=VALUE overrides (dotted keys) on top of a config mapping.

    Keys must already exist in the mapping or name a known top-level field;
    values are parsed as YAML scalars so numbers and lists work.
    """
    out = json.loads(json.dumps(doc))  # deep copy, plain types only
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, _, raw = pair.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"override {pair!r}: value does not parse") from None
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"override {key!r} references no config section {part!r}")
            node = node[part]
        leaf = parts[-1]
        if node is out and leaf not in _TOP_KEYS:
            raise ConfigError(f"override {key!r} references no config key")
        node[leaf] = value
    return out


def resolve_schedule(schedule: list, n_train: int, max_fraction: float) -> list[int]:
    """Turn schedule entries into absolute cumulative labeled-pool targets.

    Integers are absolute counts, floats in (0,1] and "NN%" strings are
    fractions of the training-set size N. The resolved sequence must be
    strictly increasing and stay within the labeled-fraction cap.
    """
    out = []
    for i, entry in enumerate(schedule):
        where = f"budget_schedule[{i}]"
        if isinstance(entry, str):
            text = entry.strip()
            if not text.endswith("%"):
                _fail(where, f"string entries must be percentages, got {entry!r}")
            try:
                value = float(text[:-1]) / 100.0
            except ValueError:
                _fail(where, f"bad percentage {entry!r}")
            count = int(round(value * n_train))
        elif isinstance(entry, float):
            if not 0.0 < entry <= 1.0:
                _fail(where, f"float entries are fractions of N in (0,1], got {entry}")
            count = int(round(entry * n_train))
        else:
            count = int(entry)
        if count <= 0:
            _fail(where, f"resolves to a non-positive target {count}")
        if out and count <= out[-1]:
            _fail(where, f"targets must strictly increase, got {out[-1]} then {count}")
        out.append(count)
    cap = labeled_cap(n_train, max_fraction)
    if out[-1] > cap:
        _fail(
            "budget_schedule",
            f"final target {out[-1]} exceeds the labeled cap {cap} "
            f"(max_labeled_fraction={max_fraction}, N={n_train})",
        )
    if out[0] >= n_train:
        _fail("budget_schedule[0]", f"initial pool {out[0]} leaves nothing unlabeled")
    return out


def labeled_cap(n_train: int, max_fraction: float) -> int:
    return int(max_fraction * n_train + 1e-9)


def build_experiment_dataset(spec: dict) -> Dataset:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "blobs":
        return generate_blobs(spec)
    fmt = "cifar_binary" if kind == "cifar" else kind
    return load_dataset(
        spec["path"], format=fmt, name=spec.get("name"), num_classes=spec.get("num_classes")
    )


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def seed_streams(seed: int) -> dict:
    """Named RNG streams spawned from one run seed.

    pool_init and oracle are consumed as integers (their users hash or
    re-seed internally); the rest are live generators.
    """
    children = dict(zip(STREAM_NAMES, np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))))
    return {
        "pool_init": int(children["pool_init"].generate_state(1, dtype=np.uint64)[0]),
        "oracle": int(children["oracle"].generate_state(1, dtype=np.uint64)[0]),
        "model_init": np.random.default_rng(children["model_init"]),
        "train": np.random.default_rng(children["train"]),
        "acquire": np.random.default_rng(children["acquire"]),
    }


def _generator_states(state: "LoopState") -> dict:
    return {
        "model_init": state.model_rng.bit_generator.state,
        "train": state.train_rng.bit_generator.state,
        "acquire": state.acquire_rng.bit_generator.state,
    }


def _restore_generator(saved: dict) -> np.random.Generator:
    gen = np.random.default_rng(0)
    gen.bit_generator.state = saved
    return gen


# ---------------------------------------------------------------------------
# stage loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StageRecord:
    stage: int
    labeled: int
    accuracy: float
    sampling_seconds: float
    rejected_ood: int


@dataclass
class RunResult:
    records: list
    config_snapshot: dict
    seed: int
    n_train: int

    def validate(self):
        # labeled counts may stall on a stage fully consumed by rejections
        # or deadline-expired queries, but can never shrink
        prev = None
        for rec in self.records:
            if not 0.0 <= rec.accuracy <= 1.0:
                raise ContractError(f"accuracy {rec.accuracy} outside [0,1]")
            if prev is not None and rec.labeled < prev.labeled:
                raise ContractError("labeled count shrank across stages")
            prev = rec


@dataclass
class LoopState:
    dataset: Dataset
    model: object
    pool: PoolState
    schedule: list
    cap: int
    model_rng: np.random.Generator
    train_rng: np.random.Generator
    acquire_rng: np.random.Generator
    oracle_seed: int
    run_id: str
    run_dir: Path | None = None


def _gather(dataset: Dataset, ids) -> np.ndarray:
    return dataset.train_features[[dataset.index_of(sid) for sid in ids]]


def _fresh_model(config: ExperimentConfig, dataset: Dataset, rng):
    return build_model(
        config.variant,
        dataset.feature_shape,
        dataset.num_classes,
        z_dim=int(config.model.get("z_dim", 60)),
        rng=rng,
        encoder_preset=config.model.get("encoder_preset"),
        hidden=config.model.get("hidden"),
        reconstruction_hidden=int(config.model.get("reconstruction_hidden", 64)),
    )


def _select(config: ExperimentConfig, state: LoopState, b: int):
    pool = state.pool
    unlabeled_ids = list(pool.unlabeled_ids)
    if config.strategy == "random":
        return random_select(unlabeled_ids, b, state.acquire_rng)
    unlabeled_x = _gather(state.dataset, unlabeled_ids)
    if config.strategy == "uncertainty":
        return uncertain_selection(state.model, unlabeled_ids, unlabeled_x, b)
    labeled_ids = list(pool.labeled_ids)
    return select_weibull(
        state.model,
        unlabeled_ids,
        unlabeled_x,
        labeled_ids,
        _gather(state.dataset, labeled_ids),
        [pool.oracle_labels[sid] for sid in labeled_ids],
        b,
        tail_fraction=config.sampling["tail_fraction"],
        reject_threshold=config.sampling["reject_threshold"],
    )


def _oracle_round(config: ExperimentConfig, state: LoopState, selected_ids, stage: int):
    """Query the configured oracle; split responses into granted/rejected/pending."""
    kind = config.oracle["kind"]
    if kind == "human":
        responses = human_oracle_session(
            state.dataset,
            list(selected_ids),
            config.oracle["url"],
            state.run_id,
            stage,
            timeout=float(config.oracle.get("timeout", 300.0)),
            poll_interval=float(config.oracle.get("poll_interval", 0.25)),
            class_names=config.oracle.get("class_names"),
        )
    else:
        noise = None
        if kind == "noisy" and config.oracle["noise_rate"] > 0:
            noise = NoiseSpec(
                config.oracle["noise_rate"],
                state.dataset.superclass_map,
                seed=state.oracle_seed,
            )
        responses = [
            answer_query(state.dataset, sid, noise=noise, reject_foreign=kind == "ood_reject")
            for sid in selected_ids
        ]
    granted: dict[str, int] = {}
    rejected, pending = [], []
    for resp in responses:
        if resp.outcome == LABEL:
            granted[resp.sample_id] = resp.label
        elif resp.outcome == REJECT_OOD:
            rejected.append(resp.sample_id)
        else:
            pending.append(resp.sample_id)
    return granted, rejected, pending


def run_stage(state: LoopState, config: ExperimentConfig) -> StageRecord:
    """Run one full stage: train, evaluate, select, query, promote.

    Mutates the model in place and replaces state.pool. Oracle-rejected
    samples stay in the unlabeled pool with their budget spent; queries
    still pending at the deadline cost nothing and also return to U.
    Raises StopIteration when an acquisition is due but U is empty.
    """
    pool = state.pool
    t = pool.stage
    if t >= len(state.schedule):
        raise ContractError(f"stage {t} is past the {len(state.schedule)}-entry schedule")
    budget = state.schedule[t + 1] - state.schedule[t] if t + 1 < len(state.schedule) else 0
    budget = min(budget, max(0, state.cap - len(pool.labeled_ids)))
    if budget > 0 and not pool.unlabeled_ids:
        raise StopIteration(f"unlabeled pool exhausted entering stage {t}")

    if config.cold_start and t > 0:
        state.model = _fresh_model(config, state.dataset, state.model_rng)
    x = _gather(state.dataset, pool.labeled_ids)
    y = np.array([pool.oracle_labels[sid] for sid in pool.labeled_ids], dtype=np.int64)
    train_stage(state.model, (x, y), config.train, config.loss, state.train_rng)
    accuracy = evaluate(state.model, (state.dataset.eval_features, state.dataset.eval_labels))

    sampling_seconds = 0.0
    granted: dict[str, int] = {}
    rejected: list = []
    if budget > 0:
        b = min(budget, len(pool.unlabeled_ids))
        tic = time.perf_counter()
        result = _select(config, state, b)
        sampling_seconds = time.perf_counter() - tic
        if state.run_dir is not None:
            append_selection_csv(state.run_dir / "selections.csv", t, config.strategy, result)
        granted, rejected, pending = _oracle_round(config, state, result.selected_ids, t)
        if pending:
            log.warning(
                "stage %d: %d queries unanswered at the deadline, returned to U",
                t,
                len(pending),
            )

    new_pool = promote(pool, granted)
    if rejected:
        new_pool = replace(
            new_pool, discarded_ood_count=new_pool.discarded_ood_count + len(rejected)
        )
    state.pool = new_pool
    return StageRecord(
        stage=t,
        labeled=len(pool.labeled_ids),
        accuracy=accuracy,
        sampling_seconds=sampling_seconds,
        rejected_ood=len(rejected),
    )


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

def _stage_tag(t: int) -> str:
    return f"stage{t:03d}"


def _append_stage_csv(path: Path, record: StageRecord):
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(STAGE_CSV_COLUMNS)
        writer.writerow(
            [
                record.stage,
                record.labeled,
                repr(record.accuracy),
                repr(record.sampling_seconds),
                record.rejected_ood,
            ]
        )


def _read_stage_csv(path: Path) -> list[StageRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                StageRecord(
                    stage=int(row["stage"]),
                    labeled=int(row["labeled"]),
                    accuracy=float(row["accuracy"]),
                    sampling_seconds=float(row["sampling_seconds"]),
                    rejected_ood=int(row["rejected_ood"]),
                )
            )
    return records


def _rewrite_stage_csv(path: Path, records: list):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STAGE_CSV_COLUMNS)
        for record in records:
            writer.writerow(
                [
                    record.stage,
                    record.labeled,
                    repr(record.accuracy),
                    repr(record.sampling_seconds),
                    record.rejected_ood,
                ]
            )


def _write_run_preamble(run_dir: Path, config: ExperimentConfig, seed: int, dataset: Dataset):
    run_dir.mkdir(parents=True, exist_ok=True)
    for stale in ("stage.csv", "selections.csv"):  # fresh run, not a resume
        (run_dir / stale).unlink(missing_ok=True)
    (run_dir / "config.yaml").write_text(
        yaml.safe_dump(config_to_dict(config), sort_keys=True)
    )
    manifest = {
        "seed": seed,
        "n_train": dataset.num_train,
        "num_classes": dataset.num_classes,
        "backend": kernels.BACKEND,
        "platform": platform.platform(),
        "numpy": np.__version__,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _save_stage_checkpoints(state: LoopState, t: int):
    save_model(state.model, state.run_dir / f"model-{_stage_tag(t)}")
    save_pool(
        state.pool,
        state.run_dir / f"pool-{_stage_tag(t)}.json",
        rng_streams=_generator_states(state),
    )


# ---------------------------------------------------------------------------
# whole runs
# ---------------------------------------------------------------------------

def _prepare(config: ExperimentConfig, seed: int, run_dir) -> LoopState:
    dataset = build_experiment_dataset(config.dataset)
    streams = seed_streams(seed)
    schedule = resolve_schedule(
        config.budget_schedule, dataset.num_train, config.max_labeled_fraction
    )
    cap = labeled_cap(dataset.num_train, config.max_labeled_fraction)
    m0 = schedule[0]
    if config.excluded_classes:
        pool = make_biased_pool(dataset, set(config.excluded_classes), m0, streams["pool_init"])
    else:
        pool = split_initial(dataset, m0, streams["pool_init"])
    if config.ood_mix is not None:
        foreign = build_experiment_dataset(config.ood_mix["dataset"])
        dataset, pool = mix_ood(pool, dataset, foreign, config.ood_mix["fraction"])
    state = LoopState(
        dataset=dataset,
        model=_fresh_model(config, dataset, streams["model_init"]),
        pool=pool,
        schedule=schedule,
        cap=cap,
        model_rng=streams["model_init"],
        train_rng=streams["train"],
        acquire_rng=streams["acquire"],
        oracle_seed=streams["oracle"],
        run_id=f"{config.name}-seed{seed}",
        run_dir=Path(run_dir) if run_dir is not None else None,
    )
    if state.run_dir is not None:
        _write_run_preamble(state.run_dir, config, seed, dataset)
        save_foreign_block(dataset, state.run_dir)
    return state


def _drive(state: LoopState, config: ExperimentConfig, records: list, seed: int) -> RunResult:
    """Advance the stage loop to completion, checkpointing as it goes."""
    n_stages = len(state.schedule)
    while state.pool.stage < n_stages:
        t = state.pool.stage
        try:
            record = run_stage(state, config)
        except StopIteration as stop:
            log.info("run %s: %s", state.run_id, stop)
            break
        records.append(record)
        if state.run_dir is not None:
            _save_stage_checkpoints(state, t)
            _append_stage_csv(state.run_dir / "stage.csv", record)
    result = RunResult(
        records=records,
        config_snapshot=config_to_dict(config),
        seed=seed,
        n_train=_in_distribution_count(state.dataset),
    )
    result.validate()
    return result


def _in_distribution_count(dataset: Dataset) -> int:
    # N excludes mixed-in foreign records; recover it from the origin tags
    return sum(1 for origin in dataset.train_origins if origin is None)


def run_experiment(config: ExperimentConfig, seed: int, run_dir=None) -> RunResult:
    """One seeded run of the full stage loop, optionally persisted to disk."""
    state = _prepare(config, seed, run_dir)
    return _drive(state, config, [], seed)


def resume_experiment(run_dir) -> tuple[RunResult, bool]:
    """Continue a persisted run from its last complete stage.

    Returns the run result plus a flag saying whether the run was already
    complete (making the call a no-op). A stage counts as complete when its
    CSV row and both its checkpoints are on disk.
    """
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.yaml")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    seed = int(manifest["seed"])

    csv_path = run_dir / "stage.csv"
    records = _read_stage_csv(csv_path) if csv_path.exists() else []
    while records:
        t = records[-1].stage
        if (run_dir / f"model-{_stage_tag(t)}.json").exists() and (
            run_dir / f"pool-{_stage_tag(t)}.json"
        ).exists():
            break
        records.pop()
    if not records:
        return run_experiment(config, seed, run_dir), False
    if len(records) < len(_read_stage_csv(csv_path)):
        _rewrite_stage_csv(csv_path, records)

    state = _prepare(config, seed, None)  # rebuild dataset and schedule only
    state.run_dir = run_dir
    last = records[-1].stage
    if last + 1 >= len(state.schedule):
        result = RunResult(
            records=records,
            config_snapshot=config_to_dict(config),
            seed=seed,
            n_train=int(manifest["n_train"]),
        )
        result.validate()
        return result, True

    model, _ = load_model(run_dir / f"model-{_stage_tag(last)}")
    pool, rng_streams = load_pool(run_dir / f"pool-{_stage_tag(last)}.json")
    state.model = model
    state.pool = pool
    if rng_streams:
        state.model_rng = _restore_generator(rng_streams["model_init"])
        state.train_rng = _restore_generator(rng_streams["train"])
        state.acquire_rng = _restore_generator(rng_streams["acquire"])
    return _drive(state, config, records, seed), False


def run_many(config: ExperimentConfig, run_root=None) -> list[RunResult]:
    """Run every seed in the config, one run directory per seed."""
    results = []
    for seed in config.seeds:
        run_dir = None if run_root is None else Path(run_root) / f"seed-{seed}"
        results.append(run_experiment(config, seed, run_dir))
    return results


def load_run_result(run_dir) -> RunResult:
    """Rehydrate a RunResult from a persisted run directory."""
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.yaml")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    result = RunResult(
        records=_read_stage_csv(run_dir / "stage.csv"),
        config_snapshot=config_to_dict(config),
        seed=int(manifest["seed"]),
        n_train=int(manifest["n_train"]),
    )
    result.validate()
    return result


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregateResult:
    stages: tuple[int, ...]
    labeled_mean: tuple[float, ...]
    acc_mean: tuple[float, ...]
    acc_std: tuple[float, ...]
    n_seeds: int
    single_seed: bool


def aggregate_runs(results: list) -> AggregateResult:
    """Per-stage mean and sample std of accuracy across matched runs."""
    if not results:
        raise AggregationError("no runs to aggregate")
    base = results[0]
    stages = tuple(rec.stage for rec in base.records)
    for r in results[1:]:
        if r.config_snapshot != base.config_snapshot:
            raise AggregationError("runs carry different configs")
        if tuple(rec.stage for rec in r.records) != stages:
            raise AggregationError(
                f"runs disagree on stages: {stages} vs "
                f"{tuple(rec.stage for rec in r.records)}"
            )
    accs = np.array([[rec.accuracy for rec in r.records] for r in results])
    labeled = np.array([[rec.labeled for rec in r.records] for r in results], dtype=np.float64)
    single = len(results) == 1
    if single:
        std = np.zeros(len(stages))
        log.warning("aggregating a single run: std reported as 0")
    else:
        std = accs.std(axis=0, ddof=1)
    return AggregateResult(
        stages=stages,
        labeled_mean=tuple(labeled.mean(axis=0)),
        acc_mean=tuple(accs.mean(axis=0)),
        acc_std=tuple(std),
        n_seeds=len(results),
        single_seed=single,
    )
