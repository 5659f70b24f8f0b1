"""End-to-end orchestration: featurize a corpus, train meta-models, and
evaluate them against the baselines.

The featurize step produces a self-contained directory (feature matrix,
manifest, per-instance records, graphs, fitted catalog priors) from which
training and evaluation run without re-reading the original corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION
from .baselines import (
    ABSTAIN,
    best_single_model,
    plurality,
    round_half_away_from_zero,
)
from .corpus import (
    AnswerOption,
    Corpus,
    ModelCatalogEntry,
    QUESTION_EMBEDDING_ID,
    QuestionRecord,
    assign_splits,
    load_corpus,
    parse_for_question,
)
from .embedding import EmbeddingStore, fetch_embeddings, load_embedding_file, write_embedding_file
from .evaluation import (
    ABLATION_MASKS,
    EvalReport,
    MethodResult,
    ReliabilityBin,
    accuracy_from_bits,
    brier,
    mask_indices,
    mrr,
    paired_bootstrap,
    question_qualifies_for_hallucination_rate,
    reliability_diagram,
    truthfulqa_false_plausible_rate,
)
from .features import FeatureExtractor, FeatureManifest, build_similarity_matrix
from .graph import AnswerGraph, build_knn_graph, build_threshold_graph
from .metamodels import (
    GatModel,
    GatingModel,
    GbdtClassifier,
    GcnModel,
    LogisticModel,
    MlpModel,
    MODEL_KINDS,
    RankingModel,
    load_model,
    save_model,
    select_answer,
)
from .metamodels.gating import GatingExample
from .metamodels.gnn import GraphExample
from .parsing import INVALID
from .rng import stream_rng
from .training import (
    ArrayDataset,
    ListDataset,
    StandardizationStats,
    TrainConfig,
    apply_standardizer,
    fit_standardizer,
    train_loop,
)

DEFAULT_TAU = 0.7
DEFAULT_KNN = 2


@dataclass
class InstanceFeatures:
    question_id: str
    dataset: str
    task_kind: str
    split: str
    gold_answer: str
    row_start: int
    correctness: list[int]
    values: list[str | None]
    option_flags: dict[str, list[str]]
    graph: AnswerGraph
    sc_values: dict[str, list[str | None]] = field(default_factory=dict)

    @property
    def qualifies_for_hallucination(self) -> bool:
        return any("false_plausible" in f for f in self.option_flags.values()) and any(
            "non_committal" in f for f in self.option_flags.values()
        )


@dataclass
class FeatureSet:
    matrix: np.ndarray
    manifest: FeatureManifest
    catalog: list[ModelCatalogEntry]
    instances: list[InstanceFeatures]
    question_embeddings: np.ndarray | None
    meta: dict

    @property
    def num_models(self) -> int:
        return len(self.catalog)

    def rows(self, inst: InstanceFeatures) -> np.ndarray:
        return self.matrix[inst.row_start:inst.row_start + self.num_models]

    def by_split(self, split: str) -> list[InstanceFeatures]:
        return [inst for inst in self.instances if inst.split == split]

    def datasets(self) -> list[str]:
        return sorted({inst.dataset for inst in self.instances})

    def priors_for(self, dataset: str) -> np.ndarray:
        return np.array(
            [entry.per_dataset_prior_accuracy[dataset] for entry in self.catalog]
        )

    def instance_index(self, inst: InstanceFeatures) -> int:
        if not hasattr(self, "_qid_to_index"):
            self._qid_to_index = {
                item.question_id: pos for pos, item in enumerate(self.instances)
            }
        return self._qid_to_index[inst.question_id]

    # -- persistence --------------------------------------------------------

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "feature_matrix.npy", self.matrix)
        self.manifest.save(out / "feature_manifest.json")
        with (out / "catalog.json").open("w", encoding="utf-8") as handle:
            json.dump(
                [
                    {
                        "model_id": e.model_id,
                        "family": e.family,
                        "log_param_count": e.log_param_count,
                        "per_dataset_prior_accuracy": e.per_dataset_prior_accuracy,
                    }
                    for e in self.catalog
                ],
                handle,
                indent=2,
                sort_keys=True,
            )
            handle.write("\n")
        with (out / "instances.jsonl").open("w", encoding="utf-8") as handle:
            for inst in self.instances:
                handle.write(
                    json.dumps(
                        {
                            "question_id": inst.question_id,
                            "dataset": inst.dataset,
                            "task_kind": inst.task_kind,
                            "split": inst.split,
                            "gold_answer": inst.gold_answer,
                            "row_start": inst.row_start,
                            "correctness": inst.correctness,
                            "values": inst.values,
                            "option_flags": inst.option_flags,
                            "graph": {
                                "num_nodes": inst.graph.num_nodes,
                                "edges": [[m, n, w] for m, n, w in inst.graph.edges],
                                "construction": inst.graph.construction,
                            },
                            "sc_values": inst.sc_values,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        if self.question_embeddings is not None:
            np.save(out / "question_embeddings.npy", self.question_embeddings)
        with (out / "run.json").open("w", encoding="utf-8") as handle:
            json.dump(self.meta, handle, indent=2, sort_keys=True)
            handle.write("\n")

    @staticmethod
    def load(path: str | Path) -> "FeatureSet":
        root = Path(path)
        matrix = np.load(root / "feature_matrix.npy")
        manifest = FeatureManifest.load(root / "feature_manifest.json")
        with (root / "catalog.json").open("r", encoding="utf-8") as handle:
            catalog = [
                ModelCatalogEntry(
                    model_id=e["model_id"],
                    family=e["family"],
                    log_param_count=e["log_param_count"],
                    per_dataset_prior_accuracy=e["per_dataset_prior_accuracy"],
                )
                for e in json.load(handle)
            ]
        instances = []
        with (root / "instances.jsonl").open("r", encoding="utf-8") as handle:
            for line in handle:
                obj = json.loads(line)
                graph = AnswerGraph(
                    num_nodes=obj["graph"]["num_nodes"],
                    edges=tuple((m, n, w) for m, n, w in obj["graph"]["edges"]),
                    construction=obj["graph"]["construction"],
                )
                instances.append(
                    InstanceFeatures(
                        question_id=obj["question_id"],
                        dataset=obj["dataset"],
                        task_kind=obj["task_kind"],
                        split=obj["split"],
                        gold_answer=obj["gold_answer"],
                        row_start=obj["row_start"],
                        correctness=obj["correctness"],
                        values=obj["values"],
                        option_flags=obj["option_flags"],
                        graph=graph,
                        sc_values=obj.get("sc_values", {}),
                    )
                )
        qe_path = root / "question_embeddings.npy"
        question_embeddings = np.load(qe_path) if qe_path.exists() else None
        with (root / "run.json").open("r", encoding="utf-8") as handle:
            meta = json.load(handle)
        return FeatureSet(matrix, manifest, catalog, instances, question_embeddings, meta)


def fit_prior_accuracies(corpus: Corpus) -> None:
    """Fill the catalog's per-dataset prior accuracy from train instances only."""
    sums: dict[tuple[str, str], float] = {}
    counts: dict[str, int] = {}
    for inst in corpus.instances:
        if inst.split != "train":
            continue
        dataset = inst.question.dataset
        counts[dataset] = counts.get(dataset, 0) + 1
        for entry, z in zip(corpus.manifest.catalog, inst.correctness):
            key = (entry.model_id, dataset)
            sums[key] = sums.get(key, 0.0) + z
    for entry in corpus.manifest.catalog:
        for dataset, n in counts.items():
            entry.per_dataset_prior_accuracy[dataset] = sums.get((entry.model_id, dataset), 0.0) / n


def _value_to_str(parsed) -> str | None:
    if not parsed.is_valid:
        return None
    if isinstance(parsed.final_normalized, float):
        return repr(parsed.final_normalized)
    return str(parsed.final_normalized)


def _ensure_embeddings(corpus_dir: Path, corpus: Corpus, embed_url: str | None) -> EmbeddingStore:
    bin_path = corpus_dir / "embeddings.bin"
    if bin_path.exists():
        return load_embedding_file(bin_path)
    if not embed_url:
        raise FileNotFoundError(
            f"no embeddings.bin in {corpus_dir} and no embedding service configured"
        )
    texts: list[str] = []
    keys: list[tuple[str, str]] = []
    for inst in corpus.instances:
        for record in inst.responses:
            texts.append(record.raw_text)
            keys.append((inst.question.question_id, record.model_id))
        texts.append(inst.question.question_text)
        keys.append((inst.question.question_id, QUESTION_EMBEDDING_ID))
    vectors = fetch_embeddings(texts, embed_url)
    store = EmbeddingStore(dim=vectors[0].dim, source_tag="service")
    for key, vector in zip(keys, vectors):
        store.add(key[0], key[1], vector.values)
    write_embedding_file(store, bin_path)
    return store


def featurize_corpus(
    corpus_dir: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    tau: float = DEFAULT_TAU,
    knn: int | None = None,
    embed_url: str | None = None,
) -> FeatureSet:
    """Load a corpus, assign splits, fit priors, and extract all features."""
    corpus_dir = Path(corpus_dir)
    corpus = load_corpus(corpus_dir)
    store = _ensure_embeddings(corpus_dir, corpus, embed_url)
    assign_splits(corpus.instances, seed=seed)
    fit_prior_accuracies(corpus)
    extractor = FeatureExtractor(corpus.manifest.catalog)

    num_models = corpus.manifest.num_models
    samples_by_question: dict[str, dict[str, list]] = {}
    for (sample_qid, model_id), samples in corpus.extra_samples.items():
        samples_by_question.setdefault(sample_qid, {})[model_id] = samples

    rows: list[np.ndarray] = []
    instances: list[InstanceFeatures] = []
    question_embeddings: list[np.ndarray] | None = []
    for inst in corpus.instances:
        qid = inst.question.question_id
        features = extractor.extract_instance(inst, store)
        embeddings = extractor.instance_embeddings(inst, store)
        sim = build_similarity_matrix(embeddings)
        graph = (
            build_knn_graph(sim, knn) if knn is not None else build_threshold_graph(sim, tau)
        )
        sc_values = {
            model_id: [
                _value_to_str(parse_for_question(rec.raw_text, inst.question))
                for rec in samples
            ]
            for model_id, samples in samples_by_question.get(qid, {}).items()
        }
        instances.append(
            InstanceFeatures(
                question_id=qid,
                dataset=inst.question.dataset,
                task_kind=inst.question.task_kind,
                split=inst.split,
                gold_answer=inst.question.gold_answer,
                row_start=len(rows),
                correctness=list(inst.correctness),
                values=[_value_to_str(p) for p in inst.parsed],
                option_flags={opt.letter: list(opt.flags) for opt in inst.question.options},
                graph=graph,
                sc_values=sc_values,
            )
        )
        rows.extend(features)
        if question_embeddings is not None:
            if (qid, QUESTION_EMBEDDING_ID) in store:
                question_embeddings.append(store.get(qid, QUESTION_EMBEDDING_ID).values)
            else:
                question_embeddings = None

    matrix = np.vstack(rows)
    manifest = extractor.manifest
    meta = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "tau": tau,
        "knn": knn,
        "graph_construction": f"knn({knn})" if knn is not None else f"threshold({tau:g})",
        "manifest_hash": manifest.hash,
        "num_questions": len(instances),
        "num_models": num_models,
        "corpus_dir": str(corpus_dir),
    }
    feature_set = FeatureSet(
        matrix=matrix,
        manifest=manifest,
        catalog=corpus.manifest.catalog,
        instances=instances,
        question_embeddings=(
            np.vstack(question_embeddings) if question_embeddings else None
        ),
        meta=meta,
    )
    out = Path(out_dir)
    feature_set.save(out)
    return feature_set


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainedModel:
    kind: str
    model: object
    standardizer: StandardizationStats
    manifest_hash: str
    column_indices: list[int] | None = None

    def instance_probabilities(self, fs: FeatureSet, inst: InstanceFeatures) -> np.ndarray:
        x = apply_standardizer(self.standardizer, self._columns(fs.rows(inst)))
        if self.kind in ("logreg", "gbdt", "mlp", "rf"):
            return self.model.predict_proba(x)
        if self.kind == "rank":
            return self.model.predict_proba(x)
        if self.kind in ("gcn", "gat"):
            return self.model.predict_proba(x, inst.graph)
        if self.kind == "gating":
            if fs.question_embeddings is None:
                raise ValueError("gating model needs question embeddings")
            u = fs.question_embeddings[fs.instance_index(inst)]
            return self.model.predict_proba(u, fs.priors_for(inst.dataset))
        raise ValueError(f"unknown model kind {self.kind!r}")

    def _columns(self, x: np.ndarray) -> np.ndarray:
        if self.column_indices is None:
            return x
        return x[:, self.column_indices]


def _split_arrays(
    fs: FeatureSet, split: str, columns: list[int] | None
) -> tuple[np.ndarray, np.ndarray]:
    xs, zs = [], []
    for inst in fs.by_split(split):
        x = fs.rows(inst)
        xs.append(x if columns is None else x[:, columns])
        zs.append(np.asarray(inst.correctness, dtype=np.float64))
    if not xs:
        raise ValueError(f"empty {split} split")
    return np.vstack(xs), np.concatenate(zs)


def train_model(
    fs: FeatureSet,
    kind: str,
    seed: int = 0,
    config: TrainConfig | None = None,
    column_indices: list[int] | None = None,
    gbdt_overrides: dict | None = None,
) -> tuple[TrainedModel, object]:
    """Train one meta-model kind on the feature set's train/val splits.

    Returns the trained model plus its history (TrainHistory for
    epoch-trained models, a round-loss list for boosted ones).
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; valid kinds: {', '.join(MODEL_KINDS)}")
    config = config or TrainConfig(seed=seed)
    config.seed = seed
    columns = column_indices
    if columns is not None:
        categorical = sorted(
            set(fs.manifest.categorical_indices) & set(columns)
        )
        cat_positions = [columns.index(i) for i in categorical]
    else:
        cat_positions = fs.manifest.categorical_indices

    x_train, z_train = _split_arrays(fs, "train", columns)
    x_val, z_val = _split_arrays(fs, "val", columns)
    stats = fit_standardizer(x_train, cat_positions)
    x_train_std = apply_standardizer(stats, x_train)
    x_val_std = apply_standardizer(stats, x_val)
    dim = x_train_std.shape[1]

    history: object = None
    if kind == "logreg":
        model = LogisticModel(dim)
        history = train_loop(
            model, ArrayDataset(x_train_std, z_train), ArrayDataset(x_val_std, z_val), config
        )
    elif kind == "mlp":
        model = MlpModel(dim, seed=seed)
        history = train_loop(
            model, ArrayDataset(x_train_std, z_train), ArrayDataset(x_val_std, z_val), config
        )
    elif kind == "gbdt":
        model = GbdtClassifier(**(gbdt_overrides or {}))
        model.fit(x_train_std, z_train, x_val_std, z_val)
        history = list(model.val_losses)
    elif kind == "rank":
        model = RankingModel(**(gbdt_overrides or {}))
        train_lists = _per_question_lists(fs, "train", stats, columns)
        val_lists = _per_question_lists(fs, "val", stats, columns)
        model.fit(train_lists, val_lists)
        history = []
    elif kind in ("gcn", "gat"):
        examples_train = _graph_examples(fs, "train", stats, columns)
        examples_val = _graph_examples(fs, "val", stats, columns)
        model = GcnModel(dim, seed=seed) if kind == "gcn" else GatModel(dim, seed=seed)
        history = train_loop(
            model, ListDataset(examples_train), ListDataset(examples_val), config
        )
    elif kind == "gating":
        if fs.question_embeddings is None:
            raise ValueError("gating model needs question embeddings in the feature set")
        examples_train = _gating_examples(fs, "train")
        examples_val = _gating_examples(fs, "val")
        model = GatingModel(fs.question_embeddings.shape[1], fs.num_models, seed=seed)
        history = train_loop(
            model, ListDataset(examples_train), ListDataset(examples_val), config
        )
    else:  # pragma: no cover - guarded above
        raise ValueError(kind)

    trained = TrainedModel(
        kind=kind,
        model=model,
        standardizer=stats,
        manifest_hash=fs.manifest.hash,
        column_indices=columns,
    )
    return trained, history


def _per_question_lists(
    fs: FeatureSet, split: str, stats: StandardizationStats, columns: list[int] | None
) -> list[tuple[np.ndarray, np.ndarray]]:
    lists = []
    for inst in fs.by_split(split):
        x = fs.rows(inst)
        if columns is not None:
            x = x[:, columns]
        lists.append(
            (apply_standardizer(stats, x), np.asarray(inst.correctness, dtype=np.float64))
        )
    return lists


def _graph_examples(
    fs: FeatureSet, split: str, stats: StandardizationStats, columns: list[int] | None
) -> list[GraphExample]:
    examples = []
    for inst in fs.by_split(split):
        x = fs.rows(inst)
        if columns is not None:
            x = x[:, columns]
        examples.append(
            GraphExample(
                inst.graph,
                apply_standardizer(stats, x),
                np.asarray(inst.correctness, dtype=np.float64),
            )
        )
    return examples


def _gating_examples(fs: FeatureSet, split: str) -> list[GatingExample]:
    examples = []
    for inst in fs.by_split(split):
        u = fs.question_embeddings[fs.instance_index(inst)]
        examples.append(
            GatingExample(u, fs.priors_for(inst.dataset), np.asarray(inst.correctness, dtype=np.float64))
        )
    return examples


_MODEL_CLASSES = {
    "logreg": LogisticModel,
    "gbdt": GbdtClassifier,
    "mlp": MlpModel,
    "rank": RankingModel,
    "gcn": GcnModel,
    "gat": GatModel,
    "gating": GatingModel,
}


def save_trained_model(trained: TrainedModel, path: str | Path, extra: dict | None = None) -> None:
    meta = dict(extra or {})
    if trained.column_indices is not None:
        meta["column_indices"] = trained.column_indices
    save_model(
        path,
        trained.model,
        trained.standardizer.to_dict(),
        trained.manifest_hash,
        extra=meta,
    )


def load_trained_model(path: str | Path) -> TrainedModel:
    payload = load_model(path)
    kind = payload["kind"]
    if kind not in _MODEL_CLASSES:
        raise ValueError(f"unknown model kind {kind!r} in container")
    model = _MODEL_CLASSES[kind].from_dict(payload["model"])
    meta = payload.get("meta", {})
    return TrainedModel(
        kind=kind,
        model=model,
        standardizer=StandardizationStats.from_dict(payload["standardizer"]),
        manifest_hash=payload["manifest_hash"],
        column_indices=meta.get("column_indices"),
    )


# ---------------------------------------------------------------------------
# Evaluation harness


def _selected_letter(inst: InstanceFeatures, index: int) -> str | None:
    if inst.task_kind != "multiple_choice":
        return None
    return inst.values[index]


def _value_correct(inst: InstanceFeatures, value: str | float | None) -> int:
    if value is None or value == ABSTAIN:
        return 0
    if inst.task_kind == "numeric":
        try:
            gold = float(inst.gold_answer)
        except ValueError as err:
            raise ValueError(f"gold answer {inst.gold_answer!r} is not numeric") from err
        pred = float(value)
        tol = max(1e-9, 1e-6 * abs(gold))
        return int(abs(pred - gold) <= tol)
    return int(str(value).upper() == inst.gold_answer.upper())


@dataclass
class MethodOutput:
    """Per-test-instance selections of one method."""

    name: str
    bits: list[int]
    datasets: list[str]
    letters: list[str | None]
    probabilities: list[np.ndarray] | None = None
    selected_probs: list[float] | None = None

    def per_dataset_accuracy(self) -> dict[str, float]:
        acc: dict[str, list[int]] = {}
        for bit, dataset in zip(self.bits, self.datasets):
            acc.setdefault(dataset, []).append(bit)
        return {dataset: accuracy_from_bits(bits) for dataset, bits in acc.items()}

    def macro_accuracy(self) -> float:
        per = self.per_dataset_accuracy()
        return float(np.mean([per[d] for d in sorted(per)]))


def evaluate_model_method(trained: TrainedModel, fs: FeatureSet, name: str | None = None) -> MethodOutput:
    if trained.manifest_hash != fs.manifest.hash:
        raise ValueError(
            "model was trained against a different feature manifest "
            f"({trained.manifest_hash[:12]} != {fs.manifest.hash[:12]})"
        )
    bits, datasets, letters, prob_lists, sel_probs = [], [], [], [], []
    for inst in fs.by_split("test"):
        probs = trained.instance_probabilities(fs, inst)
        idx = select_answer(probs)
        bits.append(int(inst.correctness[idx]))
        datasets.append(inst.dataset)
        letters.append(_selected_letter(inst, idx))
        prob_lists.append(np.asarray(probs))
        sel_probs.append(float(probs[idx]))
    return MethodOutput(
        name=name or trained.kind,
        bits=bits,
        datasets=datasets,
        letters=letters,
        probabilities=prob_lists,
        selected_probs=sel_probs,
    )


def _self_confidence_of(fs: FeatureSet, inst: InstanceFeatures, model_index: int) -> float:
    names = fs.manifest.names
    conf_idx = names.index("conf_self_confidence")
    present_idx = names.index("conf_confidence_present")
    row = fs.rows(inst)[model_index]
    return float(row[conf_idx]) if row[present_idx] > 0 else 0.5


def evaluate_baselines(
    fs: FeatureSet,
    seed: int = 0,
    sc_reference: str | None = None,
) -> list[MethodOutput]:
    """Run the four baseline selectors over the test split."""
    test = fs.by_split("test")
    if not test:
        raise ValueError("empty test split")
    train = fs.by_split("train")
    rng_random = stream_rng(seed, "baseline-random")
    rng_vote = stream_rng(seed, "baseline-vote")
    rng_sc = stream_rng(seed, "baseline-sc")

    best_by_dataset = _best_single_from_features(train)

    random_out = MethodOutput("random", [], [], [])
    majority_out = MethodOutput("majority_vote", [], [], [])
    best_out = MethodOutput("best_single", [], [], [], selected_probs=[])
    sc_out = MethodOutput("self_consistency", [], [], [])
    have_sc = True

    for inst in test:
        m = len(inst.correctness)
        ridx = int(rng_random.integers(0, m))
        random_out.bits.append(int(inst.correctness[ridx]))
        random_out.datasets.append(inst.dataset)
        random_out.letters.append(_selected_letter(inst, ridx))

        vote = _majority_from_values(inst, rng_vote)
        majority_out.bits.append(_value_correct(inst, vote))
        majority_out.datasets.append(inst.dataset)
        majority_out.letters.append(vote if inst.task_kind == "multiple_choice" else None)

        bidx = best_by_dataset[inst.dataset]
        best_out.bits.append(int(inst.correctness[bidx]))
        best_out.datasets.append(inst.dataset)
        best_out.letters.append(_selected_letter(inst, bidx))
        best_out.selected_probs.append(_self_confidence_of(fs, inst, bidx))

        if have_sc:
            value = _self_consistency_from_values(inst, fs, sc_reference, rng_sc)
            if value is _NO_SC_DATA:
                have_sc = False
            else:
                sc_out.bits.append(_value_correct(inst, value))
                sc_out.datasets.append(inst.dataset)
                sc_out.letters.append(value if inst.task_kind == "multiple_choice" else None)

    outputs = [random_out, majority_out, best_out]
    if have_sc and sc_out.bits:
        outputs.append(sc_out)
    return outputs


_NO_SC_DATA = object()


def _best_single_from_features(train: list[InstanceFeatures]) -> dict[str, int]:
    if not train:
        raise ValueError("empty training split")
    totals: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for inst in train:
        z = np.asarray(inst.correctness, dtype=np.float64)
        if inst.dataset not in totals:
            totals[inst.dataset] = np.zeros_like(z)
            counts[inst.dataset] = 0
        totals[inst.dataset] += z
        counts[inst.dataset] += 1
    return {d: int(np.argmax(totals[d] / counts[d])) for d in totals}


def _majority_from_values(inst: InstanceFeatures, rng: np.random.Generator) -> str | float:
    values: list[str | float] = []
    for value in inst.values:
        if value is None:
            continue
        if inst.task_kind == "numeric":
            values.append(float(round_half_away_from_zero(float(value))))
        else:
            values.append(value)
    result = plurality(values, rng)
    return ABSTAIN if result.abstained else result.value


def _self_consistency_from_values(
    inst: InstanceFeatures,
    fs: FeatureSet,
    reference: str | None,
    rng: np.random.Generator,
):
    if not inst.sc_values:
        return _NO_SC_DATA
    model_ids = [entry.model_id for entry in fs.catalog]
    if reference is None:
        reference = next((mid for mid in model_ids if mid in inst.sc_values), None)
    if reference is None or reference not in inst.sc_values:
        return _NO_SC_DATA
    canonical = inst.values[model_ids.index(reference)]
    raw_values = [canonical] + list(inst.sc_values[reference])
    values: list[str | float] = []
    for value in raw_values:
        if value is None:
            continue
        values.append(float(value) if inst.task_kind == "numeric" else value)
    result = plurality(values, rng)
    return ABSTAIN if result.abstained else result.value


def build_report(
    fs: FeatureSet,
    methods: list[MethodOutput],
    bootstrap_reference: str | None = None,
    seed: int = 0,
    metadata: dict | None = None,
) -> EvalReport:
    """Assemble metrics for every method into one report."""
    test = fs.by_split("test")
    if not test:
        raise ValueError("empty test split")
    datasets = sorted({inst.dataset for inst in test})
    labels = [inst.correctness for inst in test]
    qualifying = [inst.qualifies_for_hallucination for inst in test]
    any_qualifying = any(qualifying)

    reference_bits = None
    if bootstrap_reference is not None:
        for method in methods:
            if method.name == bootstrap_reference:
                reference_bits = method.bits
        if reference_bits is None:
            raise ValueError(f"bootstrap reference {bootstrap_reference!r} not among methods")

    questions = [
        QuestionRecord(
            question_id=inst.question_id,
            dataset=inst.dataset,
            task_kind=inst.task_kind,
            question_text="",
            gold_answer=inst.gold_answer,
            options=tuple(
                AnswerOption(letter, "", tuple(flags))
                for letter, flags in sorted(inst.option_flags.items())
            ),
        )
        for inst in test
    ]

    results = []
    reliability: dict[str, list[ReliabilityBin]] = {}
    for method in methods:
        mrr_value = None
        brier_value = None
        fp_rate = None
        if method.probabilities is not None:
            mrr_value = mrr(method.probabilities, labels)
        if method.selected_probs is not None:
            brier_value = brier(method.selected_probs, method.bits)
            reliability[method.name] = reliability_diagram(method.selected_probs, method.bits)
        if any_qualifying:
            fp_rate = truthfulqa_false_plausible_rate(method.letters, questions)
        p_value = None
        if reference_bits is not None:
            p_value = paired_bootstrap(method.bits, reference_bits, seed=seed)
        results.append(
            MethodResult(
                name=method.name,
                per_dataset_accuracy=method.per_dataset_accuracy(),
                macro_accuracy=method.macro_accuracy(),
                mrr=mrr_value,
                brier=brier_value,
                false_plausible_rate=fp_rate,
                p_value=p_value,
            )
        )
    return EvalReport(
        datasets=datasets,
        methods=results,
        reliability=reliability,
        metadata=metadata or {},
    )


def run_ablation(
    fs: FeatureSet,
    kind: str = "gbdt",
    masks: dict[str, tuple[str, ...]] | None = None,
    seed: int = 0,
    config: TrainConfig | None = None,
    gbdt_overrides: dict | None = None,
) -> list[tuple[str, float, float]]:
    """Retrain `kind` under each feature-block mask with identical seed/config.

    Returns (mask name, macro accuracy, delta vs full) rows, full first.
    """
    masks = masks or ABLATION_MASKS
    if "full" not in masks:
        raise ValueError("ablation spec must include the 'full' mask")
    rows: list[tuple[str, float, float]] = []
    accuracies: dict[str, float] = {}
    for name in masks:
        columns = mask_indices(fs.manifest, masks[name])
        trained, _ = train_model(
            fs,
            kind,
            seed=seed,
            config=TrainConfig(**vars(config)) if config else None,
            column_indices=columns,
            gbdt_overrides=gbdt_overrides,
        )
        output = evaluate_model_method(trained, fs, name=f"{kind}[{name}]")
        accuracies[name] = output.macro_accuracy()
    full = accuracies["full"]
    for name in masks:
        rows.append((name, accuracies[name], accuracies[name] - full))
    return rows
