"""Per-answer feature vectors: semantic agreement, lexical, reasoning,
confidence, and model-prior blocks, concatenated in a fixed block order
(sem | lex | logic | conf | prior) described by a versioned manifest.

Raw embeddings never enter the feature vector; they only feed the
similarity matrix, the clustering, and the answer graph.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterAssignment, agglomerative_cluster, select_k_silhouette
from .corpus import ConsensusInstance, ModelCatalogEntry, ResponseRecord
from .embedding import EmbeddingStore
from .parsing import ParsedAnswer, normalize_confidence

MANIFEST_VERSION = 1

BLOCK_ORDER = ("sem", "lex", "logic", "conf", "prior")

DISCOURSE_MARKERS = ("therefore", "thus", "hence", "in conclusion", "so,")
STEP_PATTERNS = (r"step \d", "first", "second", "third", "finally")
VERIFICATION_PHRASES = ("check", "verify", "sanity check")


def _phrase_regex(phrase: str) -> re.Pattern:
    """Word-boundary-delimited pattern; boundaries only next to word chars."""
    escaped = re.escape(phrase).replace(r"\ ", r"\s+").replace(" ", r"\s+")
    prefix = r"\b" if phrase[0].isalnum() else ""
    suffix = r"\b" if phrase[-1].isalnum() else ""
    return re.compile(prefix + escaped + suffix, re.IGNORECASE)


_MARKER_RES = tuple(_phrase_regex(m) for m in DISCOURSE_MARKERS)
_STEP_RES = (re.compile(r"\bstep\s+\d+", re.IGNORECASE),) + tuple(
    _phrase_regex(p) for p in STEP_PATTERNS[1:]
)
_VERIFY_RES = tuple(_phrase_regex(p) for p in VERIFICATION_PHRASES)


# ---------------------------------------------------------------------------
# Semantic agreement


def build_similarity_matrix(embeddings: np.ndarray) -> np.ndarray:
    """M x M cosine similarity matrix, symmetric, diagonal forced to 1."""
    matrix = np.asarray(embeddings, dtype=np.float64)
    if matrix.shape[0] < 2:
        raise ValueError("need at least 2 embeddings")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm vector")
    unit = matrix / norms[:, None]
    sim = unit @ unit.T
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, 1.0)
    return sim


def semantic_agreement_stats(sim: np.ndarray, embeddings: np.ndarray) -> dict[str, np.ndarray]:
    """Per-answer mean/max/min similarity, centroid similarity, agreement rank.

    Aggregates run over the other answers (n != m); the agreement rank is
    the 1-based rank of the mean similarity, descending, ties broken by
    answer index.
    """
    m = sim.shape[0]
    if m < 2:
        raise ValueError("need at least 2 answers")
    off = ~np.eye(m, dtype=bool)
    rows = [sim[i, off[i]] for i in range(m)]
    mean_sim = np.array([row.mean() for row in rows])
    max_sim = np.array([row.max() for row in rows])
    min_sim = np.array([row.min() for row in rows])

    matrix = np.asarray(embeddings, dtype=np.float64)
    center = matrix.mean(axis=0)
    center_norm = np.linalg.norm(center)
    if center_norm == 0.0:
        raise ValueError("zero-norm centroid")
    norms = np.linalg.norm(matrix, axis=1)
    centroid_sim = (matrix @ center) / (norms * center_norm)

    order = sorted(range(m), key=lambda i: (-mean_sim[i], i))
    rank = np.empty(m)
    for pos, idx in enumerate(order):
        rank[idx] = pos + 1
    return {
        "mean_sim": mean_sim,
        "max_sim": max_sim,
        "min_sim": min_sim,
        "centroid_sim": centroid_sim,
        "agreement_rank": rank,
    }


def cluster_features(assignment: ClusterAssignment) -> dict[str, np.ndarray]:
    """Per-answer cluster size, largest-cluster membership flag, major ratio."""
    sizes = assignment.cluster_sizes
    return {
        "cluster_size": sizes[assignment.labels].astype(np.float64),
        "major_flag": assignment.major_flags,
        "major_ratio": np.full(assignment.num_points, assignment.major_ratio),
    }


# ---------------------------------------------------------------------------
# Lexical and structural


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def _is_numeric_token(token: str) -> bool:
    token = token.strip(".,;:!?$%()[]")
    if not token:
        return False
    try:
        float(token)
    except ValueError:
        return False
    return True


def lexical_features(parsed: ParsedAnswer) -> dict[str, float]:
    """Counts and ratios over the reasoning and final segments.

    Numeric-token stats and discourse markers are computed on the
    reasoning segment; an empty segment yields zeros (0/0 -> 0).
    """
    reasoning_tokens = _tokens(parsed.reasoning_text)
    final_tokens = _tokens(parsed.final_raw)
    numeric = sum(1 for tok in reasoning_tokens if _is_numeric_token(tok))
    total = len(reasoning_tokens)
    lowered = parsed.reasoning_text.lower()
    markers = sum(len(regex.findall(lowered)) for regex in _MARKER_RES)
    return {
        "token_count_reasoning": float(total),
        "token_count_final": float(len(final_tokens)),
        "char_len_reasoning": float(len(parsed.reasoning_text)),
        "char_len_final": float(len(parsed.final_raw)),
        "numeric_token_count": float(numeric),
        "numeric_token_ratio": numeric / total if total else 0.0,
        "discourse_marker_count": float(markers),
    }


def jaccard_similarity(tokens_a: list[str], tokens_b: list[str]) -> float:
    """Token-set Jaccard; two empty sets count as identical (1.0)."""
    set_a, set_b = set(tokens_a), set(tokens_b)
    if not set_a and not set_b:
        return 1.0
    union = len(set_a | set_b)
    return len(set_a & set_b) / union


def lcs_length(seq_a: list[str], seq_b: list[str]) -> int:
    """Longest common subsequence length (classic DP, one rolling row)."""
    if not seq_a or not seq_b:
        return 0
    prev = [0] * (len(seq_b) + 1)
    for tok_a in seq_a:
        curr = [0] * (len(seq_b) + 1)
        for j, tok_b in enumerate(seq_b, start=1):
            if tok_a == tok_b:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l_f1(tokens_a: list[str], tokens_b: list[str]) -> float:
    """ROUGE-L F1 = 2*LCS / (len_a + len_b); empty-vs-empty is 1.0."""
    if not tokens_a and not tokens_b:
        return 1.0
    if not tokens_a or not tokens_b:
        return 0.0
    lcs = lcs_length(tokens_a, tokens_b)
    return 2.0 * lcs / (len(tokens_a) + len(tokens_b))


def response_tokens(parsed: ParsedAnswer) -> list[str]:
    """Whitespace tokens of the full response text (reasoning + final)."""
    return _tokens((parsed.reasoning_text + " " + parsed.final_raw).strip())


def pairwise_lexical_aggregates(parsed_answers: list[ParsedAnswer]) -> dict[str, np.ndarray]:
    """Per-answer mean and max Jaccard / ROUGE-L against the other answers."""
    m = len(parsed_answers)
    if m < 2:
        raise ValueError("need at least 2 answers")
    token_lists = [response_tokens(p) for p in parsed_answers]
    jac = np.zeros((m, m))
    rouge = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            jac[a, b] = jac[b, a] = jaccard_similarity(token_lists[a], token_lists[b])
            rouge[a, b] = rouge[b, a] = rouge_l_f1(token_lists[a], token_lists[b])
    off = ~np.eye(m, dtype=bool)
    return {
        "mean_jaccard": np.array([jac[i, off[i]].mean() for i in range(m)]),
        "max_jaccard": np.array([jac[i, off[i]].max() for i in range(m)]),
        "mean_rouge_l": np.array([rouge[i, off[i]].mean() for i in range(m)]),
        "max_rouge_l": np.array([rouge[i, off[i]].max() for i in range(m)]),
    }


# ---------------------------------------------------------------------------
# Reasoning quality


@dataclass(frozen=True)
class ReasoningScores:
    coherence: float
    consistency: float
    completeness: float
    present: int
    step_count: int
    has_verification: int


def reasoning_features(record: ResponseRecord, parsed: ParsedAnswer) -> ReasoningScores:
    """Verifier triple (ingested, zeros when absent) plus step/verification cues."""
    if record.verifier_scores is not None:
        coherence, consistency, completeness = record.verifier_scores
        present = 1
    else:
        coherence = consistency = completeness = 0.0
        present = 0
    text = parsed.reasoning_text
    steps = sum(len(regex.findall(text)) for regex in _STEP_RES)
    verification = int(any(regex.search(text) for regex in _VERIFY_RES))
    return ReasoningScores(coherence, consistency, completeness, present, steps, verification)


# ---------------------------------------------------------------------------
# Confidence and model priors


def confidence_prior_features(
    record: ResponseRecord,
    catalog: list[ModelCatalogEntry],
    dataset: str,
) -> tuple[dict[str, float], dict[str, float]]:
    """(conf block, prior block) for one response.

    Missing confidence/logprob impute to 0 with a presence bit of 0.
    Requires the catalog's prior-accuracy table to be fitted for the
    response's dataset.
    """
    index = {entry.model_id: i for i, entry in enumerate(catalog)}
    if record.model_id not in index:
        raise ValueError(f"unknown model_id {record.model_id!r}")
    entry = catalog[index[record.model_id]]

    confidence = normalize_confidence(record.self_confidence_raw)
    conf_block = {
        "self_confidence": confidence if confidence is not None else 0.0,
        "confidence_present": 0.0 if confidence is None else 1.0,
        "mean_logprob": record.mean_logprob if record.mean_logprob is not None else 0.0,
        "logprob_present": 0.0 if record.mean_logprob is None else 1.0,
    }

    if dataset not in entry.per_dataset_prior_accuracy:
        raise ValueError(
            f"prior accuracy not fitted for model {record.model_id!r}, dataset {dataset!r}"
        )
    families = sorted({e.family for e in catalog})
    prior_block: dict[str, float] = {}
    for e in catalog:
        prior_block[f"model_is_{e.model_id}"] = 1.0 if e.model_id == record.model_id else 0.0
    prior_block["prior_accuracy"] = entry.per_dataset_prior_accuracy[dataset]
    prior_block["log_param_count"] = entry.log_param_count
    for family in families:
        prior_block[f"family_is_{family}"] = 1.0 if family == entry.family else 0.0
    return conf_block, prior_block


# ---------------------------------------------------------------------------
# Manifest and assembly


@dataclass(frozen=True)
class FeatureEntry:
    name: str
    block: str
    index: int
    categorical: bool


@dataclass(frozen=True)
class FeatureManifest:
    entries: tuple[FeatureEntry, ...]
    version: int = MANIFEST_VERSION

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [entry.name for entry in self.entries]

    def block_indices(self, block: str) -> list[int]:
        return [entry.index for entry in self.entries if entry.block == block]

    @property
    def categorical_indices(self) -> list[int]:
        return [entry.index for entry in self.entries if entry.categorical]

    def block_dims(self) -> dict[str, int]:
        dims = {block: 0 for block in BLOCK_ORDER}
        for entry in self.entries:
            dims[entry.block] += 1
        return dims

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "features": [
                {
                    "name": entry.name,
                    "block": entry.block,
                    "index": entry.index,
                    "categorical": entry.categorical,
                }
                for entry in self.entries
            ],
            "keyword_lists": {
                "discourse_markers": list(DISCOURSE_MARKERS),
                "step_patterns": list(STEP_PATTERNS),
                "verification_phrases": list(VERIFICATION_PHRASES),
            },
        }

    @property
    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        payload = self.to_dict()
        payload["hash"] = self.hash
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")

    @staticmethod
    def load(path) -> "FeatureManifest":
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        entries = tuple(
            FeatureEntry(f["name"], f["block"], f["index"], f["categorical"])
            for f in payload["features"]
        )
        manifest = FeatureManifest(entries=entries, version=payload["version"])
        if "hash" in payload and payload["hash"] != manifest.hash:
            raise ValueError("feature manifest hash mismatch")
        return manifest


_SEM_NAMES = (
    "mean_sim", "max_sim", "min_sim", "centroid_sim", "agreement_rank",
    "cluster_size", "major_flag", "major_ratio",
)
_LEX_NAMES = (
    "token_count_reasoning", "token_count_final", "char_len_reasoning",
    "char_len_final", "numeric_token_count", "numeric_token_ratio",
    "discourse_marker_count", "mean_jaccard", "max_jaccard",
    "mean_rouge_l", "max_rouge_l", "is_valid",
)
_LOGIC_NAMES = (
    "coherence", "consistency", "completeness", "verifier_present",
    "step_count", "has_verification",
)
_CONF_NAMES = ("self_confidence", "confidence_present", "mean_logprob", "logprob_present")

_CATEGORICAL = {
    "major_flag", "is_valid", "verifier_present", "has_verification",
    "confidence_present", "logprob_present",
}


def build_manifest(catalog: list[ModelCatalogEntry]) -> FeatureManifest:
    """Fixed feature layout for a model catalog; stable across corpora."""
    entries: list[FeatureEntry] = []

    def add(block: str, name: str, categorical: bool = False) -> None:
        entries.append(FeatureEntry(f"{block}_{name}", block, len(entries), categorical))

    for name in _SEM_NAMES:
        add("sem", name, name in _CATEGORICAL)
    for name in _LEX_NAMES:
        add("lex", name, name in _CATEGORICAL)
    for name in _LOGIC_NAMES:
        add("logic", name, name in _CATEGORICAL)
    for name in _CONF_NAMES:
        add("conf", name, name in _CATEGORICAL)
    for entry in catalog:
        add("prior", f"model_is_{entry.model_id}", categorical=True)
    add("prior", "prior_accuracy")
    add("prior", "log_param_count")
    for family in sorted({entry.family for entry in catalog}):
        add("prior", f"family_is_{family}", categorical=True)
    return FeatureManifest(entries=tuple(entries))


def assemble_feature_vector(
    blocks: list[tuple[str, np.ndarray]],
    manifest: FeatureManifest,
) -> np.ndarray:
    """Concatenate named blocks in the fixed order, checked against the manifest."""
    names = [name for name, _ in blocks]
    if names != list(BLOCK_ORDER):
        raise ValueError(f"blocks must arrive in order {BLOCK_ORDER}, got {tuple(names)}")
    dims = manifest.block_dims()
    for name, values in blocks:
        if values.shape[-1] != dims[name]:
            raise ValueError(
                f"block {name!r} has dim {values.shape[-1]}, manifest says {dims[name]}"
            )
    vector = np.concatenate([values for _, values in blocks], axis=-1)
    if vector.shape[-1] != manifest.dim:
        raise ValueError(f"assembled dim {vector.shape[-1]} != manifest dim {manifest.dim}")
    if not np.all(np.isfinite(vector)):
        raise ValueError("non-finite feature value")
    return vector


class FeatureExtractor:
    """Computes the full M x d feature matrix for one instance."""

    def __init__(self, catalog: list[ModelCatalogEntry]):
        self.catalog = catalog
        self.manifest = build_manifest(catalog)

    def instance_embeddings(self, instance: ConsensusInstance, store: EmbeddingStore) -> np.ndarray:
        qid = instance.question.question_id
        return np.stack(
            [store.get(qid, rec.model_id).values for rec in instance.responses]
        )

    def extract_instance(self, instance: ConsensusInstance, store: EmbeddingStore) -> np.ndarray:
        embeddings = self.instance_embeddings(instance, store)
        sim = build_similarity_matrix(embeddings)
        stats = semantic_agreement_stats(sim, embeddings)
        k = select_k_silhouette(embeddings)
        assignment = agglomerative_cluster(embeddings, k)
        clust = cluster_features(assignment)
        pairwise = pairwise_lexical_aggregates(instance.parsed)

        rows = []
        for m, (record, parsed) in enumerate(zip(instance.responses, instance.parsed)):
            sem = np.array([
                stats["mean_sim"][m], stats["max_sim"][m], stats["min_sim"][m],
                stats["centroid_sim"][m], stats["agreement_rank"][m],
                clust["cluster_size"][m], clust["major_flag"][m], clust["major_ratio"][m],
            ])
            lex_single = lexical_features(parsed)
            lex = np.array([
                lex_single["token_count_reasoning"], lex_single["token_count_final"],
                lex_single["char_len_reasoning"], lex_single["char_len_final"],
                lex_single["numeric_token_count"], lex_single["numeric_token_ratio"],
                lex_single["discourse_marker_count"],
                pairwise["mean_jaccard"][m], pairwise["max_jaccard"][m],
                pairwise["mean_rouge_l"][m], pairwise["max_rouge_l"][m],
                1.0 if parsed.is_valid else 0.0,
            ])
            scores = reasoning_features(record, parsed)
            logic = np.array([
                scores.coherence, scores.consistency, scores.completeness,
                float(scores.present), float(scores.step_count),
                float(scores.has_verification),
            ])
            conf_block, prior_block = confidence_prior_features(
                record, self.catalog, instance.question.dataset
            )
            conf = np.array([conf_block[name] for name in _CONF_NAMES])
            prior = np.array(list(prior_block.values()))
            rows.append(
                assemble_feature_vector(
                    [("sem", sem), ("lex", lex), ("logic", logic), ("conf", conf), ("prior", prior)],
                    self.manifest,
                )
            )
        return np.stack(rows)
