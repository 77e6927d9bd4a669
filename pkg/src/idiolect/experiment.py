"""Experiment orchestration: the six pipeline stages behind the CLI.

Stages communicate only through flat JSONL/JSON files under the output
directory, so runs are diffable, resumable, and byte-reproducible in stub
mode.  Every emitted row carries the config hash and master seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Sequence

from . import adversary, av_lambdag, av_ngram, av_rbi, metrics, synthetic
from .adversary import (
    AttackError,
    AttackRecord,
    DirectoryStubClient,
    EndpointConfig,
    HttpChatClient,
    LexicalStubClient,
    PromptStrategy,
    run_attack as execute_attack,
    select_source,
)
from .calibration import DIFFERENT, SAME, Calibrator, ScoreSample, apply as apply_calibrator, decide, fit_calibrator
from .corpus import (
    AuthorSplit,
    CorpusConfig,
    Document,
    assign_roles,
    load_corpus,
    partition_corpus,
    tokenize,
)
from .masking import default_rules, masked_view
from .seeds import seed_for

log = logging.getLogger(__name__)

METHODS = ("ngram_tracing", "rbi", "lambdag")
STAGES = ("ingest", "attack", "verify", "calibrate", "evaluate", "report")


class StageError(Exception):
    """A stage cannot run; carries which upstream stage is missing or what
    configuration is wrong."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


@dataclass
class ExperimentConfig:
    corpus_path: str
    output_dir: str = "out"
    corpus_format: str = "jsonl"
    genre: str = "email"
    seed: int = 7
    min_tokens_per_author: int = 200
    known_budget: int | None = None
    unknown_budget: int | None = None
    n_unknown_docs: int = 2
    train_fraction: float = 0.5
    strategies: list[str] = field(
        default_factory=lambda: ["naive", "self_prompt", "role_play", "tree_of_thoughts"]
    )
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    ngram_n: int = 9
    rbi_k_features: int = 300
    rbi_m_impostors: int = 100
    rbi_n_iterations: int = 25
    rbi_feature_space: str = "char4"
    rbi_impostor_fraction: float = 0.5
    lambdag_order: int = 10
    lambdag_references: int = 10
    log_base: str = "10"
    tau: float = 0.0
    examples_token_budget: int = 3000
    endpoint: dict = field(default_factory=lambda: {"mode": "lexical"})
    bootstrap_resamples: int = 2000
    deflate_level: int = 6
    per_author_aggregation: bool = False

    def __post_init__(self) -> None:
        unknown_methods = [m for m in self.methods if m not in METHODS]
        if unknown_methods:
            raise StageError(f"unknown methods {unknown_methods}; expected subset of {METHODS}")
        unknown_strategies = [
            s for s in self.strategies if s not in adversary.STRATEGY_KINDS
        ]
        if unknown_strategies:
            raise StageError(
                f"unknown strategies {unknown_strategies}; "
                f"expected subset of {adversary.STRATEGY_KINDS}"
            )

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        extra = set(data) - known
        if extra:
            raise StageError(f"unknown config keys: {sorted(extra)}")
        if "corpus_path" not in data:
            raise StageError("config is missing required key 'corpus_path'")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        payload = self.to_dict()
        payload.pop("output_dir")  # two runs into different dirs are the same experiment
        canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    @property
    def corpus_name(self) -> str:
        return Path(self.corpus_path).stem


class StagePaths:
    def __init__(self, output_dir: str | Path):
        root = Path(output_dir)
        self.root = root
        self.documents = root / "corpus" / "documents.jsonl"
        self.splits = root / "corpus" / "splits.json"
        self.manifest = root / "corpus" / "manifest.json"
        self.attacks = root / "attacks" / "attacks.jsonl"
        self.attack_failures = root / "attacks" / "failures.jsonl"
        self.scores = root / "scores" / "scores.jsonl"
        self.calibrators = root / "calibration" / "calibrators.json"
        self.llrs = root / "calibration" / "llrs.jsonl"
        self.evaluation = root / "metrics" / "evaluation.json"
        self.diversity = root / "metrics" / "diversity.json"
        self.report_dir = root / "report"


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def _append_jsonl(path: Path, row: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


_STAGE_ARTIFACTS = {
    "ingest": lambda p: [p.documents, p.splits, p.manifest],
    "attack": lambda p: [p.attacks],
    "verify": lambda p: [p.scores],
    "calibrate": lambda p: [p.calibrators, p.llrs],
    "evaluate": lambda p: [p.evaluation, p.diversity],
}


def _require_stages(cfg: ExperimentConfig, stages: Sequence[str]) -> StagePaths:
    paths = StagePaths(cfg.output_dir)
    for stage in stages:
        if stage == "attack" and not cfg.strategies:
            continue
        for artifact in _STAGE_ARTIFACTS[stage](paths):
            if not artifact.exists():
                raise StageError(
                    f"missing {artifact}; run {stage} first", stage=stage
                )
    return paths


# ---------------------------------------------------------------------------
# ingest


def _doc_to_row(doc: Document) -> dict:
    return {"id": doc.id, "author": doc.author_id, "genre": doc.genre,
            "clean_text": doc.clean_text}


def _doc_from_row(row: dict) -> Document:
    return Document(
        id=row["id"],
        author_id=row["author"],
        genre=row["genre"],
        raw_text="",
        clean_text=row["clean_text"],
        tokens=tuple(tokenize(row["clean_text"])),
    )


def run_ingest(cfg: ExperimentConfig) -> dict:
    paths = StagePaths(cfg.output_dir)
    corpus_cfg = CorpusConfig(
        genre=cfg.genre,
        min_tokens_per_author=cfg.min_tokens_per_author,
        known_budget=cfg.known_budget,
        unknown_budget=cfg.unknown_budget,
        rng_seed=cfg.seed,
        n_unknown_docs=cfg.n_unknown_docs,
    )
    docs = load_corpus(cfg.corpus_path, cfg.corpus_format, genre=cfg.genre)
    splits, skips = partition_corpus(docs, corpus_cfg)
    if not splits:
        raise StageError("no authors survived partitioning")
    assign_roles(splits, cfg.seed, cfg.train_fraction)

    doc_rows = []
    split_rows = {}
    for split in sorted(splits, key=lambda s: s.author_id):
        for doc in (*split.known, *split.unknown):
            doc_rows.append(_doc_to_row(doc))
        split_rows[split.author_id] = {
            "role": split.role,
            "known": [d.id for d in split.known],
            "unknown": [d.id for d in split.unknown],
        }
    _write_jsonl(paths.documents, doc_rows)
    _write_json(paths.splits, split_rows)

    n_texts = len(doc_rows)
    token_totals = [
        sum(len(d.tokens) for d in (*s.known, *s.unknown)) for s in splits
    ]
    manifest = {
        "corpus": cfg.corpus_name,
        "genre": cfg.genre,
        "authors": len(splits),
        "texts": n_texts,
        "avg_texts_per_author": n_texts / len(splits),
        "avg_tokens_per_author": sum(token_totals) / len(splits),
        "skipped_authors": skips,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
    }
    _write_json(paths.manifest, manifest)
    return manifest


def _load_splits(paths: StagePaths) -> dict[str, AuthorSplit]:
    docs = {row["id"]: _doc_from_row(row) for row in _read_jsonl(paths.documents)}
    split_rows = json.loads(paths.splits.read_text(encoding="utf-8"))
    splits = {}
    for author_id, row in split_rows.items():
        splits[author_id] = AuthorSplit(
            author_id=author_id,
            known=[docs[i] for i in row["known"]],
            unknown=[docs[i] for i in row["unknown"]],
            role=row["role"],
        )
    return splits


# ---------------------------------------------------------------------------
# attack


def make_client(cfg: ExperimentConfig):
    endpoint = cfg.endpoint or {}
    mode = endpoint.get("mode", "lexical")
    if mode == "http":
        for key in ("base_url", "model"):
            if key not in endpoint:
                raise StageError(f"http endpoint config is missing {key!r}")
        return HttpChatClient(EndpointConfig(
            base_url=endpoint["base_url"],
            model=endpoint["model"],
            api_key_env=endpoint.get("api_key_env", "CHAT_API_KEY"),
        ))
    if mode == "stub":
        if "dir" not in endpoint:
            raise StageError("stub endpoint config is missing 'dir'")
        return DirectoryStubClient(endpoint["dir"])
    if mode == "lexical":
        vocab = synthetic.shared_vocabulary(endpoint.get("pool_size", 500))
        return LexicalStubClient(
            vocab,
            seed=endpoint.get("seed", cfg.seed),
            reply_tokens=endpoint.get("reply_tokens", 160),
            function_words=synthetic.FUNCTION_CORE,
            function_rate=endpoint.get("function_rate", 0.5),
        )
    raise StageError(f"unknown endpoint mode {mode!r}")


def example_snippets(known: Sequence[Document], token_budget: int) -> tuple[list[str], list[str]]:
    """Known documents as prompt examples, oldest (lowest id) first, up to the
    token budget; always includes at least one document."""
    snippets, ids, used = [], [], 0
    for doc in sorted(known, key=lambda d: d.id):
        if snippets and used + len(doc.tokens) > token_budget:
            break
        snippets.append(doc.clean_text)
        ids.append(doc.id)
        used += len(doc.tokens)
    return snippets, ids


def attack_targets(splits: dict[str, AuthorSplit], seed: int) -> tuple[list[str], adversary.SourceSelection]:
    test_splits = [s for s in splits.values() if s.role == "test"]
    source = select_source(test_splits, seed)
    targets = sorted(s.author_id for s in test_splits if s.author_id != source.source_author)
    return targets, source


def run_attacks(cfg: ExperimentConfig) -> dict:
    paths = _require_stages(cfg, ["ingest"])
    splits = _load_splits(paths)
    targets, source = attack_targets(splits, cfg.seed)
    client = make_client(cfg)

    existing: set[tuple[str, str]] = set()
    if paths.attacks.exists():
        for row in _read_jsonl(paths.attacks):
            existing.add((row["target_author"], row["strategy"]["kind"]))
    else:
        paths.attacks.parent.mkdir(parents=True, exist_ok=True)
        paths.attacks.touch()

    new = skipped = failed = 0
    for author_id in targets:
        snippets, ids = example_snippets(splits[author_id].known, cfg.examples_token_budget)
        for kind in cfg.strategies:
            if (author_id, kind) in existing:
                skipped += 1
                continue
            try:
                record = execute_attack(
                    client,
                    PromptStrategy(kind=kind),
                    source,
                    snippets,
                    target_author=author_id,
                    example_ids=ids,
                    model_meta={"config_hash": cfg.config_hash, "seed": cfg.seed},
                )
            except AttackError as exc:
                log.warning("attack %s/%s failed: %s", author_id, kind, exc)
                _append_jsonl(paths.attack_failures, {
                    "target_author": author_id,
                    "strategy": kind,
                    "reason": str(exc),
                    "config_hash": cfg.config_hash,
                })
                failed += 1
                continue
            _append_jsonl(paths.attacks, record.to_dict())
            new += 1
    return {"new": new, "skipped": skipped, "failed": failed,
            "source_author": source.source_author}


# ---------------------------------------------------------------------------
# verify


def _build_trials(cfg: ExperimentConfig, splits: dict[str, AuthorSplit],
                  attacks: list[AttackRecord]) -> list[dict]:
    """All (target, query) pairs to score, in a deterministic order.

    Calibration pairs come from the training partition: each training
    author's held-out documents against their own known material, plus
    cross-author pairs downsampled to class balance.
    """
    train = sorted(a for a, s in splits.items() if s.role == "train")
    targets, source = attack_targets(splits, cfg.seed)
    trials: list[dict] = []

    def trial(target, qdoc, qauthor, condition, strategy, truth):
        return {"target": target, "query": qdoc, "query_author": qauthor,
                "condition": condition, "strategy": strategy, "truth": truth}

    same_count = 0
    for author in train:
        for doc in splits[author].unknown:
            trials.append(trial(author, doc, author, "calibration", None, SAME))
            same_count += 1
    diff_pool = [
        (a, b, doc)
        for a in train
        for b in train
        if b != a
        for doc in splits[b].unknown
    ]
    rng = random.Random(seed_for(cfg.seed, "calibration-pairs"))
    for a, b, doc in sorted(
        rng.sample(diff_pool, min(len(diff_pool), same_count)),
        key=lambda t: (t[0], t[2].id),
    ):
        trials.append(trial(a, doc, b, "calibration", None, DIFFERENT))

    for author in targets:
        for doc in splits[author].unknown:
            trials.append(trial(author, doc, author, "genuine_test", None, SAME))
    for author in targets:
        for other in targets:
            if other == author:
                continue
            for doc in splits[other].unknown:
                trials.append(trial(author, doc, other, "genuine_test", None, DIFFERENT))

    for record in sorted(attacks, key=lambda r: (r.target_author, r.strategy.kind)):
        kind = record.strategy.kind
        qdoc = Document.build(
            id=f"attack/{record.target_author}/{kind}",
            author_id=f"_llm_{kind}",
            genre=cfg.genre,
            raw_text=record.generated_text,
        )
        trials.append(
            trial(record.target_author, qdoc, qdoc.author_id, "impersonation", kind, DIFFERENT)
        )
    return trials


class _MethodScorers:
    """Per-target cached scoring machinery over masked documents."""

    def __init__(self, cfg: ExperimentConfig, splits: dict[str, AuthorSplit]):
        self.cfg = cfg
        self.splits = splits
        self.rules = default_rules()
        self._masked: dict[str, Document] = {}
        self._ngram_known: dict[str, list[Document]] = {}
        self._rbi_pools: dict[str, list[av_rbi.FeatureVector]] = {}
        self._grammar_models: dict[str, av_lambdag.GrammarModel] = {}
        self._reference_models: dict[str, list[av_lambdag.GrammarModel]] = {}
        self.train_authors = sorted(a for a, s in splits.items() if s.role == "train")

    def mask(self, doc: Document) -> Document:
        cached = self._masked.get(doc.id)
        if cached is None or cached.raw_text != doc.raw_text:
            cached = masked_view(doc, rules=self.rules)
            self._masked[doc.id] = cached
        return cached

    def masked_known(self, author: str) -> list[Document]:
        if author not in self._ngram_known:
            self._ngram_known[author] = [self.mask(d) for d in self.splits[author].known]
        return self._ngram_known[author]

    def rbi_pool(self, target: str) -> list[av_rbi.FeatureVector]:
        if target not in self._rbi_pools:
            candidates = [
                self.mask(d)
                for a in self.train_authors
                if a != target
                for d in self.splits[a].known
            ]
            self._rbi_pools[target] = av_rbi.build_impostor_pool(
                candidates,
                self.masked_known(target),
                pool_size=self.cfg.rbi_m_impostors,
                space=self.cfg.rbi_feature_space,
            )
        return self._rbi_pools[target]

    def grammar_model(self, author: str) -> av_lambdag.GrammarModel:
        if author not in self._grammar_models:
            sequences = [d.tokens for d in self.masked_known(author)]
            self._grammar_models[author] = av_lambdag.train_grammar_model(
                sequences, order=self.cfg.lambdag_order
            )
        return self._grammar_models[author]

    def reference_models(self, target: str) -> list[av_lambdag.GrammarModel]:
        if target not in self._reference_models:
            eligible = [a for a in self.train_authors if a != target]
            rng = random.Random(seed_for(self.cfg.seed, "lambdag-refs", target))
            chosen = sorted(rng.sample(eligible, min(self.cfg.lambdag_references, len(eligible))))
            self._reference_models[target] = [self.grammar_model(a) for a in chosen]
        return self._reference_models[target]

    def score(self, method: str, target: str, query: Document) -> float:
        masked_query = self.mask(query)
        if method == "ngram_tracing":
            return av_ngram.ngram_trace_score(
                self.masked_known(target), masked_query, n=self.cfg.ngram_n
            )
        if method == "rbi":
            config = av_rbi.RbiConfig(
                k_features=self.cfg.rbi_k_features,
                m_impostors=self.cfg.rbi_m_impostors,
                n_iterations=self.cfg.rbi_n_iterations,
                rng_seed=seed_for(self.cfg.seed, "rbi", target, query.id),
                feature_space=self.cfg.rbi_feature_space,
                impostor_fraction=self.cfg.rbi_impostor_fraction,
            )
            return av_rbi.rbi_score(
                self.masked_known(target), masked_query, self.rbi_pool(target), config
            )
        if method == "lambdag":
            score = av_lambdag.lambda_g(
                masked_query.tokens,
                self.grammar_model(target),
                self.reference_models(target),
            )
            return score.value
        raise StageError(f"unknown method {method!r}")


def run_verify(cfg: ExperimentConfig) -> dict:
    required = ["ingest", "attack"] if cfg.strategies else ["ingest"]
    paths = _require_stages(cfg, required)
    splits = _load_splits(paths)
    attacks = (
        [AttackRecord.from_dict(row) for row in _read_jsonl(paths.attacks)]
        if cfg.strategies
        else []
    )
    attacks = [a for a in attacks if a.strategy.kind in cfg.strategies]
    trials = _build_trials(cfg, splits, attacks)
    scorers = _MethodScorers(cfg, splits)

    rows = []
    for t in trials:
        for method in cfg.methods:
            raw = scorers.score(method, t["target"], t["query"])
            rows.append({
                "method": method,
                "author": t["target"],
                "query_id": t["query"].id,
                "query_author": t["query_author"],
                "condition": t["condition"],
                "strategy": t["strategy"],
                "truth": t["truth"],
                "raw_score": float(raw),
                "config_hash": cfg.config_hash,
                "seed": cfg.seed,
            })
    _write_jsonl(paths.scores, rows)
    return {"trials": len(trials), "rows": len(rows)}


# ---------------------------------------------------------------------------
# calibrate


def run_calibrate(cfg: ExperimentConfig) -> dict:
    required = ["ingest", "attack", "verify"] if cfg.strategies else ["ingest", "verify"]
    paths = _require_stages(cfg, required)
    score_rows = _read_jsonl(paths.scores)

    calibrators: dict[str, Calibrator] = {}
    for method in cfg.methods:
        samples = [
            ScoreSample(
                raw_score=row["raw_score"],
                label=row["truth"],
                method=method,
                pair=(row["author"], row["query_id"]),
            )
            for row in score_rows
            if row["method"] == method and row["condition"] == "calibration"
        ]
        if not samples:
            raise StageError(f"no calibration scores for method {method!r}; run verify first",
                             stage="verify")
        calibrators[method] = fit_calibrator(samples, method=method, log_base=cfg.log_base)

    _write_json(paths.calibrators, {
        "calibrators": {m: c.to_dict() for m, c in calibrators.items()},
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "tau": cfg.tau,
    })

    llr_rows = []
    for row in score_rows:
        cal = calibrators[row["method"]]
        llr = apply_calibrator(cal, row["raw_score"], author=row["author"],
                               query_id=row["query_id"])
        llr_rows.append({**row, "llr": llr.value, "log_base": cal.log_base,
                         "decision": decide(llr, cfg.tau)})
    _write_jsonl(paths.llrs, llr_rows)
    return {"methods": sorted(calibrators), "rows": len(llr_rows)}


# ---------------------------------------------------------------------------
# evaluate


def _mean(values: Sequence[float]) -> float:
    return float(sum(values) / len(values))


def _llr_values(rows: list[dict], per_author: bool) -> list[float]:
    if not per_author:
        return [r["llr"] for r in rows]
    by_author: dict[str, list[float]] = {}
    for r in rows:
        by_author.setdefault(r["author"], []).append(r["llr"])
    return [_mean(v) for _, v in sorted(by_author.items())]


def run_evaluate(cfg: ExperimentConfig) -> dict:
    required = ["ingest", "attack", "verify", "calibrate"] if cfg.strategies else \
        ["ingest", "verify", "calibrate"]
    paths = _require_stages(cfg, required)
    llr_rows = [r for r in _read_jsonl(paths.llrs) if r["condition"] != "calibration"]
    splits = _load_splits(paths)

    def ci_of(values: list[float], *key) -> tuple[float, float]:
        if not values:
            return (float("nan"), float("nan"))
        return metrics.confidence_interval(
            values,
            n_resamples=cfg.bootstrap_resamples,
            seed=seed_for(cfg.seed, "ci", *key),
        )

    def eval_row(method: str, condition: str, strategy: str | None,
                 rows: list[dict]) -> metrics.EvalRow:
        return metrics.EvalRow(
            method=method,
            condition=condition,
            strategy=strategy,
            decisions=[(r["decision"], r["truth"]) for r in rows],
            llrs=[r["llr"] for r in rows],
        )

    strategies = sorted({r["strategy"] for r in llr_rows if r["strategy"]})
    llr_summary = []
    robustness = []
    for method in cfg.methods:
        m_rows = [r for r in llr_rows if r["method"] == method]
        genuine = [r for r in m_rows if r["condition"] == "genuine_test"]
        genuine_diff = [r for r in genuine if r["truth"] == DIFFERENT]
        genuine_same = [r for r in genuine if r["truth"] == SAME]

        for truth, rows in ((SAME, genuine_same), (DIFFERENT, genuine_diff)):
            if not rows:
                continue
            eval_row(method, "genuine_test", None, rows)  # alignment invariants
            values = _llr_values(rows, cfg.per_author_aggregation)
            lo, hi = ci_of(values, method, "genuine", truth)
            llr_summary.append({
                "corpus": cfg.corpus_name, "method": method, "condition": "genuine_test",
                "strategy": None, "truth": truth, "n": len(rows),
                "mean_llr": _mean(values), "ci_lo": lo, "ci_hi": hi,
            })

        tnr_test = metrics.tnr(eval_row(method, "genuine_test", None, genuine_diff).decisions) \
            if genuine_diff else None
        tn_test_llrs = [r["llr"] for r in genuine_diff
                        if r["decision"] == DIFFERENT and r["llr"] < 0]

        imp_rows_all = [r for r in m_rows if r["condition"] == "impersonation"]
        for strategy in [*strategies, "all"]:
            rows = imp_rows_all if strategy == "all" else \
                [r for r in imp_rows_all if r["strategy"] == strategy]
            if not rows:
                continue
            group = eval_row(method, "impersonation", strategy, rows)
            values = _llr_values(rows, cfg.per_author_aggregation)
            lo, hi = ci_of(values, method, "impersonation", strategy)
            llr_summary.append({
                "corpus": cfg.corpus_name, "method": method, "condition": "impersonation",
                "strategy": strategy, "truth": DIFFERENT, "n": len(rows),
                "mean_llr": _mean(values), "ci_lo": lo, "ci_hi": hi,
            })
            tnr_imp = metrics.tnr(group.decisions)
            degradation = None
            if tnr_test:
                degradation = metrics.relative_tnr_degradation(tnr_test, tnr_imp)
            tn_imp_llrs = [r["llr"] for r in rows
                           if r["decision"] == DIFFERENT and r["llr"] < 0]
            drop = None
            if tn_test_llrs and tn_imp_llrs:
                drop = metrics.confidence_drop(tn_test_llrs, tn_imp_llrs)
            robustness.append({
                "corpus": cfg.corpus_name, "method": method, "strategy": strategy,
                "tnr_test": tnr_test, "tnr_impersonation": tnr_imp,
                "tnr_degradation": degradation, "confidence_drop": drop,
                "n_test": len(genuine_diff), "n_impersonation": len(rows),
            })

    _write_json(paths.evaluation, {
        "corpus": cfg.corpus_name,
        "llr_summary": llr_summary,
        "robustness": robustness,
        "tau": cfg.tau,
        "log_base": cfg.log_base,
        "per_author_aggregation": cfg.per_author_aggregation,
        "masking": "posnoise applied uniformly to all methods (lexicon fw-en-v1)",
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
    })

    # lexical diversity: genuine unknown texts of test authors vs attack texts
    targets, _source = attack_targets(splits, cfg.seed)
    texts: list[tuple[str, str, str | None, list[str]]] = []
    for author in targets:
        for doc in splits[author].unknown:
            if doc.tokens:
                texts.append((doc.id, "genuine_test", None, list(doc.tokens)))
    if cfg.strategies and paths.attacks.exists():
        for row in _read_jsonl(paths.attacks):
            kind = row["strategy"]["kind"]
            if kind not in cfg.strategies:
                continue
            doc = Document.build(
                id=f"attack/{row['target_author']}/{kind}",
                author_id="_llm",
                genre=cfg.genre,
                raw_text=row["generated_text"],
            )
            if doc.tokens:
                texts.append((doc.id, "impersonation", kind, list(doc.tokens)))

    diversity_rows = []
    summary = []
    if texts:
        truncation = min(len(tokens) for *_ , tokens in texts)
        for text_id, condition, strategy, tokens in texts:
            truncated = tokens[:truncation]
            row = metrics.DiversityRow(
                text_id=text_id,
                condition=condition,
                compressed_bytes=metrics.compressed_size(
                    " ".join(tokens), truncation, level=cfg.deflate_level
                ),
                entropy_bits=metrics.entropy(truncated),
                ttr=metrics.ttr(truncated),
                truncation_len=truncation,
            )
            diversity_rows.append({**asdict(row), "strategy": strategy})
        for condition in ("genuine_test", "impersonation"):
            rows = [r for r in diversity_rows if r["condition"] == condition]
            if not rows:
                continue
            entry = {"corpus": cfg.corpus_name, "condition": condition, "n": len(rows),
                     "truncation_len": truncation}
            for key in ("compressed_bytes", "entropy_bits", "ttr"):
                values = [float(r[key]) for r in rows]
                lo, hi = ci_of(values, "diversity", condition, key)
                entry[f"mean_{key}"] = _mean(values)
                entry[f"ci_lo_{key}"] = lo
                entry[f"ci_hi_{key}"] = hi
            summary.append(entry)

    _write_json(paths.diversity, {
        "corpus": cfg.corpus_name,
        "deflate_level": cfg.deflate_level,
        "rows": diversity_rows,
        "summary": summary,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
    })
    return {"llr_summary": len(llr_summary), "robustness": len(robustness),
            "diversity_rows": len(diversity_rows)}


# ---------------------------------------------------------------------------
# report


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                value = row.get(col)
                out.append(repr(value) if isinstance(value, float) else
                           "" if value is None else str(value))
            writer.writerow(out)


def run_report(cfg: ExperimentConfig) -> dict:
    required = ["ingest", "attack", "verify", "calibrate", "evaluate"] if cfg.strategies \
        else ["ingest", "verify", "calibrate", "evaluate"]
    paths = _require_stages(cfg, required)
    evaluation = json.loads(paths.evaluation.read_text(encoding="utf-8"))
    diversity = json.loads(paths.diversity.read_text(encoding="utf-8"))
    report = paths.report_dir
    report.mkdir(parents=True, exist_ok=True)

    llr_columns = ["corpus", "method", "condition", "strategy", "truth",
                   "n", "mean_llr", "ci_lo", "ci_hi"]
    _write_csv(report / "llr_summary.csv", evaluation["llr_summary"], llr_columns)
    robustness_columns = ["corpus", "method", "strategy", "tnr_test", "tnr_impersonation",
                          "tnr_degradation", "confidence_drop", "n_test", "n_impersonation"]
    _write_csv(report / "robustness.csv", evaluation["robustness"], robustness_columns)
    diversity_columns = ["corpus", "condition", "n", "truncation_len",
                         "mean_compressed_bytes", "ci_lo_compressed_bytes",
                         "ci_hi_compressed_bytes", "mean_entropy_bits",
                         "ci_lo_entropy_bits", "ci_hi_entropy_bits",
                         "mean_ttr", "ci_lo_ttr", "ci_hi_ttr"]
    _write_csv(report / "diversity.csv", diversity["summary"], diversity_columns)
    provenance = {"config_hash": cfg.config_hash, "seed": cfg.seed}
    _write_json(report / "llr_summary.json", {"rows": evaluation["llr_summary"], **provenance})
    _write_json(report / "robustness.json", {"rows": evaluation["robustness"], **provenance})
    _write_json(report / "diversity.json", {"rows": diversity["summary"], **provenance})

    imp_rows = [r for r in evaluation["llr_summary"]
                if r["condition"] == "impersonation" and r["strategy"] not in (None, "all")]
    if imp_rows:
        labels = [f"{r['method']}/{r['strategy']}" for r in imp_rows]
        (report / "impersonation_llr.svg").write_text(
            metrics.svg_bar_chart(
                "Mean calibrated LLR on impersonation texts",
                labels,
                [r["mean_llr"] for r in imp_rows],
                [(r["ci_lo"], r["ci_hi"]) for r in imp_rows],
            ),
            encoding="utf-8",
        )
    rob_rows = [r for r in evaluation["robustness"]
                if r["strategy"] == "all" and r["tnr_degradation"] is not None]
    if rob_rows:
        (report / "tnr_degradation.svg").write_text(
            metrics.svg_bar_chart(
                "Relative TNR degradation (negative = improved rejection)",
                [r["method"] for r in rob_rows],
                [r["tnr_degradation"] for r in rob_rows],
            ),
            encoding="utf-8",
        )
    div_rows = diversity["summary"]
    if div_rows:
        (report / "lexical_diversity.svg").write_text(
            metrics.svg_bar_chart(
                "Token entropy at common truncation length",
                [r["condition"] for r in div_rows],
                [r["mean_entropy_bits"] for r in div_rows],
                [(r["ci_lo_entropy_bits"], r["ci_hi_entropy_bits"]) for r in div_rows],
            ),
            encoding="utf-8",
        )
    written = sorted(p.name for p in report.iterdir())
    return {"report_dir": str(report), "files": written}


def run_all(cfg: ExperimentConfig) -> dict:
    """Run every stage in order; returns the attack stage's failure count so
    callers can surface partial failures."""
    results = {"ingest": run_ingest(cfg)}
    if cfg.strategies:
        results["attack"] = run_attacks(cfg)
    results["verify"] = run_verify(cfg)
    results["calibrate"] = run_calibrate(cfg)
    results["evaluate"] = run_evaluate(cfg)
    results["report"] = run_report(cfg)
    return results
