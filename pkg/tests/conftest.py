from __future__ import annotations

import json
from pathlib import Path

import pytest

from idiolect.corpus import Document

FIXTURES = Path(__file__).parent / "fixtures"


def make_doc(text: str, doc_id: str = "d0", author: str = "a0", genre: str = "email") -> Document:
    return Document.build(id=doc_id, author_id=author, genre=genre, raw_text=text)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def synthetic_corpus_path(tmp_path_factory) -> Path:
    from idiolect import synthetic

    path = tmp_path_factory.mktemp("corpus") / "synthetic20.jsonl"
    synthetic.write_jsonl(
        synthetic.generate_corpus(n_authors=20, docs_per_author=12, seed=7), path
    )
    return path


@pytest.fixture(scope="session")
def desk_experiment(synthetic_corpus_path, tmp_path_factory):
    """Two identical full stub-mode pipeline runs over the 20-author synthetic
    corpus; shared by the acceptance tests."""
    import time

    from idiolect import experiment

    outputs, durations = [], []
    for name in ("run_a", "run_b"):
        out = tmp_path_factory.mktemp(name)
        cfg = experiment.ExperimentConfig(
            corpus_path=str(synthetic_corpus_path),
            output_dir=str(out),
            seed=7,
        )
        start = time.monotonic()
        experiment.run_all(cfg)
        durations.append(time.monotonic() - start)
        outputs.append(out)
    return {"runs": outputs, "durations": durations}


def load_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))
