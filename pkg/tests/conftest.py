"""Shared builders for tests."""

from __future__ import annotations

import random
from pathlib import Path

from rerank_distill.models import CandidateDoc, CandidateSet, Qrels, Query, Ranking


def make_universe(n: int, query_id: str = "q1") -> CandidateSet:
    """Candidate set whose doc_ids equal their 1-based alias, so parsed
    group structures can be compared against bracket numbers literally."""
    docs = tuple(CandidateDoc(doc_id=str(i), text=f"passage {i}") for i in range(1, n + 1))
    return CandidateSet(query_id=query_id, docs=docs)


def make_query(query_id: str = "q1") -> Query:
    return Query(id=query_id, text=f"what does query {query_id} ask")


def graded_qrels(query_id: str, grades: list[int], universe: CandidateSet) -> Qrels:
    """Grade universe docs in candidate order."""
    return Qrels(judgments={
        (query_id, doc.doc_id): grade for doc, grade in zip(universe.docs, grades)
    })


def random_ranking(rng: random.Random, universe: CandidateSet, total: bool = False) -> Ranking:
    """Random tie-structured ranking over a subset (or all) of the universe."""
    ids = list(universe.doc_ids)
    rng.shuffle(ids)
    if not total:
        size = rng.randint(2, len(ids))
        ids = ids[:size]
    groups: list[list[str]] = [[ids[0]]]
    for doc_id in ids[1:]:
        if rng.random() < 0.3:
            groups[-1].append(doc_id)
        else:
            groups.append([doc_id])
    return Ranking(groups=tuple(tuple(g) for g in groups))


MIXED_MODES_YAML = """\
mock:
  name: mixed
  modes:
    - {quality: ideal, filler_sentences: 4, restatements: 0, revert_loops: 0}
    - {quality: ideal, filler_sentences: 80, restatements: 2, revert_loops: 2}
    - {quality: worst, filler_sentences: 4, restatements: 1, revert_loops: 1}
"""


def write_pipeline_workspace(
    root: Path,
    n_queries: int = 3,
    n_docs: int = 10,
    config_extra: str = MIXED_MODES_YAML,
) -> dict[str, str]:
    """Write topics/run/corpus/qrels/config files for a mock pipeline run.

    Grades descend in run order, so the run order is the ideal ranking and
    a reversed ranking still scores above zero.
    """
    qids = [f"q{i:03d}" for i in range(1, n_queries + 1)]
    topics = "".join(f"{qid}\thow does topic {qid} work\n" for qid in qids)
    run_lines = []
    qrels_lines = []
    corpus_lines = []
    for qid in qids:
        for rank in range(1, n_docs + 1):
            doc_id = f"{qid}-d{rank:02d}"
            run_lines.append(f"{qid} Q0 {doc_id} {rank} {float(n_docs - rank + 1)} seedrun\n")
            qrels_lines.append(f"{qid} 0 {doc_id} {max(0, 4 - rank)}\n")
            corpus_lines.append(f"{doc_id}\tpassage {rank} about topic {qid}\n")
    paths = {
        "topics": str(root / "topics.tsv"),
        "run": str(root / "run.txt"),
        "corpus": str(root / "corpus.tsv"),
        "qrels": str(root / "qrels.txt"),
        "config": str(root / "config.yaml"),
    }
    (root / "topics.tsv").write_text(topics)
    (root / "run.txt").write_text("".join(run_lines))
    (root / "corpus.tsv").write_text("".join(corpus_lines))
    (root / "qrels.txt").write_text("".join(qrels_lines))
    (root / "config.yaml").write_text(config_extra)
    return paths
