"""
Human factuality labels used by soft accuracy.

Label file: one record per line, ``query_id<TAB>answer<TAB>CorrectFact|IncorrectFact``.
Exports of unresolved answers use the same columns with the label left blank.
"""
import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, Optional, Tuple

import pandas as pd

from app.core.errors import LabelFormatError
from app.core.storage import atomic_write_text
from app.services.hallucination import FactLabel

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ["query_id", "answer", "label"]

LabelKey = Tuple[str, str]


@dataclass(frozen=True)
class UnresolvedAnswer:
    query_id: str
    answer: str


class LabelStore:
    def __init__(self, entries: Optional[Dict[LabelKey, FactLabel]] = None):
        self._entries: Dict[LabelKey, FactLabel] = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Tuple[LabelKey, FactLabel]]:
        return iter(sorted(self._entries.items()))

    def get(self, query_id: str, answer: str) -> Optional[FactLabel]:
        return self._entries.get((query_id, answer))

    def add(self, query_id: str, answer: str, label: FactLabel) -> None:
        key = (query_id, answer)
        existing = self._entries.get(key)
        if existing is not None and existing is not label:
            raise LabelFormatError(
                f"Conflicting labels for query {query_id} answer {answer}: {existing.value} vs {label.value}"
            )
        self._entries[key] = label

    def merge(self, other: "LabelStore") -> int:
        """Add every entry of `other`; returns the number of new keys."""
        before = len(self)
        for (query_id, answer), label in other:
            self.add(query_id, answer, label)
        return len(self) - before

    def to_tsv(self) -> str:
        return "".join(f"{query_id}\t{answer}\t{label.value}\n" for (query_id, answer), label in self)

    def save(self, path: Path) -> None:
        atomic_write_text(path, self.to_tsv())

    @classmethod
    def load(cls, path: Optional[Path], allow_blank: bool = False) -> "LabelStore":
        """
        Read a label file. With `allow_blank`, rows whose label column is
        empty (an export not yet annotated) are skipped.
        """
        store = cls()
        if path is None or not Path(path).exists() or Path(path).stat().st_size == 0:
            return store
        try:
            frame = pd.read_csv(
                path,
                sep="\t",
                header=None,
                dtype=str,
                keep_default_na=False,
                quoting=csv.QUOTE_NONE,
                comment=None,
                skip_blank_lines=True,
            )
        except pd.errors.EmptyDataError:
            return store
        except (pd.errors.ParserError, UnicodeDecodeError) as exc:
            raise LabelFormatError(f"{path}: unreadable label file: {exc}") from exc
        if frame.shape[1] != len(LABEL_COLUMNS):
            raise LabelFormatError(
                f"{path}: expected {len(LABEL_COLUMNS)} tab-separated columns, found {frame.shape[1]}"
            )
        frame.columns = LABEL_COLUMNS
        frame = frame.fillna("")
        valid_labels = {label.value: label for label in FactLabel}
        for row_number, row in enumerate(frame.itertuples(index=False), start=1):
            query_id, answer, label = row.query_id.strip(), row.answer.strip(), row.label.strip()
            if not query_id or not answer:
                raise LabelFormatError(f"{path}: row {row_number} is missing the query id or the answer")
            if not label and allow_blank:
                continue
            if label not in valid_labels:
                raise LabelFormatError(
                    f"{path}: row {row_number} has label {label!r}; expected CorrectFact or IncorrectFact"
                )
            store.add(query_id, answer, valid_labels[label])
        logger.info("Loaded %d labels from %s", len(store), path)
        return store


def export_unresolved(answers: Iterable[UnresolvedAnswer], path: Path) -> int:
    """Write unresolved answers for annotation; returns the number of rows."""
    unique = sorted({(item.query_id, item.answer) for item in answers})
    buffer = io.StringIO()
    for query_id, answer in unique:
        buffer.write(f"{query_id}\t{answer}\t\n")
    atomic_write_text(path, buffer.getvalue())
    return len(unique)


def import_labels(annotated: Path, store_path: Path) -> int:
    """Merge an annotated export into the label file; returns the number of new labels."""
    store = LabelStore.load(store_path)
    added = store.merge(LabelStore.load(annotated, allow_blank=True))
    store.save(store_path)
    logger.info("Imported %d new labels into %s", added, store_path)
    return added
