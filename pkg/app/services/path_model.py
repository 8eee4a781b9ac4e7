"""
KG paths and the parser that turns model output into them.

A path is rendered as ``dbr:A, dbo:r, dbr:B``; generations may also use
`` - `` as separator. Hyphens and commas inside local names
(``dbr:Reading,_Berkshire``, ``dbr:Jean-Luc_Godard``) are kept: a
separator only splits when it touches whitespace or is directly followed by a
``dbr:``, ``dbo:`` or ``dbp:`` prefix (``dbr:X-Men:_First_Class`` stays whole).
"""
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

from app.core.errors import InvalidIriError
from app.services.kg_store import ENTITY_PREFIX, PROPERTY_PREFIXES, Iri, IriKind, Triple

logger = logging.getLogger(__name__)

_PATH_PREFIXES = (ENTITY_PREFIX,) + PROPERTY_PREFIXES
_NEXT_PREFIX = rf"(?:{'|'.join(_PATH_PREFIXES)}):(?=\S)"
_SEPARATOR = re.compile(rf"\s*[,\-](?=\s|{_NEXT_PREFIX})\s*|\s+[,\-]\s*")
_TOKEN = (
    rf"[A-Za-z][A-Za-z0-9_]*:"
    rf"(?:[^\s,\-]|-(?!{_NEXT_PREFIX}|\s)|,(?!\s|$|{_NEXT_PREFIX}))+"
)
_CANDIDATE = re.compile(rf"(?<![\w:/]){_TOKEN}(?:\s*[,\-]\s*{_TOKEN})*")
_TRAILING_PUNCTUATION = ".;:!?\"'`*"


class ReasonCode(str, Enum):
    BAD_PREFIX = "BadPrefix"
    NOT_ALTERNATING = "NotAlternating"
    EVEN_LENGTH = "EvenLength"
    EMPTY_INPUT = "EmptyInput"


class ParseStatus(str, Enum):
    WELL_FORMED = "WellFormed"
    ILL_FORMATTED = "IllFormatted"
    MULTIPLE_PATHS = "MultiplePaths"


@dataclass(frozen=True)
class Hop:
    head: Iri
    relation: Iri
    tail: Iri
    inverse: bool = False

    @property
    def triple(self) -> Triple:
        """The hop as written, head on the left."""
        return Triple(self.head, self.relation, self.tail)

    @property
    def stored_triple(self) -> Triple:
        """The hop in the orientation the graph stores it."""
        if self.inverse:
            return Triple(self.tail, self.relation, self.head)
        return self.triple


@dataclass(frozen=True)
class KgPath:
    elements: Tuple[Iri, ...]
    # Per-hop orientation metadata; not part of path identity.
    inverse: Tuple[bool, ...] = field(default=(), compare=False)

    def __post_init__(self):
        elements = tuple(self.elements)
        object.__setattr__(self, "elements", elements)
        if len(elements) % 2 == 0:
            raise InvalidIriError(f"A KG path needs an odd number of elements, got {len(elements)}")
        for position, iri in enumerate(elements):
            expected = IriKind.ENTITY if position % 2 == 0 else IriKind.RELATION
            if iri.kind is not expected:
                raise InvalidIriError(
                    f"Path element {position} ({iri}) is {iri.kind.value}-kind, expected {expected.value}"
                )
        inverse = tuple(self.inverse) or (False,) * self.hop_count
        if len(inverse) != self.hop_count:
            raise InvalidIriError(f"Expected {self.hop_count} orientation flags, got {len(inverse)}")
        object.__setattr__(self, "inverse", inverse)

    @classmethod
    def of(cls, *values: str, inverse: Sequence[bool] = ()) -> "KgPath":
        return cls(tuple(Iri(value) for value in values), inverse=tuple(inverse))

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[Iri]:
        return iter(self.elements)

    @property
    def hop_count(self) -> int:
        return (len(self.elements) - 1) // 2

    @property
    def head(self) -> Iri:
        return self.elements[0]

    @property
    def tail(self) -> Iri:
        return self.elements[-1]

    @property
    def relations(self) -> Tuple[Iri, ...]:
        return self.elements[1::2]

    def hops(self) -> List[Hop]:
        return [
            Hop(self.elements[2 * i], self.elements[2 * i + 1], self.elements[2 * i + 2], self.inverse[i])
            for i in range(self.hop_count)
        ]

    def __str__(self) -> str:
        return render_path(self)


@dataclass(frozen=True)
class ParseOutcome:
    status: ParseStatus
    path: Optional[KgPath] = None
    reason: Optional[ReasonCode] = None
    position: Optional[int] = None
    count: Optional[int] = None
    text: str = ""

    @property
    def well_formed(self) -> bool:
        return self.status is ParseStatus.WELL_FORMED

    @property
    def tag(self) -> str:
        if self.status is ParseStatus.ILL_FORMATTED:
            return f"{self.status.value}({self.reason.value})"
        if self.status is ParseStatus.MULTIPLE_PATHS:
            return f"{self.status.value}({self.count})"
        return self.status.value

    @classmethod
    def ill(cls, reason: ReasonCode, text: str, position: Optional[int] = None) -> "ParseOutcome":
        return cls(ParseStatus.ILL_FORMATTED, reason=reason, position=position, text=text)


def render_path(path: KgPath) -> str:
    return ", ".join(iri.value for iri in path.elements)


def _path_token(token: str) -> Optional[Iri]:
    try:
        iri = Iri(token)
    except InvalidIriError:
        return None
    return iri if iri.prefix in _PATH_PREFIXES else None


def parse_path(text: str) -> ParseOutcome:
    """Parse one candidate path string into a `ParseOutcome`."""
    stripped = text.strip()
    if not stripped:
        return ParseOutcome.ill(ReasonCode.EMPTY_INPUT, text)

    tokens = [token.strip() for token in _SEPARATOR.split(stripped)]
    iris: List[Iri] = []
    for position, token in enumerate(tokens):
        iri = _path_token(token)
        if iri is None:
            return ParseOutcome.ill(ReasonCode.BAD_PREFIX, text, position)
        if position % 2 == 1 and iri.kind is IriKind.CLASS:
            # dbo:Person in a relation slot is not ontology-property format
            return ParseOutcome.ill(ReasonCode.BAD_PREFIX, text, position)
        iris.append(iri)

    if iris[0].kind is not IriKind.ENTITY:
        return ParseOutcome.ill(ReasonCode.BAD_PREFIX, text, 0)
    for position in range(1, len(iris)):
        if (iris[position].kind is IriKind.ENTITY) == (iris[position - 1].kind is IriKind.ENTITY):
            return ParseOutcome.ill(ReasonCode.NOT_ALTERNATING, text, position)
    if len(iris) % 2 == 0:
        return ParseOutcome.ill(ReasonCode.EVEN_LENGTH, text, len(iris) - 1)

    return ParseOutcome(ParseStatus.WELL_FORMED, path=KgPath(tuple(iris)), text=text)


def _trim_candidate(span: str) -> str:
    span = span.rstrip(_TRAILING_PUNCTUATION)
    # Drop a closing bracket that belongs to the surrounding prose.
    while span.endswith(")") and span.count(")") > span.count("("):
        span = span[:-1].rstrip(_TRAILING_PUNCTUATION)
    return span


def find_candidates(llm_output: str) -> List[str]:
    """Maximal spans of prefixed IRIs joined by separators, in order of appearance."""
    return [_trim_candidate(match.group(0)) for match in _CANDIDATE.finditer(llm_output)]


def extract_paths(llm_output: str) -> List[ParseOutcome]:
    return [parse_path(candidate) for candidate in find_candidates(llm_output)]


@dataclass(frozen=True)
class GenerationJudgement:
    outcome: ParseOutcome
    warnings: Tuple[str, ...] = ()

    @property
    def path(self) -> Optional[KgPath]:
        return self.outcome.path if self.outcome.well_formed else None

    @property
    def ill_formatted(self) -> bool:
        return not self.outcome.well_formed


def judge_generation(llm_output: str, min_hops: int = 1) -> GenerationJudgement:
    """
    Apply the whole-answer well-formedness rule to a generation.

    Candidates shorter than `min_hops` (bare entity mentions) are ignored.
    More than one remaining well-formed candidate makes the answer
    ill-formatted; one well-formed candidate among ill-formed ones is scored
    with a warning.
    """
    outcomes = [
        outcome
        for outcome in extract_paths(llm_output)
        if not (outcome.well_formed and outcome.path.hop_count < min_hops)
    ]
    well_formed = [outcome for outcome in outcomes if outcome.well_formed]

    if len(well_formed) > 1:
        return GenerationJudgement(
            ParseOutcome(ParseStatus.MULTIPLE_PATHS, count=len(well_formed), text=llm_output)
        )
    if len(well_formed) == 1:
        others = [outcome for outcome in outcomes if not outcome.well_formed]
        warnings = tuple(f"ignored ill-formed candidate {outcome.text!r} ({outcome.tag})" for outcome in others)
        if warnings:
            logger.warning("Partially parseable answer; scoring %s", well_formed[0].text)
        return GenerationJudgement(well_formed[0], warnings)
    if outcomes:
        return GenerationJudgement(outcomes[0])
    return GenerationJudgement(ParseOutcome.ill(ReasonCode.EMPTY_INPUT, llm_output))


def iri_tokens(llm_output: str) -> List[Iri]:
    """Every DBpedia-prefixed token in the text, in order."""
    tokens = []
    for candidate in find_candidates(llm_output):
        for token in _SEPARATOR.split(candidate):
            iri = _path_token(token.strip())
            if iri is not None:
                tokens.append(iri)
    return tokens


@dataclass(frozen=True)
class AnswerReading:
    answer: Optional[Iri]
    reason: str = ""


def read_answer(llm_output: str, query) -> AnswerReading:
    """
    Read the single IRI a tail, relation or relation-extraction answer names.
    """
    from app.services.tasks import TaskKind

    kind = query.kind
    one_hop = [
        outcome.path
        for outcome in extract_paths(llm_output)
        if outcome.well_formed and outcome.path.hop_count == 1
    ]
    tokens = iri_tokens(llm_output)

    if kind is TaskKind.TAIL_PREDICTION:
        if one_hop:
            return AnswerReading(one_hop[0].tail)
        entities = [iri for iri in tokens if iri.kind is IriKind.ENTITY and iri != query.head]
        if entities:
            return AnswerReading(entities[0])
        return AnswerReading(None, "no entity in answer")

    if kind in (TaskKind.RELATION_PREDICTION, TaskKind.RELATION_EXTRACTION):
        if kind is TaskKind.RELATION_EXTRACTION and one_hop:
            return AnswerReading(one_hop[0].relations[0])
        relations = [iri for iri in tokens if iri.kind is IriKind.RELATION]
        if relations:
            return AnswerReading(relations[0])
        return AnswerReading(None, "no relation in answer")

    raise ValueError(f"Task kind {kind.value} is scored as a path, not a single IRI")
