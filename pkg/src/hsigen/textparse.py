"""Template-grammar parser for interaction descriptions.

Descriptions follow the combinatorial template
    <subject> <action> [<object phrase>] [<spatial relation> <anchors>] [<extras>]
with "while" (or "and" before a new subject) separating persons, "and"
between verbs extending one person's action list, gerund phrases adding
secondary actions, and "with the left/right hand" side hints.

`render_description` emits text from slot values and `parse_description`
inverts it exactly on the template's range.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import pla
from .graphs import SceneGraph, default_lexicon

SUBJECT_NOUNS = ("person", "man", "woman")
SUBJECTS = tuple(f"{art} {n}" for n in SUBJECT_NOUNS for art in ("a", "the")) + ("someone",)

OBJECT_PREPS = ("on", "against", "in", "at")

# canonical relation -> surface token sequences (first is the render form)
RELATION_SURFACES: dict[str, tuple[tuple[str, ...], ...]] = {
    "near": (("near",),),
    "by": (("by",),),
    "beside": (("beside",),),
    "next to": (("next", "to"),),
    "close to": (("close", "to"),),
    "in front of": (("in", "front", "of"),),
    "behind": (("behind",),),
    "left of": (("to", "the", "left", "of"), ("left", "of")),
    "right of": (("to", "the", "right", "of"), ("right", "of")),
    "above": (("above",),),
}

NUMBER_WORDS = ("one", "two", "three", "four", "five",
                "six", "seven", "eight", "nine", "ten")

_GERUND_EXC = {"lie": "lying", "use": "using", "move": "moving", "type": "typing",
               "write": "writing", "raise": "raising", "sit": "sitting",
               "step": "stepping", "put": "putting", "run": "running"}

_PLURAL_EXC = {"couch": "couches", "bench": "benches", "shelf": "shelves",
               "box": "boxes", "bookshelf": "bookshelves"}


class ParseError(ValueError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at character {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TextQuery:
    raw: str

    @property
    def words(self) -> list[str]:
        ws = [w for w, _ in _tokenize(self.raw)]
        if not ws:
            raise ParseError("empty description")
        return ws


@dataclass(frozen=True)
class Triplet:
    subject: str
    predicate: str
    object: str
    quantifier: int | None = None

    def __post_init__(self):
        if not self.subject or not self.object:
            raise ParseError("triplet subject and object must be non-empty")


@dataclass(frozen=True)
class ActionRef:
    lemma: str
    side: str | None = None


@dataclass(frozen=True)
class AnchorRef:
    concept: str
    quantity: int
    label: str          # spatial relation for relation anchors, action lemma otherwise


@dataclass
class ParsedInteraction:
    subject: str
    actions: list[ActionRef]
    object_class: str | None = None
    object_prep: str | None = None
    spatial_relation: str | None = None
    anchors: list[AnchorRef] = field(default_factory=list)

    @property
    def anchor_classes(self) -> list[tuple[str, int]]:
        return [(a.concept, a.quantity) for a in self.anchors]


# ---------------------------------------------------------------------------
# word forms

def third_person(lemma: str) -> str:
    head, *rest = lemma.split(" ")
    if re.search(r"(s|x|z|ch|sh|o)$", head):
        head += "es"
    elif re.search(r"[^aeiou]y$", head):
        head = head[:-1] + "ies"
    else:
        head += "s"
    return " ".join([head, *rest])


def gerund(lemma: str) -> str:
    head, *rest = lemma.split(" ")
    if head in _GERUND_EXC:
        head = _GERUND_EXC[head]
    elif head.endswith("e") and not head.endswith("ee"):
        head = head[:-1] + "ing"
    else:
        head += "ing"
    return " ".join([head, *rest])


def plural(noun: str) -> str:
    if noun in _PLURAL_EXC:
        return _PLURAL_EXC[noun]
    if re.search(r"(s|x|z|ch|sh)$", noun):
        return noun + "es"
    if re.search(r"[^aeiou]y$", noun):
        return noun[:-1] + "ies"
    return noun + "s"


def _verb_forms() -> dict[tuple[str, ...], tuple[str, str]]:
    """Map token sequences to (lemma, form kind in {base, third, gerund})."""
    table: dict[tuple[str, ...], tuple[str, str]] = {}
    for lemma in pla.action_vocab():
        table[tuple(lemma.split(" "))] = (lemma, "base")
        table[tuple(third_person(lemma).split(" "))] = (lemma, "third")
        table[tuple(gerund(lemma).split(" "))] = (lemma, "gerund")
    return table


def _noun_index() -> dict[str, tuple[str, bool]]:
    """word -> (concept, is_plural)"""
    lex = default_lexicon()
    index: dict[str, tuple[str, bool]] = {}
    for concept in lex.concepts:
        for form in lex.entries[concept].get("lemmas", [concept]):
            index.setdefault(form, (concept, False))
            index.setdefault(plural(form), (concept, True))
    return index


_VERBS = _verb_forms()
_NOUNS = _noun_index()
_MAX_VERB_LEN = max(len(k) for k in _VERBS)
_NUMBERS = {w: i + 1 for i, w in enumerate(NUMBER_WORDS)}
_NUMBERS.update({str(i + 1): i + 1 for i in range(10)})


def _tokenize(text: str) -> list[tuple[str, int]]:
    out = []
    for m in re.finditer(r"[A-Za-z0-9']+|[.,]", text):
        out.append((m.group(0).lower(), m.start()))
    return out


def _guess_lemma(word: str) -> str:
    if word.endswith("ies"):
        return word[:-3] + "y"
    if word.endswith("es"):
        return word[:-2]
    if word.endswith("s"):
        return word[:-1]
    return word


# ---------------------------------------------------------------------------
# parser

class _Cursor:
    def __init__(self, tokens: list[tuple[str, int]], length: int):
        self.tokens = tokens
        self.i = 0
        self.length = length

    def peek(self, k: int = 0) -> str | None:
        j = self.i + k
        return self.tokens[j][0] if j < len(self.tokens) else None

    def offset(self, k: int = 0) -> int:
        j = self.i + k
        return self.tokens[j][1] if j < len(self.tokens) else self.length

    def take(self) -> str:
        tok = self.tokens[self.i][0]
        self.i += 1
        return tok

    def done(self) -> bool:
        return self.i >= len(self.tokens)

    def match_seq(self, seq: tuple[str, ...]) -> bool:
        if all(self.peek(k) == w for k, w in enumerate(seq)):
            self.i += len(seq)
            return True
        return False


def _at_subject(cur: _Cursor) -> bool:
    if cur.peek() == "someone":
        return True
    return cur.peek() in ("a", "the") and cur.peek(1) in SUBJECT_NOUNS


def _parse_subject(cur: _Cursor) -> str:
    if cur.peek() == "someone":
        cur.take()
        return "someone"
    if _at_subject(cur):
        art = cur.take()
        return f"{art} {cur.take()}"
    if cur.peek() in ("a", "an", "the"):
        # lenient subject phrase so that bad ACTION words are reported as such
        words = [cur.take()]
        while len(words) < 4 and cur.peek() is not None and _peek_verb(cur) is None \
                and not _looks_like_verb(cur.peek()):
            words.append(cur.take())
        return " ".join(words)
    raise ParseError(f"expected a subject, got {cur.peek()!r}", cur.offset())


def _peek_verb(cur: _Cursor) -> tuple[str, str] | None:
    clone = _advance(cur, 0)
    return _match_verb(clone)


def _looks_like_verb(word: str | None) -> bool:
    if word is None or word in _NOUNS:
        return False
    return word.endswith("s") or word.endswith("ing")


def _match_verb(cur: _Cursor) -> tuple[str, str] | None:
    for n in range(_MAX_VERB_LEN, 0, -1):
        seq = tuple(cur.peek(k) for k in range(n))
        if None in seq:
            continue
        hit = _VERBS.get(seq)
        if hit:
            cur.i += n
            return hit
    return None


def _match_relation(cur: _Cursor) -> str | None:
    options = []
    for canon, surfaces in RELATION_SURFACES.items():
        for surf in surfaces:
            options.append((len(surf), surf, canon))
    for _, surf, canon in sorted(options, key=lambda o: -o[0]):
        if all(cur.peek(k) == w for k, w in enumerate(surf)):
            cur.i += len(surf)
            return canon
    return None


def _parse_np(cur: _Cursor) -> tuple[str, int]:
    qty = 1
    tok = cur.peek()
    if tok in ("a", "an", "the"):
        cur.take()
    elif tok in _NUMBERS:
        qty = _NUMBERS[tok]
        cur.take()
    noun = cur.peek()
    if noun is None:
        raise ParseError("expected a noun", cur.offset())
    entry = _NOUNS.get(noun)
    if entry is None:
        raise ParseError(f"unknown object word {noun!r}", cur.offset())
    cur.take()
    return entry[0], qty


def _parse_side_hint(cur: _Cursor) -> str | None:
    if cur.peek() == "with" and cur.peek(1) == "the" and cur.peek(2) in ("left", "right") \
            and cur.peek(3) in ("hand", "arm", "foot"):
        cur.take(); cur.take()
        side = cur.take()
        cur.take()
        return side
    return None


def _parse_clause(cur: _Cursor) -> ParsedInteraction:
    subject = _parse_subject(cur)
    verb = _match_verb(cur)
    if verb is None:
        word = cur.peek()
        if word is None:
            raise ParseError("description ends before an action", cur.offset())
        raise ParseError(f"action {_guess_lemma(word)!r} not in vocabulary", cur.offset())
    parsed = ParsedInteraction(subject=subject, actions=[ActionRef(verb[0])])

    # object phrase: relation surfaces win over bare prepositions ("in front of")
    save = cur.i
    rel = _match_relation(cur)
    if rel is None and cur.peek() in OBJECT_PREPS:
        prep = cur.take()
        concept, _ = _parse_np(cur)
        parsed.object_class = concept
        parsed.object_prep = prep
        rel = _match_relation(cur)
    elif rel is None:
        cur.i = save

    if rel is not None:
        parsed.spatial_relation = rel
        while True:
            concept, qty = _parse_np(cur)
            parsed.anchors.append(AnchorRef(concept, qty, rel))
            if cur.peek() == "and" and cur.peek(1) in (*_NUMBERS, "a", "an", "the") \
                    and not _at_subject(_advance(cur, 1)):
                cur.take()
                continue
            break

    # secondary actions: gerund phrases and "and <verb>"
    while True:
        side = _parse_side_hint(cur)
        if side is not None:
            parsed.actions[-1] = ActionRef(parsed.actions[-1].lemma, side)
            continue
        save = cur.i
        if cur.peek() == "and" and not _at_subject(_advance(cur, 1)):
            cur.take()
            verb = _match_verb(cur)
            if verb is None:
                cur.i = save
                break
        else:
            verb = None
            if not cur.done():
                hit = _match_verb(cur)
                if hit and hit[1] == "gerund":
                    verb = hit
                elif hit:
                    raise ParseError(f"unexpected verb form {hit[0]!r}", cur.offset())
        if verb is None:
            break
        parsed.actions.append(ActionRef(verb[0]))
        if cur.peek() in ("a", "an", "the") and cur.peek(1) in _NOUNS and not _at_subject(cur):
            concept, qty = _parse_np(cur)
            parsed.anchors.append(AnchorRef(concept, qty, verb[0]))

    for ref in parsed.actions:
        pla.part_of(ref.lemma)   # raises UnknownActionError on bad lemmas
    return parsed


def _advance(cur: _Cursor, k: int) -> _Cursor:
    clone = _Cursor(cur.tokens, cur.length)
    clone.i = cur.i + k
    return clone


def parse_description(text: str | TextQuery) -> list[ParsedInteraction]:
    """Parse a template description into one ParsedInteraction per person."""
    raw = text.raw if isinstance(text, TextQuery) else text
    tokens = _tokenize(raw)
    if not tokens:
        raise ParseError("empty description")
    cur = _Cursor(tokens, len(raw))
    persons = [_parse_clause(cur)]
    while not cur.done():
        tok = cur.peek()
        if tok == ".":
            cur.take()
            if cur.done():
                break
            persons.append(_parse_clause(cur))
        elif tok == ",":
            cur.take()
        elif tok == "while":
            cur.take()
            persons.append(_parse_clause(cur))
        elif tok == "and" and _at_subject(_advance(cur, 1)):
            cur.take()
            persons.append(_parse_clause(cur))
        else:
            raise ParseError(f"unexpected word {tok!r}", cur.offset())
    return persons


# ---------------------------------------------------------------------------
# triplets and the local scene graph

def triplets_from_parsed(parsed: ParsedInteraction) -> list[Triplet]:
    out = []
    if parsed.object_class:
        pred = f"{parsed.actions[0].lemma} {parsed.object_prep}"
        out.append(Triplet("person", pred, parsed.object_class))
    for anchor in parsed.anchors:
        out.append(Triplet("person", anchor.label, anchor.concept,
                           None if anchor.quantity == 1 else anchor.quantity))
    return out


def quantity_expand(triplets: list[Triplet]) -> list[Triplet]:
    """Duplicate quantified triplets into per-instance triplets with distinct
    object suffixes; quantifier-free triplets pass through unchanged."""
    out = []
    for t in triplets:
        if t.quantifier is None:
            out.append(t)
            continue
        if t.quantifier < 1:
            raise ParseError(f"quantifier must be positive, got {t.quantifier}")
        for i in range(1, t.quantifier + 1):
            out.append(Triplet(t.subject, t.predicate, f"{t.object}_{i}"))
    return out


_SUFFIX = re.compile(r"_(\d+)$")


def build_local_graph(parsed: ParsedInteraction) -> SceneGraph:
    """Local scene graph: one virtual human node plus one node per (expanded)
    object mention, with predicate edges from the human."""
    g = SceneGraph()
    g.add_node("human", kind="virtual_human", category="person")
    for t in quantity_expand(triplets_from_parsed(parsed)):
        node_id = g.fresh_id(t.object)
        g.add_node(node_id, kind="object", category=_SUFFIX.sub("", t.object))
        g.add_edge("human", t.predicate, node_id)
    return g


# ---------------------------------------------------------------------------
# rendering (inverse of the parser on the template's range)

@dataclass(frozen=True)
class ExtraAction:
    lemma: str
    anchor: str | None = None
    side: str | None = None


@dataclass(frozen=True)
class PersonSlots:
    subject: str
    action: str
    object_class: str | None = None
    object_prep: str | None = None
    relation: str | None = None
    rel_anchors: tuple[tuple[str, int], ...] = ()
    extras: tuple[ExtraAction, ...] = ()


def render_description(persons: list[PersonSlots]) -> str:
    chunks = []
    for slots in persons:
        words = [slots.subject, third_person(slots.action)]
        if slots.object_class:
            words.append(f"{slots.object_prep} the {slots.object_class}")
        if slots.relation:
            surface = " ".join(RELATION_SURFACES[slots.relation][0])
            nps = [f"the {c}" if q == 1 else f"{NUMBER_WORDS[q - 1]} {plural(c)}"
                   for c, q in slots.rel_anchors]
            words.append(f"{surface} {' and '.join(nps)}")
        for extra in slots.extras:
            words.append(gerund(extra.lemma))
            if extra.anchor:
                words.append(f"a {extra.anchor}")
            if extra.side:
                words.append(f"with the {extra.side} hand")
        chunks.append(" ".join(words))
    return " while ".join(chunks) + "."


def expected_parse(slots: PersonSlots) -> ParsedInteraction:
    """The ParsedInteraction that parsing the rendered slots must produce."""
    actions = [ActionRef(slots.action)]
    anchors = [AnchorRef(c, q, slots.relation) for c, q in slots.rel_anchors]
    for extra in slots.extras:
        actions.append(ActionRef(extra.lemma, extra.side))
        if extra.anchor:
            anchors.append(AnchorRef(extra.anchor, 1, extra.lemma))
    return ParsedInteraction(subject=slots.subject, actions=actions,
                             object_class=slots.object_class,
                             object_prep=slots.object_prep,
                             spatial_relation=slots.relation, anchors=anchors)
