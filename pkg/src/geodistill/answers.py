"""Answer extraction and equivalence: the verification core shared by every stage.

Model outputs are split into a reasoning segment and a final answer via
``<think>``/``<answer>`` tags, and answers are normalized into canonical
mathematical values so that "0.5", "1/2" and "the answer is 1/2" all compare
equal while "1:2" (a ratio) stays distinct from "1/2" (a number).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import gcd

DEFAULT_REL_TOL = Fraction(1, 10**6)
# Absolute band used instead of relative tolerance when one side is exactly 0
# (relative tolerance is meaningless at 0). Only active for rel_tol > 0 so that
# rel_tol=0 stays a strict equivalence relation.
ZERO_ABS_TOL = Fraction(1, 10**9)

# Exact rational snapshot of the closest double to pi (~16 significant digits).
PI = Fraction(math.pi)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"


class ExtractionStatus(str, Enum):
    CLEAN = "clean"
    MISSING_THINK = "missing_think"
    MISSING_ANSWER = "missing_answer"
    MALFORMED = "malformed"


class AnswerKind(str, Enum):
    RATIONAL = "rational"
    DECIMAL = "decimal"
    DEGREE = "degree"
    RATIO = "ratio"
    PI_TERM = "pi"
    OPTION = "option"
    TEXT = "text"


# Kinds with a structured (non-free-text) payload.
STRUCTURED_KINDS = frozenset(k for k in AnswerKind if k is not AnswerKind.TEXT)


@dataclass(frozen=True)
class TaggedOutput:
    think_text: str
    answer_text: str
    status: ExtractionStatus


def _first_block(text: str, open_tag: str, close_tag: str) -> str | None:
    """Content of the first open..close span, or None if absent/unclosed."""
    start = text.find(open_tag)
    if start < 0:
        return None
    end = text.find(close_tag, start + len(open_tag))
    if end < 0:
        return None
    return text[start + len(open_tag) : end]


def extract_tagged(raw: str) -> TaggedOutput:
    """Split a model response into think/answer segments.

    Total: malformed input yields a non-clean status, never an exception.
    CLEAN requires exactly one well-nested think block followed by exactly
    one answer block; any other arrangement of tags is MALFORMED, except the
    two benign omissions (answer without think, or no answer tags at all).
    An answer block whose content is blank counts as MISSING_ANSWER.
    """
    text = raw or ""
    t_open, t_close = text.count(THINK_OPEN), text.count(THINK_CLOSE)
    a_open, a_close = text.count(ANSWER_OPEN), text.count(ANSWER_CLOSE)

    think_block = _first_block(text, THINK_OPEN, THINK_CLOSE)
    answer_block = _first_block(text, ANSWER_OPEN, ANSWER_CLOSE)
    think_well_formed = t_open == 1 and t_close == 1 and think_block is not None
    answer_well_formed = a_open == 1 and a_close == 1 and answer_block is not None

    if a_open == 0 and a_close == 0:
        # No answer tags at all. Plain text and a lone clean think block are
        # benign; stray think tags are not.
        if t_open == 0 and t_close == 0:
            return TaggedOutput("", "", ExtractionStatus.MISSING_ANSWER)
        if think_well_formed:
            return TaggedOutput(think_block.strip(), "", ExtractionStatus.MISSING_ANSWER)
        return TaggedOutput("", "", ExtractionStatus.MALFORMED)

    if not answer_well_formed:
        return TaggedOutput("", "", ExtractionStatus.MALFORMED)

    answer_text = answer_block.strip()

    if t_open == 0 and t_close == 0:
        if not answer_text:
            return TaggedOutput("", "", ExtractionStatus.MISSING_ANSWER)
        return TaggedOutput("", answer_text, ExtractionStatus.MISSING_THINK)

    # Both tag families present: demand the clean nested shape
    # <think> ... </think> ... <answer> ... </answer>.
    if not think_well_formed:
        return TaggedOutput("", "", ExtractionStatus.MALFORMED)
    if text.index(THINK_CLOSE) > text.index(ANSWER_OPEN):
        return TaggedOutput("", "", ExtractionStatus.MALFORMED)

    think_text = think_block.strip()
    if not answer_text:
        return TaggedOutput(think_text, "", ExtractionStatus.MISSING_ANSWER)
    return TaggedOutput(think_text, answer_text, ExtractionStatus.CLEAN)


@dataclass(frozen=True)
class CanonicalAnswer:
    """Normalized answer value; payload depends on kind.

    rational/degree/pi: Fraction (reduced, positive denominator)
    decimal: (significand, exponent) with significand not divisible by 10
    ratio: (a, b) nonnegative ints in lowest terms, not both zero
    option: single uppercase letter
    text: whitespace-collapsed, casefolded string
    """

    kind: AnswerKind
    value: Fraction | tuple[int, int] | str


def rational(num: int, den: int = 1) -> CanonicalAnswer:
    return CanonicalAnswer(AnswerKind.RATIONAL, Fraction(num, den))


def decimal(significand: int, exponent: int = 0) -> CanonicalAnswer:
    while significand != 0 and significand % 10 == 0:
        significand //= 10
        exponent += 1
    if significand == 0:
        exponent = 0
    return CanonicalAnswer(AnswerKind.DECIMAL, (significand, exponent))


def degree(num: int | Fraction, den: int = 1) -> CanonicalAnswer:
    return CanonicalAnswer(AnswerKind.DEGREE, Fraction(num, den))


def ratio(a: int, b: int) -> CanonicalAnswer:
    if a < 0 or b < 0 or (a == 0 and b == 0):
        raise ValueError(f"ratio components must be nonnegative and not both zero: {a}:{b}")
    g = gcd(a, b)
    return CanonicalAnswer(AnswerKind.RATIO, (a // g, b // g))


def pi_term(num: int | Fraction, den: int = 1) -> CanonicalAnswer:
    return CanonicalAnswer(AnswerKind.PI_TERM, Fraction(num, den))


def option(letter: str) -> CanonicalAnswer:
    letter = letter.strip()
    if len(letter) != 1 or not letter.isalpha() or not letter.isascii():
        raise ValueError(f"option must be a single letter A-Z: {letter!r}")
    return CanonicalAnswer(AnswerKind.OPTION, letter.upper())


def text_answer(s: str) -> CanonicalAnswer:
    return CanonicalAnswer(AnswerKind.TEXT, " ".join(s.split()).casefold())


def _decimal_fraction(payload: tuple[int, int]) -> Fraction:
    sig, exp = payload
    if exp >= 0:
        return Fraction(sig * 10**exp)
    return Fraction(sig, 10**-exp)


def plain_value(ans: CanonicalAnswer) -> Fraction | None:
    """Exact unitless numeric value, or None for non-plain kinds."""
    if ans.kind is AnswerKind.RATIONAL:
        return ans.value
    if ans.kind is AnswerKind.DECIMAL:
        return _decimal_fraction(ans.value)
    return None


# --- parsing ---------------------------------------------------------------

_LEADING_PHRASE_RX = re.compile(
    r"^\s*(?:(?:the|my)\s+)?(?:final\s+)?answer\s*(?:is|:|=)\s*", re.IGNORECASE
)
_EDGE_TRIM = " \t\r\n.,;!?\"'`*$"

_NUM_BODY = r"[-+]?\d+(?:\.\d+)?(?:\s*/\s*\d+)?"

_OPTION_RX = re.compile(r"(?:option\s+)?\(?([A-Za-z])\)?\.?", re.IGNORECASE)
_RATIO_RX = re.compile(r"(\d+(?:\.\d+)?)\s*:\s*(\d+(?:\.\d+)?)")
_PI_RX = re.compile(
    rf"(?:({_NUM_BODY})\s*[·*]?\s*)?(?:π|pi\b)(?:\s*/\s*(\d+))?",
    re.IGNORECASE,
)
_DEGREE_RX = re.compile(rf"({_NUM_BODY})\s*(?:°|degrees?\b|deg\b)", re.IGNORECASE)
_FRACTION_RX = re.compile(r"([-+]?\d+)\s*/\s*(\d+)")
_NUMBER_RX = re.compile(r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?")

# Token scan for the "last numeric token" rule. Alternative order sets the
# priority when several classes could match at one position; guards keep a
# token from being carved out of a larger construct (ratios, fractions,
# percentages, malformed digit runs).
_TOKEN_RX = re.compile(
    r"(?<![\w.:/,])"
    r"(?:"
    rf"(?P<ratio>\d+(?:\.\d+)?\s*:\s*\d+(?:\.\d+)?)"
    rf"|(?P<pi>(?:{_NUM_BODY}\s*[·*]?\s*)?(?:π|pi)(?:\s*/\s*\d+)?)"
    rf"|(?P<degree>{_NUM_BODY}\s*(?:°|degrees?|deg))"
    rf"|(?P<fraction>[-+]?\d+\s*/\s*\d+)"
    r"|(?P<number>[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?)"
    r")"
    r"(?![\w:/%])(?!\.\d)",
    re.IGNORECASE,
)


def _parse_decimal_body(body: str) -> Fraction | None:
    """Exact value of a signed decimal/integer with optional 3-digit grouping."""
    body = body.strip().replace(" ", "")
    m = re.fullmatch(r"([-+]?)(\d{1,3}(?:,\d{3})+|\d+)(?:\.(\d+))?", body)
    if not m:
        return None
    sign = -1 if m.group(1) == "-" else 1
    int_digits = m.group(2).replace(",", "")
    frac_digits = m.group(3) or ""
    sig = int(int_digits + frac_digits) if (int_digits + frac_digits) else 0
    return Fraction(sign * sig, 10 ** len(frac_digits))


def _parse_num_body(body: str) -> Fraction | None:
    """a/b fraction, decimal, or integer body -> exact Fraction."""
    body = body.strip()
    m = re.fullmatch(r"([-+]?\d+(?:\.\d+)?)\s*/\s*(\d+)", body)
    if m:
        den = Fraction(m.group(2))
        if den == 0:
            return None
        return Fraction(m.group(1)) / den
    return _parse_decimal_body(body)


def _decimal_answer(value: Fraction) -> CanonicalAnswer:
    # Exact decimals only (denominator a product of 2s and 5s by construction).
    sig = value.numerator
    exp = 0
    den = value.denominator
    while den % 10 == 0:
        den //= 10
        exp -= 1
    while den % 2 == 0:
        den //= 2
        sig *= 5
        exp -= 1
    while den % 5 == 0:
        den //= 5
        sig *= 2
        exp -= 1
    assert den == 1
    return decimal(sig, exp)


def _from_ratio_match(a_body: str, b_body: str) -> CanonicalAnswer | None:
    a = _parse_decimal_body(a_body)
    b = _parse_decimal_body(b_body)
    if a is None or b is None or a < 0 or b < 0 or (a == 0 and b == 0):
        return None
    return ratio(a.numerator * b.denominator, b.numerator * a.denominator)


def _from_pi_match(coeff_body: str | None, post_den: str | None) -> CanonicalAnswer | None:
    coeff = Fraction(1)
    if coeff_body is not None:
        parsed = _parse_num_body(coeff_body)
        if parsed is None:
            return None
        coeff = parsed
    if post_den is not None:
        den = int(post_den)
        if den == 0:
            return None
        coeff /= den
    return pi_term(coeff)


def _from_token(kind: str, token: str) -> CanonicalAnswer | None:
    if kind == "ratio":
        m = _RATIO_RX.fullmatch(token.strip())
        return _from_ratio_match(m.group(1), m.group(2)) if m else None
    if kind == "pi":
        m = _PI_RX.fullmatch(token.strip())
        return _from_pi_match(m.group(1), m.group(2)) if m else None
    if kind == "degree":
        m = _DEGREE_RX.fullmatch(token.strip())
        if not m:
            return None
        value = _parse_num_body(m.group(1))
        return degree(value) if value is not None else None
    if kind == "fraction":
        m = _FRACTION_RX.fullmatch(token.strip())
        if not m or int(m.group(2)) == 0:
            return None
        return rational(int(m.group(1)), int(m.group(2)))
    if kind == "number":
        value = _parse_decimal_body(token)
        return _decimal_answer(value) if value is not None else None
    return None


def parse_answer(raw: str) -> CanonicalAnswer:
    """Normalize free-form answer text into a canonical value.

    Recognition order: option letter, ratio a:b, pi terms, degrees,
    fractions, plain numbers; anything else falls back to normalized text.
    When the whole string is not a single value, the last numeric token wins
    (final answers conventionally end the sentence); strings that parse as
    nothing never silently coerce to numbers.
    """
    s = (raw or "").strip(_EDGE_TRIM)
    prev = None
    while prev != s:
        prev = s
        s = _LEADING_PHRASE_RX.sub("", s).strip(_EDGE_TRIM)
    if not s:
        return text_answer("")

    m = _OPTION_RX.fullmatch(s)
    if m:
        return option(m.group(1))
    m = _RATIO_RX.fullmatch(s)
    if m:
        parsed = _from_ratio_match(m.group(1), m.group(2))
        if parsed is not None:
            return parsed
    m = _PI_RX.fullmatch(s)
    if m:
        parsed = _from_pi_match(m.group(1), m.group(2))
        if parsed is not None:
            return parsed
    m = _DEGREE_RX.fullmatch(s)
    if m:
        value = _parse_num_body(m.group(1))
        if value is not None:
            return degree(value)
    m = _FRACTION_RX.fullmatch(s)
    if m and int(m.group(2)) != 0:
        return rational(int(m.group(1)), int(m.group(2)))
    value = _parse_decimal_body(s)
    if value is not None:
        return _decimal_answer(value)

    last = None
    for tok in _TOKEN_RX.finditer(s):
        last = tok
    if last is not None:
        parsed = _from_token(last.lastgroup, last.group(last.lastgroup))
        if parsed is not None:
            return parsed

    return text_answer(s)


# --- equivalence -----------------------------------------------------------


def _as_tol(rel_tol: float | Fraction) -> Fraction:
    tol = rel_tol if isinstance(rel_tol, Fraction) else Fraction(rel_tol)
    if tol < 0:
        raise ValueError(f"rel_tol must be nonnegative: {rel_tol}")
    return tol


def _close(a: Fraction, b: Fraction, rel: Fraction) -> bool:
    # Integer cross-multiplication: exact and much faster than Fraction
    # arithmetic at vote-bucketing volume.
    an, ad = a.numerator, a.denominator
    bn, bd = b.numerator, b.denominator
    diff = abs(an * bd - bn * ad)
    if rel == 0:
        return diff == 0
    if an == 0 or bn == 0:
        return diff * ZERO_ABS_TOL.denominator <= ZERO_ABS_TOL.numerator * ad * bd
    bound = max(abs(an) * bd, abs(bn) * ad)
    return diff * rel.denominator <= rel.numerator * bound


def equivalent(
    a: CanonicalAnswer, b: CanonicalAnswer, rel_tol: float | Fraction = DEFAULT_REL_TOL
) -> bool:
    """Decide whether two canonical answers denote the same value.

    Numeric kinds compare under relative tolerance (absolute 1e-9 band at
    zero); a unitless number equals a degree of the same magnitude; pi terms
    compare against plain numbers through pi's numeric value; ratios compare
    by reduced pair; options and text compare after normalization.
    Symmetric and reflexive by construction.
    """
    rel = _as_tol(rel_tol)
    ka, kb = a.kind, b.kind

    if ka == kb:
        if ka in (AnswerKind.OPTION, AnswerKind.TEXT, AnswerKind.RATIO):
            return a.value == b.value
        if ka in (AnswerKind.DEGREE, AnswerKind.PI_TERM):
            return _close(a.value, b.value, rel)
        return _close(plain_value(a), plain_value(b), rel)

    pa, pb = plain_value(a), plain_value(b)
    if pa is not None and pb is not None:
        return _close(pa, pb, rel)
    if pa is not None or pb is not None:
        plain, other = (pa, b) if pa is not None else (pb, a)
        if other.kind is AnswerKind.DEGREE:
            return _close(other.value, plain, rel)
        if other.kind is AnswerKind.PI_TERM:
            return _close(other.value * PI, plain, rel)
        return False
    if {ka, kb} == {AnswerKind.OPTION, AnswerKind.TEXT}:
        opt, txt = (a, b) if ka is AnswerKind.OPTION else (b, a)
        return opt.value.casefold() == txt.value
    return False


def canonical_key(ans: CanonicalAnswer) -> str:
    """Deterministic bucketing key; equal keys imply equivalent(a, b, 0).

    Decimals are keyed by their exact rational value, so 0.5 and 1/2 share
    a bucket while 40 and 40° do not.
    """
    if ans.kind in (AnswerKind.RATIONAL, AnswerKind.DECIMAL):
        return f"rat:{plain_value(ans)}"
    if ans.kind is AnswerKind.DEGREE:
        return f"deg:{ans.value}"
    if ans.kind is AnswerKind.RATIO:
        return f"ratio:{ans.value[0]}/{ans.value[1]}"
    if ans.kind is AnswerKind.PI_TERM:
        return f"pi:{ans.value}"
    if ans.kind is AnswerKind.OPTION:
        return f"opt:{ans.value}"
    return f"text:{ans.value}"


def render(ans: CanonicalAnswer) -> str:
    """Canonical textual form; parse_answer(render(a)) == a on exact kinds."""
    if ans.kind is AnswerKind.RATIONAL:
        return f"{ans.value.numerator}/{ans.value.denominator}"
    if ans.kind is AnswerKind.DECIMAL:
        sig, exp = ans.value
        if exp >= 0:
            return str(sig * 10**exp)
        digits = str(abs(sig)).rjust(-exp + 1, "0")
        body = f"{digits[:exp]}.{digits[exp:]}"
        return f"-{body}" if sig < 0 else body
    if ans.kind is AnswerKind.DEGREE:
        return f"{_render_fraction(ans.value)}°"
    if ans.kind is AnswerKind.RATIO:
        return f"{ans.value[0]}:{ans.value[1]}"
    if ans.kind is AnswerKind.PI_TERM:
        return f"{_render_fraction(ans.value)}π"
    return str(ans.value)


def _render_fraction(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def answer_to_fields(ans: CanonicalAnswer) -> tuple[str, str]:
    """(kind, value) string pair for serialization."""
    return ans.kind.value, render(ans)


def answer_from_fields(kind: str, value: str) -> CanonicalAnswer:
    """Rebuild an answer from its serialized (kind, value) pair."""
    k = AnswerKind(kind)
    if k is AnswerKind.TEXT:
        return text_answer(value)
    if k is AnswerKind.OPTION:
        return option(value)
    parsed = parse_answer(value)
    if parsed.kind is not k:
        raise ValueError(f"serialized value {value!r} does not parse as kind {kind!r}")
    return parsed
