"""Language detection and method extraction from pre-change sources.

Finds the function/method definitions enclosing buggy lines without an
external grammar runtime. Each language gets a scanner that masks comments
and string literals (preserving offsets and newlines), then locates
definition headers and matches the delimiters closing their bodies: braces
for the C-family languages, ``end`` keywords for Ruby, and the stdlib AST
for Python. The extension table and per-language definition-kind table are
plain data and overridable from the main config file.
"""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .model import BuggyFile, EnrichedRecord, MethodSnippet, slice_lines

logger = logging.getLogger(__name__)


class ParseFailure(ValueError):
    """Raised when a source file cannot be reduced to definition spans."""


class LanguageId(Enum):
    C = "c"
    CPP = "cpp"
    GO = "go"
    JAVA = "java"
    JAVASCRIPT = "javascript"
    TYPESCRIPT = "typescript"
    RUBY = "ruby"
    PYTHON = "python"
    PHP = "php"


DEFAULT_EXTENSIONS: dict[str, LanguageId] = {
    ".c": LanguageId.C,
    ".h": LanguageId.C,
    ".cc": LanguageId.CPP,
    ".cpp": LanguageId.CPP,
    ".hpp": LanguageId.CPP,
    ".go": LanguageId.GO,
    ".java": LanguageId.JAVA,
    ".js": LanguageId.JAVASCRIPT,
    ".jsx": LanguageId.JAVASCRIPT,
    ".ts": LanguageId.TYPESCRIPT,
    ".tsx": LanguageId.TYPESCRIPT,
    ".rb": LanguageId.RUBY,
    ".py": LanguageId.PYTHON,
    ".php": LanguageId.PHP,
}

#: Definition node kinds emitted per language; configurable subsets of these
#: control which definitions count as "methods" for extraction.
DEFAULT_NODE_KINDS: dict[LanguageId, frozenset[str]] = {
    LanguageId.C: frozenset({"function"}),
    LanguageId.CPP: frozenset({"function"}),
    LanguageId.GO: frozenset({"function", "method", "func_literal"}),
    LanguageId.JAVA: frozenset({"method"}),
    LanguageId.JAVASCRIPT: frozenset({"function", "method", "arrow"}),
    LanguageId.TYPESCRIPT: frozenset({"function", "method", "arrow"}),
    LanguageId.RUBY: frozenset({"method", "singleton_method"}),
    LanguageId.PYTHON: frozenset({"function", "async_function"}),
    LanguageId.PHP: frozenset({"function", "closure"}),
}


def detect_language(
    filename: str, extensions: Mapping[str, LanguageId] | None = None
) -> LanguageId | None:
    """Map a filename to a supported language by extension, else None."""
    table = extensions if extensions is not None else DEFAULT_EXTENSIONS
    name = filename.rsplit("/", 1)[-1]
    dot = name.rfind(".")
    if dot <= 0:
        return None
    return table.get(name[dot:].lower())


@dataclass(frozen=True)
class DefSpan:
    """A definition node's kind, name, and inclusive 1-based line span."""

    kind: str
    name: str
    start_line: int
    end_line: int


# ---------------------------------------------------------------------------
# Source masking


@dataclass(frozen=True)
class ScanProfile:
    line_comments: tuple[str, ...] = ()
    block_comments: tuple[tuple[str, str], ...] = ()
    strings: tuple[str, ...] = ()  # backslash escapes honored
    raw_strings: tuple[str, ...] = ()  # no escapes
    multiline_strings: bool = False
    mask_hash_lines: bool = False  # C preprocessor directives
    anchored_blocks: bool = False  # Ruby =begin/=end at line start
    post_mask: tuple[str, ...] = ()  # regexes blanked after the main pass


_PROFILES: dict[LanguageId, ScanProfile] = {
    LanguageId.C: ScanProfile(
        line_comments=("//",),
        block_comments=(("/*", "*/"),),
        strings=('"', "'"),
        mask_hash_lines=True,
    ),
    LanguageId.CPP: ScanProfile(
        line_comments=("//",),
        block_comments=(("/*", "*/"),),
        strings=('"', "'"),
        mask_hash_lines=True,
        post_mask=(r"(?m)^[ \t]*(?:public|private|protected)[ \t]*:",),
    ),
    LanguageId.GO: ScanProfile(
        line_comments=("//",),
        block_comments=(("/*", "*/"),),
        strings=('"', "'"),
        raw_strings=("`",),
    ),
    LanguageId.JAVA: ScanProfile(
        line_comments=("//",),
        block_comments=(("/*", "*/"),),
        strings=('"', "'"),
    ),
    LanguageId.JAVASCRIPT: ScanProfile(
        line_comments=("//",),
        block_comments=(("/*", "*/"),),
        strings=('"', "'"),
        raw_strings=(),
        multiline_strings=False,
    ),
    LanguageId.TYPESCRIPT: ScanProfile(
        line_comments=("//",),
        block_comments=(("/*", "*/"),),
        strings=('"', "'"),
    ),
    LanguageId.RUBY: ScanProfile(
        line_comments=("#",),
        block_comments=(("=begin", "=end"),),
        strings=('"', "'"),
        multiline_strings=True,
        anchored_blocks=True,
    ),
    LanguageId.PHP: ScanProfile(
        line_comments=("//", "#"),
        block_comments=(("/*", "*/"),),
        strings=('"', "'"),
        multiline_strings=True,
        post_mask=(r"<\?(?:php|=)?", r"\?>"),
    ),
}

_TEMPLATE_LITERAL_LANGS = {LanguageId.JAVASCRIPT, LanguageId.TYPESCRIPT}


def mask_source(text: str, language: LanguageId) -> str:
    """Blank out comments and string literals, preserving length and newlines.

    Keeps every code character at its original offset so line numbers and
    brace positions computed on the masked text hold for the original.
    """
    profile = _PROFILES[language]
    template = "`" if language in _TEMPLATE_LITERAL_LANGS else None
    out = list(text)
    n = len(text)
    i = 0
    at_line_start = True

    def blank(start: int, stop: int) -> None:
        for k in range(start, min(stop, n)):
            if out[k] != "\n":
                out[k] = " "

    while i < n:
        ch = text[i]
        if ch == "\n":
            at_line_start = True
            i += 1
            continue
        if profile.mask_hash_lines and at_line_start and text[i:].lstrip(" \t")[:1] == "#":
            stop = i
            while stop < n:
                nl = text.find("\n", stop)
                if nl == -1:
                    stop = n
                    break
                if text[nl - 1] == "\\":  # continuation
                    stop = nl + 1
                    continue
                stop = nl
                break
            blank(i, stop)
            i = stop
            continue
        at_line_start = False

        matched = False
        for opener, closer in profile.block_comments:
            if not text.startswith(opener, i):
                continue
            if profile.anchored_blocks and not (i == 0 or text[i - 1] == "\n"):
                continue
            end = text.find(closer, i + len(opener))
            if end == -1:
                stop = n
            else:
                stop = end + len(closer)
                if profile.anchored_blocks:
                    nl = text.find("\n", stop)
                    stop = n if nl == -1 else nl
            blank(i, stop)
            i = stop
            matched = True
            break
        if matched:
            continue

        for lc in profile.line_comments:
            if text.startswith(lc, i):
                nl = text.find("\n", i)
                stop = n if nl == -1 else nl
                blank(i, stop)
                i = stop
                matched = True
                break
        if matched:
            continue

        if template is not None and ch == template:
            stop = _string_end(text, i, template, escapes=True, multiline=True)
            blank(i, stop)
            i = stop
            continue
        if ch in profile.raw_strings:
            stop = _string_end(text, i, ch, escapes=False, multiline=True)
            blank(i, stop)
            i = stop
            continue
        if ch in profile.strings:
            stop = _string_end(
                text, i, ch, escapes=True, multiline=profile.multiline_strings
            )
            blank(i, stop)
            i = stop
            continue
        i += 1

    masked = "".join(out)
    for pattern in profile.post_mask:
        masked = re.sub(
            pattern, lambda m: " " * (m.end() - m.start()), masked
        )
    return masked


def _string_end(text: str, start: int, quote: str, escapes: bool, multiline: bool) -> int:
    i = start + 1
    n = len(text)
    while i < n:
        ch = text[i]
        if escapes and ch == "\\":
            i += 2
            continue
        if ch == quote:
            return i + 1
        if ch == "\n" and not multiline:
            return i  # unterminated on this line; leave the newline
        i += 1
    return n


# ---------------------------------------------------------------------------
# Brace-language parsing


@dataclass(frozen=True)
class _BracePair:
    open_pos: int
    close_pos: int
    parent: int  # index into the pair list, -1 at top level


def _brace_pairs(masked: str) -> list[_BracePair]:
    opens: list[int] = []  # open positions, in open order
    parents: list[int] = []  # enclosing pair index per open, -1 at top level
    closes: dict[int, int] = {}
    stack: list[int] = []
    for pos, ch in enumerate(masked):
        if ch == "{":
            parents.append(stack[-1] if stack else -1)
            stack.append(len(opens))
            opens.append(pos)
        elif ch == "}":
            if not stack:
                raise ParseFailure(f"unmatched '}}' at offset {pos}")
            closes[stack.pop()] = pos
    if stack:
        raise ParseFailure(f"unclosed '{{' at offset {opens[stack[-1]]}")
    return [_BracePair(opens[i], closes[i], parents[i]) for i in range(len(opens))]


_HEADER_BOUNDARY = {";", "{", "}"}
_CONTINUATION_TAIL = set(",([{.+-*/%<>=&|^!:")


def _header_for(
    masked: str, open_pos: int, newline_boundaries: bool = False
) -> tuple[str, int]:
    """The statement text preceding a '{' and the offset where it starts.

    Scans backward to the nearest ``;``/``{``/``}`` outside parentheses and
    brackets, so multi-line headers and ``for(;;)`` headers stay intact. An
    unmatched opening parenthesis is itself a boundary: a brace inside an
    argument list (callbacks, closures) starts its header there. With
    ``newline_boundaries`` (Go), a newline ends the statement unless the
    previous line ends in a continuation character, mirroring implicit
    semicolon insertion.
    """
    depth = 0
    i = open_pos - 1
    while i >= 0:
        ch = masked[i]
        if ch in ")]":
            depth += 1
        elif ch in "([":
            if depth == 0:
                break
            depth -= 1
        elif depth == 0 and ch in _HEADER_BOUNDARY:
            break
        elif depth == 0 and ch == "\n" and newline_boundaries:
            j = i - 1
            while j >= 0 and masked[j] in " \t":
                j -= 1
            if j < 0 or masked[j] == "\n" or masked[j] not in _CONTINUATION_TAIL:
                break
        i -= 1
    start = i + 1
    return masked[start:open_pos].strip(), start


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


_CONTROL_WORDS = {
    "if",
    "for",
    "while",
    "switch",
    "catch",
    "do",
    "else",
    "return",
    "sizeof",
    "try",
    "synchronized",
    "select",
    "until",
    "elsif",
    "foreach",
    "elseif",
    "with",
    "match",
}

_IDENT_PAREN = re.compile(r"([A-Za-z_~$][\w$]*)\s*\(")
_CPP_OPERATOR = re.compile(r"\boperator\s*([^\s(]+)\s*\(")


def _classify_c(header: str) -> tuple[str, str] | None:
    if not header:
        return None
    op = _CPP_OPERATOR.search(header)
    if op is not None:
        return ("function", f"operator{op.group(1)}")
    match = _IDENT_PAREN.search(header)
    if match is None:
        return None
    name = match.group(1)
    if name.lstrip("~") in _CONTROL_WORDS:
        return None
    prev = header[: match.start(1)].rstrip()
    if prev.endswith(("~",)):
        name = "~" + name
    return ("function", name)


def _classify_go(header: str) -> tuple[str, str] | None:
    match = re.search(r"\bfunc\b", header)
    if match is None:
        return None
    rest = header[match.end() :].lstrip()
    if rest.startswith("("):
        # Either a method receiver or a literal's parameter list: a method
        # has "Name(" right after the first balanced group.
        depth = 0
        for i, ch in enumerate(rest):
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
                if depth == 0:
                    after = rest[i + 1 :].lstrip()
                    name_match = re.match(r"([A-Za-z_]\w*)\s*\(", after)
                    if name_match and name_match.group(1) != "func":
                        return ("method", name_match.group(1))
                    return ("func_literal", "")
        return None
    name_match = re.match(r"([A-Za-z_]\w*)", rest)
    if name_match:
        return ("function", name_match.group(1))
    return ("func_literal", "")


_JAVA_CONTAINER = re.compile(r"\b(class|interface|enum|record)\b|\bnew\s+[\w.<>\[\]]+\s*\([^()]*\)\s*$")
_JAVA_METHOD = re.compile(
    r"(?:^|\s)([A-Za-z_$][\w$]*)\s*\([^()]*(?:\([^()]*\)[^()]*)*\)\s*(?:throws\s+[\w.,\s]+)?$"
)


def _classify_java(header: str, parent_kind: str | None) -> tuple[str, str] | None:
    if _JAVA_CONTAINER.search(header):
        return ("container", _container_name(header))
    if parent_kind != "container":
        return None
    stripped = re.sub(r"\bthrows\s+[\w.,\s]+$", "", header).rstrip()
    if not stripped.endswith(")"):
        return None
    match = _JAVA_METHOD.search(stripped)
    if match is None:
        return None
    name = match.group(1)
    if name in _CONTROL_WORDS or name in {"new", "super", "this"}:
        return None
    return ("method", name)


def _container_name(header: str) -> str:
    match = re.search(r"\b(?:class|interface|enum|record)\s+([A-Za-z_$][\w$]*)", header)
    return match.group(1) if match else ""


_JS_FUNCTION = re.compile(r"\bfunction\b\s*\*?\s*([A-Za-z_$][\w$]*)?")
_JS_ARROW_NAME = re.compile(
    r"(?:const|let|var)?\s*([A-Za-z_$][\w$]*)\s*[:=]\s*(?:async\s+)?[(<A-Za-z_$]"
)
_JS_METHOD = re.compile(
    r"^(?:(?:public|private|protected|static|readonly|abstract|override|async|get|set)\s+)*"
    r"\*?\s*([A-Za-z_$#][\w$]*)\s*(?:<[^{}]*>)?\s*\([^{}]*\)\s*(?::\s*[^{}]+)?$"
)
_JS_CONTAINER = re.compile(r"\b(class|interface)\b")


def _classify_js(header: str, parent_kind: str | None) -> tuple[str, str] | None:
    if header.rstrip().endswith("=>"):
        name_match = _JS_ARROW_NAME.match(header)
        return ("arrow", name_match.group(1) if name_match else "")
    if _JS_CONTAINER.search(header):
        return ("container", _js_container_name(header))
    fn = _JS_FUNCTION.search(header)
    if fn is not None:
        return ("function", fn.group(1) or "")
    if parent_kind == "container":
        method = _JS_METHOD.match(header)
        if method is not None and method.group(1) not in _CONTROL_WORDS:
            return ("method", method.group(1))
    return None


def _js_container_name(header: str) -> str:
    match = re.search(r"\b(?:class|interface)\s+([A-Za-z_$][\w$]*)", header)
    return match.group(1) if match else ""


_PHP_FUNCTION = re.compile(r"\bfunction\b\s*&?\s*([A-Za-z_]\w*)?")


def _classify_php(header: str) -> tuple[str, str] | None:
    match = _PHP_FUNCTION.search(header)
    if match is None:
        return None
    name = match.group(1) or ""
    return ("function" if name else "closure", name)


def _parse_brace_language(content: str, language: LanguageId) -> list[DefSpan]:
    masked = mask_source(content, language)
    pairs = _brace_pairs(masked)
    kinds: list[str | None] = [None] * len(pairs)
    spans: list[DefSpan] = []
    for idx, pair in enumerate(pairs):
        header, header_start = _header_for(
            masked, pair.open_pos, newline_boundaries=language is LanguageId.GO
        )
        parent_kind = kinds[pair.parent] if pair.parent != -1 else None
        if language in (LanguageId.C, LanguageId.CPP):
            hit = _classify_c(header)
        elif language is LanguageId.GO:
            hit = _classify_go(header)
        elif language is LanguageId.JAVA:
            hit = _classify_java(header, parent_kind)
        elif language in (LanguageId.JAVASCRIPT, LanguageId.TYPESCRIPT):
            hit = _classify_js(header, parent_kind)
        elif language is LanguageId.PHP:
            hit = _classify_php(header)
        else:  # pragma: no cover - routed elsewhere
            raise AssertionError(language)
        if hit is None:
            continue
        kind, name = hit
        kinds[idx] = kind
        if kind == "container":
            continue
        segment = masked[header_start : pair.open_pos]
        if segment.strip():
            start_pos = header_start + (len(segment) - len(segment.lstrip()))
        else:
            start_pos = pair.open_pos
        start_line = _line_of(masked, start_pos)
        end_line = _line_of(masked, pair.close_pos)
        spans.append(DefSpan(kind, name, start_line, end_line))
    return spans


# ---------------------------------------------------------------------------
# Ruby


_RUBY_TOKEN = re.compile(r"[A-Za-z_]\w*[?!]?|\S")
_RUBY_OPENERS = {"class", "module", "begin", "case"}
_RUBY_CONDITIONALS = {"if", "unless", "while", "until"}


def _parse_ruby(content: str) -> list[DefSpan]:
    masked = mask_source(content, LanguageId.RUBY)
    stack: list[tuple[str, str, int, str]] = []  # (keyword, name, line, kind)
    spans: list[DefSpan] = []
    for line_no, line in enumerate(masked.splitlines(), start=1):
        tokens = _RUBY_TOKEN.findall(line)
        loop_opened = False
        k = 0
        while k < len(tokens):
            tok = tokens[k]
            if tok == "def":
                if k > 0 and tokens[k - 1] in {".", ":", "@"}:
                    k += 1
                    continue
                name = ""
                kind = "method"
                if k + 1 < len(tokens):
                    name = tokens[k + 1]
                    if name == "self" and k + 3 < len(tokens) and tokens[k + 2] == ".":
                        name = tokens[k + 3]
                        kind = "singleton_method"
                        k += 2
                stack.append(("def", name, line_no, kind))
            elif tok in _RUBY_OPENERS:
                if not (k > 0 and tokens[k - 1] in {".", ":", "@"}):
                    stack.append((tok, "", line_no, ""))
            elif tok in _RUBY_CONDITIONALS:
                # statement-initial or right of an assignment/grouping opener;
                # anything else is a trailing modifier and opens no block
                opener = k == 0 or tokens[k - 1] in {"=", "(", "["}
                if opener:
                    stack.append((tok, "", line_no, ""))
                    if tok in {"while", "until"}:
                        loop_opened = True
            elif tok == "for":
                if k == 0:
                    stack.append(("for", "", line_no, ""))
                    loop_opened = True
            elif tok == "do":
                if not loop_opened and not (k > 0 and tokens[k - 1] in {".", ":"}):
                    stack.append(("do", "", line_no, ""))
            elif tok == "end":
                if k > 0 and tokens[k - 1] in {".", ":", "@"}:
                    k += 1
                    continue
                if not stack:
                    raise ParseFailure(f"unmatched 'end' at line {line_no}")
                keyword, name, start, kind = stack.pop()
                if keyword == "def":
                    spans.append(DefSpan(kind, name, start, line_no))
            k += 1
    if stack:
        raise ParseFailure(f"unclosed '{stack[-1][0]}' from line {stack[-1][2]}")
    return spans


# ---------------------------------------------------------------------------
# Python


def _parse_python(content: str) -> list[DefSpan]:
    try:
        tree = ast.parse(content)
    except (SyntaxError, ValueError) as exc:
        raise ParseFailure(f"python parse failed: {exc}") from exc
    spans: list[DefSpan] = []
    for node in ast.walk(tree):
        if isinstance(node, ast.FunctionDef):
            spans.append(DefSpan("function", node.name, node.lineno, node.end_lineno or node.lineno))
        elif isinstance(node, ast.AsyncFunctionDef):
            spans.append(
                DefSpan("async_function", node.name, node.lineno, node.end_lineno or node.lineno)
            )
    return spans


# ---------------------------------------------------------------------------
# Public API


def parse_definitions(
    content: str,
    language: LanguageId,
    node_kinds: Mapping[LanguageId, frozenset[str]] | None = None,
) -> list[DefSpan]:
    """All enabled definition spans of a source file, sorted by position."""
    if language is LanguageId.PYTHON:
        spans = _parse_python(content)
    elif language is LanguageId.RUBY:
        spans = _parse_ruby(content)
    else:
        spans = _parse_brace_language(content, language)
    table = node_kinds if node_kinds is not None else DEFAULT_NODE_KINDS
    enabled = table.get(language, DEFAULT_NODE_KINDS[language])
    spans = [s for s in spans if s.kind in enabled]
    spans.sort(key=lambda s: (s.start_line, -s.end_line))
    return spans


def innermost_span_for_line(spans: Iterable[DefSpan], line: int) -> DefSpan | None:
    """The smallest definition span containing ``line``; ties pick the later start."""
    best: DefSpan | None = None
    for span in spans:
        if not span.start_line <= line <= span.end_line:
            continue
        if best is None:
            best = span
            continue
        size = span.end_line - span.start_line
        best_size = best.end_line - best.start_line
        if size < best_size or (size == best_size and span.start_line > best.start_line):
            best = span
    return best


def extract_methods(
    file: BuggyFile,
    language: LanguageId,
    node_kinds: Mapping[LanguageId, frozenset[str]] | None = None,
) -> list[MethodSnippet]:
    """The innermost definition enclosing each buggy line, deduplicated.

    Uses a line sweep over the nesting structure so repeated queries against
    large files stay linear. Buggy lines outside any definition (top-level
    code) yield no snippet and are logged.
    """
    spans = parse_definitions(file.content, language, node_kinds)
    chosen: dict[tuple[int, int], DefSpan] = {}
    unmatched: list[int] = []

    # Sweep: spans sorted by (start, -end); a stack of open spans makes the
    # top of stack the innermost candidate at each queried line.
    ordered = sorted(spans, key=lambda s: (s.start_line, -(s.end_line - s.start_line), -s.end_line))
    stack: list[DefSpan] = []
    span_iter = iter(ordered)
    pending = next(span_iter, None)
    for line, _text in file.buggy_lines:
        while pending is not None and pending.start_line <= line:
            stack.append(pending)
            pending = next(span_iter, None)
        while stack and stack[-1].end_line < line:
            stack.pop()
        open_spans = [s for s in stack if s.start_line <= line <= s.end_line]
        if not open_spans:
            unmatched.append(line)
            continue
        innermost = min(
            open_spans,
            key=lambda s: (s.end_line - s.start_line, -s.start_line),
        )
        chosen.setdefault((innermost.start_line, innermost.end_line), innermost)

    if unmatched:
        logger.debug(
            "%s: %d buggy line(s) outside any definition: %s",
            file.filename,
            len(unmatched),
            unmatched,
        )
    snippets = [
        MethodSnippet(
            filename=file.filename,
            language=language.value,
            method_name=span.name,
            start_line=span.start_line,
            end_line=span.end_line,
            body=slice_lines(file.content, span.start_line, span.end_line),
        )
        for span in chosen.values()
    ]
    snippets.sort(key=lambda s: (s.start_line, s.end_line))
    return snippets


def methods_for_record(
    record: EnrichedRecord,
    extensions: Mapping[str, LanguageId] | None = None,
    node_kinds: Mapping[LanguageId, frozenset[str]] | None = None,
) -> tuple[EnrichedRecord, list[str]]:
    """Fill a record's ``methods`` from its files; returns (record, failures)."""
    methods: list[MethodSnippet] = []
    failures: list[str] = []
    for file in record.files:
        if not file.buggy_lines:
            continue
        language = detect_language(file.filename, extensions)
        if language is None:
            continue
        try:
            methods.extend(extract_methods(file, language, node_kinds))
        except ParseFailure as exc:
            failures.append(f"{file.filename}: {exc}")
            logger.warning("%s: method extraction failed: %s", record.cve, exc)
    return record.with_methods(methods), failures
