"""Unified diff parsing.

Splits a unified diff into :class:`~vulntriage.model.Hunk` objects, computing
pre-image line numbers for deleted lines and post-image numbers for added
lines from the ``@@`` header offsets.
"""

from __future__ import annotations

import re

from .model import Hunk


class DiffSyntaxError(ValueError):
    """Raised for diffs whose headers and line counts disagree."""


_HUNK_HEADER = re.compile(
    r"^@@ -(?P<pre_start>\d+)(?:,(?P<pre_count>\d+))? "
    r"\+(?P<post_start>\d+)(?:,(?P<post_count>\d+))? @@"
)
_FILE_SKIP_PREFIXES = (
    "diff --git ",
    "index ",
    "new file mode",
    "deleted file mode",
    "old mode",
    "new mode",
    "similarity index",
    "dissimilarity index",
    "rename from",
    "rename to",
    "copy from",
    "copy to",
    "Binary files ",
    "GIT binary patch",
)


def _strip_git_prefix(path: str) -> str:
    path = path.split("\t")[0].strip()
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def parse_unified_diff(diff_text: str) -> list[Hunk]:
    """Parse unified diff text into one Hunk per ``@@`` section.

    Raises :class:`DiffSyntaxError` when a hunk's body disagrees with the
    line counts announced in its header, or when a hunk appears before any
    ``---``/``+++`` file header.
    """
    hunks: list[Hunk] = []
    lines = diff_text.splitlines()
    pre_name: str | None = None
    post_name: str | None = None

    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("--- "):
            pre_name = _strip_git_prefix(line[4:])
            post_name = None
            i += 1
            continue
        if line.startswith("+++ "):
            post_name = _strip_git_prefix(line[4:])
            i += 1
            continue
        header = _HUNK_HEADER.match(line)
        if header is None:
            if line.startswith("@@"):
                raise DiffSyntaxError(f"malformed hunk header: {line!r}")
            i += 1
            continue

        if pre_name is None and post_name is None:
            raise DiffSyntaxError("hunk found before any file header")
        filename = pre_name if pre_name not in (None, "/dev/null") else post_name
        if filename in (None, "/dev/null"):
            raise DiffSyntaxError(f"hunk has no usable filename near: {line!r}")

        pre_no = int(header.group("pre_start"))
        post_no = int(header.group("post_start"))
        pre_left = int(header.group("pre_count") or "1")
        post_left = int(header.group("post_count") or "1")
        deleted: list[tuple[int, str]] = []
        added: list[tuple[int, str]] = []

        i += 1
        while (pre_left or post_left) and i < len(lines):
            body = lines[i]
            if body.startswith("\\"):  # "\ No newline at end of file"
                i += 1
                continue
            if body.startswith("-"):
                if not pre_left:
                    raise DiffSyntaxError(f"{filename}: more '-' lines than announced")
                deleted.append((pre_no, body[1:]))
                pre_no += 1
                pre_left -= 1
            elif body.startswith("+"):
                if not post_left:
                    raise DiffSyntaxError(f"{filename}: more '+' lines than announced")
                added.append((post_no, body[1:]))
                post_no += 1
                post_left -= 1
            elif body.startswith(" ") or body == "":
                if not (pre_left and post_left):
                    raise DiffSyntaxError(
                        f"{filename}: context line outside announced counts"
                    )
                pre_no += 1
                post_no += 1
                pre_left -= 1
                post_left -= 1
            else:
                break
            i += 1
        if pre_left or post_left:
            raise DiffSyntaxError(
                f"{filename}: hunk body shorter than header announced"
            )
        if i < len(lines) and lines[i].startswith("\\"):
            i += 1
        if not deleted and not added:
            raise DiffSyntaxError(f"{filename}: hunk contains no changes")
        hunks.append(
            Hunk(
                filename=filename,
                header=line,
                deleted_lines=tuple(deleted),
                added_lines=tuple(added),
            )
        )
        if i < len(lines) and _looks_like_stray_body(lines[i]):
            raise DiffSyntaxError(f"{filename}: hunk body longer than header announced")
    return hunks


def _looks_like_stray_body(line: str) -> bool:
    if line.startswith(("+++ ", "--- ")):
        return False
    if line.startswith(_FILE_SKIP_PREFIXES) or line.startswith("@@"):
        return False
    return line.startswith(("+", "-"))


def render_hunk(hunk: Hunk) -> str:
    """A normalized textual form of a hunk: header, then '-' and '+' lines."""
    parts = [hunk.header]
    parts.extend(f"-{text}" for _n, text in hunk.deleted_lines)
    parts.extend(f"+{text}" for _n, text in hunk.added_lines)
    return "\n".join(parts)
