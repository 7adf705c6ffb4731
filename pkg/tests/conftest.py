from __future__ import annotations

import sys
from datetime import date
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vulntriage.model import (
    BuggyFile,
    CvssVersion,
    EnrichedRecord,
    GroundTruth,
    Hunk,
    MethodSnippet,
    SeverityLabel,
    parse_cwe_set,
)

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"

PHP_CONTENT = """<?php

function check($user, $pass) {
    $query = "SELECT * FROM users WHERE name = '$user'";
    $row = db_query($query);
    if ($row && $row['pass'] === $pass) {
        return true;
    }
    return false;
}
"""


def make_record(
    cve: str = "CVE-2021-41000",
    commit_date: date | None = date(2021, 10, 5),
    description: str = "SQL injection in the login form.",
    filename: str = "src/auth.php",
    content: str = PHP_CONTENT,
    buggy_lines=((4, "    $query = \"SELECT * FROM users WHERE name = '$user'\";"),),
    with_methods: bool = True,
) -> EnrichedRecord:
    file = BuggyFile(filename=filename, content=content, buggy_lines=buggy_lines)
    hunk = Hunk(
        filename=filename,
        header="@@ -1,10 +1,9 @@",
        deleted_lines=buggy_lines,
        added_lines=((4, "    $stmt = db_prepare(...);"),),
    )
    methods = ()
    if with_methods:
        methods = (
            MethodSnippet(
                filename=filename,
                language="php",
                method_name="check",
                start_line=3,
                end_line=10,
                body="\n".join(content.splitlines()[2:10]),
            ),
        )
    return EnrichedRecord(
        cve=cve,
        description=description,
        url="https://github.com/acme/webapp/commit/a1b2c3d4e5f6",
        commit_date=commit_date,
        github_description=None,
        files=(file,),
        hunks=(hunk,),
        methods=methods,
    )


def make_gt(
    cwes=("CWE-89",),
    label: SeverityLabel = SeverityLabel.CRITICAL,
    score: float = 9.8,
    version: CvssVersion = CvssVersion.V3_1,
) -> GroundTruth:
    return GroundTruth(
        cwes=parse_cwe_set(cwes), label=label, score=score, version=version
    )


@pytest.fixture
def record() -> EnrichedRecord:
    return make_record()


@pytest.fixture
def ground_truth() -> GroundTruth:
    return make_gt()


def corpus_files() -> list[tuple[str, Path]]:
    """(language, path) pairs for the whole extraction corpus."""
    out = []
    for language_dir in sorted(CORPUS.iterdir()):
        for path in sorted(language_dir.iterdir()):
            out.append((language_dir.name, path))
    return out
