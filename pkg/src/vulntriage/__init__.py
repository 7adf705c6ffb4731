"""vulntriage: CVE triage pipeline.

Enriches CVE records with buggy code at file, method, and hunk granularity,
drives a language-model provider to infer CWE identifiers and CVSS
severities, and evaluates the inferences against NVD ground truth.
"""

__version__ = "0.1.0"
