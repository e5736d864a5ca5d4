"""
Validation report types for LogiGuide.

Model and circuit validation both produce lists of issues; this module holds
the shared record types and the console printer.
"""

import logging
from typing import Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)


class ValidationIssue:
    """A single violated condition."""

    def __init__(self, subject: str, condition: str, message: str,
                 pair: Optional[Tuple[str, str]] = None, hint: Optional[str] = None):
        self.subject = subject
        self.condition = condition
        self.message = message
        self.pair = pair
        self.hint = hint

    def __str__(self):
        result = f"  - [{self.condition}] {self.message}"
        if self.pair:
            result += f" ({self.pair[0]}, {self.pair[1]})"
        if self.hint:
            result += f"\n    Hint: {self.hint}"
        return result

    def __repr__(self):
        return f"ValidationIssue({self.condition!r}, {self.message!r}, pair={self.pair!r})"


class ValidationReport:
    """Outcome of validating one object; valid iff no issues were found."""

    def __init__(self, subject: str, issues: Optional[List[ValidationIssue]] = None,
                 checked: int = 0):
        self.subject = subject
        self.issues = list(issues or [])
        self.checked = checked

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, condition: str, message: str, pair=None, hint=None):
        self.issues.append(ValidationIssue(self.subject, condition, message, pair, hint))

    def conditions(self) -> List[str]:
        return [issue.condition for issue in self.issues]

    def __bool__(self):
        return self.ok


def print_validation_results(results: Dict[str, ValidationReport]) -> int:
    """Print validation reports in a formatted way.

    Returns:
        Total issue count
    """
    total = 0

    print("\nValidating...\n")

    for name, report in results.items():
        print(f"[{name}] {report.checked} checks")
        if report.issues:
            print("  Violations:")
            for issue in report.issues:
                print(f"    {issue}")
            total += len(report.issues)
        else:
            print("  Valid")
        print()

    if total > 0:
        print(f"Summary: {total} violation(s) found")
    else:
        print("Summary: all checks passed")

    return total
