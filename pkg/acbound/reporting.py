"""
Verification Reports
====================

Collects named inequality checks (lhs against rhs) and renders them as JSON
or as a plain-text report.
"""

import json
from dataclasses import asdict, dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional


class CheckStatus(Enum):
    """Outcome of a single check"""
    PASS = "pass"
    FAIL = "fail"
    INFO = "info"


@dataclass
class CheckResult:
    """One verified inequality or reported quantity"""
    name: str
    lhs: float
    rhs: float
    status: CheckStatus
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status is not CheckStatus.FAIL

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["status"] = self.status.value
        data["pass"] = self.passed
        return data


class VerificationReport:
    """Ordered collection of checks with a global verdict"""

    def __init__(self, subject: str, metadata: Optional[Dict[str, Any]] = None):
        self.subject = subject
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self.checks: List[CheckResult] = []

    def add_check(
        self,
        name: str,
        lhs: float,
        rhs: float,
        passed: Optional[bool],
        detail: str = "",
    ) -> CheckResult:
        """
        Record a check.

        Args:
            name: Check identifier
            lhs: Left-hand side value
            rhs: Right-hand side value
            passed: Outcome, or None for an informational entry

        Returns:
            The stored CheckResult
        """
        if passed is None:
            status = CheckStatus.INFO
        else:
            status = CheckStatus.PASS if passed else CheckStatus.FAIL
        result = CheckResult(name=name, lhs=float(lhs), rhs=float(rhs), status=status, detail=detail)
        self.checks.append(result)
        return result

    def get(self, name: str) -> CheckResult:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    @property
    def verdict(self) -> bool:
        return all(check.passed for check in self.checks)

    def get_statistics(self) -> Dict[str, Any]:
        breakdown = {status.value: 0 for status in CheckStatus}
        for check in self.checks:
            breakdown[check.status.value] += 1
        return {
            "total_checks": len(self.checks),
            "status_breakdown": breakdown,
            "verdict": self.verdict,
        }

    def get_failure_analysis(self) -> Dict[str, Any]:
        failures = [c for c in self.checks if c.status is CheckStatus.FAIL]
        return {
            "total_failures": len(failures),
            "failed_checks": [c.name for c in failures],
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subject": self.subject,
            **self.metadata,
            "verdict": self.verdict,
            "checks": [c.to_dict() for c in self.checks],
            "statistics": self.get_statistics(),
            "failure_analysis": self.get_failure_analysis(),
        }

    def export_results(self, filepath: str | Path) -> None:
        """Export the report as JSON"""
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, default=str)
            f.write("\n")

    def generate_report(self) -> str:
        """Generate a human-readable report"""
        stats = self.get_statistics()

        report = []
        report.append("=" * 60)
        report.append(f"VERIFICATION REPORT: {self.subject}")
        report.append("=" * 60)
        report.append(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
        report.append(f"Total Checks: {stats['total_checks']}")
        report.append("")

        report.append("CHECKS")
        report.append("-" * 60)
        for check in self.checks:
            report.append(
                f"[{check.status.value.upper():4}] {check.name}: "
                f"lhs={check.lhs:.6g} rhs={check.rhs:.6g} {check.detail}".rstrip()
            )
        report.append("")

        failures = self.get_failure_analysis()
        if failures["total_failures"]:
            report.append("FAILURES")
            report.append("-" * 60)
            for name in failures["failed_checks"]:
                report.append(f"  - {name}")
            report.append("")

        report.append(f"VERDICT: {'PASS' if self.verdict else 'FAIL'}")
        report.append("=" * 60)
        return "\n".join(report)
