import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    """
    Outcome of one sampled assumption check.

    :param name: short assumption tag, e.g. "mu2_bounds" or "theta3_support"
    :param passed: whether all samples satisfied the assumption
    :param worst_margin: smallest slack over all samples, negative when violated
    :param detail: human readable summary
    :param hard: hard failures abort config loading
    :param offenders: indices of offending samples or nodes (truncated)
    """
    name: str
    passed: bool
    worst_margin: float
    detail: str = ''
    hard: bool = False
    offenders: tuple = ()


@dataclass
class ValidationReport:
    subject: str
    checks: List[CheckResult] = field(default_factory=list)
    # e.g. empirical modulus tables: name -> list of (delta, value)
    tables: Dict[str, list] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def add(self, check: CheckResult):
        self.checks.append(check)
        if check.passed:
            logger.debug(f'{self.subject}: {check.name} passed (margin {check.worst_margin:.3g})')
        else:
            logger.warning(f'{self.subject}: {check.name} FAILED - {check.detail}')
        return check

    def get_check(self, name) -> Optional[CheckResult]:
        for check in self.checks:
            if check.name == name:
                return check
        return None

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    def violations(self):
        return [check for check in self.checks if not check.passed]

    def hard_failures(self):
        return [check for check in self.checks if check.hard and not check.passed]

    def __str__(self):
        lines = [f'[{self.subject}] {"pass" if self.passed else "FAIL"}']
        for check in self.checks:
            status = 'ok  ' if check.passed else 'FAIL'
            lines.append(f'  {status} {check.name:<24} margin={check.worst_margin:+.4g}  {check.detail}')
        for name, table in self.tables.items():
            lines.append(f'  table {name}: ' + ', '.join(f'{d:.4g}->{v:.4g}' for d, v in table))
        for note in self.notes:
            lines.append(f'  note: {note}')
        return '\n'.join(lines)
