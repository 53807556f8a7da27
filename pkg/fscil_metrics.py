"""
FSCIL Metrics - Session accuracies and the PD / NLA / BMA summaries.

Accuracies are fractions in [0, 1]; reports render them as percentages with
two decimals.

    PD  = acc_all(1) - acc_all(T)
    NLA = mean of acc_new over t = 2..T
    BMA = mean of acc_base over t = 1..T
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from fscil_base import SchemaError, UndefinedMetricError
from fscil_constants import METRICS_CSV_COLUMNS
from fscil_utils import format_float, format_percent, write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class SessionAccuracy:
    """Accuracies after session t over all, base and new test classes."""
    t: int
    acc_all: float
    acc_base: Optional[float]
    acc_new: Optional[float]
    active_classes: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            't': self.t,
            'acc_all': self.acc_all,
            'acc_base': self.acc_base,
            'acc_new': self.acc_new,
            'num_active_classes': self.active_classes,
        }


class AccuracyMatrix:
    """Ordered session accuracies for t = 1..T."""

    def __init__(self, entries: List[SessionAccuracy]):
        for expected, entry in enumerate(entries, start=1):
            if entry.t != expected:
                raise SchemaError('sessions must be numbered 1..T in order', expected=expected, found=entry.t)
            for name in ('acc_all', 'acc_base', 'acc_new'):
                value = getattr(entry, name)
                if value is not None and not 0.0 <= value <= 1.0:
                    raise SchemaError('accuracy outside [0, 1]', t=entry.t, column=name, value=value)
            if entry.t == 1 and entry.acc_new is not None:
                raise SchemaError('acc_new is undefined for the base session')
        self.entries = list(entries)

    @property
    def T(self) -> int:
        return len(self.entries)

    def column(self, name: str) -> List[Optional[float]]:
        return [getattr(e, name) for e in self.entries]


def pd(matrix: AccuracyMatrix) -> float:
    """Performance dropping rate acc_all(1) - acc_all(T)."""
    if matrix.T < 2:
        raise UndefinedMetricError('PD needs at least two sessions', sessions=matrix.T)
    return matrix.entries[0].acc_all - matrix.entries[-1].acc_all


def nla(matrix: AccuracyMatrix) -> float:
    """New-task learning ability: mean acc_new over sessions 2..T."""
    if matrix.T < 2:
        raise UndefinedMetricError('NLA needs at least two sessions', sessions=matrix.T)
    values = matrix.column('acc_new')[1:]
    if any(v is None for v in values):
        raise UndefinedMetricError('acc_new missing for some session')
    return sum(values) / len(values)


def bma(matrix: AccuracyMatrix) -> float:
    """Base-task maintaining ability: mean acc_base over sessions 1..T."""
    if matrix.T < 1:
        raise UndefinedMetricError('BMA needs at least one session')
    values = matrix.column('acc_base')
    if any(v is None for v in values):
        raise UndefinedMetricError('acc_base missing for some session')
    return sum(values) / len(values)


def _try(metric, matrix: AccuracyMatrix) -> Optional[float]:
    try:
        return metric(matrix)
    except UndefinedMetricError:
        return None


def summary(matrix: AccuracyMatrix) -> Dict[str, Any]:
    """
    PD, NLA and BMA as fractions and as two-decimal percentages.

    Undefined metrics are reported as None.
    """
    values = {'pd': _try(pd, matrix), 'nla': _try(nla, matrix), 'bma': _try(bma, matrix)}
    report: Dict[str, Any] = {'sessions': matrix.T}
    for name, value in values.items():
        report[name] = value
        report[f'{name}_percent'] = format_percent(value) if value is not None else None
    return report


def _cell(value: Optional[float]) -> str:
    return '' if value is None else format_float(value)


def write_metrics_csv(path: PathLike, matrix: AccuracyMatrix) -> Path:
    """One row per session, then a summary row with PD, NLA and BMA."""
    lines = [','.join(METRICS_CSV_COLUMNS)]
    for e in matrix.entries:
        lines.append(','.join([str(e.t), _cell(e.acc_all), _cell(e.acc_base), _cell(e.acc_new), str(e.active_classes)]))
    report = summary(matrix)
    lines.append(','.join(['summary'] + [f'{name}={_cell(report[name])}' for name in ('pd', 'nla', 'bma')]))
    return write_text(path, '\n'.join(lines) + '\n')


def _parse_cell(text: str, scale: float, line_number: int, column: str) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    try:
        return float(text) / scale
    except ValueError:
        raise SchemaError('not a number', line=line_number, column=column, value=text)


def read_metrics_csv(path: PathLike, percent: bool = False) -> AccuracyMatrix:
    """
    Read an accuracy matrix written by write_metrics_csv or by hand.

    Args:
        path: CSV with header t,acc_all,acc_base,acc_new[,active_classes]
        percent: Values are percentages rather than fractions

    Returns:
        AccuracyMatrix

    Raises:
        SchemaError: If the header or a row does not match
    """
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(str(source))
    scale = 100.0 if percent else 1.0
    entries: List[SessionAccuracy] = []
    with open(source, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise SchemaError('metrics file is empty', path=str(source))
        header = [h.strip() for h in header]
        if header != list(METRICS_CSV_COLUMNS) and header != list(METRICS_CSV_COLUMNS[:4]):
            raise SchemaError('unexpected metrics header', header=header)
        for line_number, row in enumerate(reader, start=2):
            if not row or row[0].strip() == 'summary':
                continue
            if len(row) != len(header):
                raise SchemaError('wrong number of columns', line=line_number, found=len(row))
            try:
                t = int(row[0])
                active = int(row[4]) if len(row) > 4 and row[4].strip() else 0
            except ValueError:
                raise SchemaError('session index and class count must be integers', line=line_number)
            acc_all = _parse_cell(row[1], scale, line_number, 'acc_all')
            if acc_all is None:
                raise SchemaError('acc_all is required', line=line_number)
            entries.append(SessionAccuracy(
                t=t,
                acc_all=acc_all,
                acc_base=_parse_cell(row[2], scale, line_number, 'acc_base'),
                acc_new=_parse_cell(row[3], scale, line_number, 'acc_new'),
                active_classes=active,
            ))
    if not entries:
        raise SchemaError('metrics file has no session rows', path=str(source))
    return AccuracyMatrix(entries)
