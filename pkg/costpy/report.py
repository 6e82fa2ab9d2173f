"""
Report serialization, grouping and cross-framework comparison.
"""
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd

from costpy.blocktree import SEPARATOR, ProfileReport
from costpy.errors import ConfigError, UnknownEntityError
from costpy.params import CostTuple, OpExtras, SecurityParams

logger = logging.getLogger(__name__)

COLUMNS = ['online_bits', 'online_rounds', 'offline_bits', 'offline_rounds']
PHASES = {
    'online': COLUMNS[:2],
    'offline': COLUMNS[2:],
    'both': COLUMNS,
}
GROUPINGS = ('label', 'operator', 'fb')
PASS_SEGMENTS = ('forward', 'backward', 'step')


def report_to_dict(report: ProfileReport) -> dict:
    return {
        'model': report.model,
        'framework': report.framework,
        'params': report.params.as_dict(),
        'fingerprint': report.fingerprint,
        'entries': {
            label: cost.as_list() for label, cost in report.entries.items()
        },
    }


def report_from_dict(doc: dict) -> ProfileReport:
    try:
        entries = {
            label: CostTuple(*cost) for label, cost in doc['entries'].items()
        }
        return ProfileReport(
            entries,
            doc['framework'],
            SecurityParams(**doc['params']),
            model=doc.get('model'),
            fingerprint=doc.get('fingerprint')
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed report document: {e}") from e


def write_json(report: ProfileReport, path):
    write_report(report, path, 'json')


def read_json(path) -> ProfileReport:
    with open(path) as f:
        return report_from_dict(json.load(f))


def report_to_frame(report: ProfileReport) -> pd.DataFrame:
    """One row per label, in insertion order."""
    frame = pd.DataFrame.from_dict(
        {label: cost.as_list() for label, cost in report.entries.items()},
        orient='index',
        columns=COLUMNS
    )
    frame.index.name = 'label'
    return frame


def write_csv(report: ProfileReport, path):
    write_report(report, path, 'csv')


def read_csv_entries(path) -> dict:
    frame = pd.read_csv(path, index_col='label', keep_default_na=False)
    rows = frame[COLUMNS].itertuples(index=False)
    return {
        label: CostTuple(*(int(v) for v in row))
        for label, row in zip(frame.index, rows)
    }


def operator_of(label: str) -> str:
    """Operator segment of a label.

    "initial-layer1-conv2d-forward" -> "conv2d", "initial-test-mul" -> "mul".
    """
    segments = label.split(SEPARATOR)
    if len(segments) > 1 and segments[-1] in PASS_SEGMENTS:
        return segments[-2]
    return segments[-1]


def pass_of(label: str) -> str:
    segments = label.split(SEPARATOR)
    for name in ('forward', 'backward'):
        if name in segments:
            return name
    return 'other'


def group_report(
    report: ProfileReport,
    grouping: str = 'operator',
    phase: str = 'both'
) -> pd.DataFrame:
    """Sum entries into disjoint buckets (first-seen order)."""
    if grouping not in GROUPINGS:
        raise UnknownEntityError(
            f"unknown grouping '{grouping}' (one of {', '.join(GROUPINGS)})"
        )
    if phase not in PHASES:
        raise UnknownEntityError(f"unknown phase '{phase}'")
    frame = report_to_frame(report)
    if grouping == 'label':
        return frame[PHASES[phase]]
    key = operator_of if grouping == 'operator' else pass_of
    buckets = frame.index.map(key)
    grouped = frame.groupby(buckets, sort=False).sum()
    grouped.index.name = grouping
    return grouped[PHASES[phase]]


def format_table(
    report: ProfileReport,
    grouping: str = 'label',
    phase: str = 'both'
) -> str:
    """Human readable table, largest online communication first."""
    frame = group_report(report, grouping, phase='both')
    frame = frame.sort_values('online_bits', ascending=False, kind='stable')
    header = f"{report.model or 'program'} on {report.framework}"
    total = report.total()
    footer = f"total: {tuple(total)}"
    return "\n".join([header, frame[PHASES[phase]].to_string(), footer])


def compare_frameworks(
    reports: Sequence[ProfileReport],
    grouping: str = 'operator'
) -> pd.DataFrame:
    """Per-bucket share (%) of the online bits, one column per framework."""
    if not reports:
        raise ConfigError("nothing to compare")
    fingerprints = {r.fingerprint for r in reports}
    if len(fingerprints) > 1:
        raise ConfigError("reports do not come from the same compiled model")
    columns = {}
    for report in reports:
        bits = group_report(report, grouping)['online_bits']
        total = sum(int(b) for b in bits)
        columns[report.framework] = pd.Series(
            [100 * int(b) / total if total else 0.0 for b in bits],
            index=bits.index,
            dtype=float
        )
    table = pd.DataFrame(columns).fillna(0.0)
    table.index.name = grouping
    return table


def export_cost_callback(
    framework,
    params: SecurityParams,
    grid: Iterable[dict],
    path=None,
    op: str = 'matmuls',
    registry=None
) -> pd.DataFrame:
    """Online bits of `op` over a grid of operand dimensions.

    Every grid point is a mapping of instruction fields (e.g. p, q, r). The
    table can be written to `path` as CSV for an external graph optimizer.
    """
    from costpy.secure import InstructionCoster
    coster = InstructionCoster(framework, params, registry=registry)
    rows = []
    for point in grid:
        cost = coster.cost(op, OpExtras(**point))
        rows.append({'op': op, **point, 'online_bits': cost.online_bits})
    dims = sorted({k for row in rows for k in row} - {'op', 'online_bits'})
    table = pd.DataFrame(rows, columns=['op', *dims, 'online_bits'])
    if path is not None:
        table.to_csv(Path(path), index=False)
        logger.info(f"Wrote {len(table)} cost row(s) to {path}")
    return table


FORMATS = ('table', 'csv', 'json')


def render_report(
    report: ProfileReport,
    fmt: str,
    grouping: str = 'label',
    phase: str = 'both'
) -> str:
    if fmt == 'json':
        return json.dumps(report_to_dict(report), indent=2) + '\n'
    if fmt == 'csv':
        return group_report(report, grouping, phase).to_csv()
    if fmt == 'table':
        return format_table(report, grouping, phase) + '\n'
    raise UnknownEntityError(f"unknown format '{fmt}'")


def write_report(
    report: ProfileReport,
    path,
    fmt: str,
    grouping: str = 'label',
    phase: str = 'both'
) -> str:
    """Serialize `report` to `path` (if given) and return the text."""
    text = render_report(report, fmt, grouping, phase)
    if path is not None:
        Path(path).write_text(text)
        logger.info(f"Wrote {path}")
    return text
