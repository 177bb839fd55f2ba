"""
human readable artifacts from the analysis tables: markdown agreement tables, csv files and svg line charts
of agreement against lambda
"""
import io
import logging
from pathlib import Path
from typing import List, Literal, Tuple
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .analytics_utils import TRUSTEE, METHOD_CONDITIONS, AgreementReport, AlphaCurve, reports_frame
from .domain import Condition
from .exceptions import ReportError

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['scope', 'model', 'condition', 'lambda', 'rate', 'n', 'key', 'reference']
TRUSTEE_CONDITIONS = (TRUSTEE, *METHOD_CONDITIONS.values())
FORMATS = ('md', 'csv', 'svg')

MEAN_COLOR = '#1f3b73'
VARIANT_COLOR = '#7f9cc9'
BASELINE_COLOR = '#c0392b'


class ChartSeries(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    points: List[Tuple[float, float]] = Field(min_length=1)
    emphasis: Literal['bold', 'thin'] = 'thin'


class ChartSpec(BaseModel):
    """
    layout of a line chart, series may be empty when the chart is fed with curves
    """
    model_config = ConfigDict(frozen=True)

    title: str
    x_label: str = 'lambda'
    y_label: str = 'agreement rate'
    x_range: Tuple[float, float] = (0.0, 1.0)
    y_range: Tuple[float, float] = (0.0, 1.0)
    series: List[ChartSeries] = Field(default_factory=list)
    width: int = Field(default=640, gt=0)
    height: int = Field(default=400, gt=0)

    @model_validator(mode='after')
    def _check_ranges(self):
        for name in ('x_range', 'y_range'):
            low, high = getattr(self, name)
            if not high > low:
                raise ValueError(f'{name} must be increasing, got {low} .. {high}')
        return self


def _fmt(rate):
    return f'{rate:.2f}'


def emit_agreement_table(reports, models=None, labels=None):
    '''
    markdown table with one row per policy and a Del./Trus. column pair per model, the larger value of each pair
    is bolded and ties bold both

            Parameters:
                    reports (list): per_policy AgreementReports, one Delegate and one trustee report per policy and model
                    models (list): column order, default order of first appearance
                    labels (dict): policy id -> row label, default the policy id

            Returns:
                    table (str): markdown text
    '''
    cells = dict()
    policy_order = list()
    model_order = list()
    for report in reports:
        if report.condition == Condition.Delegate.value:
            side = 'delegate'
        elif report.condition in TRUSTEE_CONDITIONS:
            side = 'trustee'
        else:
            continue
        if (report.key, report.model, side) in cells:
            raise ReportError(f'several {side} reports for {report.model}/{report.key}')
        cells[(report.key, report.model, side)] = report.rate
        if report.key not in policy_order:
            policy_order.append(report.key)
        if report.model not in model_order:
            model_order.append(report.model)
    models = list(models) if models else model_order
    if not policy_order or not models:
        raise ReportError('no delegate or trustee reports to tabulate')

    missing = [f'{key}/{model}/{side}' for key in policy_order for model in models for side in ('delegate', 'trustee')
               if (key, model, side) not in cells]
    if missing:
        raise ReportError(f"agreement grid is ragged, missing cells: {', '.join(missing)}")

    labels = labels or {}
    header = ['Policy'] + [f'{model} {side}' for model in models for side in ('Del.', 'Trus.')]
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '|'.join(['---'] * len(header)) + '|']
    for key in policy_order:
        row = [labels.get(key, key)]
        for model in models:
            delegate = cells[(key, model, 'delegate')]
            trustee = cells[(key, model, 'trustee')]
            best = max(delegate, trustee)
            for rate in (delegate, trustee):
                row.append(f'**{_fmt(rate)}**' if rate == best else _fmt(rate))
        lines.append('| ' + ' | '.join(row) + ' |')
    return '\n'.join(lines) + '\n'


def emit_utility_table(distribution, labels=None):
    '''
    markdown summary of the mean short and long term utilities per policy and option of the dual schedules

            Parameters:
                    distribution (pd.DataFrame): output of analytics_utils.utility_distribution
                    labels (dict): policy id -> row label

            Returns:
                    table (str): markdown text, empty when the run has no dual schedules
    '''
    dual = distribution[distribution['condition'] == Condition.TrusteeDual.value]
    if dual.empty:
        return ''
    means = dual.pivot_table(index='policy_id', columns=['option', 'horizon'], values='score', aggfunc='mean')
    labels = labels or {}
    header = ['Policy', 'Yes short', 'Yes long', 'No short', 'No long']
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '|'.join(['---'] * len(header)) + '|']
    for policy_id, row in means.iterrows():
        values = [row.get((option, horizon), np.nan) for option in ('yes', 'no') for horizon in ('short', 'long')]
        lines.append('| ' + ' | '.join([labels.get(policy_id, policy_id)] + [f'{v:.1f}' for v in values]) + ' |')
    return '\n'.join(lines) + '\n'


def emit_csv(reports):
    '''
    csv text with a header row and one report per row, fields quoted when needed

            Parameters:
                    reports (list): AgreementReports

            Returns:
                    text (str): csv text, header only for an empty list
    '''
    buffer = io.StringIO()
    reports_frame(reports)[REPORT_COLUMNS].to_csv(buffer, index=False, lineterminator='\n')
    return buffer.getvalue()


def read_reports_csv(source):
    '''
    parse csv written by emit_csv back into AgreementReports

            Parameters:
                    source (str or path-like): file path or file object

            Returns:
                    reports (list): AgreementReports in file order
    '''
    frame = pd.read_csv(source, dtype=str, keep_default_na=False)
    reports = list()
    try:
        for row in frame.to_dict('records'):
            reports.append(AgreementReport(
                scope=row['scope'],
                reference=row['reference'],
                model=row['model'],
                condition=row['condition'],
                lambda_=float(row['lambda']) if row['lambda'] != '' else None,
                rate=float(row['rate']),
                n=int(row['n']),
                key=row['key'],
            ))
    except (KeyError, ValueError, ValidationError) as e:
        raise ReportError(f'unreadable agreement csv: {e}') from e
    return reports


class _Canvas:
    """
    maps data coordinates into the plot area of a ChartSpec
    """
    margin_left = 60
    margin_right = 20
    margin_top = 40
    margin_bottom = 50

    def __init__(self, spec):
        self.spec = spec
        self.plot_width = spec.width - self.margin_left - self.margin_right
        self.plot_height = spec.height - self.margin_top - self.margin_bottom

    def x(self, value):
        low, high = self.spec.x_range
        return self.margin_left + (value - low) / (high - low) * self.plot_width

    def y(self, value):
        low, high = self.spec.y_range
        return self.margin_top + (high - value) / (high - low) * self.plot_height


def _num(value):
    return f'{value:.2f}'


def _in_range(value, bounds):
    low, high = bounds
    return low - 1e-9 <= value <= high + 1e-9


def render_svg(spec, baseline=None):
    '''
    standalone svg of a ChartSpec, bold series drawn last. the output only depends on the ChartSpec

            Parameters:
                    spec (ChartSpec): chart with at least one series
                    baseline (float): y value of a dashed horizontal reference line

            Returns:
                    svg (str)
    '''
    if not spec.series:
        raise ReportError('a chart needs at least one series')
    for series in spec.series:
        for x, y in series.points:
            if not _in_range(x, spec.x_range) or not _in_range(y, spec.y_range):
                raise ReportError(f'point ({x}, {y}) of series {series.label} lies outside the axis ranges')
    if baseline is not None and not _in_range(baseline, spec.y_range):
        raise ReportError(f'baseline {baseline} lies outside the y range')

    canvas = _Canvas(spec)
    left, right = canvas.x(spec.x_range[0]), canvas.x(spec.x_range[1])
    top, bottom = canvas.y(spec.y_range[1]), canvas.y(spec.y_range[0])
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.width}" height="{spec.height}" '
        f'viewBox="0 0 {spec.width} {spec.height}" font-family="sans-serif">',
        f'  <rect width="{spec.width}" height="{spec.height}" fill="#ffffff"/>',
        f'  <text x="{_num(spec.width / 2)}" y="22" text-anchor="middle" font-size="15">{escape(spec.title)}</text>',
    ]
    for tick in np.linspace(spec.y_range[0], spec.y_range[1], 5):
        y = canvas.y(tick)
        svg.append(f'  <line x1="{_num(left)}" y1="{_num(y)}" x2="{_num(right)}" y2="{_num(y)}" '
                   f'stroke="#e0e0e0" stroke-width="1"/>')
        svg.append(f'  <text x="{_num(left - 8)}" y="{_num(y + 4)}" text-anchor="end" font-size="11">{tick:.2f}</text>')
    for tick in np.linspace(spec.x_range[0], spec.x_range[1], 6):
        x = canvas.x(tick)
        svg.append(f'  <text x="{_num(x)}" y="{_num(bottom + 18)}" text-anchor="middle" font-size="11">{tick:.1f}</text>')
    svg.append(f'  <line x1="{_num(left)}" y1="{_num(bottom)}" x2="{_num(right)}" y2="{_num(bottom)}" stroke="#333"/>')
    svg.append(f'  <line x1="{_num(left)}" y1="{_num(top)}" x2="{_num(left)}" y2="{_num(bottom)}" stroke="#333"/>')
    svg.append(f'  <text x="{_num((left + right) / 2)}" y="{spec.height - 10}" text-anchor="middle" '
               f'font-size="12">{escape(spec.x_label)}</text>')
    middle = (top + bottom) / 2
    svg.append(f'  <text x="15" y="{_num(middle)}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90, 15, {_num(middle)})">{escape(spec.y_label)}</text>')

    if baseline is not None:
        y = canvas.y(baseline)
        svg.append(f'  <line class="baseline" x1="{_num(left)}" y1="{_num(y)}" x2="{_num(right)}" y2="{_num(y)}" '
                   f'stroke="{BASELINE_COLOR}" stroke-width="1.5" stroke-dasharray="6 4"/>')

    ordered = [s for s in spec.series if s.emphasis == 'thin'] + [s for s in spec.series if s.emphasis == 'bold']
    for series in ordered:
        points = ' '.join(f'{_num(canvas.x(x))},{_num(canvas.y(y))}' for x, y in series.points)
        if series.emphasis == 'bold':
            style = f'stroke="{MEAN_COLOR}" stroke-width="3"'
        else:
            style = f'stroke="{VARIANT_COLOR}" stroke-width="1" stroke-opacity="0.6"'
        svg.append(f'  <polyline class="{series.emphasis}" points="{points}" fill="none" {style}>'
                   f'<title>{escape(series.label)}</title></polyline>')
    svg.append('</svg>')
    return '\n'.join(svg) + '\n'


def emit_alpha_chart(curves, delegate_baseline=None, spec=None):
    '''
    svg line chart of agreement against lambda, the variant mean of every curve in bold, its prompt variants thin
    and the delegate baseline as a dashed horizontal line

            Parameters:
                    curves (list): AlphaCurve objects sharing one grid
                    delegate_baseline (float): delegate agreement rate, None to leave it out
                    spec (ChartSpec): title and axis ranges, extra series are drawn as given

            Returns:
                    svg (str)
    '''
    if not curves:
        raise ReportError('no curves to chart')
    grids = {tuple(lam for lam, _ in curve.points) for curve in curves}
    if len(grids) > 1:
        raise ReportError('curves do not share a lambda grid')
    spec = spec or ChartSpec(title=f'{curves[0].model} {curves[0].policy_set}')
    series = list(spec.series)
    for curve in curves:
        for variant_id in sorted(curve.variant_points):
            series.append(ChartSeries(label=variant_id, points=curve.variant_points[variant_id], emphasis='thin'))
        series.append(ChartSeries(label=f'{curve.model} {curve.method}', points=curve.points, emphasis='bold'))
    return render_svg(spec.model_copy(update={'series': series}), baseline=delegate_baseline)


def _curves_from_table(table, model, policy_set, method):
    rows = table[(table['model'] == model) & (table['policy_set'] == policy_set) & (table['method'] == method)]
    rows = rows.sort_values(['variant_id', 'lambda'])
    mean = rows[rows['variant_id'] == 'mean']
    variants = {
        str(variant_id): [(float(l), float(r)) for l, r in zip(group['lambda'], group['rate'])]
        for variant_id, group in rows[rows['variant_id'] != 'mean'].groupby('variant_id', sort=True)
    }
    return AlphaCurve(model=str(model), policy_set=str(policy_set), method=method,
                      points=[(float(l), float(r)) for l, r in zip(mean['lambda'], mean['rate'])],
                      variant_points=variants)


def _read_table(analysis_dir, name, required=True):
    path = Path(analysis_dir) / f'{name}.csv'
    if not path.exists():
        if required:
            raise ReportError(f'analysis table missing: {path}')
        return None
    return pd.read_csv(path, keep_default_na=False, na_values=[''])


def policy_labels(analysis_dir):
    '''
    policy id -> statement from the policies table of an analysis directory, empty when the table is missing

            Parameters:
                    analysis_dir (str): directory written by analytics_utils.analyze_run

            Returns:
                    labels (dict)
    '''
    table = _read_table(analysis_dir, 'policies', required=False)
    if table is None:
        logger.warning('no policies table in %s, rows are labelled with policy ids', analysis_dir)
        return dict()
    return dict(zip(table['policy_id'], table['statement']))


def _chart_method(methods):
    for method in ('mean_of_methods', 'dual', 'exponential'):
        if method in methods:
            return method
    return None


def build_report(analysis_dir, out_dir, formats=FORMATS, labels=None, verbose=False):
    '''
    write the report artifacts of an analysis directory

            Parameters:
                    analysis_dir (str): directory written by analytics_utils.analyze_run
                    out_dir (str): output directory
                    formats (tuple): any of 'md', 'csv', 'svg'
                    labels (dict): policy id -> row label, default the statements of the analysis policies table
                    verbose (boolean): if true, print the written files

            Returns:
                    written (list): paths of the written files
    '''
    unknown = sorted(set(formats) - set(FORMATS))
    if unknown:
        raise ReportError(f"unknown report formats: {', '.join(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agreement_path = Path(analysis_dir) / 'agreement.csv'
    if not agreement_path.exists():
        raise ReportError(f'analysis table missing: {agreement_path}')
    reports = read_reports_csv(agreement_path)
    if labels is None:
        labels = policy_labels(analysis_dir)
    written = list()

    if 'md' in formats:
        sections = ['# Agreement report\n']
        per_policy = [r for r in reports if r.scope == 'per_policy']
        top = max((r.lambda_ for r in per_policy if r.lambda_ is not None), default=None)
        trustee_condition = _table_trustee_condition(per_policy)
        has_delegate = any(r.condition == Condition.Delegate.value for r in per_policy)
        if has_delegate and trustee_condition is not None:
            chosen = [r for r in per_policy if r.condition == Condition.Delegate.value
                      or (r.condition == trustee_condition and r.lambda_ is not None and np.isclose(r.lambda_, top))]
            for reference in sorted({r.reference for r in chosen}):
                subset = [r for r in chosen if r.reference == reference]
                try:
                    table = emit_agreement_table(subset, labels=labels)
                except ReportError as e:
                    logger.warning('per policy table left out: %s', e)
                    continue
                sections.append(f'## Per policy ({reference}, trustee {trustee_condition} at lambda {top:.1f})\n')
                sections.append(table)
        aggregate = [r for r in reports if r.scope == 'aggregate']
        if aggregate:
            sections.append('## Policy sets\n')
            sections.append(_aggregate_table(aggregate))
        utilities = _read_table(analysis_dir, 'utilities', required=False)
        if utilities is not None and not utilities.empty:
            table = emit_utility_table(utilities, labels=labels)
            if table:
                sections.append('## Mean dual utilities\n')
                sections.append(table)
        path = out_dir / 'agreement.md'
        path.write_text('\n'.join(sections), encoding='utf-8')
        written.append(path)

    if 'csv' in formats:
        path = out_dir / 'agreement.csv'
        path.write_text(emit_csv(reports), encoding='utf-8')
        written.append(path)
        for name in ('curves', 'baselines', 'gaps', 'consistency', 'policies'):
            table = _read_table(analysis_dir, name, required=False)
            if table is not None:
                path = out_dir / f'{name}.csv'
                table.to_csv(path, index=False, lineterminator='\n')
                written.append(path)

    if 'svg' in formats:
        curves = _read_table(analysis_dir, 'curves', required=False)
        baselines = _read_table(analysis_dir, 'baselines', required=False)
        if curves is not None and not curves.empty:
            for (model, policy_set), group in curves.groupby(['model', 'policy_set'], sort=True):
                method = _chart_method(set(group['method']))
                curve = _curves_from_table(group, model, policy_set, method)
                baseline = None
                if baselines is not None and not baselines.empty:
                    match = baselines[(baselines['model'] == model) & (baselines['policy_set'] == policy_set)]
                    if not match.empty:
                        baseline = float(match['rate'].iloc[0])
                spec = ChartSpec(title=f'{model}: agreement on {policy_set} policies ({method})')
                path = out_dir / f'alpha_{_safe(model)}_{policy_set}.svg'
                path.write_text(emit_alpha_chart([curve], baseline, spec), encoding='utf-8')
                written.append(path)

    if verbose:
        print('------------------------------------------------------------')
        for path in written:
            print(f'   written: {path}')
        print('------------------------------------------------------------')
    return written


def _table_trustee_condition(reports):
    present = {r.condition for r in reports}
    for condition in TRUSTEE_CONDITIONS:
        if condition in present:
            return condition
    return None


def _aggregate_table(reports):
    header = ['Model', 'Policy set', 'Reference', 'Condition', 'lambda', 'Rate', 'n']
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '|'.join(['---'] * len(header)) + '|']
    for r in reports:
        lam = '' if r.lambda_ is None else f'{r.lambda_:.1f}'
        lines.append(f'| {r.model} | {r.key} | {r.reference} | {r.condition} | {lam} | {_fmt(r.rate)} | {r.n} |')
    return '\n'.join(lines) + '\n'


def _safe(name):
    return ''.join(ch if ch.isalnum() or ch in '-_.' else '_' for ch in str(name))
