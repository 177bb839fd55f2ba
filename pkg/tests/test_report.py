import io
import re

import numpy as np
import pytest
from pydantic import ValidationError

from civicsim_modules.src.analytics_utils import AgreementReport, AlphaCurve, analyze_run, utility_distribution
from civicsim_modules.src.exceptions import AnalyticsError, ReportError
from civicsim_modules.src.report_utils import (
    ChartSeries,
    ChartSpec,
    build_report,
    emit_agreement_table,
    emit_alpha_chart,
    emit_csv,
    emit_utility_table,
    read_reports_csv,
    render_svg,
)
from civicsim_modules.src.runner import RunPlan, execute, run_directory

from conftest import dual, fixed_clock, make_config, make_record


def policy_report(key, model, condition, rate, lam=None):
    return AgreementReport(scope='per_policy', reference='model_default', model=model, condition=condition,
                           lambda_=lam, rate=rate, n=100, key=key)


def mock_run(root, corpus_dir, mock_script):
    config = make_config(root, mock_script)
    plan = RunPlan(run_id='mock-e2e', models=['mock-a', 'mock-b'],
                   conditions=['default', 'delegate', 'trustee_dual', 'trustee_periods'],
                   policies=str(corpus_dir / 'policies.json'), profiles=str(corpus_dir / 'profiles.jsonl'))
    execute(plan, config, clock=fixed_clock)
    return config


def test_agreement_table_bolds_the_larger_rate():
    reports = [
        policy_report('immigration.aff', 'gpt-4o', 'Delegate', 0.59),
        policy_report('immigration.aff', 'gpt-4o', 'Trustee', 0.92, 1.0),
        policy_report('abortion.aff', 'gpt-4o', 'Delegate', 0.5),
        policy_report('abortion.aff', 'gpt-4o', 'Trustee', 0.5, 1.0),
    ]
    table = emit_agreement_table(reports, labels={'immigration.aff': 'Increase immigration'})
    lines = table.strip().split('\n')
    assert lines[0] == '| Policy | gpt-4o Del. | gpt-4o Trus. |'
    assert lines[2] == '| Increase immigration | 0.59 | **0.92** |'
    assert lines[3] == '| abortion.aff | **0.50** | **0.50** |'


def test_agreement_table_rejects_ragged_grid():
    reports = [
        policy_report('immigration.aff', 'gpt-4o', 'Delegate', 0.59),
        policy_report('immigration.aff', 'gpt-4o', 'Trustee', 0.92, 1.0),
        policy_report('immigration.aff', 'claude-sonnet', 'Delegate', 0.57),
    ]
    with pytest.raises(ReportError, match='claude-sonnet'):
        emit_agreement_table(reports)
    with pytest.raises(ReportError):
        emit_agreement_table(reports[:1] * 2)
    with pytest.raises(ReportError):
        emit_agreement_table([])


def test_csv_output():
    assert emit_csv([]) == 'scope,model,condition,lambda,rate,n,key,reference\n'
    reports = [
        policy_report('immigration.aff', 'gpt-4o', 'Delegate', 0.59),
        AgreementReport(scope='per_group', reference='model_default', model='gpt-4o', condition='TrusteeDual',
                        lambda_=0.3, rate=0.25, n=8, key='region=South, "deep"'),
    ]
    text = emit_csv(reports)
    lines = text.split('\n')
    assert len(lines) == 4 and lines[-1] == ''
    assert lines[1] == 'per_policy,gpt-4o,Delegate,,0.59,100,immigration.aff,model_default'
    assert '"region=South, ""deep"""' in lines[2]
    assert read_reports_csv(io.StringIO(text)) == reports


def test_unreadable_csv():
    with pytest.raises(ReportError):
        read_reports_csv(io.StringIO('scope,model\nper_policy,gpt-4o\n'))


def test_utility_table_means():
    records = [make_record('TrusteeDual', utilities=dual(40, 80, 60, 50), profile_id='p1'),
               make_record('TrusteeDual', utilities=dual(60, 90, 40, 30), profile_id='p2')]
    table = emit_utility_table(utility_distribution(records))
    assert table.split('\n')[2] == '| immigration.aff | 50.0 | 85.0 | 50.0 | 40.0 |'
    assert emit_utility_table(utility_distribution([])) == ''


def _spec(**kwargs):
    series = [
        ChartSeries(label='mean', points=[(0.0, 0.2), (1.0, 0.9)], emphasis='bold'),
        ChartSeries(label='variant 1', points=[(0.0, 0.1), (1.0, 0.8)]),
        ChartSeries(label='variant 2', points=[(0.0, 0.3), (1.0, 1.0)]),
    ]
    return ChartSpec(title='gpt-4o <contested>', series=series, **kwargs)


def test_svg_draws_every_series_bold_last():
    svg = render_svg(_spec(), baseline=0.57)
    assert svg.startswith('<svg xmlns="http://www.w3.org/2000/svg"')
    assert svg.count('<polyline') == 3
    assert svg.rindex('class="thin"') < svg.index('class="bold"')
    assert svg.count('stroke-dasharray="6 4"') == 1
    assert 'gpt-4o &lt;contested&gt;' in svg
    assert render_svg(_spec()) == render_svg(_spec())
    assert 'stroke-dasharray' not in render_svg(_spec())


def test_svg_rejects_out_of_range_values():
    bad = ChartSpec(title='t', series=[ChartSeries(label='x', points=[(1.2, 0.5)])])
    with pytest.raises(ReportError):
        render_svg(bad)
    with pytest.raises(ReportError):
        render_svg(_spec(), baseline=1.5)
    with pytest.raises(ReportError):
        render_svg(ChartSpec(title='empty'))
    with pytest.raises(ValidationError):
        ChartSpec(title='t', x_range=(1.0, 0.0))


def test_alpha_chart():
    grid = [(0.0, 0.5), (0.5, 0.5), (1.0, 1.0)]
    curve = AlphaCurve(model='gpt-4o', policy_set='contested', method='dual', points=grid,
                       variant_points={'trustee_dual_1': grid, 'trustee_dual_2': [(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]})
    svg = emit_alpha_chart([curve], delegate_baseline=0.57)
    assert svg.count('<polyline') == 3
    assert '<title>gpt-4o dual</title>' in svg
    other = AlphaCurve(model='gpt-4o', policy_set='contested', method='exponential', points=[(0.0, 0.1), (1.0, 0.2)])
    with pytest.raises(ReportError):
        emit_alpha_chart([curve, other])
    with pytest.raises(ReportError):
        emit_alpha_chart([])


def test_agreement_table_bolds_per_model_maximum():
    rng = np.random.default_rng(43)
    models = ['m1', 'm2', 'm3']
    for _ in range(50):
        rates = rng.integers(0, 5, size=(6, len(models), 2)) / 4
        reports = list()
        for p, policy_rates in enumerate(rates):
            for model, (delegate, trustee) in zip(models, policy_rates):
                reports.append(policy_report(f'policy_{p}', model, 'Delegate', float(delegate)))
                reports.append(policy_report(f'policy_{p}', model, 'Trustee', float(trustee), 1.0))
        rows = emit_agreement_table(reports).strip().split('\n')[2:]
        assert len(rows) == 6
        for row, policy_rates in zip(rows, rates):
            cells = row[2:-2].split(' | ')[1:]
            for j, (delegate, trustee) in enumerate(policy_rates):
                best = max(delegate, trustee)
                for cell, rate in zip(cells[2 * j:2 * j + 2], (delegate, trustee)):
                    assert cell.startswith('**') == (rate == best)
                    assert float(cell.strip('*')) == rate


def test_step_curve_chart_changes_level_once():
    grid = [i / 10 for i in range(11)]
    for k in range(1, 11):
        points = [(lam, 0.0 if i < k else 1.0) for i, lam in enumerate(grid)]
        curve = AlphaCurve(model='m1', policy_set='contested', method='dual', points=points)
        svg = emit_alpha_chart([curve])
        coordinates = re.search(r'<polyline class="bold" points="([^"]*)"', svg).group(1).split()
        xs = [float(c.split(',')[0]) for c in coordinates]
        ys = [float(c.split(',')[1]) for c in coordinates]
        assert len(ys) == 11
        assert all(b > a for a, b in zip(xs, xs[1:]))
        assert sum(a != b for a, b in zip(ys, ys[1:])) == 1
        assert ys[k - 1] != ys[k]


def test_analyze_mock_run(tmp_path, corpus_dir, mock_script):
    config = mock_run(tmp_path, corpus_dir, mock_script)
    tables = analyze_run('mock-e2e', config, by=('policy', 'pair', 'group:political_affiliation'))
    analysis_dir = run_directory(config, 'mock-e2e') / 'analysis'
    for name in ('agreement', 'curves', 'baselines', 'gaps', 'consistency', 'utilities', 'policies'):
        assert (analysis_dir / f'{name}.csv').exists()

    agreement = tables['agreement']
    assert set(agreement['scope']) == {'per_policy', 'per_policy_pair', 'aggregate', 'per_group'}
    assert (tables['baselines']['rate'] == 1.0).all()
    assert set(tables['baselines']['policy_set']) == {'contested', 'consensus'}

    gaps = tables['gaps'].set_index(['model', 'policy_set', 'condition'])['gap']
    assert gaps[('mock-a', 'contested', 'Trustee')] == -0.5
    assert gaps[('mock-a', 'consensus', 'Trustee')] == 0.0

    curves = tables['curves']
    mean = curves[(curves['model'] == 'mock-b') & (curves['policy_set'] == 'contested')
                  & (curves['method'] == 'mean_of_methods') & (curves['variant_id'] == 'mean')]
    assert list(mean['rate'])[0] == 0.5 and list(mean['rate'])[-1] == 0.5

    expert = analyze_run('mock-e2e', config, out_dir=tmp_path / 'expert', reference='expert', by=('policy',))
    assert set(expert['agreement']['key']) <= {'carbon_emissions.aff', 'carbon_emissions.neg', 'consensus'}
    with pytest.raises(AnalyticsError):
        analyze_run('mock-e2e', config, out_dir=tmp_path / 'x', reference='majority')


def test_report_files_are_reproducible(tmp_path, corpus_dir, mock_script):
    outputs = []
    for name in ('first', 'second'):
        config = mock_run(tmp_path / name, corpus_dir, mock_script)
        analyze_run('mock-e2e', config)
        analysis_dir = run_directory(config, 'mock-e2e') / 'analysis'
        written = build_report(analysis_dir, tmp_path / name / 'report')
        outputs.append({path.name: path.read_bytes() for path in written})
    assert outputs[0] == outputs[1]
    assert {'agreement.md', 'agreement.csv', 'alpha_mock-a_contested.svg', 'alpha_mock-b_consensus.svg'} <= set(outputs[0])
    markdown = outputs[0]['agreement.md'].decode('utf-8')
    assert '## Per policy (model_default, trustee Trustee at lambda 1.0)' in markdown
    assert '## Mean dual utilities' in markdown
    assert '| We should increase the minimum wage. |' in markdown
    assert '| minimum_wage.aff |' not in markdown


def test_report_labels_fall_back_to_policy_ids(tmp_path, corpus_dir, mock_script):
    config = mock_run(tmp_path, corpus_dir, mock_script)
    analyze_run('mock-e2e', config)
    analysis_dir = run_directory(config, 'mock-e2e') / 'analysis'
    (analysis_dir / 'policies.csv').unlink()
    build_report(analysis_dir, tmp_path / 'report', formats=('md',))
    markdown = (tmp_path / 'report' / 'agreement.md').read_text(encoding='utf-8')
    assert '| minimum_wage.aff |' in markdown
    build_report(analysis_dir, tmp_path / 'custom', formats=('md',), labels={'minimum_wage.aff': 'Wage floor'})
    assert '| Wage floor |' in (tmp_path / 'custom' / 'agreement.md').read_text(encoding='utf-8')


def test_report_errors(tmp_path):
    with pytest.raises(ReportError):
        build_report(tmp_path, tmp_path / 'out')
    with pytest.raises(ReportError):
        build_report(tmp_path, tmp_path / 'out', formats=('pdf',))
