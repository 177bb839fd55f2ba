"""
agreement metrics over a run's record log: agreement with model defaults or expert consensus per policy, per
paraphrase pair, per policy set and per demographic group, lambda curves of the trustee conditions,
trustee-delegate gaps and paraphrase consistency. failed records never enter a denominator
"""
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .domain import PERIOD_LABELS, Condition
from .aggregation_utils import batch_trustee_votes, default_grid, parse_grid
from .corpus_utils import load_policies, load_profiles, policy_set, profile_value, field_categories
from .runner import load_records, read_manifest, _resolve_run_dir
from .exceptions import AnalyticsError

logger = logging.getLogger(__name__)

TRUSTEE = 'Trustee'
METHOD_CONDITIONS = {
    'dual': Condition.TrusteeDual.value,
    'exponential': Condition.TrusteePeriods.value,
}
VOTE_COLUMNS = ['model', 'condition', 'method', 'lambda', 'variant_id', 'profile_id', 'policy_id', 'vote']
RATE_KEYS = ['model', 'condition', 'lambda']
POLICY_SETS = ('contested', 'consensus')

Scope = Literal['per_policy', 'per_policy_pair', 'aggregate', 'per_group']
ReferenceKind = Literal['model_default', 'expert_consensus']


class AgreementReport(BaseModel):
    """
    share of votes equal to a reference stance. condition is a Condition value or 'Trustee' for the mean of both
    trustee methods, lambda is set for trustee conditions only, key names the policy, pair, set or group.
    n is always the number of votes behind the row. on aggregate rows the rate is a mean over statements and variants,
    so it is not matches / n there
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    scope: Scope
    reference: ReferenceKind
    model: str
    condition: str
    lambda_: Optional[float] = Field(default=None, alias='lambda')
    rate: float = Field(ge=0.0, le=1.0)
    n: int = Field(gt=0)
    key: str = ''


class AlphaCurve(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    policy_set: str
    method: Literal['exponential', 'dual', 'mean_of_methods']
    points: List[Tuple[float, float]]
    variant_points: Dict[str, List[Tuple[float, float]]] = Field(default_factory=dict)

    @field_validator('points')
    @classmethod
    def _check_points(cls, points):
        lambdas = [lam for lam, _ in points]
        if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
            raise ValueError('curve lambdas must be strictly increasing')
        if any(rate < 0 or rate > 1 for _, rate in points):
            raise ValueError('curve rates must lie in [0, 1]')
        return points

    @model_validator(mode='after')
    def _check_variants(self):
        lambdas = [lam for lam, _ in self.points]
        for variant_id, points in self.variant_points.items():
            if [lam for lam, _ in points] != lambdas:
                raise ValueError(f'variant {variant_id} is not on the curve grid')
        return self

    def rate_at(self, lam):
        for point, rate in self.points:
            if np.isclose(point, lam):
                return rate
        raise KeyError(lam)


def votes_frame(records, grid=None):
    '''
    tidy vote table of the ok records. Default and Delegate records give one row each, trustee records give one
    row per lambda of the grid with the vote derived from their utility schedule

            Parameters:
                    records (list): VoteRecord objects
                    grid (list): lambda values, default 0 to 1 by 0.1

            Returns:
                    frame (pd.DataFrame): columns model, condition, method, lambda, variant_id, profile_id, policy_id, vote
    '''
    rows = list()
    trustee = {'dual': [], 'periods': []}
    for record in records:
        if record.status != 'ok':
            continue
        if record.condition.is_trustee:
            trustee[record.utilities.form].append(record)
            continue
        rows.append((record.model, record.condition.value, '', np.nan, record.variant_id,
                     record.profile_id or '', record.policy_id, record.vote))
    if trustee['dual'] or trustee['periods']:
        grid = default_grid() if grid is None else list(grid)
        for form, batch in trustee.items():
            if not batch:
                continue
            method = 'dual' if form == 'dual' else 'exponential'
            yes = batch_trustee_votes([record.utilities for record in batch], grid)
            for g, lam in enumerate(grid):
                for i, record in enumerate(batch):
                    rows.append((record.model, record.condition.value, method, float(lam), record.variant_id,
                                 record.profile_id or '', record.policy_id, 'Yes' if yes[g, i] else 'No'))
    frame = pd.DataFrame(rows, columns=VOTE_COLUMNS)
    frame['lambda'] = frame['lambda'].astype(float)
    return frame.sort_values(VOTE_COLUMNS).reset_index(drop=True)


def _as_frame(votes):
    if isinstance(votes, pd.DataFrame):
        return votes
    votes = list(votes)
    if any(record.condition.is_trustee for record in votes if record.status == 'ok'):
        raise AnalyticsError('trustee records carry no vote, derive their votes with votes_frame first')
    return votes_frame(votes)


def default_stances(records, policies, model):
    '''
    reference stance per policy for one model: majority of the run's Default votes, the corpus table when the
    run has none (or a tie)

            Parameters:
                    records (list): VoteRecord objects
                    policies (list): Policy objects
                    model (str): provider name

            Returns:
                    stances (dict): policy id -> 'Yes' or 'No', policies without any stance are left out
    '''
    tallies = dict()
    for record in records:
        if record.model == model and record.condition == Condition.Default and record.status == 'ok':
            yes, no = tallies.get(record.policy_id, (0, 0))
            tallies[record.policy_id] = (yes + (record.vote == 'Yes'), no + (record.vote == 'No'))
    stances = dict()
    for policy in policies:
        yes, no = tallies.get(policy.id, (0, 0))
        if yes != no:
            stances[policy.id] = 'Yes' if yes > no else 'No'
        elif model in policy.model_defaults:
            stances[policy.id] = policy.model_defaults[model]
    return stances


def expert_stances(policies):
    return {policy.id: policy.expert_stance for policy in policies if policy.expert_stance is not None}


def _attach_reference(frame, reference, strict=True):
    '''
    add reference and match columns, reference maps policy id -> stance or model -> (policy id -> stance)
    '''
    frame = frame.copy()
    per_model = bool(reference) and all(isinstance(v, dict) for v in reference.values())
    if per_model:
        frame['reference'] = [reference.get(m, {}).get(p) for m, p in zip(frame['model'], frame['policy_id'])]
    else:
        frame['reference'] = frame['policy_id'].map(reference)
    missing = frame['reference'].isna()
    if missing.any():
        cells = sorted(set(zip(frame.loc[missing, 'model'], frame.loc[missing, 'policy_id'])))
        if strict:
            listed = ', '.join(f'{m}/{p}' for m, p in cells[:10])
            raise AnalyticsError(f'no reference stance for {len(cells)} model/policy cells: {listed}')
        logger.warning('dropping votes on %d model/policy cells without a reference stance', len(cells))
        frame = frame.loc[~missing]
    frame['match'] = (frame['vote'] == frame['reference']).astype(int)
    return frame


def _pooled(frame, keys):
    rates = frame.groupby(keys, dropna=False, sort=True)['match'].agg(['sum', 'size']).reset_index()
    rates = rates.rename(columns={'sum': 'matches', 'size': 'n'})
    rates['rate'] = rates['matches'] / rates['n']
    return rates


def _add_trustee_mean(rates, keys):
    '''
    append rows for the mean of the two trustee methods, rates averaged, n summed
    '''
    trustee = rates[rates['condition'].isin(list(METHOD_CONDITIONS.values()))]
    if trustee.empty:
        return rates
    others = [k for k in keys if k != 'condition']
    mean = trustee.groupby(others, dropna=False, sort=True).agg(rate=('rate', 'mean'), n=('n', 'sum')).reset_index()
    mean['condition'] = TRUSTEE
    return pd.concat([rates, mean], ignore_index=True)


def _reports(rates, scope, reference_kind, key_column=None, key=''):
    reports = list()
    for row in rates.to_dict('records'):
        lam = row.get('lambda')
        reports.append(AgreementReport(
            scope=scope,
            reference=reference_kind,
            model=str(row['model']),
            condition=str(row['condition']),
            lambda_=None if lam is None or pd.isna(lam) else float(lam),
            rate=float(row['rate']),
            n=int(row['n']),
            key=str(row[key_column]) if key_column else key,
        ))
    return reports


def _single_label(frame, column, fallback=None):
    values = frame[column].dropna().unique()
    if len(values) == 1:
        return values[0]
    if fallback is not None:
        return fallback
    raise AnalyticsError(f'votes mix several {column} values: {sorted(map(str, values))}')


def agreement_rate(votes, reference, reference_kind='model_default', scope='aggregate', key=''):
    '''
    pooled share of ok votes equal to the reference stance of their policy

            Parameters:
                    votes (pd.DataFrame or list): votes_frame rows or Default/Delegate VoteRecords of one condition
                    reference (dict): policy id -> stance, or model -> (policy id -> stance)
                    reference_kind (str): 'model_default' or 'expert_consensus'
                    scope (str): scope written on the report
                    key (str): key written on the report

            Returns:
                    report (AgreementReport): rate = matches / n
    '''
    frame = _as_frame(votes)
    if frame.empty:
        raise AnalyticsError('no eligible votes to compute an agreement rate')
    frame = _attach_reference(frame, reference)
    lambdas = frame['lambda'].dropna().unique()
    if len(lambdas) > 1 or (len(lambdas) == 1 and frame['lambda'].isna().any()):
        raise AnalyticsError('votes mix several lambda values')
    return AgreementReport(
        scope=scope,
        reference=reference_kind,
        model=str(_single_label(frame, 'model', fallback='all')),
        condition=str(_single_label(frame, 'condition')),
        lambda_=float(lambdas[0]) if len(lambdas) else None,
        rate=float(frame['match'].sum() / len(frame)),
        n=int(len(frame)),
        key=key,
    )


def _consensus_only(frame, policies):
    by_id = {policy.id: policy for policy in policies}
    unknown = sorted(set(frame['policy_id']) - set(by_id))
    if unknown:
        raise AnalyticsError(f"votes on unknown policies: {', '.join(unknown)}")
    contested = sorted(p for p in set(frame['policy_id']) if by_id[p].category != 'consensus')
    if contested:
        raise AnalyticsError(f"expert alignment needs consensus policies, got: {', '.join(contested)}")


def expert_alignment(votes, policies, key=''):
    '''
    agreement with the expert consensus stance, only defined on consensus backed policies

            Parameters:
                    votes (pd.DataFrame or list): votes of one condition
                    policies (list): Policy objects covering every voted policy

            Returns:
                    report (AgreementReport)
    '''
    frame = _as_frame(votes)
    _consensus_only(frame, policies)
    return agreement_rate(frame, expert_stances(policies), reference_kind='expert_consensus', key=key)


def policy_agreement(votes, reference, reference_kind='model_default'):
    '''
    one pooled report per (model, condition, lambda, policy), plus the mean of both trustee methods
    '''
    frame = _attach_reference(_as_frame(votes), reference)
    keys = RATE_KEYS + ['policy_id']
    rates = _add_trustee_mean(_pooled(frame, keys), keys)
    return _reports(rates, 'per_policy', reference_kind, key_column='policy_id')


def policy_pair_agreement(votes, reference, policies, reference_kind='model_default'):
    '''
    one pooled report per (model, condition, lambda, paraphrase pair), both phrasings counted together

            Parameters:
                    votes (pd.DataFrame or list): vote table
                    reference (dict): reference stances
                    policies (list): Policy objects, used for the pair of every policy
                    reference_kind (str): 'model_default' or 'expert_consensus'

            Returns:
                    reports (list): per_policy_pair AgreementReports keyed by pair id
    '''
    frame = _attach_reference(_as_frame(votes), reference)
    frame['pair_id'] = frame['policy_id'].map({policy.id: policy.pair_id for policy in policies})
    if frame['pair_id'].isna().any():
        raise AnalyticsError('votes on policies missing from the corpus')
    keys = RATE_KEYS + ['pair_id']
    rates = _add_trustee_mean(_pooled(frame, keys), keys)
    return _reports(rates, 'per_policy_pair', reference_kind, key_column='pair_id')


def aggregate_agreement(votes, reference, reference_kind='model_default', key='all', strict=True):
    '''
    policy set level rate: every policy statement weighted equally within a prompt variant, then the mean over
    variants. n is the number of votes behind the rate, which is not matches / n unless every statement and variant
    holds the same number of votes

            Parameters:
                    votes (pd.DataFrame or list): vote table restricted to one policy set
                    reference (dict): reference stances
                    reference_kind (str): 'model_default' or 'expert_consensus'
                    key (str): name of the policy set
                    strict (boolean): if false, votes without a reference are dropped with a warning

            Returns:
                    reports (list): aggregate AgreementReports per (model, condition, lambda)
    '''
    frame = _attach_reference(_as_frame(votes), reference, strict=strict)
    if frame.empty:
        raise AnalyticsError('no eligible votes to aggregate')
    per_policy = _pooled(frame, RATE_KEYS + ['variant_id', 'policy_id'])
    per_variant = per_policy.groupby(RATE_KEYS + ['variant_id'], dropna=False, sort=True) \
        .agg(rate=('rate', 'mean'), n=('n', 'sum')).reset_index()
    rates = per_variant.groupby(RATE_KEYS, dropna=False, sort=True) \
        .agg(rate=('rate', 'mean'), n=('n', 'sum')).reset_index()
    rates = _add_trustee_mean(rates, RATE_KEYS)
    return _reports(rates, 'aggregate', reference_kind, key=key)


def _curve_points(frame, grid):
    '''
    mean over policies per (variant, lambda), then mean over variants per lambda
    '''
    per_policy = _pooled(frame, ['variant_id', 'lambda', 'policy_id'])
    per_variant = per_policy.groupby(['variant_id', 'lambda'], sort=True)['rate'].mean().reset_index()
    variant_points = {
        variant_id: [(float(lam), float(rate)) for lam, rate in zip(group['lambda'], group['rate'])]
        for variant_id, group in per_variant.groupby('variant_id', sort=True)
    }
    mean = per_variant.groupby('lambda', sort=True)['rate'].mean()
    points = [(float(lam), float(mean.loc[lam])) for lam in grid]
    return points, variant_points


def alpha_curve(records, reference, method, grid=None, policy_set_name='all'):
    '''
    agreement of the trustee votes of one model as a function of lambda
    each point weighs every policy statement equally within a variant, then every variant equally, like
    aggregate_agreement. it equals the pooled agreement_rate only when every (policy, variant) cell holds the same
    number of ok votes

            Parameters:
                    records (list): VoteRecords of one model, non trustee records are ignored
                    reference (dict): reference stances
                    method (str): 'exponential', 'dual' or 'mean_of_methods'
                    grid (list): lambda values, default 0 to 1 by 0.1
                    policy_set_name (str): label of the policies covered

            Returns:
                    curve (AlphaCurve): variant mean curve plus one curve per prompt variant
    '''
    grid = default_grid() if grid is None else list(grid)
    if method == 'mean_of_methods':
        curves = [alpha_curve(records, reference, m, grid, policy_set_name) for m in ('dual', 'exponential')]
        points = [(lam, (a + b) / 2) for (lam, a), (_, b) in zip(curves[0].points, curves[1].points)]
        variant_points = dict()
        for curve in curves:
            variant_points.update(curve.variant_points)
        return AlphaCurve(model=curves[0].model, policy_set=policy_set_name, method=method,
                          points=points, variant_points=variant_points)
    if method not in METHOD_CONDITIONS:
        raise AnalyticsError(f'unknown aggregation method: {method}')

    condition = Condition(METHOD_CONDITIONS[method])
    selected = [r for r in records if r.condition == condition and r.status == 'ok']
    if not selected:
        raise AnalyticsError(f'no ok {condition.value} records for a {method} curve')
    models = {r.model for r in selected}
    if len(models) > 1:
        raise AnalyticsError(f'curve records span several models: {sorted(models)}')
    frame = _attach_reference(votes_frame(selected, grid), reference)
    points, variant_points = _curve_points(frame, grid)
    return AlphaCurve(model=models.pop(), policy_set=policy_set_name, method=method,
                      points=points, variant_points=variant_points)


def subgroup_agreement(votes, reference, profiles, group_field, reference_kind='model_default', key_prefix=''):
    '''
    pooled agreement per category of a demographics field, categories without votes are left out. n over the
    categories of one field adds up to the n of the whole vote set

            Parameters:
                    votes (pd.DataFrame or list): vote table, Default votes (no profile) are ignored
                    reference (dict): reference stances
                    profiles (list): VoterProfile objects covering every voting profile
                    group_field (str): demographics field, or 'income_bucket' for the coarse income grouping
                    reference_kind (str): 'model_default' or 'expert_consensus'

            Returns:
                    reports (list): per_group AgreementReports keyed as field=category
    '''
    try:
        categories = field_categories(group_field)
    except ValueError as e:
        raise AnalyticsError(str(e)) from e
    frame = _as_frame(votes)
    frame = frame[frame['profile_id'] != '']
    by_id = {profile.id: profile for profile in profiles}
    unknown = sorted(set(frame['profile_id']) - set(by_id))
    if unknown:
        raise AnalyticsError(f"votes from unknown profiles: {', '.join(unknown[:10])}")
    frame = _attach_reference(frame, reference)
    frame['group'] = [str(profile_value(by_id[pid], group_field)) for pid in frame['profile_id']]
    keys = RATE_KEYS + ['group']
    rates = _add_trustee_mean(_pooled(frame, keys), keys)
    order = {str(category): i for i, category in enumerate(categories)}
    rates['order'] = rates['group'].map(order)
    rates = rates.sort_values(['model', 'condition', 'lambda', 'order'], na_position='first')
    rates['key'] = key_prefix + group_field + '=' + rates['group']
    return _reports(rates, 'per_group', reference_kind, key_column='key')


def trustee_delegate_gap(delegate_report, trustee_report):
    '''
    trustee rate minus delegate rate of two reports over the same model, policies and reference

            Parameters:
                    delegate_report (AgreementReport): Delegate condition
                    trustee_report (AgreementReport): a trustee condition

            Returns:
                    gap (float): signed difference
    '''
    if delegate_report.condition != Condition.Delegate.value:
        raise AnalyticsError(f'first report must be a Delegate report, got {delegate_report.condition}')
    if trustee_report.condition not in (TRUSTEE, *METHOD_CONDITIONS.values()):
        raise AnalyticsError(f'second report must be a trustee report, got {trustee_report.condition}')
    for field in ('model', 'scope', 'reference', 'key'):
        if getattr(delegate_report, field) != getattr(trustee_report, field):
            raise AnalyticsError(f'reports differ in {field}: {getattr(delegate_report, field)!r} '
                                 f'vs {getattr(trustee_report, field)!r}')
    return trustee_report.rate - delegate_report.rate


def _pair_tuples(votes, policies):
    frame = _as_frame(votes).copy()
    pairs = {policy.id: policy.pair_id for policy in policies}
    frame['pair_id'] = frame['policy_id'].map(pairs)
    if frame['pair_id'].isna().any():
        raise AnalyticsError('votes on policies missing from the corpus')
    keys = ['model', 'condition', 'method', 'lambda', 'variant_id', 'profile_id', 'pair_id']
    tuples = frame.groupby(keys, dropna=False, sort=True).agg(
        members=('policy_id', 'nunique'), votes=('policy_id', 'size'), distinct=('vote', 'nunique'),
    ).reset_index()
    tuples = tuples[(tuples['members'] == 2) & (tuples['votes'] == 2)]
    tuples['consistent'] = (tuples['distinct'] == 2).astype(int)
    return tuples


def paraphrase_consistency(votes, policies):
    '''
    share of (profile, model, condition, variant, lambda) tuples that vote differently on the two phrasings
    of a pair. tuples missing a phrasing, failed ones included, are not evaluable

            Parameters:
                    votes (pd.DataFrame or list): vote table
                    policies (list): Policy objects

            Returns:
                    rate (float): consistent tuples / evaluable tuples
    '''
    tuples = _pair_tuples(votes, policies)
    if tuples.empty:
        raise AnalyticsError('no evaluable paraphrase pair tuples')
    return float(tuples['consistent'].sum() / len(tuples))


def consistency_table(votes, policies):
    tuples = _pair_tuples(votes, policies)
    if tuples.empty:
        return pd.DataFrame(columns=['model', 'condition', 'lambda', 'rate', 'n'])
    table = tuples.groupby(['model', 'condition', 'lambda'], dropna=False, sort=True) \
        .agg(consistent=('consistent', 'sum'), n=('consistent', 'size')).reset_index()
    table['rate'] = table['consistent'] / table['n']
    return table[['model', 'condition', 'lambda', 'rate', 'n']]


def utility_distribution(records):
    '''
    elicited scores of the ok trustee records in long form

            Parameters:
                    records (list): VoteRecord objects

            Returns:
                    frame (pd.DataFrame): model, condition, variant_id, profile_id, policy_id, option, horizon, score
    '''
    rows = list()
    for record in records:
        if record.status != 'ok' or not record.condition.is_trustee:
            continue
        base = (record.model, record.condition.value, record.variant_id, record.profile_id, record.policy_id)
        u = record.utilities
        if u.form == 'dual':
            scores = [('yes', 'short', u.yes_short), ('yes', 'long', u.yes_long),
                      ('no', 'short', u.no_short), ('no', 'long', u.no_long)]
        else:
            scores = [('yes', label, s) for label, s in zip(PERIOD_LABELS, u.yes_periods)]
            scores += [('no', label, s) for label, s in zip(PERIOD_LABELS, u.no_periods)]
        rows.extend(base + score for score in scores)
    columns = ['model', 'condition', 'variant_id', 'profile_id', 'policy_id', 'option', 'horizon', 'score']
    return pd.DataFrame(rows, columns=columns).sort_values(columns[:-1]).reset_index(drop=True)


def reports_frame(reports):
    columns = ['scope', 'model', 'condition', 'lambda', 'rate', 'n', 'key', 'reference']
    rows = [[r.scope, r.model, r.condition, r.lambda_, r.rate, r.n, r.key, r.reference] for r in reports]
    return pd.DataFrame(rows, columns=columns)


def analyze_run(run, config, out_dir=None, reference='default', by=('policy', 'pair'), grid=None, verbose=False):
    '''
    compute every table of a run and write them as csv files

            Parameters:
                    run (str): run directory or run id
                    config (CivicsimConfig): loaded configuration
                    out_dir (str): output directory, default <run dir>/analysis
                    reference (str): 'default' (model defaults) or 'expert' (expert consensus, consensus set only)
                    by (tuple): extra breakdowns among 'policy', 'pair' and 'group:<field>'
                    grid (list): lambda grid, default from the config
                    verbose (boolean): if true, print where the tables went

            Returns:
                    tables (dict): name -> pd.DataFrame, one entry per written csv
    '''
    run_dir = _resolve_run_dir(run, config.paths.runs_dir)
    manifest = read_manifest(run_dir)
    plan = manifest.plan
    records = load_records(run_dir)
    policies = load_policies(Path(plan.policies) if plan.policies else config.paths.policies_path())
    grid = parse_grid(config.analysis.lambda_grid) if grid is None else list(grid)
    frame = votes_frame(records, grid)
    if frame.empty:
        raise AnalyticsError(f'run {manifest.run_id} has no ok records to analyze')

    if reference == 'default':
        reference_kind = 'model_default'
        stances = {model: default_stances(records, policies, model) for model in sorted(set(frame['model']))}
        sets = POLICY_SETS
    elif reference == 'expert':
        reference_kind = 'expert_consensus'
        stances = expert_stances(policies)
        sets = ('consensus',)
    else:
        raise AnalyticsError(f"unknown reference '{reference}', expected default or expert")

    groups = [b.split(':', 1)[1] for b in by if b.startswith('group:')]
    profiles = []
    if groups:
        profiles = load_profiles(Path(plan.profiles) if plan.profiles else config.paths.profiles_path())

    reports = list()
    curve_rows = list()
    baseline_rows = list()
    gap_rows = list()
    for set_name in sets:
        ids = {policy.id for policy in policy_set(policies, set_name)}
        set_frame = _attach_reference(frame[frame['policy_id'].isin(ids)], stances, strict=False)
        set_frame = set_frame[VOTE_COLUMNS]
        if set_frame.empty:
            continue
        if 'policy' in by:
            reports.extend(policy_agreement(set_frame, stances, reference_kind))
        if 'pair' in by:
            reports.extend(policy_pair_agreement(set_frame, stances, policies, reference_kind))
        aggregate = aggregate_agreement(set_frame, stances, reference_kind, key=set_name)
        reports.extend(aggregate)
        for field in groups:
            reports.extend(subgroup_agreement(set_frame, stances, profiles, field, reference_kind,
                                              key_prefix=f'{set_name}/'))

        set_records = [r for r in records if r.policy_id in ids and r.status == 'ok']
        for model in sorted(set(set_frame['model'])):
            model_records = [r for r in set_records if r.model == model]
            model_stances = stances[model] if reference == 'default' else stances
            model_records = [r for r in model_records if r.policy_id in model_stances]
            conditions = {r.condition for r in model_records}
            methods = [m for m, c in METHOD_CONDITIONS.items() if Condition(c) in conditions]
            if len(methods) == 2:
                methods.append('mean_of_methods')
            for method in methods:
                curve = alpha_curve(model_records, model_stances, method, grid, set_name)
                curve_rows.extend((model, set_name, method, 'mean', lam, rate) for lam, rate in curve.points)
                for variant_id, points in curve.variant_points.items():
                    curve_rows.extend((model, set_name, method, variant_id, lam, rate) for lam, rate in points)

            delegate = [r for r in aggregate if r.model == model and r.condition == Condition.Delegate.value]
            if delegate:
                baseline_rows.append((model, set_name, reference_kind, delegate[0].rate, delegate[0].n))
                trustee = [r for r in aggregate if r.model == model and r.lambda_ is not None
                           and np.isclose(r.lambda_, grid[-1]) and r.condition in (TRUSTEE, *METHOD_CONDITIONS.values())]
                for report in trustee:
                    gap_rows.append((model, set_name, reference_kind, report.condition, report.lambda_,
                                     delegate[0].rate, report.rate, trustee_delegate_gap(delegate[0], report)))

    tables = {
        'agreement': reports_frame(reports),
        'curves': pd.DataFrame(curve_rows, columns=['model', 'policy_set', 'method', 'variant_id', 'lambda', 'rate']),
        'baselines': pd.DataFrame(baseline_rows, columns=['model', 'policy_set', 'reference', 'rate', 'n']),
        'gaps': pd.DataFrame(gap_rows, columns=['model', 'policy_set', 'reference', 'condition', 'lambda',
                                                'delegate_rate', 'trustee_rate', 'gap']),
        'consistency': consistency_table(frame, policies),
        'utilities': utility_distribution(records),
        'policies': pd.DataFrame([(p.id, p.pair_id, p.category, p.statement) for p in policies],
                                 columns=['policy_id', 'pair_id', 'category', 'statement']),
    }
    out_dir = Path(out_dir) if out_dir else run_dir / 'analysis'
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, table in tables.items():
        table.to_csv(out_dir / f'{name}.csv', index=False, lineterminator='\n')
    if verbose:
        print('------------------------------------------------------------')
        print(f'analysis of run {manifest.run_id} written to {out_dir}')
        print(f"{len(reports)} agreement rows, {len(curve_rows)} curve points")
        print('------------------------------------------------------------')
    return tables
