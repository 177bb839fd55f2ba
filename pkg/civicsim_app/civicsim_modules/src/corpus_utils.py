import json
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from .domain import (
    DEMOGRAPHIC_CATEGORIES,
    DEMOGRAPHIC_FIELDS,
    INCOME_BUCKETS,
    Demographics,
    Policy,
    VoterProfile,
    income_bucket,
)
from .exceptions import CorpusFormatError, CorpusValidationError, GenerationError, ProviderError
from .prompt_utils import extract_json

logger = logging.getLogger(__name__)


class ValidationEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    entity_id: str
    rule: str
    message: str


class CorpusValidationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    errors: Tuple[ValidationEntry, ...] = ()
    warnings: Tuple[ValidationEntry, ...] = ()

    @property
    def accepted(self):
        return len(self.errors) == 0


def _first_error_field(error):
    details = error.errors()
    if not details:
        return None
    return '.'.join(str(x) for x in details[0]['loc']) or None


def read_jsonl(path):
    '''
    iterate the non blank lines of a jsonl file

            Parameters:
                    path (str): file path

            Returns:
                    rows (generator): (line number, decoded object) tuples, line numbers start at 1
    '''
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f'malformed json: {e.msg}', path=path, line=lineno) from e


def write_jsonl(path, models):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for model in models:
            f.write(model.model_dump_json() + '\n')


def load_policies(path, validate=True):
    '''
    read the policy corpus, a json array of policy objects

            Parameters:
                    path (str): path to policies.json
                    validate (boolean): if true, reject a corpus whose validation report has errors

            Returns:
                    policies (list): list of Policy in file order
    '''
    if not Path(path).exists():
        raise CorpusFormatError('policies file not found', path=path)
    try:
        with open(path, encoding='utf-8') as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise CorpusFormatError(f'malformed json: {e.msg}', path=path, line=e.lineno) from e
    if not isinstance(doc, list):
        raise CorpusFormatError('top level must be an array of policies', path=path)

    policies = list()
    for position, item in enumerate(doc, start=1):
        try:
            policies.append(Policy.model_validate(item))
        except ValidationError as e:
            raise CorpusFormatError(str(e.errors()[0]['msg']), path=path, line=position, field=_first_error_field(e)) from e

    if validate:
        report = validate_corpus(policies)
        if not report.accepted:
            raise CorpusValidationError(report)
        for warning in report.warnings:
            logger.debug('corpus warning %s [%s] %s', warning.entity_id, warning.rule, warning.message)
    return policies


def save_policies(path, policies):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = [policy.model_dump(mode='json') for policy in policies]
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, indent=2, ensure_ascii=False)
        f.write('\n')


def validate_corpus(policies):
    '''
    check the cross-record rules of a policy corpus. the result does not depend on input order

            Parameters:
                    policies (list): list of Policy

            Returns:
                    report (CorpusValidationReport): errors and warnings, sorted
    '''
    errors, warnings = list(), list()

    id_counts = Counter(policy.id for policy in policies)
    for policy_id, n in id_counts.items():
        if n > 1:
            errors.append(ValidationEntry(entity_id=policy_id, rule='unique_id', message=f'id used by {n} policies'))

    for policy in policies:
        if not policy.statement.strip():
            errors.append(ValidationEntry(entity_id=policy.id, rule='statement', message='statement is empty'))
        if policy.category == 'consensus' and policy.expert_stance is None:
            errors.append(ValidationEntry(entity_id=policy.id, rule='expert_stance', message='consensus policy without expert stance'))
        if policy.category == 'contested' and policy.expert_stance is not None:
            errors.append(ValidationEntry(entity_id=policy.id, rule='expert_stance', message='contested policy carries an expert stance'))

    pairs = defaultdict(list)
    for policy in policies:
        pairs[policy.pair_id].append(policy)
    for pair_id, members in pairs.items():
        if len(members) != 2:
            errors.append(ValidationEntry(entity_id=pair_id, rule='pair_completeness', message=f'pair has {len(members)} member(s), expected 2'))
            continue
        first, second = members
        if first.polarity == second.polarity:
            errors.append(ValidationEntry(entity_id=pair_id, rule='pair_polarity', message=f'both members are {first.polarity}'))
        if first.category != second.category:
            errors.append(ValidationEntry(entity_id=pair_id, rule='pair_category', message='members belong to different categories'))
        if first.expert_stance is not None and first.expert_stance == second.expert_stance:
            errors.append(ValidationEntry(entity_id=pair_id, rule='expert_pair', message='expert stance is the same for both phrasings'))
        for model in sorted(set(first.model_defaults) & set(second.model_defaults)):
            if first.model_defaults[model] == second.model_defaults[model]:
                warnings.append(ValidationEntry(
                    entity_id=pair_id,
                    rule='default_consistency',
                    message=f'{model} default is {first.model_defaults[model]} on both phrasings',
                ))

    key = lambda e: (e.entity_id, e.rule, e.message)
    return CorpusValidationReport(errors=tuple(sorted(errors, key=key)), warnings=tuple(sorted(warnings, key=key)))


def pair_partner(policies, policy):
    partners = [p for p in policies if p.pair_id == policy.pair_id and p.id != policy.id]
    if len(partners) != 1:
        raise ValueError(f'policy {policy.id} has {len(partners)} pair partners')
    return partners[0]


def policy_set(policies, category):
    if category not in ('contested', 'consensus'):
        raise ValueError(f'unknown policy set: {category}')
    return [policy for policy in policies if policy.category == category]


def load_profiles(path, validate=True):
    '''
    read voter profiles, one json object per line

            Parameters:
                    path (str): path to profiles.jsonl
                    validate (boolean): if true, reject duplicated ids

            Returns:
                    profiles (list): list of VoterProfile in file order
    '''
    if not Path(path).exists():
        raise CorpusFormatError('profiles file not found', path=path)
    profiles = list()
    for lineno, row in read_jsonl(path):
        try:
            profiles.append(VoterProfile.model_validate(row))
        except ValidationError as e:
            raise CorpusFormatError(str(e.errors()[0]['msg']), path=path, line=lineno, field=_first_error_field(e)) from e
    if validate:
        report = validate_profiles(profiles)
        if not report.accepted:
            raise CorpusValidationError(report)
    return profiles


def validate_profiles(profiles):
    '''
    cross record rules of a profile set: unique ids, non blank biographies

            Parameters:
                    profiles (list): VoterProfile objects

            Returns:
                    report (CorpusValidationReport)
    '''
    duplicated = sorted(pid for pid, n in Counter(p.id for p in profiles).items() if n > 1)
    errors = [ValidationEntry(entity_id=pid, rule='unique_id', message='duplicated profile id') for pid in duplicated]
    for profile in profiles:
        if not profile.biography.strip():
            errors.append(ValidationEntry(entity_id=profile.id, rule='biography', message='blank biography'))
    warnings = list()
    if not profiles:
        warnings.append(ValidationEntry(entity_id='profiles', rule='empty', message='profile set is empty'))
    return CorpusValidationReport(errors=tuple(errors), warnings=tuple(warnings))


def save_profiles(path, profiles):
    write_jsonl(path, profiles)


def field_categories(field):
    if field == 'income_bucket':
        return INCOME_BUCKETS
    if field not in DEMOGRAPHIC_CATEGORIES:
        raise ValueError(f"unknown demographics field '{field}', expected one of {', '.join(DEMOGRAPHIC_FIELDS)}")
    return DEMOGRAPHIC_CATEGORIES[field]


def profile_value(profile, field):
    if field == 'income_bucket':
        return income_bucket(profile.demographics.income_bracket)
    return getattr(profile.demographics, field)


def demographic_histogram(profiles, field):
    '''
    count profiles per category of a demographics field, every category of the closed list is reported

            Parameters:
                    profiles (list): list of VoterProfile
                    field (str): demographics field name, or 'income_bucket' for the derived reporting buckets

            Returns:
                    histogram (dict): category -> count, counts sum to len(profiles)
    '''
    categories = field_categories(field)
    values = pd.Series([profile_value(p, field) for p in profiles], dtype=object)
    counts = values.value_counts().reindex(list(categories), fill_value=0)
    return {category: int(n) for category, n in counts.items()}


# published marginals of the 100 profile sample
REFERENCE_HISTOGRAMS = {
    'gender': {'Female': 54, 'Male': 46},
    'race': {'White': 66, 'Hispanic/Latino': 15, 'Black/African American': 8, 'Other': 7, 'Asian': 4},
    'age_group': {'18-24': 8, '25-34': 16, '35-44': 15, '45-54': 20, '55-64': 21, '65+': 20},
    'political_affiliation': {'Democrat': 39, 'Republican': 36, 'Independent': 25},
    'religion': {'Protestant/Other Christian': 49, 'Unaffiliated (None)': 22, 'Catholic': 21, 'Other religions': 7, 'Jewish': 1},
    'household_size': {1: 33, 2: 15, 3: 19, 4: 17, 5: 14, 6: 2},
    'occupation': {
        'Mgmt/business/science/arts': 44,
        'Production/transport/materials': 17,
        'Sales/office': 17,
        'Service': 16,
        'Natural resources/construction': 6,
    },
    'income_bracket': {'under-30k': 11, '30-49k': 25, '50-99k': 42, '100-199k': 16, 'over-200k': 6},
    'housing_status': {'Own': 38, 'Rent': 32, 'Live with family': 24, 'Other': 6},
    'region': {'South': 35, 'Northeast': 24, 'West': 23, 'Midwest': 18},
    'education': {
        "Bachelor's degree": 28,
        'Some college, no degree': 23,
        'Associate degree': 21,
        'High school or less': 16,
        'Graduate/professional degree': 12,
    },
    'language': {'English only': 82, 'Spanish': 14, 'Other languages': 3, 'Other Indo-European': 1},
    'marital_status': {'Married': 58, 'Never married': 30, 'Divorced': 12},
    'health_status': {'Good': 80, 'Fair': 14, 'Poor': 6},
}


def compare_to_reference(profiles):
    '''
    compare the marginals of a profile set against the published sample, scaled to the set size

            Parameters:
                    profiles (list): list of VoterProfile

            Returns:
                    df (pd.DataFrame): columns field, category, observed, reference, diff
    '''
    rows = list()
    scale = len(profiles) / 100.0
    for field, reference in REFERENCE_HISTOGRAMS.items():
        observed = demographic_histogram(profiles, field)
        for category, count in observed.items():
            expected = reference.get(category, 0) * scale
            if count == 0 and expected == 0:
                continue
            rows.append({'field': field, 'category': category, 'observed': count, 'reference': expected})
    df = pd.DataFrame(rows, columns=['field', 'category', 'observed', 'reference'])
    df['diff'] = df['observed'] - df['reference']
    return df


DEFAULT_DEMO_SPEC = (
    'We are building a panel of synthetic voters that together represent a diverse set of Americans, '
    'spread across ages, regions, incomes, political affiliations and backgrounds.'
)

DEMOGRAPHICS_PROMPT = """{seed_demo_spec}

Generate the demographic characteristics of {k} different adults living in the United States.{batch_note}
Return a JSON array of {k} objects. Each object must have exactly these keys, and each value must be one of the allowed values:
{schema}
Return only the JSON array."""

BIOGRAPHY_PROMPT = """Write a detailed, plausible biography for an American voter with the following demographics:
{demographics}
Give the person a name. Describe their upbringing, work, family, household, beliefs and daily life in a few paragraphs, consistent with every listed characteristic.
Return only the biography text."""


def _schema_lines():
    lines = list()
    for field, categories in DEMOGRAPHIC_CATEGORIES.items():
        if field == 'household_size':
            lines.append('- household_size: integer from 1 to 20')
        else:
            lines.append(f"- {field}: {' | '.join(categories)}")
    return '\n'.join(lines)


class ProfileGenerator:
    """
    two stage synthetic voter generation: structured demographics first, then one biography per record

    Attributes
    ----------
    provider : ProviderHandle
        chat completion backend used for both stages
    seed_demo_spec : str
        free text that frames the population to draw
    retries : int
        replacement rounds for invalid records before they are dropped
    parallelism : int
        concurrent biography requests
    warnings : list
        one message per dropped record

    Methods
    -------
    generate(count=int):
        run both stages and return the valid profiles
    """
    def __init__(self, provider, seed_demo_spec=DEFAULT_DEMO_SPEC, retries=2, parallelism=8, verbose=False):
        self.provider = provider
        self.seed_demo_spec = seed_demo_spec
        self.retries = retries
        self.parallelism = parallelism
        self.verbose = verbose
        self.warnings = list()

    def _demographics_prompt(self, k, round_index):
        batch_note = '' if round_index == 0 else f' These replace invalid records (replacement batch {round_index}).'
        return DEMOGRAPHICS_PROMPT.format(seed_demo_spec=self.seed_demo_spec, k=k, batch_note=batch_note, schema=_schema_lines())

    def _draw_demographics(self, count):
        accepted = list()
        drawn, cap = 0, 3 * count
        for round_index in range(self.retries + 1):
            missing = count - len(accepted)
            k = min(missing, cap - drawn)
            if k <= 0:
                break
            try:
                raw = self.provider.complete(self._demographics_prompt(k, round_index))
            except ProviderError as e:
                message = f'demographics stage failed after {len(accepted)} records: {e}'
                raise GenerationError(message, partial=accepted) from e
            try:
                rows = extract_json(raw, kind=list)
            except ValueError:
                logger.debug('demographics batch %s returned no json array', round_index)
                rows = []
            drawn += k
            for row in rows[:k]:
                try:
                    accepted.append(Demographics.model_validate(row))
                except ValidationError as e:
                    logger.debug('invalid demographics record in batch %s: %s', round_index, e.errors()[0]['msg'])
        for _ in range(count - len(accepted)):
            self._warn('demographics record dropped after exhausting retries')
        return accepted

    def _warn(self, message):
        self.warnings.append(message)
        logger.warning(message)

    def _biography(self, demographics):
        prompt = BIOGRAPHY_PROMPT.format(demographics=demographics.model_dump_json(indent=1))
        for attempt in range(self.retries + 1):
            text = self.provider.complete(prompt if attempt == 0 else f'{prompt}\nThe biography must not be empty.')
            if text and text.strip():
                return text.strip()
        return None

    def generate(self, count):
        """
        run both stages and return the valid profiles

        Parameters
        ----------
        count (int): number of profiles requested

        Returns
        -------
        profiles (list): list of VoterProfile, ids p001, p002, ... in demographic record order

        Raises
        ------
        GenerationError: on a provider failure, partial holds the accepted Demographics when the first stage
            fails and the finished VoterProfile objects when the biography stage fails
        """
        if count < 1:
            raise ValueError('count must be at least 1')
        self.warnings = list()
        records = self._draw_demographics(count)

        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            futures = [pool.submit(self._biography, record) for record in records]
            profiles, failure = list(), None
            for record, future in zip(records, futures):
                try:
                    bio = future.result()
                except ProviderError as e:
                    failure = failure or e
                    continue
                if bio is None:
                    self._warn('biography dropped after exhausting retries')
                    continue
                profiles.append(VoterProfile(id=f'p{len(profiles) + 1:03d}', demographics=record, biography=bio))
        if failure is not None:
            raise GenerationError(f'biography stage failed: {failure}', partial=profiles) from failure

        if self.verbose:
            print('---------------------- profile generation ----------------------')
            print(f'requested: {count}, generated: {len(profiles)}, dropped: {len(self.warnings)}')
        return profiles


def generate_profiles(count, provider, seed_demo_spec=DEFAULT_DEMO_SPEC, retries=2, parallelism=8, verbose=False):
    '''
    generate synthetic voter profiles with a chat completion backend

            Parameters:
                    count (int): number of profiles requested
                    provider (ProviderHandle): backend
                    seed_demo_spec (str): framing of the population
                    retries (int): replacement rounds for invalid records
                    parallelism (int): concurrent biography requests
                    verbose (boolean): if true, print a summary

            Returns:
                    profiles (list): list of VoterProfile, possibly fewer than count (see logged warnings)
    '''
    generator = ProfileGenerator(provider, seed_demo_spec, retries=retries, parallelism=parallelism, verbose=verbose)
    return generator.generate(count)
