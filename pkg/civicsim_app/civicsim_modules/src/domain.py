"""
core vocabulary shared by every module: profiles, policies, conditions, utility schedules and vote records.
all values are frozen pydantic models, json on disk is produced with model_dump_json and read back with model_validate
"""
import math
import datetime
from enum import Enum
from typing import Dict, Literal, Optional, Tuple, get_args

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vote = Literal['Yes', 'No']
VOTES = get_args(Vote)

Gender = Literal['Female', 'Male']
Race = Literal['White', 'Hispanic/Latino', 'Black/African American', 'Other', 'Asian']
AgeGroup = Literal['18-24', '25-34', '35-44', '45-54', '55-64', '65+']
PoliticalAffiliation = Literal['Democrat', 'Republican', 'Independent']
Religion = Literal['Protestant/Other Christian', 'Unaffiliated (None)', 'Catholic', 'Other religions', 'Jewish']
Occupation = Literal[
    'Mgmt/business/science/arts',
    'Production/transport/materials',
    'Sales/office',
    'Service',
    'Natural resources/construction',
]
IncomeBracket = Literal['under-30k', '30-49k', '50-99k', '100-199k', 'over-200k']
HousingStatus = Literal['Own', 'Rent', 'Live with family', 'Other']
Region = Literal['Northeast', 'Midwest', 'South', 'West']
Education = Literal[
    "Bachelor's degree",
    'Some college, no degree',
    'Associate degree',
    'High school or less',
    'Graduate/professional degree',
]
Language = Literal['English only', 'Spanish', 'Other languages', 'Other Indo-European']
MaritalStatus = Literal['Married', 'Never married', 'Divorced']
HealthStatus = Literal['Good', 'Fair', 'Poor']

HOUSEHOLD_SIZES = tuple(range(1, 21))

# closed category list per demographics field, in the order they are reported
DEMOGRAPHIC_CATEGORIES = {
    'gender': get_args(Gender),
    'race': get_args(Race),
    'age_group': get_args(AgeGroup),
    'political_affiliation': get_args(PoliticalAffiliation),
    'religion': get_args(Religion),
    'household_size': HOUSEHOLD_SIZES,
    'occupation': get_args(Occupation),
    'income_bracket': get_args(IncomeBracket),
    'housing_status': get_args(HousingStatus),
    'region': get_args(Region),
    'education': get_args(Education),
    'language': get_args(Language),
    'marital_status': get_args(MaritalStatus),
    'health_status': get_args(HealthStatus),
}
DEMOGRAPHIC_FIELDS = tuple(DEMOGRAPHIC_CATEGORIES.keys())

INCOME_BUCKETS = ('<50K', '50-99K', '>100K')
_INCOME_BUCKET_MAP = {
    'under-30k': '<50K',
    '30-49k': '<50K',
    '50-99k': '50-99K',
    '100-199k': '>100K',
    'over-200k': '>100K',
}

PERIOD_LABELS = ('0-5 years', '5-10 years', '10-15 years', '15-20 years', '20-25 years', '25-30 years')
N_PERIODS = len(PERIOD_LABELS)


def income_bucket(bracket):
    '''
    map a storage income bracket to the coarser reporting bucket

            Parameters:
                    bracket (str): one of the five income brackets

            Returns:
                    bucket (str): '<50K', '50-99K' or '>100K'
    '''
    try:
        return _INCOME_BUCKET_MAP[bracket]
    except KeyError:
        raise ValueError(f'unknown income bracket: {bracket}')


class Condition(str, Enum):
    Default = 'Default'
    Delegate = 'Delegate'
    TrusteeDual = 'TrusteeDual'
    TrusteePeriods = 'TrusteePeriods'

    @property
    def slug(self):
        """directory name of the condition's prompt battery"""
        return {
            'Default': 'default',
            'Delegate': 'delegate',
            'TrusteeDual': 'trustee_dual',
            'TrusteePeriods': 'trustee_periods',
        }[self.value]

    @property
    def expects(self):
        return {
            'Default': 'binary_vote',
            'Delegate': 'binary_vote',
            'TrusteeDual': 'dual_schedule',
            'TrusteePeriods': 'period_schedule',
        }[self.value]

    @property
    def is_trustee(self):
        return self in (Condition.TrusteeDual, Condition.TrusteePeriods)

    @classmethod
    def from_slug(cls, slug):
        for condition in cls:
            if condition.slug == slug or condition.value == slug:
                return condition
        raise ValueError(f'unknown condition: {slug}')


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class Demographics(_Frozen):
    gender: Gender
    race: Race
    age_group: AgeGroup
    political_affiliation: PoliticalAffiliation
    religion: Religion
    household_size: int = Field(ge=1, le=20)
    occupation: Occupation
    income_bracket: IncomeBracket
    housing_status: HousingStatus
    region: Region
    education: Education
    language: Language
    marital_status: MaritalStatus
    health_status: HealthStatus


class VoterProfile(_Frozen):
    id: str = Field(min_length=1)
    demographics: Demographics
    biography: str

    @field_validator('biography')
    @classmethod
    def _biography_not_blank(cls, value):
        if not value.strip():
            raise ValueError('biography is empty')
        return value


class Policy(_Frozen):
    """
    policy statement of the corpus. cross-record rules (pairing, expert stance presence, empty statements)
    are checked by corpus_utils.validate_corpus so that a bad corpus can still be loaded and reported on
    """
    id: str = Field(min_length=1)
    statement: str
    topic: str
    pair_id: str
    polarity: Literal['affirmative', 'negated']
    category: Literal['contested', 'consensus']
    expert_stance: Optional[Vote] = None
    model_defaults: Dict[str, Vote] = Field(default_factory=dict)


def _check_score(value, label):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValueError(f'{label} is not a finite number: {value!r}')
    if value < 0 or value > 100:
        raise ValueError(f'{label} out of range [0, 100]: {value}')


class UtilitySchedule(_Frozen):
    """
    utility scores elicited in a trustee condition. dual form holds one short and one long term score per option,
    periods form holds six scores per option, index t = 0 is years 0-5 and t = 5 is years 25-30
    """
    form: Literal['dual', 'periods']
    yes_short: Optional[float] = None
    yes_long: Optional[float] = None
    no_short: Optional[float] = None
    no_long: Optional[float] = None
    yes_periods: Optional[Tuple[float, ...]] = None
    no_periods: Optional[Tuple[float, ...]] = None

    @model_validator(mode='after')
    def _check_form(self):
        dual_fields = ('yes_short', 'yes_long', 'no_short', 'no_long')
        period_fields = ('yes_periods', 'no_periods')
        present, absent = (dual_fields, period_fields) if self.form == 'dual' else (period_fields, dual_fields)
        for name in present:
            if getattr(self, name) is None:
                raise ValueError(f'{self.form} schedule is missing {name}')
        for name in absent:
            if getattr(self, name) is not None:
                raise ValueError(f'{self.form} schedule must not carry {name}')
        if self.form == 'dual':
            for name in dual_fields:
                _check_score(getattr(self, name), name)
        else:
            for name in period_fields:
                scores = getattr(self, name)
                if len(scores) != N_PERIODS:
                    raise ValueError(f'{name} must hold {N_PERIODS} scores, got {len(scores)}')
                for t, score in enumerate(scores):
                    _check_score(score, f'{name}[{t}]')
        return self

    @classmethod
    def dual(cls, yes_short, yes_long, no_short, no_long):
        return cls(form='dual', yes_short=yes_short, yes_long=yes_long, no_short=no_short, no_long=no_long)

    @classmethod
    def periods(cls, yes_periods, no_periods):
        return cls(form='periods', yes_periods=tuple(yes_periods), no_periods=tuple(no_periods))


RecordStatus = Literal['ok', 'parse_failed', 'provider_failed']


class VoteRecord(_Frozen):
    profile_id: Optional[str] = None
    policy_id: str
    model: str
    condition: Condition
    variant_id: str
    vote: Optional[Vote] = None
    utilities: Optional[UtilitySchedule] = None
    rationale: str = ''
    raw_response: str = ''
    status: RecordStatus
    timestamp: datetime.datetime

    @model_validator(mode='after')
    def _check_invariants(self):
        ok = self.status == 'ok'
        if (self.vote is not None) != (ok and not self.condition.is_trustee):
            raise ValueError('vote must be present exactly for ok Default/Delegate records')
        if (self.utilities is not None) != (ok and self.condition.is_trustee):
            raise ValueError('utilities must be present exactly for ok trustee records')
        if self.utilities is not None:
            expected = 'dual' if self.condition == Condition.TrusteeDual else 'periods'
            if self.utilities.form != expected:
                raise ValueError(f'{self.condition.value} records carry {expected} schedules')
        if (self.profile_id is None) != (self.condition == Condition.Default):
            raise ValueError('profile_id is absent exactly for Default records')
        return self

    @property
    def cell_key(self):
        return cell_key(self.model, self.condition, self.variant_id, self.profile_id, self.policy_id)


def cell_key(model, condition, variant_id, profile_id, policy_id):
    '''
    identity of one experiment cell, used for resume and deduplication

            Parameters:
                    model (str): provider name
                    condition (Condition): decision condition
                    variant_id (str): prompt variant
                    profile_id (str): voter profile, None for Default cells
                    policy_id (str): policy

            Returns:
                    key (tuple): hashable cell key
    '''
    return (model, Condition(condition).value, variant_id, profile_id or '', policy_id)
