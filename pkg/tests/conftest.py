import sys
import json
import datetime
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / 'civicsim_app'))

from civicsim_modules.src.config_utils import DATA_DIR, load_config  # noqa: E402
from civicsim_modules.src.corpus_utils import load_policies, load_profiles, save_policies, save_profiles  # noqa: E402
from civicsim_modules.src.domain import Condition, UtilitySchedule, VoteRecord  # noqa: E402

FIXED_TIME = datetime.datetime(2024, 1, 1, tzinfo=datetime.timezone.utc)

# two contested pairs and one consensus pair
RUN_POLICY_IDS = (
    'minimum_wage.aff', 'minimum_wage.neg',
    'immigration.aff', 'immigration.neg',
    'carbon_emissions.aff', 'carbon_emissions.neg',
)

BINARY_YES = '{"reason": "it helps", "vote": "Yes"}'
BINARY_NO = '{"reason": "it hurts", "vote": "No"}'
DUAL_ANSWER = json.dumps({
    'yes_vote': {'reasoning': 'better later', 'long_util': 80, 'short_util': 40},
    'no_vote': {'reasoning': 'better now', 'long_util': 50, 'short_util': 60},
})
PERIODS_ANSWER = json.dumps({
    'yes': {label: {'rationale': 'r', 'score': score}
            for label, score in zip(['0-5 years', '5-10 years', '10-15 years', '15-20 years', '20-25 years', '25-30 years'],
                                    [30, 40, 60, 70, 80, 90])},
    'no': {label: {'rationale': 'r', 'score': score}
           for label, score in zip(['0-5 years', '5-10 years', '10-15 years', '15-20 years', '20-25 years', '25-30 years'],
                                   [70, 60, 50, 40, 30, 20])},
})

MOCK_RULES = [
    {'match': 'contains:For each time phase', 'response': PERIODS_ANSWER},
    {'match': 'contains:"yes_vote"', 'response': DUAL_ANSWER},
    {'match': 'regex:minimum wage.*\'reason\'', 'response': BINARY_NO},
    {'match': "contains:'reason'", 'response': BINARY_YES},
]


def fixed_clock():
    return FIXED_TIME


def write_rules(path, rules):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for rule in rules:
            f.write(json.dumps(rule) + '\n')
    return path


def make_record(condition, vote=None, utilities=None, model='m1', variant_id='v1', profile_id='p001',
                policy_id='immigration.aff', status='ok'):
    condition = Condition(condition)
    return VoteRecord(
        profile_id=None if condition == Condition.Default else profile_id,
        policy_id=policy_id,
        model=model,
        condition=condition,
        variant_id=variant_id,
        vote=vote,
        utilities=utilities,
        status=status,
        raw_response='' if status == 'provider_failed' else 'raw',
        timestamp=FIXED_TIME,
    )


def dual(yes_short, yes_long, no_short, no_long):
    return UtilitySchedule.dual(yes_short, yes_long, no_short, no_long)


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    monkeypatch.delenv('CIVICSIM_CONFIG', raising=False)


@pytest.fixture
def shipped_policies():
    return load_policies(DATA_DIR / 'policies.json')


@pytest.fixture
def shipped_profiles():
    return load_profiles(DATA_DIR / 'profiles.jsonl')


@pytest.fixture
def corpus_dir(tmp_path, shipped_policies, shipped_profiles):
    '''
    six policies (three pairs) and ten profiles written under tmp_path
    '''
    directory = tmp_path / 'corpus'
    by_id = {policy.id: policy for policy in shipped_policies}
    save_policies(directory / 'policies.json', [by_id[pid] for pid in RUN_POLICY_IDS])
    save_profiles(directory / 'profiles.jsonl', shipped_profiles[:10])
    return directory


@pytest.fixture
def mock_script(tmp_path):
    return write_rules(tmp_path / 'mock.jsonl', MOCK_RULES)


def make_config(root, mock_script=None, models=('mock-a', 'mock-b'), parallelism=4):
    providers = {name: {'request_shape': 'mock', 'mock_script': str(mock_script)} for name in models} if mock_script else {}
    return load_config(overrides={
        'paths': {'cache_dir': str(Path(root) / 'cache'), 'runs_dir': str(Path(root) / 'runs')},
        'providers': providers,
        'runner': {'parallelism': parallelism, 'progress_every': 100},
    }, env_file=False)


@pytest.fixture
def mock_config(tmp_path, mock_script):
    return make_config(tmp_path, mock_script)
