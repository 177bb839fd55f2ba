import json

import numpy as np
import pytest

from civicsim_modules.src.config_utils import DATA_DIR
from civicsim_modules.src.domain import PERIOD_LABELS, Condition
from civicsim_modules.src.exceptions import ConfigurationError, RenderError, ResponseParseError
from civicsim_modules.src.prompt_utils import (
    RETRY_INSTRUCTION,
    PromptVariant,
    extract_json,
    load_battery,
    parse_binary,
    parse_dual,
    parse_periods,
    parse_response,
    parse_retry_prompt,
    render,
)

PROMPTS = DATA_DIR / 'prompts'


@pytest.fixture
def battery():
    return load_battery(PROMPTS)


@pytest.fixture
def carbon(shipped_policies):
    return next(p for p in shipped_policies if p.id == 'carbon_emissions.aff')


def test_battery_sizes(battery):
    assert len(battery[Condition.Default]) == 1
    assert len(battery[Condition.Delegate]) == 5
    assert len(battery[Condition.TrusteeDual]) == 3
    assert len(battery[Condition.TrusteePeriods]) == 3
    assert battery.variant_ids(Condition.Delegate) == [f'delegate_{i}' for i in range(1, 6)]


def test_battery_digest_is_stable(battery):
    assert battery.digest(Condition.Delegate) == load_battery(PROMPTS).digest(Condition.Delegate)
    assert battery.digest(Condition.Delegate) != battery.digest(Condition.TrusteeDual)
    assert set(battery.digests()) == {c.value for c in Condition}


def test_missing_variant_breaks_strict_battery(tmp_path):
    for path in PROMPTS.rglob('*.txt'):
        target = tmp_path / path.relative_to(PROMPTS)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(path.read_text(encoding='utf-8'), encoding='utf-8')
    (tmp_path / 'delegate' / 'delegate_5.txt').unlink()
    with pytest.raises(ConfigurationError):
        load_battery(tmp_path)
    assert len(load_battery(tmp_path, strict_sizes=False)[Condition.Delegate]) == 4


def test_default_render_of_carbon_policy(battery, carbon):
    prompt = render(battery.get(Condition.Default, 'default'), None, carbon)
    assert prompt.text.startswith('Would you support the given policy proposal?\n'
                                  'Evaluate in your opinion whether this type of policy would be beneficial to society as a whole.\n'
                                  'Policy proposal: We should restrict the amount of carbon emissions by humans')
    assert prompt.text.endswith("Return a JSON object containing the 'reason', and 'vote' (either 'Yes' or 'No').")
    assert prompt.expects == 'binary_vote'
    assert '{' not in prompt.text


def test_render_substitutes_bio_and_policy(battery, carbon, shipped_profiles):
    bio = shipped_profiles[0].biography
    for condition in (Condition.Delegate, Condition.TrusteeDual, Condition.TrusteePeriods):
        for variant in battery[condition]:
            prompt = render(variant, bio, carbon)
            assert bio.strip() in prompt.text
            assert carbon.statement in prompt.text
            assert prompt.text.endswith(variant.instruction)
            assert '{bio}' not in prompt.text and '{policy}' not in prompt.text
            assert prompt.expects == condition.expects


def test_render_bio_rules(battery, carbon):
    with pytest.raises(RenderError):
        render(battery.get(Condition.Default, 'default'), 'someone', carbon)
    with pytest.raises(RenderError):
        render(battery.get(Condition.Delegate, 'delegate_1'), None, carbon)
    broken = PromptVariant(variant_id='x', condition=Condition.Delegate, template='{bio} {policy} {mood}')
    with pytest.raises(RenderError):
        render(broken, 'someone', carbon)


def test_braces_in_substituted_text_stay_literal(carbon):
    policy = carbon.model_copy(update={'statement': 'We should print {bio} on every ballot.'})
    variant = PromptVariant(variant_id='x', condition=Condition.Delegate, template='Voter: {bio}\nPolicy: {policy}')
    prompt = render(variant, 'I collect {policy} leaflets.', policy)
    assert prompt.text == 'Voter: I collect {policy} leaflets.\nPolicy: We should print {bio} on every ballot.'


def test_retry_prompt():
    assert parse_retry_prompt('question') == f'question\n{RETRY_INSTRUCTION}'


def test_parse_binary_variants():
    assert parse_binary('{"reason": "fair", "vote": "Yes"}') == ('Yes', 'fair')
    assert parse_binary('Sure!\n```json\n{"reason": "costly", "vote": "no"}\n```') == ('No', 'costly')
    assert parse_binary('{"reason": "x", "vote": " \'YES\' "}')[0] == 'Yes'
    for raw in ('{"reason": "x", "vote": "Maybe"}', '{"vote": "Yes"}', 'Yes', '',
                '{"reason": "x", "vote": "Yes", "vote": "No"}', '{"reason": "x", "vote": true}'):
        with pytest.raises(ResponseParseError) as info:
            parse_binary(raw)
        assert info.value.raw == raw


def test_parse_dual_paper_schedule():
    raw = json.dumps({'yes_vote': {'reasoning': 'a', 'long_util': 90, 'short_util': 85},
                      'no_vote': {'reasoning': 'b', 'long_util': 40, 'short_util': 50}})
    schedule, rationale = parse_dual('Here you go: ' + raw)
    assert (schedule.yes_short, schedule.yes_long, schedule.no_short, schedule.no_long) == (85, 90, 50, 40)
    assert 'yes_vote: a' in rationale


def test_parse_dual_rejects_out_of_range_and_strings():
    for yes_long in (101, -1, '90', None):
        raw = json.dumps({'yes_vote': {'reasoning': 'a', 'long_util': yes_long, 'short_util': 85},
                          'no_vote': {'reasoning': 'b', 'long_util': 40, 'short_util': 50}})
        with pytest.raises(ResponseParseError):
            parse_dual(raw)


def _periods_doc(yes, no, labels=PERIOD_LABELS):
    return {
        'yes': {label: {'rationale': 'r', 'score': s} for label, s in zip(labels, yes)},
        'no': {label: {'rationale': 'r', 'score': s} for label, s in zip(labels, no)},
    }


def test_parse_periods_orders_by_start_year():
    labels = list(reversed(PERIOD_LABELS))
    doc = _periods_doc([60, 50, 40, 30, 20, 10], [1, 2, 3, 4, 5, 6], labels=labels)
    schedule, _ = parse_periods(json.dumps(doc))
    assert schedule.yes_periods == (10, 20, 30, 40, 50, 60)
    assert schedule.no_periods == (6, 5, 4, 3, 2, 1)


def test_parse_periods_accepts_dash_and_spacing_variants():
    labels = [label.replace('-', '–').replace(' ', '  ') for label in PERIOD_LABELS]
    schedule, _ = parse_periods(json.dumps(_periods_doc([1] * 6, [2] * 6, labels=labels)))
    assert schedule.no_periods == (2,) * 6


def test_parse_periods_rejects_missing_or_unknown_period():
    doc = _periods_doc([1] * 6, [2] * 6)
    del doc['no']['25-30 years']
    with pytest.raises(ResponseParseError):
        parse_periods(json.dumps(doc))
    doc = _periods_doc([1] * 6, [2] * 6)
    doc['yes']['30-35 years'] = {'rationale': 'r', 'score': 5}
    with pytest.raises(ResponseParseError):
        parse_periods(json.dumps(doc))


def test_extract_json_skips_prose_and_non_matching_values():
    assert extract_json('a [1, 2] then {"k": 1}') == {'k': 1}
    assert extract_json('a [1, 2] then {"k": 1}', kind=list) == [1, 2]
    with pytest.raises(ValueError):
        extract_json('{broken')


def test_fuzzed_responses_parse_and_out_of_range_is_rejected():
    rng = np.random.default_rng(7)
    wrappers = ('{}', 'Answer:\n{}', '```json\n{}\n```', '{}\nThanks.')
    for i in range(1000):
        wrap = wrappers[i % len(wrappers)]
        vote = ['Yes', 'No', 'yes', 'NO'][rng.integers(4)]
        assert parse_binary(wrap.replace('{}', json.dumps({'reason': 'r', 'vote': vote})))[0] == vote.capitalize()

        scores = [float(v) for v in rng.uniform(0, 100, 4).round(2)]
        doc = {'yes_vote': {'reasoning': 'a', 'long_util': scores[0], 'short_util': scores[1]},
               'no_vote': {'reasoning': 'b', 'long_util': scores[2], 'short_util': scores[3]}}
        schedule, _ = parse_dual(wrap.replace('{}', json.dumps(doc)))
        assert schedule.yes_long == scores[0] and schedule.no_short == scores[3]
        doc['no_vote']['short_util'] = 100 + float(rng.uniform(0.01, 50))
        with pytest.raises(ResponseParseError):
            parse_dual(json.dumps(doc))

        yes = [int(v) for v in rng.integers(0, 101, 6)]
        no = [int(v) for v in rng.integers(0, 101, 6)]
        schedule, _ = parse_periods(wrap.replace('{}', json.dumps(_periods_doc(yes, no))))
        assert list(schedule.yes_periods) == yes and list(schedule.no_periods) == no
        bad = _periods_doc(yes, no)
        bad['yes'][PERIOD_LABELS[i % 6]]['score'] = -1 - int(rng.integers(0, 50))
        with pytest.raises(ResponseParseError):
            parse_periods(json.dumps(bad))


def test_parse_response_dispatch():
    assert parse_response('binary_vote', '{"reason": "r", "vote": "No"}').vote == 'No'
    with pytest.raises(ValueError):
        parse_response('essay', 'text')
