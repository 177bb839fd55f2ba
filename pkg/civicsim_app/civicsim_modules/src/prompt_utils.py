"""
prompt batteries stored as text files under data/prompts, rendering of the full prompt and parsing of the
structured answers for every condition
"""
import re
import json
import hashlib
import logging
from pathlib import Path
from typing import Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, StrictFloat, StrictInt, StrictStr, ValidationError

from .domain import PERIOD_LABELS, Condition, UtilitySchedule
from .exceptions import ConfigurationError, RenderError, ResponseParseError

logger = logging.getLogger(__name__)

BATTERY_SIZES = {
    Condition.Default: 1,
    Condition.Delegate: 5,
    Condition.TrusteeDual: 3,
    Condition.TrusteePeriods: 3,
}
RETURNS_DIR = 'returns'
RETRY_INSTRUCTION = 'Return only the JSON object.'

_PLACEHOLDER_RE = re.compile(r'\{([a-z_]+)\}')


class PromptVariant(BaseModel):
    """
    one phrasing of a condition's prompt. template holds the {bio} and {policy} placeholders,
    instruction is the condition's return-schema block appended after rendering
    """
    model_config = ConfigDict(frozen=True)

    variant_id: str
    condition: Condition
    template: str
    instruction: str = ''


class RenderedPrompt(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    condition: Condition
    variant_id: str
    expects: Literal['binary_vote', 'dual_schedule', 'period_schedule']


class PromptBattery:
    """
    every condition's prompt variants read from a prompts directory

    Attributes
    ----------
    prompts_dir : Path
    variants : dict
        Condition -> list of PromptVariant sorted by variant_id

    Methods
    -------
    get(condition=Condition, variant_id=str):
        return a single variant
    digest(condition=Condition):
        sha256 over the condition's templates and return block
    """
    def __init__(self, prompts_dir, variants):
        self.prompts_dir = Path(prompts_dir)
        self.variants = variants

    def __getitem__(self, condition):
        return self.variants[Condition(condition)]

    def get(self, condition, variant_id):
        for variant in self.variants.get(Condition(condition), []):
            if variant.variant_id == variant_id:
                return variant
        raise KeyError(f'no variant {variant_id} for condition {Condition(condition).value}')

    def variant_ids(self, condition):
        return [variant.variant_id for variant in self.variants.get(Condition(condition), [])]

    def digest(self, condition):
        h = hashlib.sha256()
        for variant in self.variants.get(Condition(condition), []):
            h.update(variant.variant_id.encode('utf-8') + b'\0')
            h.update(variant.template.encode('utf-8') + b'\0')
        variants = self.variants.get(Condition(condition), [])
        if variants:
            h.update(variants[0].instruction.encode('utf-8'))
        return h.hexdigest()

    def digests(self):
        return {condition.value: self.digest(condition) for condition in self.variants}


def _read_text(path):
    return Path(path).read_text(encoding='utf-8').rstrip('\n')


def load_battery(prompts_dir, strict_sizes=True):
    '''
    read prompts/<condition>/<variant_id>.txt and prompts/returns/<condition>.txt

            Parameters:
                    prompts_dir (str): root of the prompt files
                    strict_sizes (boolean): if true, require the 1/5/3/3 variant counts

            Returns:
                    battery (PromptBattery): variants per condition
    '''
    prompts_dir = Path(prompts_dir)
    if not prompts_dir.is_dir():
        raise ConfigurationError(f'prompts directory not found: {prompts_dir}')
    variants = dict()
    for condition in Condition:
        condition_dir = prompts_dir / condition.slug
        return_path = prompts_dir / RETURNS_DIR / f'{condition.slug}.txt'
        files = sorted(condition_dir.glob('*.txt')) if condition_dir.is_dir() else []
        if not files:
            continue
        if not return_path.exists():
            raise ConfigurationError(f'missing return-schema block {return_path}')
        instruction = _read_text(return_path)
        variants[condition] = [
            PromptVariant(variant_id=path.stem, condition=condition, template=_read_text(path), instruction=instruction)
            for path in files
        ]
    if strict_sizes:
        for condition, size in BATTERY_SIZES.items():
            found = len(variants.get(condition, []))
            if found != size:
                raise ConfigurationError(f'{condition.value} battery holds {found} variants, expected {size}')
    return PromptBattery(prompts_dir, variants)


def render(variant, bio, policy):
    '''
    substitute the voter biography and policy statement, then append the return-schema block

            Parameters:
                    variant (PromptVariant): prompt variant
                    bio (str): voter biography, must be None for the Default condition
                    policy (Policy): policy voted on

            Returns:
                    prompt (RenderedPrompt): full prompt text and the answer shape it expects
    '''
    condition = Condition(variant.condition)
    if condition == Condition.Default and bio is not None:
        raise RenderError('the Default condition is rendered without a voter profile')
    if condition != Condition.Default and not bio:
        raise RenderError(f'{condition.value} prompts need a voter biography')

    values = {'policy': policy.statement}
    if bio is not None:
        values['bio'] = bio.strip()
    placeholders = set(_PLACEHOLDER_RE.findall(variant.template))
    unknown = placeholders - set(values)
    if unknown:
        raise RenderError(f"variant {variant.variant_id} leaves {{{', '.join(sorted(unknown))}}} unsubstituted")
    if 'policy' not in placeholders:
        raise RenderError(f'variant {variant.variant_id} has no {{policy}} placeholder')
    if bio is not None and 'bio' not in placeholders:
        raise RenderError(f'variant {variant.variant_id} has no {{bio}} placeholder')

    # one pass, substituted values are never scanned again
    text = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], variant.template)
    if variant.instruction:
        text = f'{text}\n{variant.instruction}'
    return RenderedPrompt(text=text, condition=condition, variant_id=variant.variant_id, expects=condition.expects)


def parse_retry_prompt(prompt_text):
    return f'{prompt_text}\n{RETRY_INSTRUCTION}'


def _no_duplicate_keys(pairs):
    seen = dict()
    for key, value in pairs:
        if key in seen:
            raise ValueError(f'duplicate key {key!r}')
        seen[key] = value
    return seen


_DECODER = json.JSONDecoder(object_pairs_hook=_no_duplicate_keys)


def iter_json_values(raw):
    '''
    yield every json object or array that can be decoded starting at an opening bracket of the text,
    surrounding prose and code fences are skipped

            Parameters:
                    raw (str): model output

            Returns:
                    values (generator): decoded values in order of their starting position
    '''
    for match in re.finditer(r'[\[{]', raw or ''):
        try:
            value, _ = _DECODER.raw_decode(raw, match.start())
        except ValueError:
            continue
        yield value


def extract_json(raw, kind=dict, predicate=None):
    '''
    return the first decodable json value of the given type that satisfies the predicate

            Parameters:
                    raw (str): model output
                    kind (type): dict or list
                    predicate (callable): extra filter on the decoded value

            Returns:
                    value (dict or list): decoded value
    '''
    for value in iter_json_values(raw):
        if isinstance(value, kind) and (predicate is None or predicate(value)):
            return value
    raise ValueError('no matching json value found')


Score = Union[StrictInt, StrictFloat]


class _BinaryAnswer(BaseModel):
    reason: StrictStr
    vote: StrictStr


class _DualOption(BaseModel):
    model_config = ConfigDict(extra='ignore')

    reasoning: str = ''
    long_util: Score
    short_util: Score


class _DualAnswer(BaseModel):
    yes_vote: _DualOption
    no_vote: _DualOption


class _PeriodEntry(BaseModel):
    model_config = ConfigDict(extra='ignore')

    rationale: str = ''
    score: Score


class _PeriodsAnswer(BaseModel):
    yes: Dict[str, _PeriodEntry]
    no: Dict[str, _PeriodEntry]


def _normalize_vote(value):
    vote = value.strip().strip('"\'').strip().lower()
    if vote == 'yes':
        return 'Yes'
    if vote == 'no':
        return 'No'
    return None


def parse_binary(raw):
    '''
    read a {"reason": ..., "vote": ...} answer

            Parameters:
                    raw (str): model output

            Returns:
                    vote (str): 'Yes' or 'No'
                    rationale (str): the model's reason
    '''
    try:
        doc = extract_json(raw, kind=dict, predicate=lambda d: 'reason' in d and 'vote' in d)
        answer = _BinaryAnswer.model_validate(doc)
    except (ValueError, ValidationError) as e:
        raise ResponseParseError(f'no reason/vote object: {e}', raw=raw) from e
    vote = _normalize_vote(answer.vote)
    if vote is None:
        raise ResponseParseError(f'vote outside Yes/No: {answer.vote!r}', raw=raw)
    return vote, answer.reason


def parse_dual(raw):
    '''
    read a short vs long term answer into a dual schedule, out of range scores are rejected, never clamped

            Parameters:
                    raw (str): model output

            Returns:
                    schedule (UtilitySchedule): dual form
                    rationale (str): yes and no reasoning joined
    '''
    try:
        doc = extract_json(raw, kind=dict, predicate=lambda d: 'yes_vote' in d and 'no_vote' in d)
        answer = _DualAnswer.model_validate(doc)
        schedule = UtilitySchedule.dual(
            yes_short=answer.yes_vote.short_util,
            yes_long=answer.yes_vote.long_util,
            no_short=answer.no_vote.short_util,
            no_long=answer.no_vote.long_util,
        )
    except (ValueError, ValidationError) as e:
        raise ResponseParseError(f'invalid short/long utility answer: {e}', raw=raw) from e
    rationale = f'yes_vote: {answer.yes_vote.reasoning}\nno_vote: {answer.no_vote.reasoning}'
    return schedule, rationale


def _period_key(label):
    return ' '.join(label.replace('–', '-').replace('—', '-').split()).lower()


_PERIOD_INDEX = {_period_key(label): t for t, label in enumerate(PERIOD_LABELS)}


def _ordered_periods(entries, option):
    scores = [None] * len(PERIOD_LABELS)
    rationales = [''] * len(PERIOD_LABELS)
    for label, entry in entries.items():
        t = _PERIOD_INDEX.get(_period_key(label))
        if t is None:
            raise ValueError(f'{option}: unknown period {label!r}')
        if scores[t] is not None:
            raise ValueError(f'{option}: duplicate period {PERIOD_LABELS[t]!r}')
        scores[t] = entry.score
        rationales[t] = entry.rationale
    missing = [PERIOD_LABELS[t] for t, score in enumerate(scores) if score is None]
    if missing:
        raise ValueError(f"{option}: missing period(s) {', '.join(missing)}")
    return scores, rationales


def parse_periods(raw):
    '''
    read a six period answer ({"yes": {"0-5 years": {...}, ...}, "no": {...}}) into a periods schedule

            Parameters:
                    raw (str): model output

            Returns:
                    schedule (UtilitySchedule): periods form, lists ordered by start year
                    rationale (str): per period rationales
    '''
    try:
        doc = extract_json(raw, kind=dict, predicate=lambda d: 'yes' in d and 'no' in d)
        answer = _PeriodsAnswer.model_validate(doc)
        yes_scores, yes_notes = _ordered_periods(answer.yes, 'yes')
        no_scores, no_notes = _ordered_periods(answer.no, 'no')
        schedule = UtilitySchedule.periods(yes_scores, no_scores)
    except (ValueError, ValidationError) as e:
        raise ResponseParseError(f'invalid period utility answer: {e}', raw=raw) from e
    lines = [f'yes {label}: {note}' for label, note in zip(PERIOD_LABELS, yes_notes)]
    lines += [f'no {label}: {note}' for label, note in zip(PERIOD_LABELS, no_notes)]
    return schedule, '\n'.join(lines)


class ParsedResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    vote: Optional[Literal['Yes', 'No']] = None
    utilities: Optional[UtilitySchedule] = None
    rationale: str = ''


def parse_response(expects, raw):
    '''
    dispatch to the parser of the expected answer shape

            Parameters:
                    expects (str): 'binary_vote', 'dual_schedule' or 'period_schedule'
                    raw (str): model output

            Returns:
                    parsed (ParsedResponse): vote or utilities plus rationale
    '''
    if expects == 'binary_vote':
        vote, rationale = parse_binary(raw)
        return ParsedResponse(vote=vote, rationale=rationale)
    if expects == 'dual_schedule':
        schedule, rationale = parse_dual(raw)
        return ParsedResponse(utilities=schedule, rationale=rationale)
    if expects == 'period_schedule':
        schedule, rationale = parse_periods(raw)
        return ParsedResponse(utilities=schedule, rationale=rationale)
    raise ValueError(f'unknown answer shape: {expects}')
