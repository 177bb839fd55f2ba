"""
scripted backend for tests and offline runs. a script is a jsonl file with one {"match": ..., "response": ...}
rule per line, the first matching rule answers. match forms:

    sha256:<hex>      sha256 of the full prompt text
    regex:<pattern>   re.search over the prompt, dotall
    contains:<text>   substring of the prompt
    <text>            exact prompt text

response may be a list, repeats of the same prompt under a rule then walk the list and stay on its last entry.
different prompts matching one rule each start at the first entry
"""
import re
import hashlib
import logging
import threading
from pathlib import Path
from typing import List, Union

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from ..corpus_utils import read_jsonl
from ..exceptions import ConfigurationError, CorpusFormatError, ProviderError

logger = logging.getLogger(__name__)


def prompt_digest(prompt):
    return hashlib.sha256(prompt.encode('utf-8')).hexdigest()


class MockRule(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    match: str
    response: Union[str, List[str]]

    @field_validator('match')
    @classmethod
    def _compile_check(cls, value):
        if value.startswith('regex:'):
            try:
                re.compile(value[len('regex:'):])
            except re.error as e:
                raise ValueError(f'invalid regex rule: {e}')
        return value

    @field_validator('response')
    @classmethod
    def _non_empty_sequence(cls, value):
        if isinstance(value, list) and not value:
            raise ValueError('response list is empty')
        return value

    def matches(self, prompt):
        if self.match.startswith('sha256:'):
            return prompt_digest(prompt) == self.match[len('sha256:'):].strip().lower()
        if self.match.startswith('regex:'):
            return re.search(self.match[len('regex:'):], prompt, flags=re.DOTALL) is not None
        if self.match.startswith('contains:'):
            return self.match[len('contains:'):] in prompt
        return self.match == prompt


class MockBackend:
    """
    answer prompts from a list of rules

    Attributes
    ----------
    rules : list
        MockRule objects, first match wins
    calls : int
        number of prompts answered or refused
    """
    def __init__(self, rules, name='mock'):
        self.rules = list(rules)
        self.name = name
        self.calls = 0
        self._hits = dict()
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, name='mock'):
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f'mock script not found: {path}')
        rules = list()
        try:
            for lineno, doc in read_jsonl(path):
                try:
                    rules.append(MockRule.model_validate(doc))
                except ValidationError as e:
                    raise ConfigurationError(f'{path}, line {lineno}: invalid mock rule: {e}') from e
        except CorpusFormatError as e:
            raise ConfigurationError(f'unreadable mock script: {e}') from e
        logger.debug('loaded %d mock rules from %s', len(rules), path)
        return cls(rules, name=name)

    @classmethod
    def from_rules(cls, rules, name='mock'):
        return cls([rule if isinstance(rule, MockRule) else MockRule.model_validate(rule) for rule in rules], name=name)

    def __call__(self, prompt):
        with self._lock:
            self.calls += 1
            for i, rule in enumerate(self.rules):
                if not rule.matches(prompt):
                    continue
                if isinstance(rule.response, str):
                    return rule.response
                key = (i, prompt_digest(prompt))
                position = min(self._hits.get(key, 0), len(rule.response) - 1)
                self._hits[key] = self._hits.get(key, 0) + 1
                return rule.response[position]
        raise ProviderError(f'no mock rule matches prompt sha256:{prompt_digest(prompt)}', provider=self.name)
