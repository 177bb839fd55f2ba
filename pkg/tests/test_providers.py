import json
import os

import pytest

from civicsim_modules.src.exceptions import ConfigurationError, ProviderError
from civicsim_modules.src.provider_utils import (
    TEMPERATURE,
    MockBackend,
    ProviderHandle,
    ResponseCache,
    build_provider,
    cache_key,
    complete,
    is_transient,
    prompt_digest,
)

from conftest import make_config, write_rules


def test_cache_key_is_content_address():
    assert cache_key('gpt-4o', 'hello') == cache_key('gpt-4o', 'hello')
    assert cache_key('gpt-4o', 'hello') != cache_key('claude-sonnet', 'hello')
    assert cache_key('gpt-4o', 'hello ') != cache_key('gpt-4o', 'hello')
    assert len(cache_key('a', 'b')) == 64


def test_cache_store_and_lookup(tmp_path):
    cache = ResponseCache(tmp_path, 'gpt-4o')
    key = cache.key('prompt')
    assert cache.lookup(key) is None
    cache.store(key, 'Sí, "yes"\n')
    assert cache.lookup(key) == 'Sí, "yes"\n'
    assert (tmp_path / 'gpt-4o' / f'{key}.txt').exists()
    meta = json.loads((tmp_path / 'gpt-4o' / f'{key}.meta.json').read_text())
    assert meta['prompt_digest'] == key
    assert cache.stats() == {'hits': 1, 'misses': 1}


def test_truncated_cache_entry_is_absent(tmp_path, caplog):
    cache = ResponseCache(tmp_path, 'gpt-4o')
    key = cache.key('prompt')
    cache.store(key, 'a long enough response')
    text_path = tmp_path / 'gpt-4o' / f'{key}.txt'
    text_path.write_bytes(text_path.read_bytes()[:5])
    assert cache.lookup(key) is None
    assert 'corrupted cache entry' in caplog.text


def test_cache_entry_without_meta_is_absent(tmp_path):
    cache = ResponseCache(tmp_path, 'gpt-4o')
    key = cache.key('prompt')
    cache.store(key, 'text')
    os.remove(tmp_path / 'gpt-4o' / f'{key}.meta.json')
    assert cache.lookup(key) is None


def test_mock_rule_forms():
    prompt = 'Policy proposal: fluoride\nanswer'
    backend = MockBackend.from_rules([
        {'match': f'sha256:{prompt_digest("exact digest")}', 'response': 'by digest'},
        {'match': 'regex:^Policy.*answer$', 'response': 'by regex'},
        {'match': 'contains:tariffs', 'response': 'by substring'},
        {'match': 'hello', 'response': 'exact'},
    ])
    assert backend('exact digest') == 'by digest'
    assert backend(prompt) == 'by regex'
    assert backend('low tariffs please') == 'by substring'
    assert backend('hello') == 'exact'
    with pytest.raises(ProviderError):
        backend('hello there')
    assert backend.calls == 5


def test_mock_response_sequence_sticks_at_last():
    backend = MockBackend.from_rules([{'match': 'contains:q', 'response': ['one', 'two']}])
    assert [backend('q'), backend('q'), backend('q')] == ['one', 'two', 'two']


def test_mock_sequence_is_counted_per_prompt():
    backend = MockBackend.from_rules([{'match': 'contains:q', 'response': ['one', 'two']}])
    assert [backend('q1'), backend('q2'), backend('q1'), backend('q2')] == ['one', 'one', 'two', 'two']
    assert backend('q3') == 'one'


def test_mock_script_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        MockBackend.from_file(tmp_path / 'missing.jsonl')
    bad = write_rules(tmp_path / 'bad.jsonl', [{'match': 'regex:(', 'response': 'x'}])
    with pytest.raises(ConfigurationError):
        MockBackend.from_file(bad)
    (tmp_path / 'torn.jsonl').write_text('{"match": ', encoding='utf-8')
    with pytest.raises(ConfigurationError):
        MockBackend.from_file(tmp_path / 'torn.jsonl')


def test_complete_uses_cache(tmp_path, mock_script):
    config = make_config(tmp_path, mock_script, models=('mock-a',))
    provider = build_provider('mock-a', config)
    prompt = "Policy proposal: x\nReturn a JSON object containing the 'reason'"
    first = complete(provider, prompt)
    second = complete(provider, prompt)
    assert first == second == '{"reason": "it helps", "vote": "Yes"}'
    assert provider.backend.calls == 1
    assert provider.stats() == {'requests': 1, 'cache_hits': 1, 'cache_misses': 1}
    again = build_provider('mock-a', config)
    assert again.complete(prompt) == first
    assert again.backend.calls == 0


def test_transient_errors_are_retried_with_backoff():
    attempts = []
    delays = []

    def flaky(prompt):
        attempts.append(prompt)
        if len(attempts) < 3:
            raise ConnectionError('reset')
        return 'ok'

    provider = ProviderHandle('flaky', flaky, max_retries=3, backoff_base=1.0, backoff_growth=4.0, sleep=delays.append)
    assert provider.complete('p') == 'ok'
    assert delays == [1.0, 4.0]
    assert provider.requests == 3


def test_exhausted_retries_raise_provider_error():
    def down(prompt):
        raise TimeoutError('slow')

    provider = ProviderHandle('down', down, max_retries=2, sleep=lambda s: None)
    with pytest.raises(ProviderError) as info:
        provider.complete('p')
    assert isinstance(info.value.last_error, TimeoutError)
    assert provider.requests == 3


def test_permanent_errors_are_not_retried():
    def broken(prompt):
        raise KeyError('bad request')

    provider = ProviderHandle('broken', broken, max_retries=3, sleep=lambda s: None)
    with pytest.raises(ProviderError):
        provider.complete('p')
    assert provider.requests == 1


def test_status_codes_decide_transience():
    class StatusError(Exception):
        def __init__(self, status_code):
            self.status_code = status_code

    assert is_transient(StatusError(429))
    assert is_transient(StatusError(503))
    assert not is_transient(StatusError(400))
    assert not is_transient(ProviderError('no rule'))


def test_missing_auth_is_configuration_error(tmp_path, monkeypatch):
    monkeypatch.delenv('CIVICSIM_OPENAI_KEY', raising=False)
    config = make_config(tmp_path)
    with pytest.raises(ConfigurationError, match='CIVICSIM_OPENAI_KEY'):
        build_provider('gpt-4o', config)
    with pytest.raises(ConfigurationError):
        build_provider('no-such-provider', config)


def test_temperature_is_pinned():
    assert TEMPERATURE == 0.0
    assert ProviderHandle('x', lambda p: p).temperature == 0.0
