import os
import time
import logging
import threading
from pathlib import Path

import openai
import anthropic

from .cache_utils import ResponseCache
from .mock_utils import MockBackend
from ..exceptions import ConfigurationError, ProviderError

logger = logging.getLogger(__name__)

TEMPERATURE = 0.0
ANTHROPIC_DEFAULT_MAX_TOKENS = 1024
_TRANSIENT_STATUS = (408, 409, 429)


def is_transient(error):
    '''
    whether a failed backend call is worth retrying: connection problems, timeouts, rate limits and server errors

            Parameters:
                    error (Exception): raised by the backend

            Returns:
                    transient (boolean)
    '''
    if isinstance(error, ProviderError):
        return False
    if isinstance(error, (openai.APIConnectionError, anthropic.APIConnectionError, TimeoutError, ConnectionError)):
        return True
    status = getattr(error, 'status_code', None)
    if status is None:
        return False
    return status in _TRANSIENT_STATUS or status >= 500


def openai_backend(provider_config, api_key):
    client = openai.OpenAI(
        api_key=api_key,
        base_url=provider_config.endpoint,
        timeout=provider_config.timeout,
        max_retries=0,
    )

    def call(prompt):
        messages = list()
        if provider_config.system_prompt:
            messages.append({'role': 'system', 'content': provider_config.system_prompt})
        messages.append({'role': 'user', 'content': prompt})
        kwargs = dict(model=provider_config.model, messages=messages, temperature=TEMPERATURE)
        if provider_config.max_tokens:
            kwargs['max_tokens'] = provider_config.max_tokens
        response = client.chat.completions.create(**kwargs)
        return response.choices[0].message.content or ''

    return call


def anthropic_backend(provider_config, api_key):
    client = anthropic.Anthropic(
        api_key=api_key,
        base_url=provider_config.endpoint,
        timeout=provider_config.timeout,
        max_retries=0,
    )

    def call(prompt):
        kwargs = dict(
            model=provider_config.model,
            max_tokens=provider_config.max_tokens or ANTHROPIC_DEFAULT_MAX_TOKENS,
            temperature=TEMPERATURE,
            messages=[{'role': 'user', 'content': prompt}],
        )
        if provider_config.system_prompt:
            kwargs['system'] = provider_config.system_prompt
        response = client.messages.create(**kwargs)
        return ''.join(block.text for block in response.content if getattr(block, 'type', None) == 'text')

    return call


class ProviderHandle:
    """
    one configured chat completion backend with retries, a response cache and a bound on concurrent requests.
    temperature is fixed at 0.0 for every request

    Attributes
    ----------
    name : str
    backend : callable
        prompt -> raw text
    cache : ResponseCache
        None disables caching
    max_retries : int
    backoff_base : float
        seconds before the first retry
    backoff_growth : float
        factor applied to the delay after every retry
    requests : int
        backend calls made, retries included

    Methods
    -------
    complete(prompt=str):
        cached or fresh response text, ProviderError after exhausted retries
    """
    temperature = TEMPERATURE

    def __init__(self, name, backend, cache=None, max_retries=3, backoff_base=1.0, backoff_growth=4.0,
                 concurrency=8, request_shape='mock', endpoint=None, auth_env=None, timeout=60.0, sleep=time.sleep):
        self.name = name
        self.backend = backend
        self.cache = cache
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_growth = backoff_growth
        self.request_shape = request_shape
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.timeout = timeout
        self.requests = 0
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(concurrency)
        self._lock = threading.Lock()

    def _call_backend(self, prompt):
        last_error = None
        for attempt in range(self.max_retries + 1):
            with self._lock:
                self.requests += 1
            try:
                with self._slots:
                    return self.backend(prompt)
            except Exception as e:
                last_error = e
                if not is_transient(e):
                    break
                if attempt < self.max_retries:
                    delay = self.backoff_base * self.backoff_growth ** attempt
                    logger.warning('%s request failed (%s), retry %d/%d in %.1fs',
                                   self.name, e, attempt + 1, self.max_retries, delay)
                    self._sleep(delay)
        if isinstance(last_error, ProviderError):
            raise last_error
        raise ProviderError(f'{self.name} request failed: {last_error!r}', provider=self.name, last_error=last_error)

    def complete(self, prompt):
        '''
        response text for a prompt, served from the cache when possible

                Parameters:
                        prompt (str): full prompt text

                Returns:
                        text (str): backend output, byte equal to what the cache holds
        '''
        key = None
        if self.cache is not None:
            key = self.cache.key(prompt)
            cached = self.cache.lookup(key)
            if cached is not None:
                return cached
        text = self._call_backend(prompt)
        if self.cache is not None:
            self.cache.store(key, text)
        return text

    def stats(self):
        stats = {'requests': self.requests}
        if self.cache is not None:
            stats.update({f'cache_{k}': v for k, v in self.cache.stats().items()})
        return stats


def build_provider(name, config, use_cache=True, sleep=time.sleep):
    '''
    instantiate a configured provider, real providers need their auth variable before any network call

            Parameters:
                    name (str): provider name in the config
                    config (CivicsimConfig): loaded configuration
                    use_cache (boolean): if true, attach the on disk response cache
                    sleep (callable): backoff sleep, replaced in tests

            Returns:
                    provider (ProviderHandle)
    '''
    provider_config = config.provider(name)
    shape = provider_config.request_shape
    if shape == 'mock':
        if not provider_config.mock_script:
            raise ConfigurationError(f'mock provider {name} needs a mock_script')
        backend = MockBackend.from_file(provider_config.mock_script, name=name)
    else:
        if not provider_config.auth_env:
            raise ConfigurationError(f'provider {name} has no auth_env configured')
        api_key = os.environ.get(provider_config.auth_env)
        if not api_key:
            raise ConfigurationError(f'auth variable {provider_config.auth_env} for provider {name} is not set')
        if not provider_config.model:
            raise ConfigurationError(f'provider {name} has no model configured')
        if shape == 'openai_style':
            backend = openai_backend(provider_config, api_key)
        else:
            backend = anthropic_backend(provider_config, api_key)
    cache = ResponseCache(Path(config.paths.cache_dir), name) if use_cache else None
    return ProviderHandle(
        name,
        backend,
        cache=cache,
        max_retries=provider_config.max_retries,
        backoff_base=config.retry.backoff_base,
        backoff_growth=config.retry.backoff_growth,
        concurrency=provider_config.concurrency,
        request_shape=shape,
        endpoint=provider_config.endpoint,
        auth_env=provider_config.auth_env,
        timeout=provider_config.timeout,
        sleep=sleep,
    )


def complete(provider, prompt):
    return provider.complete(prompt)
