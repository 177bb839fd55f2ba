from .cache_utils import ResponseCache, atomic_write, cache_key
from .mock_utils import MockBackend, MockRule, prompt_digest
from .clients import ProviderHandle, build_provider, complete, is_transient, TEMPERATURE

__all__ = [
    'ResponseCache',
    'atomic_write',
    'cache_key',
    'MockBackend',
    'MockRule',
    'prompt_digest',
    'ProviderHandle',
    'build_provider',
    'complete',
    'is_transient',
    'TEMPERATURE',
]
