import os
import copy
import logging
from pathlib import Path
from typing import Dict, Literal, Optional

import yaml
from yaml import Loader
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'
DEFAULT_CONFIG_PATH = DATA_DIR / 'config' / 'default.yaml'
CONFIG_ENV = 'CIVICSIM_CONFIG'


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    cache_dir: str = 'cache'
    runs_dir: str = 'runs'
    policies: Optional[str] = None
    profiles: Optional[str] = None
    prompts_dir: Optional[str] = None

    def policies_path(self):
        return Path(self.policies) if self.policies else DATA_DIR / 'policies.json'

    def profiles_path(self):
        return Path(self.profiles) if self.profiles else DATA_DIR / 'profiles.jsonl'

    def prompts_path(self):
        return Path(self.prompts_dir) if self.prompts_dir else DATA_DIR / 'prompts'


class RetryConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    backoff_base: float = Field(default=1.0, ge=0)
    backoff_growth: float = Field(default=4.0, ge=1)


class ProviderConfig(BaseModel):
    """
    one chat completion backend. temperature is not configurable, every request is sent with 0.0
    """
    model_config = ConfigDict(extra='forbid')

    model: Optional[str] = None
    request_shape: Literal['openai_style', 'anthropic_style', 'mock']
    endpoint: Optional[str] = None
    auth_env: Optional[str] = None
    max_retries: int = Field(default=3, ge=0)
    timeout: float = Field(default=60.0, gt=0)
    max_tokens: Optional[int] = Field(default=None, gt=0)
    system_prompt: Optional[str] = None
    concurrency: int = Field(default=8, ge=1)
    mock_script: Optional[str] = None


class RunnerConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    parallelism: int = Field(default=8, ge=1)
    progress_every: int = Field(default=500, ge=1)


class GenerationConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    model: str = 'gpt-4o'
    retries: int = Field(default=2, ge=0)


class AnalysisConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    lambda_grid: str = '0:1:0.1'


class CivicsimConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    paths: PathsConfig = Field(default_factory=PathsConfig)
    retry: RetryConfig = Field(default_factory=RetryConfig)
    providers: Dict[str, ProviderConfig] = Field(default_factory=dict)
    runner: RunnerConfig = Field(default_factory=RunnerConfig)
    generation: GenerationConfig = Field(default_factory=GenerationConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)

    def provider(self, name):
        if name not in self.providers:
            known = ', '.join(sorted(self.providers))
            raise ConfigurationError(f"unknown provider '{name}', configured providers are: {known}")
        return self.providers[name]


def deep_merge(base, override):
    '''
    merge override into a copy of base, nested dictionaries are merged key by key

            Parameters:
                    base (dict): default values
                    override (dict): user values

            Returns:
                    merged (dict): new dictionary
    '''
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_yaml(path):
    with open(path) as f:
        doc = yaml.load(f, Loader)
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f'{path}: top level of a config file must be a mapping')
    return doc


def load_config(path=None, overrides=None, env_file=True):
    '''
    read the shipped defaults, merge the user file and explicit overrides, then validate

            Parameters:
                    path (str): user config file, falls back to the CIVICSIM_CONFIG environment variable
                    overrides (dict): values merged last, used by tests and the cli
                    env_file (boolean): if true, load a .env file so auth variables can live outside the shell

            Returns:
                    config (CivicsimConfig): validated configuration
    '''
    if env_file:
        load_dotenv()
    doc = read_yaml(DEFAULT_CONFIG_PATH)
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).exists():
            raise ConfigurationError(f'config file not found: {path}')
        logger.debug('merging user config %s', path)
        doc = deep_merge(doc, read_yaml(path))
    if overrides:
        doc = deep_merge(doc, overrides)
    try:
        return CivicsimConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigurationError(f'invalid configuration: {e}') from e
