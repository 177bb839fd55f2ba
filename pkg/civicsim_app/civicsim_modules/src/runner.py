"""
experiment orchestration: enumerate (model, condition, variant, profile, policy) cells, query the providers
and append one VoteRecord per cell to runs/<run_id>/records.jsonl
"""
import json
import hashlib
import logging
import datetime
from pathlib import Path
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .domain import Condition, VoteRecord, cell_key
from .config_utils import read_yaml
from .corpus_utils import load_policies, load_profiles, policy_set
from .prompt_utils import load_battery, parse_response, parse_retry_prompt, render
from .provider_utils import atomic_write, build_provider
from .exceptions import ConfigurationError, ProviderError, ResponseParseError, RunError

logger = logging.getLogger(__name__)

RECORDS_FILE = 'records.jsonl'
MANIFEST_FILE = 'manifest.json'
CHUNK_FACTOR = 4


def utc_now():
    return datetime.datetime.now(datetime.timezone.utc)


MOCK_EPOCH = datetime.datetime(1970, 1, 1, tzinfo=datetime.timezone.utc)


def mock_clock():
    return MOCK_EPOCH


class RunPlan(BaseModel):
    """
    what to run. variants filters prompt variants by id, a condition with none of the listed ids keeps all of its
    variants. policies and profiles default to the configured corpus files
    """
    model_config = ConfigDict(extra='forbid')

    run_id: str = Field(pattern=r'^[A-Za-z0-9][A-Za-z0-9._-]*$')
    models: List[str] = Field(min_length=1)
    conditions: List[Condition] = Field(min_length=1)
    variants: Optional[List[str]] = None
    profiles: Optional[str] = None
    policies: Optional[str] = None
    policy_set: Optional[Literal['contested', 'consensus']] = None
    profile_limit: Optional[int] = Field(default=None, ge=1)
    parallelism: Optional[int] = Field(default=None, ge=1)
    resume: bool = False

    @field_validator('conditions', mode='before')
    @classmethod
    def _read_slugs(cls, value):
        if isinstance(value, (list, tuple)):
            return [Condition.from_slug(v) if isinstance(v, str) else v for v in value]
        return value

    @classmethod
    def from_file(cls, path):
        '''
        read a plan written as json or yaml, chosen by the file suffix

                Parameters:
                        path (str): plan file

                Returns:
                        plan (RunPlan)
        '''
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f'plan file not found: {path}')
        try:
            if path.suffix.lower() in ('.yaml', '.yml'):
                doc = read_yaml(path)
            else:
                doc = json.loads(path.read_text(encoding='utf-8'))
            return cls.model_validate(doc)
        except (ValidationError, json.JSONDecodeError, ValueError) as e:
            raise ConfigurationError(f'invalid run plan {path}: {e}') from e


class Cell(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    condition: Condition
    variant_id: str
    profile_id: Optional[str] = None
    policy_id: str

    @property
    def key(self):
        return cell_key(self.model, self.condition, self.variant_id, self.profile_id, self.policy_id)


class RunCounts(BaseModel):
    planned: int = 0
    completed: int = 0
    parse_failed: int = 0
    provider_failed: int = 0


class RunManifest(BaseModel):
    run_id: str
    plan: RunPlan
    corpus_digests: Dict[str, str]
    prompt_digests: Dict[str, str]
    counts: RunCounts
    provider_stats: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    status: Literal['running', 'complete', 'incomplete'] = 'running'
    started_at: datetime.datetime
    finished_at: Optional[datetime.datetime] = None


def run_directory(config, run_id):
    return Path(config.paths.runs_dir) / run_id


def _resolve_run_dir(run, runs_dir=None):
    path = Path(run)
    if path.is_dir() or runs_dir is None:
        return path
    return Path(runs_dir) / run


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_inputs(plan, config):
    '''
    read the corpus, the profiles and the prompt battery a plan runs on

            Parameters:
                    plan (RunPlan): run plan
                    config (CivicsimConfig): loaded configuration

            Returns:
                    inputs (dict): policies, profiles, battery and their source paths
    '''
    policies_path = Path(plan.policies) if plan.policies else config.paths.policies_path()
    profiles_path = Path(plan.profiles) if plan.profiles else config.paths.profiles_path()
    policies = load_policies(policies_path)
    if plan.policy_set:
        policies = policy_set(policies, plan.policy_set)
    needs_profiles = any(Condition(c) != Condition.Default for c in plan.conditions)
    profiles = load_profiles(profiles_path) if needs_profiles else []
    if plan.profile_limit:
        profiles = profiles[:plan.profile_limit]
    battery = load_battery(config.paths.prompts_path())
    return {
        'policies': policies,
        'profiles': profiles,
        'battery': battery,
        'policies_path': policies_path,
        'profiles_path': profiles_path if needs_profiles else None,
    }


def _selected_variants(plan, battery, condition):
    ids = battery.variant_ids(condition)
    if not ids:
        raise ConfigurationError(f'no prompt variants for condition {condition.value}')
    if plan.variants:
        chosen = [v for v in ids if v in plan.variants]
        if chosen:
            return chosen
    return ids


def plan_cells(plan, policies, profiles, battery):
    '''
    deterministic, duplicate free enumeration of the cells of a plan. Default cells run once per model and
    policy and carry no profile

            Parameters:
                    plan (RunPlan): run plan
                    policies (list): policies to vote on
                    profiles (list): voter profiles
                    battery (PromptBattery): prompt variants

            Returns:
                    cells (list): Cell objects in execution order
    '''
    conditions = list(dict.fromkeys(Condition(c) for c in plan.conditions))
    if plan.variants:
        known = {v for c in conditions for v in battery.variant_ids(c)}
        unknown = sorted(set(plan.variants) - known)
        if unknown:
            raise ConfigurationError(f"plan references unknown prompt variants: {', '.join(unknown)}")

    cells = list()
    seen = set()
    for model in dict.fromkeys(plan.models):
        for condition in conditions:
            for variant_id in _selected_variants(plan, battery, condition):
                if condition == Condition.Default:
                    pairs = [(None, policy.id) for policy in policies]
                else:
                    pairs = [(profile.id, policy.id) for profile in profiles for policy in policies]
                for profile_id, policy_id in pairs:
                    cell = Cell(model=model, condition=condition, variant_id=variant_id,
                                profile_id=profile_id, policy_id=policy_id)
                    if cell.key not in seen:
                        seen.add(cell.key)
                        cells.append(cell)
    return cells


def expected_cell_count(n_models, variant_counts, n_profiles, n_policies):
    '''
    number of cells for a full plan

            Parameters:
                    n_models (int): models in the plan
                    variant_counts (dict): Condition -> number of variants run
                    n_profiles (int): voter profiles
                    n_policies (int): policies

            Returns:
                    count (int)
    '''
    total = 0
    for condition, n_variants in variant_counts.items():
        if Condition(condition) == Condition.Default:
            total += n_models * n_variants * n_policies
        else:
            total += n_models * n_variants * n_profiles * n_policies
    return total


class CellWorker:
    """
    runs a single cell: render, query, parse with one retry, and build the VoteRecord. never raises for
    provider or parse failures
    """
    def __init__(self, providers, battery, policies, profiles, clock):
        self.providers = providers
        self.battery = battery
        self.policies = {policy.id: policy for policy in policies}
        self.profiles = {profile.id: profile for profile in profiles}
        self.clock = clock

    def _record(self, cell, status, raw='', parsed=None, rationale=''):
        return VoteRecord(
            profile_id=cell.profile_id,
            policy_id=cell.policy_id,
            model=cell.model,
            condition=cell.condition,
            variant_id=cell.variant_id,
            vote=parsed.vote if parsed is not None else None,
            utilities=parsed.utilities if parsed is not None else None,
            rationale=parsed.rationale if parsed is not None else rationale,
            raw_response=raw,
            status=status,
            timestamp=self.clock(),
        )

    def __call__(self, cell):
        variant = self.battery.get(cell.condition, cell.variant_id)
        bio = self.profiles[cell.profile_id].biography if cell.profile_id is not None else None
        prompt = render(variant, bio, self.policies[cell.policy_id])
        provider = self.providers[cell.model]
        try:
            raw = provider.complete(prompt.text)
        except ProviderError as e:
            return self._record(cell, 'provider_failed', rationale=str(e))
        try:
            return self._record(cell, 'ok', raw=raw, parsed=parse_response(prompt.expects, raw))
        except ResponseParseError as first_error:
            logger.debug('parse failed for %s, retrying: %s', cell.key, first_error)
        try:
            retry_raw = provider.complete(parse_retry_prompt(prompt.text))
        except ProviderError as e:
            return self._record(cell, 'parse_failed', raw=raw, rationale=f'parse retry not answered: {e}')
        try:
            return self._record(cell, 'ok', raw=retry_raw, parsed=parse_response(prompt.expects, retry_raw))
        except ResponseParseError as e:
            return self._record(cell, 'parse_failed', raw=retry_raw, rationale=str(e))


def load_records(run, runs_dir=None, repair=True):
    '''
    read the record log of a run. a torn final line (interrupted write) is cut off with a warning,
    any other unreadable line is an error

            Parameters:
                    run (str): run directory, or run id when runs_dir is given
                    runs_dir (str): parent directory of the runs
                    repair (boolean): if true, truncate the log file back to its last complete record

            Returns:
                    records (list): VoteRecord objects in log order
    '''
    path = _resolve_run_dir(run, runs_dir) / RECORDS_FILE
    if not path.exists():
        return []
    data = path.read_bytes()
    lines = data.split(b'\n')
    records = list()
    good_bytes = 0
    for i, line in enumerate(lines):
        is_last = i == len(lines) - 1 or (i == len(lines) - 2 and lines[-1] == b'')
        if not line.strip():
            good_bytes += len(line) + (0 if i == len(lines) - 1 else 1)
            continue
        try:
            records.append(VoteRecord.model_validate_json(line))
        except ValidationError as e:
            if not is_last:
                raise RunError(f'{path}, line {i + 1}: unreadable record: {e}') from e
            logger.warning('%s: dropping torn final line %d (%d bytes)', path, i + 1, len(line))
            if repair:
                with open(path, 'r+b') as f:
                    f.truncate(good_bytes)
            return records
        good_bytes += len(line) + (0 if i == len(lines) - 1 else 1)
    if data and not data.endswith(b'\n') and repair:
        with open(path, 'ab') as f:
            f.write(b'\n')
    return records


def clear_failed(run, runs_dir=None):
    '''
    drop provider_failed and parse_failed records so that a resumed run queries those cells again

            Parameters:
                    run (str): run directory, or run id when runs_dir is given
                    runs_dir (str): parent directory of the runs

            Returns:
                    removed (int): number of records dropped
    '''
    run_dir = _resolve_run_dir(run, runs_dir)
    records = load_records(run_dir)
    kept = [r for r in records if r.status == 'ok']
    removed = len(records) - len(kept)
    if removed:
        payload = ''.join(r.model_dump_json() + '\n' for r in kept).encode('utf-8')
        atomic_write(run_dir / RECORDS_FILE, payload)
        logger.info('%s: cleared %d failed records', run_dir, removed)
    return removed


def count_records(records, cells):
    planned = {cell.key for cell in cells}
    counts = RunCounts(planned=len(planned))
    seen = set()
    for record in records:
        key = record.cell_key
        if key not in planned or key in seen:
            continue
        seen.add(key)
        if record.status == 'ok':
            counts.completed += 1
        elif record.status == 'parse_failed':
            counts.parse_failed += 1
        else:
            counts.provider_failed += 1
    return counts


def write_manifest(run_dir, manifest):
    atomic_write(Path(run_dir) / MANIFEST_FILE, (manifest.model_dump_json(indent=2) + '\n').encode('utf-8'))


def read_manifest(run, runs_dir=None):
    path = _resolve_run_dir(run, runs_dir) / MANIFEST_FILE
    if not path.exists():
        raise RunError(f'no manifest found at {path}')
    try:
        return RunManifest.model_validate_json(path.read_text(encoding='utf-8'))
    except ValidationError as e:
        raise RunError(f'unreadable manifest {path}: {e}') from e


def _append(path, records):
    with open(path, 'a', encoding='utf-8') as f:
        for record in records:
            f.write(record.model_dump_json() + '\n')
        f.flush()


def execute(plan, config, providers=None, clock=None, verbose=False):
    '''
    run every pending cell of a plan and append its record to the run log. records are written chunk by chunk
    in plan order whatever the parallelism. without a clock a run whose providers are all mocks stamps MOCK_EPOCH,
    so mock runs are byte identical across executions

            Parameters:
                    plan (RunPlan): run plan
                    config (CivicsimConfig): loaded configuration
                    providers (dict): name -> ProviderHandle, built from the config when None
                    clock (callable): returns the record timestamps, default utc_now or mock_clock for mock only runs
                    verbose (boolean): if true, print a summary at the end

            Returns:
                    manifest (RunManifest): counts reconcile with the record log
    '''
    run_dir = run_directory(config, plan.run_id)
    records_path = run_dir / RECORDS_FILE
    if records_path.exists() and not plan.resume:
        raise RunError(f'run {plan.run_id} already exists at {run_dir}, resume it instead')

    inputs = load_inputs(plan, config)
    battery = inputs['battery']
    cells = plan_cells(plan, inputs['policies'], inputs['profiles'], battery)
    corpus_digests = {'policies': file_digest(inputs['policies_path'])}
    if inputs['profiles_path'] is not None:
        corpus_digests['profiles'] = file_digest(inputs['profiles_path'])
    prompt_digests = {Condition(c).value: battery.digest(c) for c in dict.fromkeys(plan.conditions)}

    if providers is None:
        providers = {name: build_provider(name, config) for name in dict.fromkeys(plan.models)}
    missing = sorted(set(plan.models) - set(providers))
    if missing:
        raise ConfigurationError(f"no provider for model(s): {', '.join(missing)}")
    if clock is None:
        mock_only = all(getattr(providers[name], 'request_shape', None) == 'mock' for name in plan.models)
        clock = mock_clock if mock_only else utc_now

    run_dir.mkdir(parents=True, exist_ok=True)
    done = {record.cell_key for record in load_records(run_dir)} if plan.resume else set()
    pending = [cell for cell in cells if cell.key not in done]
    manifest = RunManifest(
        run_id=plan.run_id,
        plan=plan,
        corpus_digests=corpus_digests,
        prompt_digests=prompt_digests,
        counts=RunCounts(planned=len(cells)),
        started_at=clock(),
    )
    write_manifest(run_dir, manifest)
    logger.info('run %s: %d cells planned, %d already recorded, %d to go',
                plan.run_id, len(cells), len(cells) - len(pending), len(pending))

    parallelism = plan.parallelism or config.runner.parallelism
    progress_every = config.runner.progress_every
    worker = CellWorker(providers, battery, inputs['policies'], inputs['profiles'], clock)
    chunk_size = parallelism * CHUNK_FACTOR
    processed = 0
    try:
        with ThreadPoolExecutor(max_workers=parallelism) as executor:
            for start in range(0, len(pending), chunk_size):
                chunk = pending[start:start + chunk_size]
                records = list(executor.map(worker, chunk))
                _append(records_path, records)
                before = processed
                processed += len(records)
                if processed // progress_every > before // progress_every or processed == len(pending):
                    logger.info('run %s: %d/%d cells done', plan.run_id, processed, len(pending))
    except Exception as e:
        manifest = manifest.model_copy(update={
            'status': 'incomplete',
            'counts': count_records(load_records(run_dir), cells),
            'provider_stats': {name: p.stats() for name, p in providers.items()},
            'finished_at': clock(),
        })
        write_manifest(run_dir, manifest)
        raise RunError(f'run {plan.run_id} aborted after {processed} cells: {e}') from e

    counts = count_records(load_records(run_dir), cells)
    manifest = manifest.model_copy(update={
        'status': 'complete',
        'counts': counts,
        'provider_stats': {name: p.stats() for name, p in providers.items()},
        'finished_at': clock(),
    })
    write_manifest(run_dir, manifest)
    if verbose:
        print('------------------------------------------------------------')
        print(f'run {plan.run_id} finished')
        print(f'planned: {counts.planned}, completed: {counts.completed}')
        print(f'parse_failed: {counts.parse_failed}, provider_failed: {counts.provider_failed}')
        print('------------------------------------------------------------')
    return manifest


def resume_plan(run, runs_dir=None):
    manifest = read_manifest(run, runs_dir)
    return manifest.plan.model_copy(update={'resume': True})
