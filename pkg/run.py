import json
import tempfile
from pathlib import Path

from civicsim_modules.src.config_utils import load_config
from civicsim_modules.src.runner import RunPlan, execute, run_directory
from civicsim_modules.src.analytics_utils import analyze_run
from civicsim_modules.src.report_utils import build_report

rules = [
    {'match': 'contains:For each time phase', 'response': json.dumps({
        'yes': {f'{5 * t}-{5 * t + 5} years': {'rationale': 'r', 'score': 40 + 10 * t} for t in range(6)},
        'no': {f'{5 * t}-{5 * t + 5} years': {'rationale': 'r', 'score': 70 - 10 * t} for t in range(6)},
    })},
    {'match': 'contains:"yes_vote"', 'response': json.dumps({
        'yes_vote': {'reasoning': 'pays off later', 'long_util': 80, 'short_util': 40},
        'no_vote': {'reasoning': 'cheaper now', 'long_util': 50, 'short_util': 60},
    })},
    {'match': "regex:minimum wage.*'reason'", 'response': '{"reason": "costs jobs", "vote": "No"}'},
    {'match': "contains:'reason'", 'response': '{"reason": "helps people", "vote": "Yes"}'},
]

root = Path(tempfile.mkdtemp(prefix='civicsim_'))
script = root / 'mock.jsonl'
script.write_text(''.join(json.dumps(rule) + '\n' for rule in rules), encoding='utf-8')

config = load_config(overrides={
    'paths': {'cache_dir': str(root / 'cache'), 'runs_dir': str(root / 'runs')},
    'providers': {'mock': {'request_shape': 'mock', 'mock_script': str(script)}},
})
plan = RunPlan(run_id='demo', models=['mock'], conditions=['default', 'delegate', 'trustee_dual', 'trustee_periods'],
               profile_limit=5)

manifest = execute(plan, config, verbose=True)
print(manifest.counts)
analyze_run('demo', config, verbose=True)
build_report(run_directory(config, 'demo') / 'analysis', root / 'report', verbose=True)
