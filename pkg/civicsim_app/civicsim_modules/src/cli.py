"""
command line entry point, installed as `civicsim`

    civicsim corpus validate [--policies PATH] [--profiles PATH]
    civicsim profiles generate --count N --out PATH [--provider NAME]
    civicsim run --plan PLAN
    civicsim run --resume RUN_ID [--retry-failed]
    civicsim analyze --run RUN_ID [--reference default|expert] [--by policy,pair,group:FIELD] [--lambda-grid 0:1:0.1]
    civicsim report --analysis DIR --out DIR [--format md,csv,svg]
"""
import sys
import logging
import argparse

from .aggregation_utils import parse_grid
from .analytics_utils import analyze_run
from .config_utils import load_config
from .corpus_utils import (
    CorpusValidationReport,
    ProfileGenerator,
    ValidationEntry,
    load_policies,
    load_profiles,
    save_profiles,
    validate_corpus,
    validate_profiles,
)
from .provider_utils import build_provider
from .report_utils import build_report
from .runner import RunPlan, clear_failed, execute, resume_plan, run_directory
from .exceptions import CivicsimError, ConfigurationError, CorpusFormatError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def _split(value):
    return tuple(part.strip() for part in value.split(',') if part.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog='civicsim', description='delegate and trustee voting experiments')
    parser.add_argument('--config', help='user config file merged over the shipped defaults')
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    corpus = commands.add_parser('corpus', help='policy corpus tools')
    corpus_commands = corpus.add_subparsers(dest='corpus_command', required=True)
    validate = corpus_commands.add_parser('validate', help='check the policy corpus')
    validate.add_argument('--policies', help='policies.json, default the configured corpus')
    validate.add_argument('--profiles', help='profiles.jsonl, default the configured profiles')

    profiles = commands.add_parser('profiles', help='voter profile tools')
    profile_commands = profiles.add_subparsers(dest='profiles_command', required=True)
    generate = profile_commands.add_parser('generate', help='generate synthetic voter profiles')
    generate.add_argument('--count', type=int, required=True)
    generate.add_argument('--out', required=True, help='output profiles.jsonl')
    generate.add_argument('--provider', help='provider name, default generation.model')

    run = commands.add_parser('run', help='execute or resume an experiment')
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument('--plan', help='run plan, json or yaml')
    source.add_argument('--resume', metavar='RUN_ID', help='resume a run from its manifest')
    run.add_argument('--retry-failed', action='store_true', help='query failed cells again when resuming')

    analyze = commands.add_parser('analyze', help='compute the analysis tables of a run')
    analyze.add_argument('--run', required=True, help='run id or run directory')
    analyze.add_argument('--reference', choices=('default', 'expert'), default='default')
    analyze.add_argument('--by', default='policy,pair', help='comma separated: policy, pair, group:<field>')
    analyze.add_argument('--lambda-grid', help='start:stop:step or comma separated values')
    analyze.add_argument('--out', help='output directory, default <run>/analysis')

    report = commands.add_parser('report', help='render tables and charts of an analysis')
    report.add_argument('--analysis', required=True, help='analysis directory')
    report.add_argument('--out', required=True)
    report.add_argument('--format', default='md,csv,svg', help='comma separated: md, csv, svg')
    return parser


def _print_report(path, report):
    for entry in report.errors:
        print(f'error   {entry.entity_id} [{entry.rule}] {entry.message}')
    for entry in report.warnings:
        print(f'warning {entry.entity_id} [{entry.rule}] {entry.message}')
    print(f'{path}: {len(report.errors)} errors, {len(report.warnings)} warnings')
    return report.accepted


def _checked(path, load, validate):
    try:
        return validate(load(path, validate=False))
    except CorpusFormatError as e:
        entry = ValidationEntry(entity_id=str(path), rule='format', message=str(e))
        return CorpusValidationReport(errors=(entry,))


def _corpus_validate(args, config):
    policies_path = args.policies or config.paths.policies_path()
    profiles_path = args.profiles or config.paths.profiles_path()
    accepted = _print_report(policies_path, _checked(policies_path, load_policies, validate_corpus))
    accepted = _print_report(profiles_path, _checked(profiles_path, load_profiles, validate_profiles)) and accepted
    return EXIT_OK if accepted else EXIT_FAILED


def _profiles_generate(args, config):
    if args.count < 1:
        raise ConfigurationError('--count must be at least 1')
    provider = build_provider(args.provider or config.generation.model, config)
    generator = ProfileGenerator(provider, retries=config.generation.retries,
                                 parallelism=config.runner.parallelism, verbose=args.verbose)
    profiles = generator.generate(args.count)
    save_profiles(args.out, profiles)
    for warning in generator.warnings:
        print(f'warning {warning}')
    print(f'{len(profiles)} profiles written to {args.out}')
    return EXIT_OK


def _run(args, config):
    if args.plan:
        plan = RunPlan.from_file(args.plan)
    else:
        plan = resume_plan(args.resume, config.paths.runs_dir)
        if args.retry_failed:
            clear_failed(run_directory(config, plan.run_id))
    manifest = execute(plan, config, verbose=args.verbose)
    counts = manifest.counts
    print(f'run {manifest.run_id}: {counts.completed}/{counts.planned} completed, '
          f'{counts.parse_failed} parse_failed, {counts.provider_failed} provider_failed')
    return EXIT_OK


def _analyze(args, config):
    grid = parse_grid(args.lambda_grid) if args.lambda_grid else None
    tables = analyze_run(args.run, config, out_dir=args.out, reference=args.reference, by=_split(args.by),
                         grid=grid, verbose=args.verbose)
    print(f"{len(tables['agreement'])} agreement rows written")
    return EXIT_OK


def _report(args, config):
    written = build_report(args.analysis, args.out, formats=_split(args.format), verbose=args.verbose)
    print(f'{len(written)} files written to {args.out}')
    return EXIT_OK


def main(argv=None):
    '''
    parse the arguments and run a command

            Parameters:
                    argv (list): arguments without the program name, default sys.argv[1:]

            Returns:
                    code (int): 0 on success, 1 when a corpus is rejected, 2 on any handled error
    '''
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    handlers = {
        'corpus': _corpus_validate,
        'profiles': _profiles_generate,
        'run': _run,
        'analyze': _analyze,
        'report': _report,
    }
    try:
        config = load_config(args.config)
        return handlers[args.command](args, config)
    except CivicsimError as e:
        message = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f'civicsim: error: {message}', file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
