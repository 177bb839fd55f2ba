"""
turn trustee utility schedules into votes. lambda is the long-term emphasis shared by both methods:

    exponential  u = sum_t lambda**t * score[t]           (periods schedules)
    dual         u = (1 - lambda) * short + lambda * long   (dual schedules)

lambda = 1 is the most long-term weighted trustee in both. the dual weight written on the short-term
score is 1 - lambda, see dual_paper_alpha
"""
import math
import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .domain import N_PERIODS
from .exceptions import AggregationDomainError

logger = logging.getLogger(__name__)

Method = Literal['exponential', 'dual']


class EmphasisParameter(BaseModel):
    """
    long-term emphasis, exponential discount factor and dual long-term weight at the same time
    """
    model_config = ConfigDict(frozen=True)

    value: float = Field(ge=0.0, le=1.0, allow_inf_nan=False)

    @property
    def discount_factor(self):
        return self.value

    @property
    def dual_weights(self):
        """(short-term weight, long-term weight)"""
        return 1.0 - self.value, self.value


class AggregatedUtility(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    u_yes: float
    u_no: float
    method: Method
    lambda_: float = Field(alias='lambda')


def _check_lambda(lam):
    if isinstance(lam, bool) or not isinstance(lam, (int, float, np.floating, np.integer)):
        raise AggregationDomainError(f'lambda must be a number, got {lam!r}')
    if not math.isfinite(lam) or lam < 0 or lam > 1:
        raise AggregationDomainError(f'lambda outside [0, 1]: {lam}')
    return float(lam)


def _check_score(value, label='score'):
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        raise AggregationDomainError(f'{label} must be a number, got {value!r}')
    if not math.isfinite(value) or value < 0 or value > 100:
        raise AggregationDomainError(f'{label} outside [0, 100]: {value}')
    return float(value)


def _exponential_rows(scores, lam):
    """scores is an (n, 6) array, one discounted sum per row"""
    weights = np.power(lam, np.arange(N_PERIODS, dtype=float))
    return np.sum(scores * weights, axis=1)


def _dual_rows(short, long, lam):
    return (1.0 - lam) * short + lam * long


def discount_exponential(periods, lam):
    '''
    exponentially discounted sum of six period scores, lambda**0 is 1 for every lambda including 0

            Parameters:
                    periods (list): six scores in [0, 100], index 0 is years 0-5
                    lam (float): discount factor in [0, 1]

            Returns:
                    utility (float)
    '''
    lam = _check_lambda(lam)
    if len(periods) != N_PERIODS:
        raise AggregationDomainError(f'expected {N_PERIODS} period scores, got {len(periods)}')
    scores = np.array([_check_score(s, f'score[{t}]') for t, s in enumerate(periods)], dtype=float)
    return float(_exponential_rows(scores[np.newaxis, :], lam)[0])


def aggregate_dual(short, long, lam):
    '''
    weighted mix of a short and a long term score

            Parameters:
                    short (float): short term score in [0, 100]
                    long (float): long term score in [0, 100]
                    lam (float): long term weight in [0, 1]

            Returns:
                    utility (float)
    '''
    lam = _check_lambda(lam)
    short = _check_score(short, 'short')
    long = _check_score(long, 'long')
    return float(_dual_rows(short, long, lam))


def dual_paper_alpha(lam):
    """weight on the short-term score in the dual formula written with alpha on the short term"""
    return 1.0 - _check_lambda(lam)


def decide(u_yes, u_no):
    '''
    Yes only when the yes utility is strictly larger, ties vote No

            Parameters:
                    u_yes (float): aggregated utility of the policy passing
                    u_no (float): aggregated utility of the policy failing

            Returns:
                    vote (str): 'Yes' or 'No'
    '''
    for label, value in (('u_yes', u_yes), ('u_no', u_no)):
        if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)) \
                or not math.isfinite(value):
            raise AggregationDomainError(f'{label} is not finite: {value!r}')
    return 'Yes' if u_yes > u_no else 'No'


def aggregated_utility(schedule, lam):
    '''
    aggregate both options of a schedule with the method matching its form

            Parameters:
                    schedule (UtilitySchedule): dual or periods schedule
                    lam (float): long-term emphasis

            Returns:
                    utility (AggregatedUtility)
    '''
    if schedule.form == 'periods':
        u_yes = discount_exponential(schedule.yes_periods, lam)
        u_no = discount_exponential(schedule.no_periods, lam)
        method = 'exponential'
    elif schedule.form == 'dual':
        u_yes = aggregate_dual(schedule.yes_short, schedule.yes_long, lam)
        u_no = aggregate_dual(schedule.no_short, schedule.no_long, lam)
        method = 'dual'
    else:
        raise AggregationDomainError(f'unknown schedule form: {schedule.form}')
    return AggregatedUtility(u_yes=u_yes, u_no=u_no, method=method, lambda_=float(lam))


def trustee_vote(schedule, lam):
    '''
    vote of a trustee with the given long-term emphasis

            Parameters:
                    schedule (UtilitySchedule): elicited utilities
                    lam (float): long-term emphasis in [0, 1]

            Returns:
                    vote (str): 'Yes' or 'No'
                    utility (AggregatedUtility): the two aggregated utilities
    '''
    utility = aggregated_utility(schedule, lam)
    return decide(utility.u_yes, utility.u_no), utility


def _check_grid(grid):
    grid = [_check_lambda(lam) for lam in grid]
    if not grid:
        raise AggregationDomainError('lambda grid is empty')
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise AggregationDomainError(f'lambda grid must be strictly increasing: {grid}')
    return grid


def sweep(schedule, grid):
    '''
    trustee votes over a grid of emphasis values

            Parameters:
                    schedule (UtilitySchedule): elicited utilities
                    grid (list): strictly increasing lambda values in [0, 1]

            Returns:
                    votes (list): (lambda, vote) tuples in grid order
    '''
    return [(lam, trustee_vote(schedule, lam)[0]) for lam in _check_grid(grid)]


def batch_trustee_votes(schedules, grid):
    '''
    trustee decisions of many schedules of one form over a grid, same arithmetic as trustee_vote

            Parameters:
                    schedules (list): UtilitySchedule objects, all dual or all periods
                    grid (list): strictly increasing lambda values in [0, 1]

            Returns:
                    yes (np.ndarray): boolean array of shape (len(grid), len(schedules)), True where the vote is Yes
    '''
    grid = _check_grid(grid)
    if not schedules:
        return np.zeros((len(grid), 0), dtype=bool)
    forms = {schedule.form for schedule in schedules}
    if len(forms) > 1:
        raise AggregationDomainError('schedules of different forms cannot be aggregated together')
    if forms == {'dual'}:
        columns = {
            name: np.array([getattr(s, name) for s in schedules], dtype=float)
            for name in ('yes_short', 'yes_long', 'no_short', 'no_long')
        }
        u_yes = np.stack([_dual_rows(columns['yes_short'], columns['yes_long'], lam) for lam in grid])
        u_no = np.stack([_dual_rows(columns['no_short'], columns['no_long'], lam) for lam in grid])
    else:
        yes = np.array([s.yes_periods for s in schedules], dtype=float)
        no = np.array([s.no_periods for s in schedules], dtype=float)
        u_yes = np.stack([_exponential_rows(yes, lam) for lam in grid])
        u_no = np.stack([_exponential_rows(no, lam) for lam in grid])
    return u_yes > u_no


def parse_grid(text):
    '''
    read a lambda grid written as start:stop:step or as a comma separated list

            Parameters:
                    text (str): e.g. '0:1:0.1' or '0,0.5,1'

            Returns:
                    grid (list): floats, endpoints included, rounded to 10 decimals
    '''
    text = str(text).strip()
    try:
        if ':' in text:
            start, stop, step = (float(part) for part in text.split(':'))
            if step <= 0 or stop < start:
                raise AggregationDomainError(f'invalid grid range: {text}')
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = list(np.linspace(start, start + (n - 1) * step, n))
            # a step that does not divide the range still ends on stop
            if stop - values[-1] > 1e-9:
                values.append(stop)
        else:
            values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        if isinstance(e, AggregationDomainError):
            raise
        raise AggregationDomainError(f'unreadable grid: {text}') from e
    return _check_grid([round(float(v), 10) for v in values])


def default_grid():
    return parse_grid('0:1:0.1')
