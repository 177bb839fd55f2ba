class CivicsimError(Exception):
    """
    base error of the package, the cli turns any of these into exit code 2
    """


class ConfigurationError(CivicsimError):
    pass


class CorpusFormatError(CivicsimError):
    """
    file could not be read as the documented format

    Attributes
    ----------
    path : str
    line : int
        1-based line (jsonl) or array position (json), None when unknown
    field : str
        offending field, None when unknown
    """
    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f'line {line}')
        if field is not None:
            where.append(f'field {field}')
        prefix = f"{', '.join(where)}: " if where else ''
        super().__init__(f'{prefix}{message}')


class CorpusValidationError(CivicsimError):
    """
    corpus loaded but broke one of the validation rules, report holds every entry
    """
    def __init__(self, report):
        self.report = report
        lines = [f'{e.entity_id} [{e.rule}] {e.message}' for e in report.errors]
        super().__init__('corpus validation failed:\n  ' + '\n  '.join(lines))


class RenderError(CivicsimError):
    pass


class ResponseParseError(CivicsimError):
    """
    raw model output did not yield a fully valid value, raw text is kept
    """
    def __init__(self, message, raw=''):
        self.raw = raw
        super().__init__(message)


class ProviderError(CivicsimError):
    """
    backend call failed after exhausting retries (or failed in a non retryable way)
    """
    def __init__(self, message, provider=None, last_error=None):
        self.provider = provider
        self.last_error = last_error
        super().__init__(message)


class GenerationError(CivicsimError):
    def __init__(self, message, partial=None):
        self.partial = list(partial or [])
        super().__init__(message)


class AggregationDomainError(CivicsimError, ValueError):
    pass


class AnalyticsError(CivicsimError, ValueError):
    pass


class ReportError(CivicsimError, ValueError):
    pass


class RunError(CivicsimError):
    pass
