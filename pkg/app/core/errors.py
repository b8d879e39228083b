"""
Exception hierarchy shared by the services, the CLI and the HTTP layer.
The CLI exits with `exit_code`; the API maps the classes to HTTP statuses.
"""


class WatchError(Exception):
    """Base class for all workflow errors"""
    exit_code = 1


class ConfigError(WatchError):
    """Invalid or unreadable configuration (plan, run config, scenario)"""
    exit_code = 2


class DataError(WatchError):
    """Input data violates a contract of the analysis"""
    exit_code = 3


class LearnerError(WatchError):
    """No base learner could be fitted"""
    exit_code = 1
