"""Exception types raised across the package."""


class CrowdsenseError(Exception):
    pass


class DomainError(CrowdsenseError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class AggregationError(CrowdsenseError):
    pass


class GenerationError(CrowdsenseError):
    pass


class ConfigurationError(CrowdsenseError, ValueError):
    pass
