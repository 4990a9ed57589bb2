"""Edge-side auditing of service tiering and quota throttling on LEO access links."""

__version__ = "0.1.0"
