"""Tri-branch gait recognition on synthetic silhouette and skeleton sequences."""

from ._trigait import (
    Config,
    ConfigError,
    config_keys,
    embed,
    evaluate,
    gem_pool,
    motion_ranges,
    run_checks,
    synthesize,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "config",
    "config_keys",
    "embed",
    "evaluate",
    "gem_pool",
    "motion_ranges",
    "run_checks",
    "synthesize",
    "train",
]


def config(miniature=False, **settings):
    """Configuration from the full-size defaults, optionally miniature, with key overrides."""
    return Config(miniature, settings)
