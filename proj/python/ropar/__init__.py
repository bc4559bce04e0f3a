"""Python bindings for the ropar motion pipeline."""

import json as _json

from . import _core
from ._core import RoparError, fid, mm_distance, mpjpe, r_precision

__all__ = [
    "RoparError",
    "config_hash",
    "corpus_stats",
    "fid",
    "mask_plan",
    "mm_distance",
    "mpjpe",
    "parse_config",
    "r_precision",
    "run_stage",
    "sample",
    "version_info",
]


def version_info():
    return _json.loads(_core.version_info())


def parse_config(ini, overrides=()):
    """Canonical {section: {key: value}} form of an INI configuration."""
    return _json.loads(_core.parse_config(ini, list(overrides)))


def config_hash(ini, overrides=()):
    return _core.config_hash(ini, list(overrides))


def run_stage(stage, config, overrides=()):
    """Run one pipeline stage (synth, curate, train-vae, ...) and return its summary."""
    return _json.loads(_core.run_stage(stage, str(config), list(overrides)))


def sample(config, prompt, frames=64, steps=8, seed=None, overrides=()):
    return _json.loads(_core.sample(str(config), prompt, frames, steps, seed, list(overrides)))


def corpus_stats(size=200, length=64, full_body_fraction=0.24, seed=0, tau=0.5):
    return _json.loads(_core.corpus_stats(size, length, full_body_fraction, seed, tau))


def mask_plan(credible, alpha, seed=0):
    """Return (masked, loss_mask) boolean arrays for a (frames, parts) credibility grid."""
    return _core.mask_plan(credible, alpha, seed)
