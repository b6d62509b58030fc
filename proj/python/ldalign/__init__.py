"""Python bindings for the ldalign C++ core."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import config_json as _config_json
from ._core import verify_json as _verify_json


def verify(seed=0, corrupt_gradient=False):
    """Run the invariant suite; returns the report as a dict."""
    return _json.loads(_verify_json(seed, corrupt_gradient))


def load_config(path="", overrides=()):
    """Resolved run config (defaults, file, then key.path=value overrides)."""
    return _json.loads(_config_json(path, list(overrides)))
