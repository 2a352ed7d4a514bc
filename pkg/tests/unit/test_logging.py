from __future__ import annotations

import json

import numpy as np

from app.core.logging import numpy_to_builtin


def test_numpy_fields_become_json_values():
    event = numpy_to_builtin(
        None,
        "info",
        {"event": "x", "neuron_id": np.int64(3), "ess": np.float32(12.5), "k": np.arange(3)},
    )
    assert event == {"event": "x", "neuron_id": 3, "ess": 12.5, "k": [0, 1, 2]}
    assert type(event["neuron_id"]) is int
    json.dumps(event)


def test_plain_fields_are_untouched():
    event = {"event": "x", "method": "gapp", "bins": [1, 2]}
    assert numpy_to_builtin(None, "info", dict(event)) == event
