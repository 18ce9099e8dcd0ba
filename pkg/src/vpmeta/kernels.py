"""Backend selection for the LSTM kernels.

The compiled extension ``vpmeta._lstm`` is used when it imports; otherwise the
numpy implementation in ``vpmeta._lstm_py`` is used.  Setting
``VPMETA_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _lstm_py

BACKEND = "python"
lstm_forward = _lstm_py.lstm_forward
lstm_loss_grad = _lstm_py.lstm_loss_grad

if not os.environ.get("VPMETA_PURE_PYTHON"):
    try:
        from . import _lstm
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        lstm_forward = _lstm.lstm_forward
        lstm_loss_grad = _lstm.lstm_loss_grad


def available_backends():
    """Map backend name -> ``(forward, loss_grad)`` for every importable backend."""
    out = {"python": (_lstm_py.lstm_forward, _lstm_py.lstm_loss_grad)}
    try:
        from . import _lstm
    except ImportError:
        return out
    out["compiled"] = (_lstm.lstm_forward, _lstm.lstm_loss_grad)
    return out
