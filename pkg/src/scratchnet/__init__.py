"""scratchnet: a compact deep-learning library with hand-written backward
passes, FFT-based convolution, an SGD-family optimizer suite with automatic
learning-rate selection, an LSTM with BPTT, and Q-learning on a built-in
cart-pole — all deterministic under a fixed seed."""

__version__ = "0.1.0"

from .tensor import SeededRng  # noqa: F401
