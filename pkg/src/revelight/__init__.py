"""Black-box vertical federated learning via two-point zeroth-order estimation.

Parties hold disjoint feature blocks and train local models against a server
head while only function values cross the wire; the package bundles the
asynchronous and synchronous training drivers, centralized and
gradient-transmitting baselines, and a numerical verification suite for the
smoothing bias bounds, convergence-rate shape, communication ratios, and the
function-values-only privacy surface.
"""

__version__ = "0.1.0"
