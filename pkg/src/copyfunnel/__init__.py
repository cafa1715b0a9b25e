"""Pre-training copyright filtering funnel.

Stages run in a fixed order (access gate, fingerprinting, entity flagging,
classifier scoring, registry cross-reference) and every document decision is
appended to a hash-chained provenance ledger.
"""

__version__ = "0.1.0"
