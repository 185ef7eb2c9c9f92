"""Mine configuration specifications from documentation text.

The pipeline: ingest documents, filter sentences that mention configuration
keywords, replace literals with pattern tags, train a small encoder/decoder
on synthesized labels, and emit machine-checkable rules that a config file
can be validated against.
"""

__version__ = "0.1.0"
