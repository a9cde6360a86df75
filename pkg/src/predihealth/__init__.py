"""Heart-failure telemonitoring platform: ingestion, risk rules,
stratification, and FHIR export."""

__version__ = "0.1.0"
