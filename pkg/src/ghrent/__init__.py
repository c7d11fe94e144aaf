"""Rental-price modelling for Ghanaian house listings.

Pipeline modules: :mod:`ghrent.ingest`, :mod:`ghrent.geocode`,
:mod:`ghrent.features`; models: :mod:`ghrent.linear`, :mod:`ghrent.tree`,
:mod:`ghrent.forest`, :mod:`ghrent.boost`, :mod:`ghrent.svr`; evaluation:
:mod:`ghrent.evaluate`, :mod:`ghrent.diagnostics`; artifacts:
:mod:`ghrent.persist`, :mod:`ghrent.config`, :mod:`ghrent.cli`.
"""

__version__ = "0.1.0"
