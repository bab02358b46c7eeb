"""Bail-outcome classification from LDA keyword features, audited for religious-community bias."""

__version__ = "0.1.0"
