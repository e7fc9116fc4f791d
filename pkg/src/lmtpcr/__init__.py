"""Sequentially doubly robust and targeted estimators of cumulative incidence
under longitudinal modified treatment policies with competing risks."""

__version__ = "0.1.0"
