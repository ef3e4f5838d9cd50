"""Scanning-observer simulation and LROC evaluation toolkit.

Generates stochastic backgrounds (lumpy, clustered-lumpy), images them through
a Gaussian-PRF system with realistic noise, runs scanning observers (analytic
ideal observer, Hotelling, MCMC, CNN) and evaluates them by empirical LROC/ROC
analysis.
"""

__version__ = "0.1.0"
