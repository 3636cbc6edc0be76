"""Numerical toolkit for hyper-Kähler triples, calibrated maps and the
collapsing Gibbons-Hawking family over a flat three-torus."""

__version__ = "0.1.0"
