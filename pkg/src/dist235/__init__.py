"""Tools for rank-2 distributions on 5-manifolds, their prolongations, and
the dual Lagrangian cone structures: exact symbolic verification plus
numerical integration of singular (abnormal) paths on both sides.
"""

__version__ = "0.1.0"
