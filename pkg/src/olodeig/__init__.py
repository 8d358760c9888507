"""Offline-online localized orthogonal decomposition for eigenvalue problems with random defects."""
from .coeff import make_pattern, realize, sample_realization
from .corrector import assemble_pg_mlod, compute_correctors
from .eig import solve_pg, solve_symmetric
from .mesh import build_hierarchy, patch
from .offline import build_offline_db, load, save
from .online import SUM_ONE, alternate, assemble_olod, compute_s_bernoulli, compute_s_general

__version__ = "0.1.0"
