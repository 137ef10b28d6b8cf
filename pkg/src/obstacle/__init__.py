"""Two positive solutions of a penalized obstacle problem with a potential well.

Modules: ``model`` (instance data and hypothesis checks), ``discretize``
(P1 mesh, operator, energy), ``vi_solver`` (minimizing solution, oracle,
limit problem), ``mountain_pass`` (second solution) and ``experiments``
(lambda sweeps, verdict, output).
"""
from .discretize import assemble, build_mesh
from .experiments import SweepConfig, TheoremVerdict, check_instance, run_sweep
from .model import ProblemInstance, default_instance, instance_from_config, load_config
from .mountain_pass import MountainPassOptions, solve_mountain_pass
from .vi_solver import SolverOptions, solve_min

__version__ = "0.1.0"
