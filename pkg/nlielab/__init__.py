from nlielab.energy import KernelSet, PotentialSet, SpeciesState, energy
from nlielab.graph_dynamics import Integrator, IntegratorConfig, evolve
from nlielab.graph_model import SpatialGrid, build_base_measure, build_graph
from nlielab.local_dynamics import LocalState, TensorSource, evolve_local
