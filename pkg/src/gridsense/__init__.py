"""Multiphase sensitivity coefficients for unbalanced radial distribution networks."""

__version__ = "0.1.0"

from .admittance import CompoundAdmittance, branch_block, build_compound_admittance
from .exceptions import (AssemblyError, GridSenseError, LoadflowNotConverged, NumericalError,
                         OracleError, SchemaError, SingularSystemError, StructuralError)
from .io import bundled_path, dump_network, load_network, network_from_dict, network_to_dict
from .loadflow import OperatingPoint, branch_currents, injected_power, solve_loadflow
from .network import (Branch, Bus, BusPhase, DerSpec, IndexMap, NetworkModel, TapChanger,
                      index_map, to_per_unit, from_per_unit, validate_radial)
from .sensitivity import SensitivitySet, assemble_system, full_sensitivity, solve_dP, solve_dQ, solve_tap

__all__ = [
    "__version__", "AssemblyError", "Branch", "Bus", "BusPhase", "CompoundAdmittance", "DerSpec",
    "GridSenseError", "IndexMap", "LoadflowNotConverged", "NetworkModel", "NumericalError",
    "OperatingPoint", "OracleError", "SchemaError", "SensitivitySet", "SingularSystemError",
    "StructuralError", "TapChanger", "assemble_system", "branch_block", "branch_currents",
    "build_compound_admittance", "bundled_path", "dump_network", "from_per_unit", "full_sensitivity",
    "index_map", "injected_power", "load_network", "network_from_dict", "network_to_dict",
    "solve_dP", "solve_dQ", "solve_loadflow", "solve_tap", "to_per_unit", "validate_radial",
]
