"""Concrete flows: Burgers, incompressible NS and CH-NS."""
from .burgers import BURGERS_SCHEMES, BurgersModel, burgers_config, burgers_run, burgers_step
from .chns import (
    BUBBLE_TIMES,
    CHNSConfig,
    CHNSModel,
    CHNSState,
    bubble_initial_condition,
    chns_run,
    chns_step,
)
from .manufactured import CHNSManufactured, NSManufactured, manufactured_sources
from .ns import NSCavityModel, NSConfig, NSPeriodicModel, ns_cavity_run, ns_run, ns_step

__all__ = [
    "BURGERS_SCHEMES", "BurgersModel", "burgers_config", "burgers_run", "burgers_step",
    "BUBBLE_TIMES", "CHNSConfig", "CHNSModel", "CHNSState", "bubble_initial_condition",
    "chns_run", "chns_step", "CHNSManufactured", "NSManufactured", "manufactured_sources",
    "NSCavityModel", "NSConfig", "NSPeriodicModel", "ns_cavity_run", "ns_run", "ns_step",
]
