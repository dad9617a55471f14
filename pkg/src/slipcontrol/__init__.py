"""Control laboratory for 2D Navier-Stokes with Navier slip-with-friction walls."""

from .config import default_config, load_config, parse_config
from .errors import ConfigError, SlipControlError
from .geometry import DomainSpec, build_domain

__all__ = ["ConfigError", "DomainSpec", "SlipControlError", "build_domain", "default_config", "load_config",
           "parse_config"]
__version__ = "0.1.0"
