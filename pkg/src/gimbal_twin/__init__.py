"""Digital twin of a batteryless RFID accel/mag sensor riding a nano-quadrotor
in a three-axis gimbal: rotational dynamics, energy-harvesting node, EPC
air protocol, backscatter link and the reader-side estimation pipeline."""

from .errors import (AlignmentError, CodecError, ConfigError, DegenerateAttitude, GimbalTwinError,
                     NotPowered, SimulationFault)

__version__ = "0.1.0"

__all__ = ["AlignmentError", "CodecError", "ConfigError", "DegenerateAttitude", "GimbalTwinError",
           "NotPowered", "SimulationFault", "__version__"]
