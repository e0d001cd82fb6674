"""Transparent hook-based encryption for Modbus TCP.

Subpackages: `frame` (Modbus framing), `netcodec` (raw frame views and
checksum repair), `cipher` (length-preserving keystream encryption),
`statestore` (map-style key/flow stores), `datapath` (the hookpoint
engine), `simnet` (simulated network harness), `pcapio` and `cli`.
"""

__version__ = "0.1.0"
