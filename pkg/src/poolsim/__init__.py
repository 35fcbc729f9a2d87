"""Deterministic timeslot simulator for permissionless consensus protocols."""

__version__ = "0.1.0"
