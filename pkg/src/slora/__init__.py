"""Throughput analytics, guard-time optimization, timing-uncertainty budget and a
seeded discrete-event simulator for out-of-band synchronized slotted LoRa uplink."""

__version__ = "0.1.0"
