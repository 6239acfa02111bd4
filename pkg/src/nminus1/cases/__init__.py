"""Bundled MATPOWER cases (IEEE 14 and IEEE 118 bus systems, from MATPOWER, BSD licensed)."""
