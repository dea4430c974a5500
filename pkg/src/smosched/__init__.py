"""Playout smoothing and chunk scheduling for layered P2P streaming."""
