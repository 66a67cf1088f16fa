"""Vorticity/stream-function flow with through-flow and Navier slip boundaries."""
