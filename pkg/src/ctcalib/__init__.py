"""Continuous-time spatiotemporal calibration of inertial multi-sensor rigs."""
