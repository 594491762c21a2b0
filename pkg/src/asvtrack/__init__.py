"""Trajectory-tracking workbench for a four-thruster autonomous surface vessel.

Trains a DDPG tracking policy in a 3-DOF simulator and benchmarks it against a
receding-horizon NMPC baseline under wind, wave and current disturbances.
"""

__version__ = "0.1.0"
